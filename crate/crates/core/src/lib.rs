pub mod dea;
pub mod error;
pub mod index;
pub mod linalg;
pub mod mediation;
pub mod lp;
pub mod panel;
pub mod pipeline;
pub mod regression;
pub mod report;
pub mod simulate;
pub mod slm;
pub mod spatial;

pub use error::{Error, Result};
pub use index::{IndexResult, IndicatorSystem};
pub use mediation::{Classification, MediationReport, MediationSpec};
pub use panel::{PanelDataset, RegionGroup, UnitMeta};
pub use pipeline::{run_pipeline, Manifest, PipelineConfig, Stage};
pub use regression::{ModelSpec, RegressionResult};
pub use simulate::{DgpSpec, McReport};
pub use slm::{EffectDecomposition, SlmResult};
pub use spatial::{SpatialWeightMatrix, WeightKind};
