//! Shared fixtures for the benchmarks.

use std::collections::BTreeMap;
use std::path::PathBuf;

use spanel::panel::{load_metadata, UnitMeta};
use spanel::simulate::{gen_replicate, gen_study_panel, StudyPanelSpec};
use spanel::spatial::contiguity_matrix;
use spanel::{DgpSpec, PanelDataset, SpatialWeightMatrix};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn provinces() -> BTreeMap<String, UnitMeta> {
    load_metadata(data_dir().join("provinces.json")).expect("bundled metadata")
}

pub fn contiguity() -> SpatialWeightMatrix {
    contiguity_matrix(&provinces()).expect("bundled adjacency")
}

/// The synthetic 30-province, 12-year study panel.
pub fn study_panel() -> PanelDataset {
    gen_study_panel(&provinces(), &StudyPanelSpec::default()).expect("study panel")
}

/// One SAR replicate on the contiguity matrix.
pub fn sar_panel(rho: f64) -> (PanelDataset, SpatialWeightMatrix) {
    let w = contiguity();
    let mut s = DgpSpec::new(w.n(), 12, 1);
    s.alpha = 1.0;
    s.beta = 1.0;
    s.rho = rho;
    s.weights = Some(w.clone());
    (gen_replicate(&s, 0).expect("SAR replicate").0, w)
}

/// One dynamic-panel replicate with `y_{t-1}` coefficient `gamma`.
pub fn dynamic_panel(n_units: usize, n_years: usize, gamma: f64) -> PanelDataset {
    let mut s = DgpSpec::new(n_units, n_years, 2);
    s.gamma = gamma;
    s.beta = 0.5;
    s.sigma_u = 1.0;
    gen_replicate(&s, 0).expect("dynamic replicate").0
}
