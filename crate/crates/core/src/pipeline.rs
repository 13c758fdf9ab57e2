//! Config-driven pipeline: load and derive, then run the requested stages in
//! dependency order, writing tables, figure data and a hashed manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dea::{malmquist, DeaMapping, DeaPanel, TfpMode};
use crate::error::{Error, Result};
use crate::index::{compare_published_weights, index_scores, IndexOptions, IndicatorSystem};
use crate::mediation::{mediation_tests, MediationSpec, DEFAULT_ALPHA};
use crate::panel::{load_metadata, load_panel, Derivation, LoadOptions, PanelDataset, RegionGroup, UnitFilter, UnitMeta};
use crate::regression::{
    fixed_effects, ols, quantile_regression, system_gmm, tsls, GmmSpec, ModelSpec, TslsOptions, QUANTILE_TAUS,
};
use crate::report::{self, mediation_table, moran_markdown, RegressionTable, TableColumn, DISPLAY_PRECISION};
use crate::slm::{effect_decomposition, slm_fit};
use crate::spatial::{moran_by_year, moran_scatter, weights_for_panel, WeightKind};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ERROR_FILE: &str = "error.json";
pub const QUARANTINE_DIR: &str = "quarantine";
pub const DEFAULT_EFFECT_DRAWS: usize = 1000;
pub const PUBLISHED_WEIGHT_TOL: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Indices,
    Tfp,
    Stats,
    Baseline,
    Robustness,
    Heterogeneity,
    Mediation,
    Spatial,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Indices,
        Stage::Tfp,
        Stage::Stats,
        Stage::Baseline,
        Stage::Robustness,
        Stage::Heterogeneity,
        Stage::Mediation,
        Stage::Spatial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Indices => "indices",
            Stage::Tfp => "tfp",
            Stage::Stats => "stats",
            Stage::Baseline => "baseline",
            Stage::Robustness => "robustness",
            Stage::Heterogeneity => "heterogeneity",
            Stage::Mediation => "mediation",
            Stage::Spatial => "spatial",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Parses a comma-separated stage list.
pub fn parse_stages(list: &str) -> Result<Vec<Stage>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(Stage::from_str).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorPaths {
    pub cmx: PathBuf,
    pub dig: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedDerivation {
    pub name: String,
    pub derivation: Derivation,
}

fn default_dependent() -> String {
    "CMX".into()
}
fn default_core() -> String {
    "DIG".into()
}
fn default_controls() -> Vec<String> {
    ["STU", "ROAD", "FIS", "EDU", "OPEN"].iter().map(|s| s.to_string()).collect()
}
fn default_theil() -> String {
    "THEIL".into()
}
fn default_tfp() -> String {
    "TFP".into()
}
fn default_mediators() -> Vec<String> {
    vec!["TFP".into(), "LABOR".into()]
}
fn default_quantiles() -> Vec<f64> {
    QUANTILE_TAUS.to_vec()
}
fn default_weights() -> Vec<WeightKind> {
    WeightKind::BUILTIN.to_vec()
}
fn default_moran_weights() -> WeightKind {
    WeightKind::Contiguity
}
fn default_economic() -> String {
    "GDP_PC".into()
}
fn default_scatter_years() -> Vec<i32> {
    vec![2012, 2015, 2019, 2022]
}
fn default_draws() -> usize {
    DEFAULT_EFFECT_DRAWS
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_precision() -> usize {
    DISPLAY_PRECISION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_dependent")]
    pub dependent: String,
    #[serde(default = "default_core")]
    pub core: String,
    #[serde(default = "default_controls")]
    pub controls: Vec<String>,
    /// Alternative dependent variable for the robustness check.
    #[serde(default = "default_theil")]
    pub theil: String,
    /// Name given to the Malmquist series.
    #[serde(default = "default_tfp")]
    pub tfp: String,
    #[serde(default)]
    pub tfp_mode: TfpMode,
    #[serde(default = "default_mediators")]
    pub mediators: Vec<String>,
    #[serde(default = "default_alpha")]
    pub mediation_alpha: f64,
    #[serde(default = "default_quantiles")]
    pub quantiles: Vec<f64>,
    #[serde(default)]
    pub gmm: GmmSpec,
    #[serde(default)]
    pub index: IndexOptions,
    #[serde(default = "default_weights")]
    pub weights: Vec<WeightKind>,
    #[serde(default = "default_moran_weights")]
    pub moran_weights: WeightKind,
    #[serde(default = "default_economic")]
    pub economic_variable: String,
    #[serde(default = "default_scatter_years")]
    pub scatter_years: Vec<i32>,
    #[serde(default = "default_draws")]
    pub effect_draws: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub panel: PathBuf,
    pub metadata: PathBuf,
    pub indicators: IndicatorPaths,
    pub dea: PathBuf,
    #[serde(default)]
    pub derivations: Vec<NamedDerivation>,
    #[serde(default = "all_stages")]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub model: ModelConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_precision")]
    pub precision: usize,
}

fn all_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}

impl PipelineConfig {
    /// Reads a config; relative paths are taken from the config's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.panel);
        fix(&mut self.metadata);
        fix(&mut self.indicators.cmx);
        fix(&mut self.indicators.dig);
        fix(&mut self.dea);
        fix(&mut self.output_dir);
    }

    /// Static checks: input paths exist, stage list is non-empty, options
    /// are in range. Stages are sorted into dependency order.
    pub fn validate(&mut self) -> Result<()> {
        for (label, p) in [
            ("panel", &self.panel),
            ("metadata", &self.metadata),
            ("cmx indicators", &self.indicators.cmx),
            ("dig indicators", &self.indicators.dig),
            ("dea mapping", &self.dea),
        ] {
            if !p.is_file() {
                return Err(Error::Config(format!("{label} file {} does not exist", p.display())));
            }
        }
        if self.stages.is_empty() {
            return Err(Error::Config("no stages requested".into()));
        }
        self.stages.sort();
        self.stages.dedup();
        if self.precision > 12 {
            return Err(Error::Config(format!("display precision {} is too large", self.precision)));
        }
        let m = &self.model;
        if m.weights.is_empty() && self.stages.contains(&Stage::Spatial) {
            return Err(Error::Config("spatial stage needs at least one weight matrix".into()));
        }
        if m.weights.contains(&WeightKind::Custom) || m.moran_weights == WeightKind::Custom {
            return Err(Error::Config("custom weights are not built by the pipeline".into()));
        }
        if m.quantiles.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::Config("quantiles must lie in (0, 1)".into()));
        }
        if !(m.mediation_alpha > 0.0 && m.mediation_alpha < 1.0) {
            return Err(Error::Config("mediation_alpha must lie in (0, 1)".into()));
        }
        m.gmm.validate()?;
        Ok(())
    }

    /// Full validation: static checks, then inputs are loaded and every
    /// stage's variables must either exist or come from an earlier stage.
    pub fn check(&mut self) -> Result<Inputs> {
        self.validate()?;
        let inputs = Inputs::load(self)?;
        self.check_dependencies(&inputs.panel)?;
        Ok(inputs)
    }

    fn check_dependencies(&self, panel: &PanelDataset) -> Result<()> {
        let m = &self.model;
        let has = |v: &str| panel.has_variable(v);
        let runs = |s: Stage| self.stages.contains(&s);
        let needs_indices = [Stage::Baseline, Stage::Robustness, Stage::Heterogeneity, Stage::Mediation, Stage::Spatial];
        if needs_indices.iter().any(|s| runs(*s)) && !(has(&m.dependent) && has(&m.core)) && !runs(Stage::Indices) {
            return Err(Error::StageNotRun(Stage::Indices.name().into()));
        }
        if runs(Stage::Mediation) && m.mediators.contains(&m.tfp) && !has(&m.tfp) && !runs(Stage::Tfp) {
            return Err(Error::StageNotRun(Stage::Tfp.name().into()));
        }
        let regression_stage = [Stage::Baseline, Stage::Robustness, Stage::Heterogeneity, Stage::Mediation, Stage::Spatial];
        if regression_stage.iter().any(|s| runs(*s)) {
            for c in &m.controls {
                if !has(c) {
                    return Err(Error::UnknownVariable(c.clone()));
                }
            }
        }
        if runs(Stage::Robustness) && !has(&m.theil) {
            return Err(Error::UnknownVariable(m.theil.clone()));
        }
        if runs(Stage::Mediation) {
            for med in &m.mediators {
                if !has(med) && *med != m.tfp {
                    return Err(Error::UnknownVariable(med.clone()));
                }
            }
        }
        if runs(Stage::Spatial) && m.weights.contains(&WeightKind::Economic) && !has(&m.economic_variable) {
            return Err(Error::UnknownVariable(m.economic_variable.clone()));
        }
        Ok(())
    }

    /// Adds the stages the requested ones depend on when their outputs are
    /// not already in the panel.
    pub fn with_prerequisites(&mut self, panel: &PanelDataset) {
        let m = &self.model;
        let needs_indices = self.stages.iter().any(|s| *s > Stage::Stats)
            && !(panel.has_variable(&m.dependent) && panel.has_variable(&m.core));
        let needs_tfp = (self.stages.contains(&Stage::Mediation) && m.mediators.contains(&m.tfp))
            && !panel.has_variable(&m.tfp);
        if needs_indices {
            self.stages.push(Stage::Indices);
        }
        if needs_tfp {
            self.stages.push(Stage::Tfp);
        }
        self.stages.sort();
        self.stages.dedup();
    }
}

/// Loaded inputs after derivations.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub panel: PanelDataset,
    pub meta: BTreeMap<String, UnitMeta>,
    pub cmx: IndicatorSystem,
    pub dig: IndicatorSystem,
    pub dea: DeaMapping,
}

impl Inputs {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let meta = load_metadata(&cfg.metadata)?;
        let mut panel = load_panel(&cfg.panel, &LoadOptions::default())?.with_meta(&meta)?;
        for d in &cfg.derivations {
            panel = panel.derive_variable(&d.name, &d.derivation)?;
        }
        Ok(Self {
            panel,
            meta,
            cmx: IndicatorSystem::load(&cfg.indicators.cmx)?,
            dig: IndicatorSystem::load(&cfg.indicators.dig)?,
            dea: DeaMapping::load(&cfg.dea)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub stages: Vec<Stage>,
    pub outputs: Vec<ManifestEntry>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub stage: Option<Stage>,
    pub kind: String,
    pub message: String,
    pub quarantined: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output writer that records every file it creates.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    fn write_with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    fn manifest_entries(&self) -> Result<Vec<ManifestEntry>> {
        let mut names = self.written.clone();
        names.sort();
        names
            .iter()
            .map(|n| {
                let path = self.dir.join(n);
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                Ok(ManifestEntry {
                    path: n.clone(),
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                })
            })
            .collect()
    }
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    inputs: Inputs,
    out: Outputs,
    markdown: Vec<(Stage, String)>,
    warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
}

/// Validates `cfg`, runs its stages and writes the manifest. On a stage
/// failure the files written so far move to a quarantine subdirectory and
/// an error report is written next to it.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutcome> {
    let mut cfg = cfg.clone();
    let inputs = cfg.check()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let stale = cfg.output_dir.join(ERROR_FILE);
    if stale.exists() {
        fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    let mut run = Run {
        cfg: &cfg,
        inputs,
        out: Outputs {
            dir: cfg.output_dir.clone(),
            written: Vec::new(),
        },
        markdown: Vec::new(),
        warnings: Vec::new(),
    };
    for &stage in &cfg.stages {
        log::info!("running stage {stage}");
        if let Err(e) = run.stage(stage) {
            let quarantined = quarantine(&run.out)?;
            let report = ErrorReport {
                stage: Some(stage),
                kind: e.kind().to_string(),
                message: e.to_string(),
                quarantined,
            };
            let body = serde_json::to_string_pretty(&report)? + "\n";
            fs::write(&stale, body).map_err(|err| Error::io(&stale, err))?;
            return Err(Error::StageFailed {
                stage: stage.name().into(),
                source: Box::new(e),
            });
        }
    }
    if cfg.stages.iter().any(|s| *s != Stage::Stats) && !run.markdown.is_empty() {
        let mut md = String::new();
        for (_, section) in &run.markdown {
            md.push_str(section);
            md.push('\n');
        }
        run.out.write("tables.md", md.as_bytes())?;
    }
    let manifest = Manifest {
        seed: cfg.seed,
        stages: cfg.stages.clone(),
        outputs: run.out.manifest_entries()?,
        warnings: run.warnings.clone(),
    };
    let manifest_path = cfg.output_dir.join(MANIFEST_FILE);
    let body = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&manifest_path, body).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(RunOutcome {
        manifest,
        manifest_path,
    })
}

fn quarantine(out: &Outputs) -> Result<Vec<String>> {
    let qdir = out.dir.join(QUARANTINE_DIR);
    fs::create_dir_all(&qdir).map_err(|e| Error::io(&qdir, e))?;
    let mut moved = Vec::new();
    for name in &out.written {
        let from = out.dir.join(name);
        let to = qdir.join(name);
        if from.exists() {
            fs::rename(&from, &to).map_err(|e| Error::io(&from, e))?;
            moved.push(format!("{QUARANTINE_DIR}/{name}"));
        }
    }
    let manifest = out.dir.join(MANIFEST_FILE);
    if manifest.exists() {
        fs::remove_file(&manifest).map_err(|e| Error::io(&manifest, e))?;
    }
    Ok(moved)
}

fn csv_bytes<F>(f: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// National means `(year, CMX, DIG)` for the line chart.
pub fn fig1_series(panel: &PanelDataset, cmx: &str, dig: &str) -> Result<(Vec<i32>, Vec<f64>, Vec<f64>)> {
    let mean_by_year = |v: &str| -> Result<Vec<f64>> {
        let m = panel.get(v).map_err(|_| Error::StageNotRun(Stage::Indices.name().into()))?;
        Ok((0..m.ncols()).map(|j| m.column(j).mean()).collect())
    };
    Ok((panel.years().to_vec(), mean_by_year(cmx)?, mean_by_year(dig)?))
}

impl Run<'_> {
    fn model(&self) -> &ModelConfig {
        &self.cfg.model
    }

    fn base_spec(&self, dependent: &str) -> ModelSpec {
        let m = self.model();
        let mut regs = vec![m.core.clone()];
        regs.extend(m.controls.iter().cloned());
        ModelSpec::new(dependent, &regs)
    }

    fn note_warnings(&mut self, stage: Stage, warnings: &[String]) {
        for w in warnings {
            let line = format!("{stage}: {w}");
            if !self.warnings.contains(&line) {
                self.warnings.push(line);
            }
        }
    }

    fn stage(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Indices => self.indices(),
            Stage::Tfp => self.tfp(),
            Stage::Stats => self.stats(),
            Stage::Baseline => self.baseline(),
            Stage::Robustness => self.robustness(),
            Stage::Heterogeneity => self.heterogeneity(),
            Stage::Mediation => self.mediation(),
            Stage::Spatial => self.spatial(),
        }
    }

    fn indices(&mut self) -> Result<()> {
        let prec = self.cfg.precision;
        let opts = self.model().index;
        let (dep, core) = (self.model().dependent.clone(), self.model().core.clone());
        let systems = [
            (dep.clone(), self.inputs.cmx.clone(), "Table 1"),
            (core.clone(), self.inputs.dig.clone(), "Table 2"),
        ];
        let mut md = String::new();
        for (var, sys, title) in systems {
            let res = index_scores(&self.inputs.panel, &sys, &opts)?;
            let lower = var.to_lowercase();
            self.out
                .write_with(&format!("{lower}_scores.csv"), |b| res.write_scores_csv(b))?;
            self.out
                .write_with(&format!("{lower}_weights.csv"), |b| res.write_weights_csv(b))?;
            md.push_str(&format!("**{title}: {} indicator weights**\n\n", sys.name));
            match compare_published_weights(&res, &sys, PUBLISHED_WEIGHT_TOL) {
                Ok(cmp) => {
                    if !cmp.all_pass() {
                        self.warnings
                            .push(format!("indices: {} weights deviate from the published column", sys.name));
                    }
                    md.push_str(&cmp.to_markdown());
                }
                Err(Error::NoPublishedWeights(_)) => {
                    md.push_str("| leaf | weight |\n|---|---|\n");
                    for (leaf, w) in &res.weights {
                        md.push_str(&format!("| {leaf} | {} |\n", report::fmt_fixed(*w, prec)));
                    }
                }
                Err(e) => return Err(e),
            }
            md.push('\n');
            self.inputs.panel = self.inputs.panel.clone().with_variable(var.as_str(), res.scores)?;
        }
        let (years, c, d) = fig1_series(&self.inputs.panel, &dep, &core)?;
        let bytes = csv_bytes(|b| report::write_fig1_csv(b, &years, &c, &d))?;
        self.out.write("fig1_indices.csv", &bytes)?;
        self.markdown.push((Stage::Indices, md));
        Ok(())
    }

    fn tfp(&mut self) -> Result<()> {
        let dea = DeaPanel::from_panel(&self.inputs.panel, &self.inputs.dea)?;
        let res = malmquist(&dea)?;
        self.out.write_with("malmquist.csv", |b| res.write_csv(b))?;
        let name = self.model().tfp.clone();
        let series = res.tfp_series(self.model().tfp_mode);
        self.inputs.panel = self.inputs.panel.clone().with_variable(name, series)?;
        Ok(())
    }

    fn stats(&mut self) -> Result<()> {
        let m = self.model().clone();
        let mut vars = vec![m.dependent.clone(), m.core.clone()];
        vars.extend(m.mediators.iter().cloned());
        vars.extend(m.controls.iter().cloned());
        let mut present = Vec::new();
        for v in vars {
            if present.contains(&v) {
                continue;
            }
            if self.inputs.panel.has_variable(&v) {
                present.push(v);
            } else {
                self.warnings.push(format!("stats: `{v}` not available, skipped"));
            }
        }
        if present.is_empty() {
            return Err(Error::StageNotRun(Stage::Indices.name().into()));
        }
        let table = self.inputs.panel.descriptive_stats(&present)?;
        self.out.write_with("table3_stats.csv", |b| table.write_csv(b))?;
        self.markdown.push((
            Stage::Stats,
            format!("**Table 3: descriptive statistics**\n\n{}", table.to_markdown(self.cfg.precision)),
        ));
        Ok(())
    }

    fn emit_table(&mut self, stage: Stage, stem: &str, table: &RegressionTable) -> Result<()> {
        self.out.write_with(&format!("{stem}.csv"), |b| table.write_csv(b))?;
        self.out
            .write(&format!("{stem}.json"), (table.to_json()? + "\n").as_bytes())?;
        self.markdown.push((stage, table.to_markdown(self.cfg.precision)));
        Ok(())
    }

    fn baseline(&mut self) -> Result<()> {
        let m = self.model().clone();
        let spec = self.base_spec(&m.dependent);
        let p = &self.inputs.panel;
        let o = ols(p, &spec)?;
        let f = fixed_effects(p, &spec.clone().two_way())?;
        let g = system_gmm(p, &spec, &m.gmm)?;
        let warnings: Vec<String> = [&o, &f, &g].iter().flat_map(|r| r.warnings.clone()).collect();
        self.note_warnings(Stage::Baseline, &warnings);
        let table = RegressionTable::new(
            "Table 4: baseline regressions",
            vec![
                TableColumn::from_regression("OLS", &o),
                TableColumn::from_regression("FE", &f),
                TableColumn::from_regression("SYS-GMM", &g),
            ],
        );
        self.emit_table(Stage::Baseline, "table4_baseline", &table)
    }

    fn robustness(&mut self) -> Result<()> {
        let m = self.model().clone();
        let p = &self.inputs.panel;
        let no_muni = p.subset(&UnitFilter::ExcludeMunicipalities)?;
        let r1 = fixed_effects(&no_muni, &self.base_spec(&m.dependent).two_way())?;
        let r2 = fixed_effects(p, &self.base_spec(&m.theil).two_way())?;
        let r3 = tsls(p, &self.base_spec(&m.dependent), &TslsOptions::new(&[m.core.as_str()]))?;
        let warnings: Vec<String> = [&r1, &r2, &r3].iter().flat_map(|r| r.warnings.clone()).collect();
        self.note_warnings(Stage::Robustness, &warnings);
        let table = RegressionTable::new(
            "Table 5: robustness checks",
            vec![
                TableColumn::from_regression("Excluding municipalities", &r1),
                TableColumn::from_regression(&format!("{} as dependent", m.theil), &r2),
                TableColumn::from_regression("2SLS", &r3),
            ],
        )
        .collapse(&m.controls, "control variable");
        self.emit_table(Stage::Robustness, "table5_robustness", &table)
    }

    fn heterogeneity(&mut self) -> Result<()> {
        let m = self.model().clone();
        let p = &self.inputs.panel;
        let spec = self.base_spec(&m.dependent);
        let mut cols = Vec::new();
        for (g, label) in [
            (RegionGroup::East, "Eastern"),
            (RegionGroup::Central, "Central"),
            (RegionGroup::West, "Western"),
        ] {
            let sub = p.subset(&UnitFilter::Regions(vec![g]))?;
            let r = fixed_effects(&sub, &spec.clone().two_way())?;
            cols.push(TableColumn::from_regression(label, &r));
        }
        for r in quantile_regression(p, &spec, &m.quantiles)? {
            cols.push(TableColumn::from_regression(&r.estimator.label(), &r));
        }
        let table = RegressionTable::new("Table 6: heterogeneity", cols);
        self.emit_table(Stage::Heterogeneity, "table6_heterogeneity", &table)
    }

    fn mediation(&mut self) -> Result<()> {
        let m = self.model().clone();
        let specs: Vec<MediationSpec> = m
            .mediators
            .iter()
            .map(|med| {
                MediationSpec::new(&m.core, med, &m.dependent)
                    .controls(&m.controls)
                    .alpha(m.mediation_alpha)
            })
            .collect();
        let reports = mediation_tests(&self.inputs.panel, &specs)?;
        let table = mediation_table(&reports)?;
        self.out.write(
            "mediation_reports.json",
            (serde_json::to_string_pretty(&reports)? + "\n").as_bytes(),
        )?;
        let mut t = table;
        t.title = "Table 7: mediation effects".into();
        self.emit_table(Stage::Mediation, "table7_mediation", &t)?;
        let summary = report::mediation_summary_markdown(&reports, self.cfg.precision);
        self.markdown.push((Stage::Mediation, summary));
        Ok(())
    }

    fn spatial(&mut self) -> Result<()> {
        let m = self.model().clone();
        let prec = self.cfg.precision;
        let p = self.inputs.panel.clone();
        let mut matrices = BTreeMap::new();
        let mut kinds = m.weights.clone();
        if !kinds.contains(&m.moran_weights) {
            kinds.push(m.moran_weights);
        }
        for kind in &kinds {
            let w = weights_for_panel(&p, *kind, &m.economic_variable)?;
            let notes = w.notes.clone();
            self.note_warnings(Stage::Spatial, &notes);
            self.out
                .write_with(&format!("weights_{}.csv", kind.label()), |b| w.write_csv(b))?;
            matrices.insert(*kind, w);
        }

        let wm = &matrices[&m.moran_weights];
        let mut tables = Vec::new();
        for var in [&m.dependent, &m.core] {
            let t = moran_by_year(&p, var, wm)?;
            self.out
                .write_with(&format!("moran_{}.csv", var.to_lowercase()), |b| t.write_csv(b))?;
            tables.push(t);
        }
        let mut md = format!(
            "**Table 8a: global Moran's I ({} weights)**\n\n{}\n",
            m.moran_weights.label(),
            moran_markdown(&tables, prec)
        );

        let mut years: Vec<i32> = m
            .scatter_years
            .iter()
            .copied()
            .filter(|y| p.year_index(*y).is_some())
            .collect();
        if years.is_empty() {
            years.push(*p.years().last().expect("non-empty panel"));
        }
        for y in years {
            let j = p.year_index(y).expect("filtered");
            let x = p.cross_section(&m.dependent, j)?;
            let sc = moran_scatter(&x, wm)?;
            self.out
                .write_with(&format!("fig2_moran_scatter_{y}.csv"), |b| report::write_fig2_csv(b, &sc))?;
        }

        let spec = self.base_spec(&m.dependent);
        let mut cols = Vec::new();
        let mut fits = Vec::new();
        for kind in &m.weights {
            let w = &matrices[kind];
            let fit = slm_fit(&p, &spec, w)?;
            let eff = effect_decomposition(&fit, w, m.effect_draws, self.cfg.seed)?;
            if eff.rejected > 0 {
                self.warnings.push(format!(
                    "spatial: {} of {} effect draws outside the admissible rho interval ({})",
                    eff.rejected,
                    eff.draws,
                    kind.label()
                ));
            }
            cols.push(TableColumn::from_slm(kind.label(), &fit, &eff, &m.core)?);
            fits.push(serde_json::json!({ "weights": kind.label(), "fit": fit, "effects": eff }));
        }
        let table = RegressionTable {
            row_order: vec![
                m.core.clone(),
                "Direct".into(),
                "Indirect".into(),
                "Total".into(),
                "rho".into(),
            ],
            ..RegressionTable::new("Table 8b: spatial lag model", cols)
        };
        self.out.write_with("table8_slm.csv", |b| table.write_csv(b))?;
        self.out.write(
            "table8_slm.json",
            (serde_json::to_string_pretty(&fits)? + "\n").as_bytes(),
        )?;
        md.push_str(&table.to_markdown(prec));
        self.markdown.push((Stage::Spatial, md));
        Ok(())
    }
}
