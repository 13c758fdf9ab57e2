//! Panel estimators: pooled OLS, fixed effects, system GMM, 2SLS, quantile
//! regression, plus the two-group Theil index.

mod fe;
mod gmm;
mod iv;
mod ols;
mod quantile;
mod theil;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use fe::{fixed_effects, fixed_effects_with, within_transform, FeOptions};
pub use gmm::{linear_gmm, system_gmm, GmmSpec, GmmSteps, LinearGmm};
pub use iv::{tsls, TslsOptions};
pub use ols::{ols, ols_with};
pub use quantile::{check_loss, quantile_regression, QUANTILE_TAUS};
pub use theil::theil_index;
pub(crate) use fe::group_ids;

use crate::error::{Error, Result};
use crate::linalg::{normal_two_sided_p, t_two_sided_p};
use crate::panel::PanelDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedEffect {
    Unit,
    Time,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dependent: String,
    pub regressors: Vec<String>,
    #[serde(default)]
    pub fixed_effects: BTreeSet<FixedEffect>,
    #[serde(default = "yes")]
    pub intercept: bool,
}

fn yes() -> bool {
    true
}

impl ModelSpec {
    pub fn new<S: AsRef<str>>(dependent: &str, regressors: &[S]) -> Self {
        Self {
            dependent: dependent.to_string(),
            regressors: regressors.iter().map(|s| s.as_ref().to_string()).collect(),
            fixed_effects: BTreeSet::new(),
            intercept: true,
        }
    }

    pub fn with_fe(mut self, fe: &[FixedEffect]) -> Self {
        self.fixed_effects = fe.iter().copied().collect();
        self
    }

    pub fn two_way(self) -> Self {
        self.with_fe(&[FixedEffect::Unit, FixedEffect::Time])
    }

    pub fn without_intercept(mut self) -> Self {
        self.intercept = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.regressors.is_empty() && !self.intercept {
            return Err(Error::SpecInvalid("model has no regressors".into()));
        }
        let mut seen = BTreeSet::new();
        for r in &self.regressors {
            if !seen.insert(r) {
                return Err(Error::SpecInvalid(format!("regressor `{r}` listed twice")));
            }
            if *r == self.dependent {
                return Err(Error::SpecInvalid(format!("`{r}` is both dependent and regressor")));
            }
        }
        Ok(())
    }

    /// Column names of the design, intercept first when present.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.regressors.len() + 1);
        if self.intercept {
            names.push(CONST.to_string());
        }
        names.extend(self.regressors.iter().cloned());
        names
    }
}

pub const CONST: &str = "_cons";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Estimator {
    Ols,
    FixedEffects,
    SystemGmm,
    Tsls,
    Quantile { tau: f64 },
    Slm,
}

impl Estimator {
    pub fn label(&self) -> String {
        match self {
            Estimator::Ols => "OLS".into(),
            Estimator::FixedEffects => "FE".into(),
            Estimator::SystemGmm => "SYS-GMM".into(),
            Estimator::Tsls => "2SLS".into(),
            Estimator::Quantile { tau } => format!("Q={tau:.2}"),
            Estimator::Slm => "SLM".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdErrors {
    #[default]
    Conventional,
    ClusterUnit,
}

/// Whether inference uses Student t or standard normal reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestDist {
    T,
    Z,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    /// t or z statistic, `estimate / std_error`.
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub statistic: f64,
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub estimator: Estimator,
    pub dependent: String,
    pub coefficients: Vec<Coefficient>,
    pub n_obs: usize,
    pub dist: TestDist,
    pub df_resid: Option<f64>,
    pub r_squared: Option<f64>,
    /// Ordered diagnostics, e.g. `AR(1)`, `AR(2)`, `Hansen`, `Anderson LM`.
    pub diagnostics: BTreeMap<String, Diagnostic>,
    /// Regressors dropped because fixed effects absorbed them.
    #[serde(default)]
    pub absorbed: Vec<String>,
    #[serde(default)]
    pub n_instruments: Option<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub fixed_effects: BTreeSet<FixedEffect>,
}

impl RegressionResult {
    pub fn coef(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.coef(name).map(|c| c.estimate)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Stacked design for a spec: rows are unit-major over years where every
/// referenced series (including lags) is observed.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub names: Vec<String>,
    pub unit: Vec<usize>,
    pub year: Vec<usize>,
}

pub(crate) fn build_design(panel: &PanelDataset, spec: &ModelSpec, extra: &[String]) -> Result<(Design, DMatrix<f64>)> {
    spec.validate()?;
    let y = panel.series(&spec.dependent)?;
    let regs = spec
        .regressors
        .iter()
        .map(|r| panel.series(r))
        .collect::<Result<Vec<_>>>()?;
    let ext = extra.iter().map(|r| panel.series(r)).collect::<Result<Vec<_>>>()?;
    let names = spec.column_names();
    let (n, t) = (panel.n_units(), panel.n_years());
    let mut rows = Vec::new();
    for i in 0..n {
        for j in 0..t {
            let ok = y[(i, j)].is_finite()
                && regs.iter().all(|m| m[(i, j)].is_finite())
                && ext.iter().all(|m| m[(i, j)].is_finite());
            if ok {
                rows.push((i, j));
            }
        }
    }
    let k = names.len();
    let mut x = DMatrix::zeros(rows.len(), k);
    let mut e = DMatrix::zeros(rows.len(), ext.len());
    let mut yv = DVector::zeros(rows.len());
    for (r, &(i, j)) in rows.iter().enumerate() {
        yv[r] = y[(i, j)];
        let mut c = 0;
        if spec.intercept {
            x[(r, 0)] = 1.0;
            c = 1;
        }
        for (q, m) in regs.iter().enumerate() {
            x[(r, c + q)] = m[(i, j)];
        }
        for (q, m) in ext.iter().enumerate() {
            e[(r, q)] = m[(i, j)];
        }
    }
    Ok((
        Design {
            x,
            y: yv,
            names,
            unit: rows.iter().map(|r| r.0).collect(),
            year: rows.iter().map(|r| r.1).collect(),
        },
        e,
    ))
}

/// `(X'X)^{-1} (Σ_g X_g'e_g e_g'X_g) (X'X)^{-1}` with the usual small-sample
/// factor `G/(G-1) · (N-1)/(N-K)`.
pub(crate) fn cluster_vcov(
    x: &DMatrix<f64>,
    resid: &DVector<f64>,
    bread: &DMatrix<f64>,
    groups: &[usize],
    k_params: usize,
) -> DMatrix<f64> {
    let k = x.ncols();
    let mut scores: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    for (r, g) in groups.iter().enumerate() {
        let s = scores.entry(*g).or_insert_with(|| DVector::zeros(k));
        *s += x.row(r).transpose() * resid[r];
    }
    let mut meat = DMatrix::zeros(k, k);
    for s in scores.values() {
        meat += s * s.transpose();
    }
    let g = scores.len() as f64;
    let n = x.nrows() as f64;
    let factor = if g > 1.0 && n > k_params as f64 {
        g / (g - 1.0) * (n - 1.0) / (n - k_params as f64)
    } else {
        1.0
    };
    bread * meat * bread * factor
}

pub(crate) fn coefficients(
    names: &[String],
    beta: &DVector<f64>,
    vcov: &DMatrix<f64>,
    dist: TestDist,
    df: f64,
) -> Vec<Coefficient> {
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let se = vcov[(j, j)].max(0.0).sqrt();
            let stat = beta[j] / se;
            let p = match dist {
                TestDist::T => t_two_sided_p(stat, df),
                TestDist::Z => normal_two_sided_p(stat),
            };
            Coefficient {
                name: name.clone(),
                estimate: beta[j],
                std_error: se,
                statistic: stat,
                p_value: p,
            }
        })
        .collect()
}

/// Centered (with intercept) or uncentered R².
pub(crate) fn r_squared(y: &DVector<f64>, resid: &DVector<f64>, centered: bool) -> f64 {
    let ssr = resid.norm_squared();
    let sst = if centered {
        let m = y.mean();
        y.iter().map(|v| (v - m).powi(2)).sum::<f64>()
    } else {
        y.norm_squared()
    };
    if sst == 0.0 {
        if ssr == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ssr / sst
    }
}
