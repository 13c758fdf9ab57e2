use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::fe::{group_ids, within_transform};
use super::{build_design, cluster_vcov, coefficients, Diagnostic, Estimator, ModelSpec, RegressionResult, StdErrors, TestDist};
use crate::error::{Error, Result};
use crate::linalg::{chi2_sf, f_sf, least_squares, sym_inverse};
use crate::panel::PanelDataset;

/// First-stage F below this triggers a weak-instrument warning.
pub const WEAK_F: f64 = 10.0;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TslsOptions {
    /// Endogenous regressors; each must appear in the model spec.
    pub endogenous: Vec<String>,
    /// Excluded instruments. Empty means the first lag of each endogenous
    /// regressor.
    #[serde(default)]
    pub instruments: Vec<String>,
    #[serde(default)]
    pub std_errors: StdErrors,
}

impl TslsOptions {
    pub fn new<S: AsRef<str>>(endogenous: &[S]) -> Self {
        Self {
            endogenous: endogenous.iter().map(|s| s.as_ref().to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn instruments<S: AsRef<str>>(mut self, z: &[S]) -> Self {
        self.instruments = z.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }
}

fn residualize(m: &DMatrix<f64>, on: &DMatrix<f64>) -> DMatrix<f64> {
    if on.ncols() == 0 {
        return m.clone();
    }
    let qr = on.clone().qr();
    let q = qr.q();
    m - &q * (q.transpose() * m)
}

/// Smallest squared canonical correlation between the columns of `a` and `b`.
fn min_sq_canonical_correlation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<f64> {
    let saa = sym_inverse(&(a.transpose() * a))?;
    let sbb = sym_inverse(&(b.transpose() * b))?;
    let sab = a.transpose() * b;
    let m = &saa * &sab * &sbb * sab.transpose();
    // eigenvalues of a product of PSD matrices are real and nonnegative
    let ev = m.complex_eigenvalues();
    ev.iter().map(|c| c.re.clamp(0.0, 1.0)).min_by(f64::total_cmp)
}

/// Two-stage least squares. Fixed effects declared in the model spec are swept out
/// of every variable (including instruments) before both stages.
pub fn tsls(panel: &PanelDataset, spec: &ModelSpec, opts: &TslsOptions) -> Result<RegressionResult> {
    if opts.endogenous.is_empty() {
        return Err(Error::SpecInvalid("2SLS needs at least one endogenous regressor".into()));
    }
    for e in &opts.endogenous {
        if !spec.regressors.contains(e) {
            return Err(Error::SpecInvalid(format!("endogenous `{e}` is not a regressor")));
        }
    }
    let instruments: Vec<String> = if opts.instruments.is_empty() {
        opts.endogenous.iter().map(|e| format!("L.{e}")).collect()
    } else {
        opts.instruments.clone()
    };
    if instruments.len() < opts.endogenous.len() {
        return Err(Error::Underidentified {
            instruments: instruments.len(),
            endogenous: opts.endogenous.len(),
        });
    }
    let (d, zext) = build_design(panel, spec, &instruments)?;
    let n = d.x.nrows();
    let fe = !spec.fixed_effects.is_empty();
    let groups = group_ids(&spec.fixed_effects, &d.unit, &d.year);

    // drop the intercept under fixed effects; it is absorbed
    let use_const = spec.intercept && !fe;
    let first = usize::from(spec.intercept);
    let mut names = Vec::new();
    let mut cols = Vec::new();
    if use_const {
        names.push(d.names[0].clone());
        cols.push(0);
    }
    for (q, r) in spec.regressors.iter().enumerate() {
        names.push(r.clone());
        cols.push(first + q);
    }
    let mut x = DMatrix::zeros(n, cols.len());
    for (c, &src) in cols.iter().enumerate() {
        x.set_column(c, &d.x.column(src));
    }
    let mut y = DMatrix::from_column_slice(n, 1, d.y.as_slice());
    let mut zex = zext;
    if fe {
        x = within_transform(&x, &groups);
        y = within_transform(&y, &groups);
        zex = within_transform(&zex, &groups);
    }
    let y: DVector<f64> = y.column(0).into_owned();

    let endo_idx: Vec<usize> = names
        .iter()
        .enumerate()
        .filter(|(_, nm)| opts.endogenous.contains(nm))
        .map(|(c, _)| c)
        .collect();
    let exo_idx: Vec<usize> = (0..names.len()).filter(|c| !endo_idx.contains(c)).collect();
    let take = |m: &DMatrix<f64>, idx: &[usize]| {
        let mut out = DMatrix::zeros(m.nrows(), idx.len());
        for (c, &j) in idx.iter().enumerate() {
            out.set_column(c, &m.column(j));
        }
        out
    };
    let x_endo = take(&x, &endo_idx);
    let x_exo = take(&x, &exo_idx);
    // full instrument set: included exogenous + excluded
    let z = {
        let mut z = DMatrix::zeros(n, x_exo.ncols() + zex.ncols());
        for j in 0..x_exo.ncols() {
            z.set_column(j, &x_exo.column(j));
        }
        for j in 0..zex.ncols() {
            z.set_column(x_exo.ncols() + j, &zex.column(j));
        }
        z
    };
    let z_names: Vec<String> = exo_idx
        .iter()
        .map(|&c| names[c].clone())
        .chain(instruments.iter().cloned())
        .collect();
    // collinear instrument sets are rejected by name
    least_squares(&z, &DVector::zeros(n), &z_names)?;

    // first stage: fitted values of every regressor
    let qz = z.clone().qr().q();
    let x_hat = &qz * (qz.transpose() * &x);
    let ls = least_squares(&x_hat, &y, &names)?;
    let beta = ls.beta;
    let resid = &y - &x * &beta;
    let k = names.len();
    let absorbed = if fe {
        let nu = d.unit.iter().collect::<BTreeSet<_>>().len();
        let nt = d.year.iter().collect::<BTreeSet<_>>().len();
        match (spec.fixed_effects.len(), nu, nt) {
            (2, nu, nt) => nu + nt - 1,
            _ if spec.fixed_effects.contains(&super::FixedEffect::Unit) => nu,
            _ => nt,
        }
    } else {
        0
    };
    let dof = n as f64 - k as f64 - absorbed as f64;
    if dof <= 0.0 {
        return Err(Error::SpecInvalid("no residual degrees of freedom".into()));
    }
    let vcov = match opts.std_errors {
        StdErrors::Conventional => &ls.xtx_inv * (resid.norm_squared() / dof),
        StdErrors::ClusterUnit => cluster_vcov(&x_hat, &resid, &ls.xtx_inv, &d.unit, k + absorbed),
    };

    let mut diagnostics = BTreeMap::new();
    let mut warnings = Vec::new();
    let l_excl = zex.ncols();
    let k_endo = x_endo.ncols();
    let ex_partial = residualize(&x_endo, &x_exo);
    let z_partial = residualize(&zex, &x_exo);
    if let Some(r2) = min_sq_canonical_correlation(&ex_partial, &z_partial) {
        let lm = n as f64 * r2;
        let df = (l_excl - k_endo + 1) as f64;
        diagnostics.insert(
            "Anderson LM".into(),
            Diagnostic {
                statistic: lm,
                p_value: chi2_sf(lm, df),
                df: Some(df),
            },
        );
    }
    for (c, &j) in endo_idx.iter().enumerate() {
        let e = &names[j];
        let target = ex_partial.column(c).into_owned();
        let rss_r = target.norm_squared();
        let fitted = &qz * (qz.transpose() * x_endo.column(c));
        let rss_u = (x_endo.column(c) - fitted).norm_squared();
        let df2 = n as f64 - z.ncols() as f64 - absorbed as f64;
        let f = ((rss_r - rss_u) / l_excl as f64) / (rss_u / df2);
        diagnostics.insert(
            format!("First-stage F ({e})"),
            Diagnostic {
                statistic: f,
                p_value: f_sf(f, l_excl as f64, df2),
                df: Some(l_excl as f64),
            },
        );
        if !(f >= WEAK_F) {
            warnings.push(format!("weak instrument: first-stage F for {e} is {f:.3} < {WEAK_F}"));
        }
    }

    let df_ref = match opts.std_errors {
        StdErrors::Conventional => dof,
        StdErrors::ClusterUnit => (d.unit.iter().collect::<BTreeSet<_>>().len() as f64 - 1.0).max(1.0),
    };
    Ok(RegressionResult {
        estimator: Estimator::Tsls,
        dependent: spec.dependent.clone(),
        coefficients: coefficients(&names, &beta, &vcov, TestDist::T, df_ref),
        n_obs: n,
        dist: TestDist::T,
        df_resid: Some(dof),
        r_squared: None,
        diagnostics,
        absorbed: Vec::new(),
        n_instruments: Some(z.ncols()),
        warnings,
        fixed_effects: spec.fixed_effects.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{ols, FixedEffect};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn endogenous_panel(seed: u64, relevance: f64) -> PanelDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, t) = (30, 12);
        let mut x = DMatrix::zeros(n, t);
        let mut y = DMatrix::zeros(n, t);
        let mut z = DMatrix::zeros(n, t);
        for i in 0..n {
            for j in 0..t {
                let zz: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                let v: f64 = rng.sample(StandardNormal);
                z[(i, j)] = zz;
                x[(i, j)] = relevance * zz + v + 0.8 * e;
                y[(i, j)] = 1.0 + 0.5 * x[(i, j)] + e;
            }
        }
        PanelDataset::new((0..n).map(|i| format!("u{i:02}")).collect(), (2011..2011 + t as i32).collect())
            .unwrap()
            .with_variable("x", x)
            .unwrap()
            .with_variable("y", y)
            .unwrap()
            .with_variable("z", z)
            .unwrap()
    }

    #[test]
    fn instrument_equal_to_regressor_reproduces_ols() {
        let p = endogenous_panel(1, 1.0);
        let spec = ModelSpec::new("y", &["x"]);
        let iv = tsls(&p, &spec, &TslsOptions::new(&["x"]).instruments(&["x"])).unwrap();
        let o = ols(&p, &spec).unwrap();
        for (a, b) in iv.coefficients.iter().zip(&o.coefficients) {
            assert!((a.estimate - b.estimate).abs() < 1e-10);
            assert!((a.std_error - b.std_error).abs() < 1e-10);
        }
    }

    #[test]
    fn strong_instrument_removes_bias() {
        let p = endogenous_panel(2, 1.0);
        let spec = ModelSpec::new("y", &["x"]);
        let iv = tsls(&p, &spec, &TslsOptions::new(&["x"]).instruments(&["z"])).unwrap();
        let o = ols(&p, &spec).unwrap();
        assert!((iv.estimate("x").unwrap() - 0.5).abs() < 0.15);
        assert!(o.estimate("x").unwrap() - 0.5 > 0.2);
        assert!(iv.warnings.is_empty());
        assert!(iv.diagnostics["Anderson LM"].p_value < 1e-6);
    }

    #[test]
    fn irrelevant_instrument_warns() {
        let p = endogenous_panel(3, 0.0);
        let spec = ModelSpec::new("y", &["x"]);
        let iv = tsls(&p, &spec, &TslsOptions::new(&["x"]).instruments(&["z"])).unwrap();
        assert!(iv.warnings.iter().any(|w| w.contains("weak instrument")));
    }

    #[test]
    fn default_instrument_is_first_lag() {
        let p = endogenous_panel(4, 1.0);
        let spec = ModelSpec::new("y", &["x"]).with_fe(&[FixedEffect::Unit, FixedEffect::Time]);
        let iv = tsls(&p, &spec, &TslsOptions::new(&["x"])).unwrap();
        assert_eq!(iv.n_obs, 30 * 11);
        assert!(iv.coef("_cons").is_none());
        assert!(matches!(
            tsls(&p, &spec, &TslsOptions::new(&["x", "y"])),
            Err(Error::SpecInvalid(_))
        ));
    }

    #[test]
    fn anderson_lm_single_instrument_is_n_r2() {
        // one endogenous, one instrument, no exogenous: LM = N · corr(x, z)²
        let p = endogenous_panel(6, 0.5);
        let spec = ModelSpec::new("y", &["x"]).without_intercept();
        let iv = tsls(&p, &spec, &TslsOptions::new(&["x"]).instruments(&["z"])).unwrap();
        let x = p.get("x").unwrap();
        let z = p.get("z").unwrap();
        let sxz: f64 = x.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
        let r2 = sxz * sxz / (x.norm_squared() * z.norm_squared());
        assert!((iv.diagnostics["Anderson LM"].statistic - 360.0 * r2).abs() < 1e-9);
    }
}
