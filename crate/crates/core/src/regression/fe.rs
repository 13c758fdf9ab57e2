use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    build_design, cluster_vcov, coefficients, r_squared, Estimator, FixedEffect, ModelSpec, RegressionResult, StdErrors,
    TestDist, CONST,
};
use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::panel::PanelDataset;

/// Share of a column's centered norm that must survive demeaning for it to
/// count as identified.
const ABSORB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeOptions {
    #[serde(default)]
    pub std_errors: StdErrors,
    /// Drop absorbed regressors and report them instead of failing.
    #[serde(default)]
    pub drop_absorbed: bool,
}

/// Within estimator with the fixed effects declared in `spec` (two-way when
/// none are declared).
pub fn fixed_effects(panel: &PanelDataset, spec: &ModelSpec) -> Result<RegressionResult> {
    fixed_effects_with(panel, spec, FeOptions::default())
}

pub fn fixed_effects_with(panel: &PanelDataset, spec: &ModelSpec, opts: FeOptions) -> Result<RegressionResult> {
    let mut spec = spec.clone();
    if spec.fixed_effects.is_empty() {
        spec.fixed_effects = [FixedEffect::Unit, FixedEffect::Time].into_iter().collect();
    }
    let (d, _) = build_design(panel, &spec, &[])?;
    let groups = group_ids(&spec.fixed_effects, &d.unit, &d.year);
    let n = d.x.nrows();

    let first = usize::from(spec.intercept);
    let reg_cols: Vec<usize> = (first..d.x.ncols()).collect();
    let mut xs = DMatrix::zeros(n, reg_cols.len());
    for (q, &c) in reg_cols.iter().enumerate() {
        xs.set_column(q, &d.x.column(c));
    }
    let xt = within_transform(&xs, &groups);
    let yt = within_transform(&DMatrix::from_column_slice(n, 1, d.y.as_slice()), &groups);

    let mut keep = Vec::new();
    let mut absorbed = Vec::new();
    for q in 0..reg_cols.len() {
        let col = xs.column(q);
        let mean = col.mean();
        let scale = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt().max(col.norm() * 1e-300);
        let left = xt.column(q).norm();
        if scale == 0.0 || left <= ABSORB_TOL * scale {
            absorbed.push(spec.regressors[q].clone());
        } else {
            keep.push(q);
        }
    }
    if !absorbed.is_empty() && (!opts.drop_absorbed || keep.is_empty()) {
        return Err(Error::AllVariationAbsorbed(absorbed));
    }

    // Regress (demeaned + grand mean) on a constant so the intercept is the
    // average fixed effect; slopes are those of the within regression.
    let k = keep.len() + first;
    let mut x = DMatrix::zeros(n, k);
    let mut names = Vec::with_capacity(k);
    if spec.intercept {
        x.column_mut(0).fill(1.0);
        names.push(CONST.to_string());
    }
    for (c, &q) in keep.iter().enumerate() {
        let m = if spec.intercept { xs.column(q).mean() } else { 0.0 };
        x.set_column(first + c, &xt.column(q).add_scalar(m));
        names.push(spec.regressors[q].clone());
    }
    let ybar = if spec.intercept { d.y.mean() } else { 0.0 };
    let y: DVector<f64> = yt.column(0).add_scalar(ybar);
    let ls = least_squares(&x, &y, &names)?;

    let levels = absorbed_levels(&spec.fixed_effects, &d.unit, &d.year);
    let dof = n as f64 - keep.len() as f64 - levels as f64;
    if dof <= 0.0 {
        return Err(Error::SpecInvalid(format!(
            "{n} observations cannot identify {} slopes and {levels} fixed-effect levels",
            keep.len()
        )));
    }
    let vcov = match opts.std_errors {
        StdErrors::Conventional => &ls.xtx_inv * (ls.residuals.norm_squared() / dof),
        StdErrors::ClusterUnit => cluster_vcov(&x, &ls.residuals, &ls.xtx_inv, &d.unit, k),
    };
    let df_ref = match opts.std_errors {
        StdErrors::Conventional => dof,
        StdErrors::ClusterUnit => (d.unit.iter().collect::<BTreeSet<_>>().len() as f64 - 1.0).max(1.0),
    };
    let yt_col: DVector<f64> = yt.column(0).into_owned();
    let mut warnings = Vec::new();
    if !absorbed.is_empty() {
        warnings.push(format!("absorbed by fixed effects: {}", absorbed.join(", ")));
    }
    Ok(RegressionResult {
        estimator: Estimator::FixedEffects,
        dependent: spec.dependent.clone(),
        coefficients: coefficients(&names, &ls.beta, &vcov, TestDist::T, df_ref),
        n_obs: n,
        dist: TestDist::T,
        df_resid: Some(dof),
        r_squared: Some(r_squared(&yt_col, &ls.residuals, false)),
        diagnostics: BTreeMap::new(),
        absorbed,
        n_instruments: None,
        warnings,
        fixed_effects: spec.fixed_effects.clone(),
    })
}

/// Group labels per row, one vector per declared effect.
pub(crate) fn group_ids(fe: &BTreeSet<FixedEffect>, unit: &[usize], year: &[usize]) -> Vec<Vec<usize>> {
    fe.iter()
        .map(|f| match f {
            FixedEffect::Unit => unit.to_vec(),
            FixedEffect::Time => year.to_vec(),
        })
        .collect()
}

/// Number of linearly independent dummy columns the effects absorb
/// (counting the constant).
fn absorbed_levels(fe: &BTreeSet<FixedEffect>, unit: &[usize], year: &[usize]) -> usize {
    let nu = unit.iter().collect::<BTreeSet<_>>().len();
    let nt = year.iter().collect::<BTreeSet<_>>().len();
    match (fe.contains(&FixedEffect::Unit), fe.contains(&FixedEffect::Time)) {
        (true, true) => nu + nt - 1,
        (true, false) => nu,
        (false, true) => nt,
        (false, false) => 1,
    }
}

/// Sweeps out group means for every grouping by alternating projections.
/// One pass is exact for a single grouping or a balanced two-way layout.
pub fn within_transform(m: &DMatrix<f64>, groups: &[Vec<usize>]) -> DMatrix<f64> {
    let mut out = m.clone();
    if groups.is_empty() {
        return out;
    }
    let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
    for _ in 0..10_000 {
        let mut change = 0.0_f64;
        for g in groups {
            let n_groups = g.iter().copied().max().map_or(0, |v| v + 1);
            for mut col in out.column_iter_mut() {
                let mut sum = vec![0.0; n_groups];
                let mut cnt = vec![0usize; n_groups];
                for (r, &id) in g.iter().enumerate() {
                    sum[id] += col[r];
                    cnt[id] += 1;
                }
                for (r, &id) in g.iter().enumerate() {
                    let mean = sum[id] / cnt[id] as f64;
                    change = change.max(mean.abs());
                    col[r] -= mean;
                }
            }
        }
        if groups.len() == 1 || change <= 1e-14 * scale {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::ols;

    /// Deterministic pseudo-random numbers for fixtures.
    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
    }

    fn panel(n: usize, t: usize, seed: u64, unit_shift: f64) -> PanelDataset {
        let mut s = seed;
        let mut x = DMatrix::zeros(n, t);
        let mut y = DMatrix::zeros(n, t);
        for i in 0..n {
            let ui = i as f64 * 0.7 - 1.0;
            for j in 0..t {
                x[(i, j)] = lcg(&mut s) + 0.5 * ui;
                y[(i, j)] = 1.5 * x[(i, j)] + ui + 0.2 * j as f64 + lcg(&mut s) + unit_shift * (i as f64 + 1.0).sqrt();
            }
        }
        PanelDataset::new((0..n).map(|i| format!("u{i:02}")).collect(), (2000..2000 + t as i32).collect())
            .unwrap()
            .with_variable("x", x)
            .unwrap()
            .with_variable("y", y)
            .unwrap()
    }

    #[test]
    fn unit_constants_do_not_move_slopes() {
        let spec = ModelSpec::new("y", &["x"]).with_fe(&[FixedEffect::Unit]);
        let a = fixed_effects(&panel(6, 5, 3, 0.0), &spec).unwrap();
        let b = fixed_effects(&panel(6, 5, 3, 4.0), &spec).unwrap();
        assert!((a.estimate("x").unwrap() - b.estimate("x").unwrap()).abs() < 1e-8);
        assert!((a.coef("x").unwrap().std_error - b.coef("x").unwrap().std_error).abs() < 1e-8);
    }

    #[test]
    fn equals_ols_on_explicit_demeaning() {
        let p = panel(7, 6, 11, 0.0);
        let fe = fixed_effects(&p, &ModelSpec::new("y", &["x"]).two_way()).unwrap();
        // explicit two-way demeaning of a balanced panel
        let demean = |m: &DMatrix<f64>| {
            let (n, t) = m.shape();
            let g = m.mean();
            DMatrix::from_fn(n, t, |i, j| m[(i, j)] - m.row(i).mean() - m.column(j).mean() + g)
        };
        let q = PanelDataset::new(p.units().to_vec(), p.years().to_vec())
            .unwrap()
            .with_variable("x", demean(p.get("x").unwrap()))
            .unwrap()
            .with_variable("y", demean(p.get("y").unwrap()))
            .unwrap();
        let o = ols(&q, &ModelSpec::new("y", &["x"]).without_intercept()).unwrap();
        assert!((fe.estimate("x").unwrap() - o.estimate("x").unwrap()).abs() < 1e-10);
        // dummy-variable regression gives the same slope standard error
        let n = p.n_units();
        let t = p.n_years();
        let mut x = DMatrix::zeros(n * t, 1 + n + t - 1);
        let mut y = DVector::zeros(n * t);
        for i in 0..n {
            for j in 0..t {
                let r = i * t + j;
                x[(r, 0)] = p.get("x").unwrap()[(i, j)];
                x[(r, 1 + i)] = 1.0;
                if j > 0 {
                    x[(r, n + j)] = 1.0;
                }
                y[r] = p.get("y").unwrap()[(i, j)];
            }
        }
        let names: Vec<String> = (0..x.ncols()).map(|c| format!("c{c}")).collect();
        let ls = least_squares(&x, &y, &names).unwrap();
        let df = (n * t - x.ncols()) as f64;
        let se = (ls.xtx_inv[(0, 0)] * ls.residuals.norm_squared() / df).sqrt();
        assert!((ls.beta[0] - fe.estimate("x").unwrap()).abs() < 1e-10);
        assert!((se - fe.coef("x").unwrap().std_error).abs() < 1e-10);
    }

    #[test]
    fn time_invariant_regressor_is_absorbed() {
        let p = panel(5, 4, 1, 0.0);
        let z = DMatrix::from_fn(5, 4, |i, _| i as f64);
        let p = p.with_variable("z", z).unwrap();
        let spec = ModelSpec::new("y", &["z"]).with_fe(&[FixedEffect::Unit]);
        assert!(matches!(fixed_effects(&p, &spec), Err(Error::AllVariationAbsorbed(v)) if v == vec!["z".to_string()]));
        let spec = ModelSpec::new("y", &["x", "z"]).with_fe(&[FixedEffect::Unit]);
        let opts = FeOptions {
            drop_absorbed: true,
            ..Default::default()
        };
        let r = fixed_effects_with(&p, &spec, opts).unwrap();
        assert_eq!(r.absorbed, vec!["z".to_string()]);
        assert!(r.coef("z").is_none());
    }

    #[test]
    fn alternating_projections_on_unbalanced_rows() {
        let unit = vec![0, 0, 0, 1, 1, 2, 2, 2];
        let year = vec![0, 1, 2, 0, 2, 0, 1, 2];
        let m = DMatrix::from_column_slice(8, 1, &[1.0, 4.0, 2.0, 7.0, 3.0, 5.0, 8.0, 6.0]);
        let out = within_transform(&m, &[unit.clone(), year.clone()]);
        for g in [&unit, &year] {
            for id in 0..3 {
                let s: f64 = (0..8).filter(|&r| g[r] == id).map(|r| out[(r, 0)]).sum();
                assert!(s.abs() < 1e-10);
            }
        }
    }
}
