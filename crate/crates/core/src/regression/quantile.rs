use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{build_design, coefficients, Estimator, ModelSpec, RegressionResult, TestDist};
use crate::error::{Error, Result};
use crate::linalg::{least_squares, normal_quantile};
use crate::lp::{solve_lp, Constraint, LinearProgram, Relation, Sense};
use crate::panel::PanelDataset;

/// Quantiles reported in the heterogeneity table.
pub const QUANTILE_TAUS: [f64; 5] = [0.10, 0.25, 0.50, 0.75, 0.90];

/// `Σ ρ_τ(r)` with `ρ_τ(r) = r (τ − 1{r < 0})`.
pub fn check_loss(residuals: &[f64], tau: f64) -> f64 {
    residuals
        .iter()
        .map(|&r| if r < 0.0 { (tau - 1.0) * r } else { tau * r })
        .sum()
}

/// Minimises the check loss as the linear program
/// `min τ1'u + (1−τ)1'v  s.t.  X(β⁺ − β⁻) + u − v = y`.
pub(crate) fn quantile_fit(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> Result<DVector<f64>> {
    let (n, k) = x.shape();
    let nv = 2 * k + 2 * n;
    let mut objective = vec![0.0; nv];
    for i in 0..n {
        objective[2 * k + i] = tau;
        objective[2 * k + n + i] = 1.0 - tau;
    }
    let mut lp = LinearProgram::new(Sense::Minimize, objective);
    lp.constraints.reserve(n);
    for i in 0..n {
        let mut row = vec![0.0; nv];
        for j in 0..k {
            row[j] = x[(i, j)];
            row[k + j] = -x[(i, j)];
        }
        row[2 * k + i] = 1.0;
        row[2 * k + n + i] = -1.0;
        lp.constraints.push(Constraint::new(row, Relation::Eq, y[i]));
    }
    let sol = solve_lp(&lp)?;
    Ok(DVector::from_fn(k, |j, _| sol.x[j] - sol.x[k + j]))
}

/// Empirical quantile by order statistic (inverse of the step CDF).
fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Hall-Sheather bandwidth at the 5% level.
fn hall_sheather(n: usize, tau: f64) -> f64 {
    let q = normal_quantile(tau);
    let phi = (-0.5 * q * q).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let za = normal_quantile(0.975);
    (n as f64).powf(-1.0 / 3.0) * za.powf(2.0 / 3.0) * (1.5 * phi * phi / (2.0 * q * q + 1.0)).powf(1.0 / 3.0)
}

/// Pooled linear quantile regression, one result per `τ`. Standard errors
/// assume i.i.d. errors with the sparsity estimated from residual quantiles
/// at the Hall-Sheather bandwidth.
pub fn quantile_regression(panel: &PanelDataset, spec: &ModelSpec, taus: &[f64]) -> Result<Vec<RegressionResult>> {
    if !spec.fixed_effects.is_empty() {
        return Err(Error::SpecInvalid("quantile regression is pooled; drop the fixed effects".into()));
    }
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::SpecInvalid(format!("quantile {t} outside (0, 1)")));
    }
    let (d, _) = build_design(panel, spec, &[])?;
    let (n, k) = d.x.shape();
    if n <= k {
        return Err(Error::SpecInvalid(format!("{n} observations for {k} parameters")));
    }
    // rank check and (X'X)^{-1} come from the least-squares fit
    let ls = least_squares(&d.x, &d.y, &d.names)?;
    let mut out = Vec::with_capacity(taus.len());
    for &tau in taus {
        let beta = quantile_fit(&d.x, &d.y, tau)?;
        let resid = &d.y - &d.x * &beta;
        let mut sorted: Vec<f64> = resid.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        let h = hall_sheather(n, tau);
        let (lo, hi) = ((tau - h).max(1.0 / n as f64), (tau + h).min(1.0));
        let sparsity = (empirical_quantile(&sorted, hi) - empirical_quantile(&sorted, lo)) / (hi - lo);
        let vcov = &ls.xtx_inv * (tau * (1.0 - tau) * sparsity * sparsity);
        let df = (n - k) as f64;
        out.push(RegressionResult {
            estimator: Estimator::Quantile { tau },
            dependent: spec.dependent.clone(),
            coefficients: coefficients(&d.names, &beta, &vcov, TestDist::T, df),
            n_obs: n,
            dist: TestDist::T,
            df_resid: Some(df),
            r_squared: None,
            diagnostics: BTreeMap::new(),
            absorbed: Vec::new(),
            n_instruments: None,
            warnings: Vec::new(),
            fixed_effects: Default::default(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn intercept_only(y: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::from_element(y.len(), 1, 1.0), DVector::from_column_slice(y))
    }

    #[test]
    fn median_of_odd_sample() {
        let y = [5.0, 1.0, 9.0, 3.0, 7.0, 2.0, 8.0];
        let (x, yv) = intercept_only(&y);
        let b = quantile_fit(&x, &yv, 0.5).unwrap();
        assert_eq!(b[0], 5.0);
    }

    #[test]
    fn lower_quartile_matches_breakpoint_enumeration() {
        let y: Vec<f64> = (1..=100).map(f64::from).collect();
        let (x, yv) = intercept_only(&y);
        let b = quantile_fit(&x, &yv, 0.25).unwrap()[0];
        let loss = |c: f64| check_loss(&y.iter().map(|v| v - c).collect::<Vec<_>>(), 0.25);
        let best = y.iter().map(|&c| loss(c)).fold(f64::INFINITY, f64::min);
        assert!((loss(b) - best).abs() < 1e-9);
        assert!((25.0..=26.0).contains(&b));
    }

    #[test]
    fn slopes_under_location_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 300;
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let y = DVector::from_fn(n, |i, _| 1.0 + 0.7 * x[(i, 1)] + rng.sample::<f64, _>(StandardNormal));
        for tau in QUANTILE_TAUS {
            let b = quantile_fit(&x, &y, tau).unwrap();
            assert!((b[1] - 0.7).abs() < 0.25, "tau {tau}: {}", b[1]);
            assert!((b[0] - 1.0 - normal_quantile(tau)).abs() < 0.35, "tau {tau}: {}", b[0]);
        }
    }

    #[test]
    fn rejects_bad_quantiles() {
        let p = crate::panel::tests::toy_panel();
        let spec = ModelSpec::new("x", &[] as &[&str]);
        assert!(quantile_regression(&p, &spec, &[1.9]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn not_worse_than_ols(
                pts in proptest::collection::vec((-3.0f64..3.0, -5.0f64..5.0), 8..30),
                tau in 0.05f64..0.95,
            ) {
                let n = pts.len();
                let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { pts[i].0 });
                let y = DVector::from_fn(n, |i, _| pts[i].1);
                let names = vec!["c".to_string(), "x".to_string()];
                prop_assume!(least_squares(&x, &y, &names).is_ok());
                let ols = least_squares(&x, &y, &names).unwrap().beta;
                let q = quantile_fit(&x, &y, tau).unwrap();
                let lq = check_loss((&y - &x * &q).as_slice(), tau);
                let lo = check_loss((&y - &x * &ols).as_slice(), tau);
                prop_assert!(lq <= lo + 1e-9 * (1.0 + lo.abs()));
            }

            #[test]
            fn intercept_only_is_breakpoint_optimal(
                y in proptest::collection::vec(-50.0f64..50.0, 1..60),
                tau in 0.05f64..0.95,
            ) {
                let (x, yv) = intercept_only(&y);
                let b = quantile_fit(&x, &yv, tau).unwrap()[0];
                let loss = |c: f64| check_loss(&y.iter().map(|v| v - c).collect::<Vec<_>>(), tau);
                let best = y.iter().map(|&c| loss(c)).fold(f64::INFINITY, f64::min);
                prop_assert!((loss(b) - best).abs() < 1e-9 * (1.0 + best));
            }
        }
    }
}
