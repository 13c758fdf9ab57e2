use std::collections::BTreeMap;

use super::{build_design, cluster_vcov, coefficients, r_squared, Estimator, ModelSpec, RegressionResult, StdErrors, TestDist};
use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::panel::PanelDataset;

/// Pooled OLS with conventional standard errors.
pub fn ols(panel: &PanelDataset, spec: &ModelSpec) -> Result<RegressionResult> {
    ols_with(panel, spec, StdErrors::Conventional)
}

pub fn ols_with(panel: &PanelDataset, spec: &ModelSpec, se: StdErrors) -> Result<RegressionResult> {
    if !spec.fixed_effects.is_empty() {
        return Err(Error::SpecInvalid("pooled OLS takes no fixed effects; use fixed_effects".into()));
    }
    let (d, _) = build_design(panel, spec, &[])?;
    let (n, k) = (d.x.nrows(), d.x.ncols());
    if n <= k {
        return Err(Error::SpecInvalid(format!("{n} observations for {k} parameters")));
    }
    let ls = least_squares(&d.x, &d.y, &d.names)?;
    let df = (n - k) as f64;
    let vcov = match se {
        StdErrors::Conventional => &ls.xtx_inv * (ls.residuals.norm_squared() / df),
        StdErrors::ClusterUnit => cluster_vcov(&d.x, &ls.residuals, &ls.xtx_inv, &d.unit, k),
    };
    let df_ref = match se {
        StdErrors::Conventional => df,
        StdErrors::ClusterUnit => (d.unit.iter().collect::<std::collections::BTreeSet<_>>().len() as f64 - 1.0).max(1.0),
    };
    Ok(RegressionResult {
        estimator: Estimator::Ols,
        dependent: spec.dependent.clone(),
        coefficients: coefficients(&d.names, &ls.beta, &vcov, TestDist::T, df_ref),
        n_obs: n,
        dist: TestDist::T,
        df_resid: Some(df),
        r_squared: Some(r_squared(&d.y, &ls.residuals, spec.intercept)),
        diagnostics: BTreeMap::new(),
        absorbed: Vec::new(),
        n_instruments: None,
        warnings: Vec::new(),
        fixed_effects: Default::default(),
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;

    fn panel_xy(x: &[f64], y: &[f64]) -> PanelDataset {
        let years: Vec<i32> = (0..x.len() as i32).collect();
        PanelDataset::new(vec!["A".into()], years)
            .unwrap()
            .with_variable("x", DMatrix::from_row_slice(1, x.len(), x))
            .unwrap()
            .with_variable("y", DMatrix::from_row_slice(1, y.len(), y))
            .unwrap()
    }

    #[test]
    fn exact_fit_through_origin() {
        let p = panel_xy(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]);
        let r = ols(&p, &ModelSpec::new("y", &["x"])).unwrap();
        assert!((r.estimate("x").unwrap() - 2.0).abs() < 1e-12);
        assert!(r.estimate("_cons").unwrap().abs() < 1e-12);
        assert!((r.r_squared.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_point_slope() {
        // two points: exact fit, no residual degrees of freedom with intercept
        let p = panel_xy(&[1.0, 2.0], &[2.0, 4.0]);
        let r = ols(&p, &ModelSpec::new("y", &["x"]).without_intercept()).unwrap();
        assert!((r.estimate("x").unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(r.r_squared, Some(1.0));
    }

    #[test]
    fn duplicated_regressor_is_singular() {
        let p = panel_xy(&[1.0, 2.0, 4.0, 3.0], &[1.0, 3.0, 2.0, 5.0])
            .derive_variable("x2", &crate::panel::Derivation::Expr(crate::panel::Expr::var("x")))
            .unwrap();
        match ols(&p, &ModelSpec::new("y", &["x", "x2"])) {
            Err(Error::SingularDesign { columns }) => assert!(columns.contains(&"x2".to_string())),
            other => panic!("expected SingularDesign, got {other:?}"),
        }
    }

    #[test]
    fn residuals_orthogonal_and_t_identity() {
        let x = [0.3, 1.2, -0.7, 2.2, 0.9, -1.4, 0.1, 1.7];
        let y = [1.0, 2.1, -0.2, 3.9, 1.1, -0.9, 0.8, 2.5];
        let p = panel_xy(&x, &y);
        let r = ols(&p, &ModelSpec::new("y", &["x"])).unwrap();
        let b0 = r.estimate("_cons").unwrap();
        let b1 = r.estimate("x").unwrap();
        let e: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - b0 - b1 * a).collect();
        assert!(e.iter().sum::<f64>().abs() < 1e-12);
        assert!(e.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-12);
        for c in &r.coefficients {
            assert!((c.statistic.abs() - (c.estimate / c.std_error).abs()).abs() < 1e-10);
            assert!((0.0..=1.0).contains(&c.p_value));
        }
        // textbook slope se: sqrt(s² / Sxx)
        let xm = x.iter().sum::<f64>() / 8.0;
        let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
        let s2 = e.iter().map(|v| v * v).sum::<f64>() / 6.0;
        assert!((r.coef("x").unwrap().std_error - (s2 / sxx).sqrt()).abs() < 1e-12);
    }
}
