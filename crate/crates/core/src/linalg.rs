//! Small dense linear-algebra and distribution helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};

use crate::error::{Error, Result};

/// Relative tolerance on `|R_jj| / ||x_j||` below which a column is treated as
/// a linear combination of the columns before it.
const COLLINEARITY_TOL: f64 = 1e-9;

/// Least-squares solution of `y = X b` with the pieces needed for inference.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub beta: DVector<f64>,
    pub residuals: DVector<f64>,
    /// `(X'X)^{-1}`.
    pub xtx_inv: DMatrix<f64>,
}

/// Returns the indices of columns that are (numerically) spanned by earlier columns.
pub fn collinear_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let k = x.ncols();
    if k == 0 {
        return Vec::new();
    }
    if x.nrows() < k {
        return (x.nrows()..k).collect();
    }
    let r = x.clone().qr().r();
    (0..k)
        .filter(|&j| {
            let norm = x.column(j).norm();
            norm == 0.0 || r[(j, j)].abs() / norm < COLLINEARITY_TOL
        })
        .collect()
}

/// QR-based least squares. `names` labels the columns for error reporting.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<LeastSquares> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows but response has {}",
            y.len()
        )));
    }
    let bad = collinear_columns(x);
    if !bad.is_empty() || n < k {
        return Err(Error::SingularDesign {
            columns: bad
                .into_iter()
                .map(|j| names.get(j).cloned().unwrap_or_else(|| format!("col{j}")))
                .collect(),
        });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign {
            columns: names.to_vec(),
        })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::SingularDesign {
            columns: names.to_vec(),
        })?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let residuals = y - x * &beta;
    Ok(LeastSquares {
        beta,
        residuals,
        xtx_inv,
    })
}

/// Inverse of a symmetric positive (semi)definite matrix. Falls back to the
/// eigenvalue pseudo-inverse when the Cholesky factorisation fails.
pub fn sym_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(ch) = sym.clone().cholesky() {
        return Some(ch.inverse());
    }
    sym_pinv(&sym)
}

/// Moore-Penrose inverse of a symmetric matrix via its eigendecomposition.
pub fn sym_pinv(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if max == 0.0 || !max.is_finite() {
        return None;
    }
    let tol = max * 1e-12 * m.nrows() as f64;
    let inv_vals = eig
        .eigenvalues
        .map(|v| if v.abs() > tol { 1.0 / v } else { 0.0 });
    let v = &eig.eigenvectors;
    Some(v * DMatrix::from_diagonal(&inv_vals) * v.transpose())
}

pub fn normal_two_sided_p(z: f64) -> f64 {
    if !z.is_finite() {
        return if z.is_nan() { f64::NAN } else { 0.0 };
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * n.sf(z.abs())).clamp(0.0, 1.0)
}

pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return if t.is_nan() { f64::NAN } else { 0.0 };
    }
    if df <= 0.0 {
        return f64::NAN;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if df <= 0.0 || x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).expect("valid chi-squared").sf(x).clamp(0.0, 1.0)
}

pub fn f_sf(x: f64, df1: f64, df2: f64) -> f64 {
    if df1 <= 0.0 || df2 <= 0.0 || x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    FisherSnedecor::new(df1, df2)
        .expect("valid F distribution")
        .sf(x)
        .clamp(0.0, 1.0)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicated_column_is_flagged() {
        let x = DMatrix::from_row_slice(4, 3, &[1., 2., 2., 1., 3., 3., 1., 5., 5., 1., 7., 7.]);
        assert_eq!(collinear_columns(&x), vec![2]);
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let err = least_squares(&x, &DVector::from_element(4, 1.0), &names).unwrap_err();
        match err {
            Error::SingularDesign { columns } => assert_eq!(columns, vec!["c".to_string()]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn pinv_of_rank_one() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = sym_pinv(&m).unwrap();
        let back = &m * &p * &m;
        assert!((back - m).norm() < 1e-12);
    }

    #[test]
    fn p_values() {
        assert!((normal_two_sided_p(1.959963984540054) - 0.05).abs() < 1e-9);
        assert!((chi2_sf(3.841458820694124, 1.0) - 0.05).abs() < 1e-9);
        assert_eq!(normal_two_sided_p(0.0), 1.0);
    }
}
