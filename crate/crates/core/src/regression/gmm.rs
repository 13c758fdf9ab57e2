//! Blundell-Bond system GMM for dynamic panels.
//!
//! Each unit contributes first-differenced equations (instrumented by lagged
//! levels of the dependent variable) stacked on level equations (instrumented
//! by its lagged first difference). Exogenous regressors instrument
//! themselves, in differences for the differenced block and in levels for
//! the level block.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{coefficients, Diagnostic, Estimator, FixedEffect, ModelSpec, RegressionResult, TestDist, CONST};
use crate::error::{Error, Result};
use crate::linalg::{chi2_sf, normal_two_sided_p, sym_inverse};
use crate::panel::{parse_lag, PanelDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmmSteps {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GmmSpec {
    /// Adds `L.<dependent>` to the regressors when missing.
    pub include_lag: bool,
    pub lag_from: usize,
    pub lag_to: usize,
    pub collapse: bool,
    pub steps: GmmSteps,
    pub windmeijer: bool,
}

impl Default for GmmSpec {
    fn default() -> Self {
        Self {
            include_lag: true,
            lag_from: 2,
            lag_to: 4,
            collapse: true,
            steps: GmmSteps::Two,
            windmeijer: true,
        }
    }
}

impl GmmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lag_from < 2 {
            return Err(Error::SpecInvalid("GMM instrument lags must start at 2 or later".into()));
        }
        if self.lag_to < self.lag_from {
            return Err(Error::SpecInvalid(format!(
                "GMM lag range {}..{} is empty",
                self.lag_from, self.lag_to
            )));
        }
        Ok(())
    }
}

/// One unit's stacked equations: differenced rows first, then level rows.
#[derive(Debug, Clone)]
struct UnitBlock {
    z: DMatrix<f64>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    /// year index of each row
    years: Vec<usize>,
    n_diff: usize,
}

impl UnitBlock {
    /// Block-diagonal one-step weighting: MA(1) structure of differenced
    /// errors, identity for levels.
    fn h(&self) -> DMatrix<f64> {
        let r = self.y.len();
        let mut h = DMatrix::identity(r, r);
        for a in 0..self.n_diff {
            h[(a, a)] = 2.0;
            if a + 1 < self.n_diff && self.years[a + 1] == self.years[a] + 1 {
                h[(a, a + 1)] = -1.0;
                h[(a + 1, a)] = -1.0;
            }
        }
        h
    }
}

#[derive(Debug, Clone)]
struct System {
    blocks: Vec<UnitBlock>,
    zx: DMatrix<f64>,
    zy: DVector<f64>,
    n_level: usize,
}

impl System {
    fn new(blocks: Vec<UnitBlock>) -> Self {
        let l = blocks[0].z.ncols();
        let k = blocks[0].x.ncols();
        let mut zx = DMatrix::zeros(l, k);
        let mut zy = DVector::zeros(l);
        let mut n_level = 0;
        for b in &blocks {
            zx += b.z.transpose() * &b.x;
            zy += b.z.transpose() * &b.y;
            n_level += b.y.len() - b.n_diff;
        }
        Self { blocks, zx, zy, n_level }
    }

    fn residuals(&self, beta: &DVector<f64>) -> Vec<DVector<f64>> {
        self.blocks.iter().map(|b| &b.y - &b.x * beta).collect()
    }

    /// `Σ Z_i' u_i u_i' Z_i`.
    fn omega(&self, u: &[DVector<f64>]) -> DMatrix<f64> {
        let l = self.zx.nrows();
        let mut om = DMatrix::zeros(l, l);
        for (b, ui) in self.blocks.iter().zip(u) {
            let s = b.z.transpose() * ui;
            om += &s * s.transpose();
        }
        om
    }

    /// `(β, (X'Z W Z'X)^{-1})` for weighting `w`.
    fn estimate(&self, w: &DMatrix<f64>, names: &[String]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let xzw = self.zx.transpose() * w;
        let a = &xzw * &self.zx;
        let a_inv = a
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::SingularDesign { columns: names.to_vec() })?;
        let beta = &a_inv * (&xzw * &self.zy);
        Ok((beta, a_inv))
    }

    #[cfg(test)]
    fn two_step_beta(&self, beta1: &DVector<f64>, names: &[String]) -> Result<DVector<f64>> {
        let w2 = sym_inverse(&self.omega(&self.residuals(beta1))).ok_or(Error::SingularWeighting)?;
        Ok(self.estimate(&w2, names)?.0)
    }
}

#[derive(Debug, Clone)]
struct Fit {
    beta: DVector<f64>,
    vcov: DMatrix<f64>,
    /// `(X'Z W Z'X)^{-1}` of the final step
    a_inv: DMatrix<f64>,
    w: DMatrix<f64>,
    resid: Vec<DVector<f64>>,
    hansen: f64,
}

/// Windmeijer finite-sample correction term `D = ∂β₂/∂β₁'`.
fn windmeijer_d(
    sys: &System,
    a2_inv: &DMatrix<f64>,
    w2: &DMatrix<f64>,
    u1: &[DVector<f64>],
    u2: &[DVector<f64>],
) -> DMatrix<f64> {
    let k = sys.zx.ncols();
    let l = sys.zx.nrows();
    let mut g2 = DVector::zeros(l);
    for (b, ui) in sys.blocks.iter().zip(u2) {
        g2 += b.z.transpose() * ui;
    }
    let left = a2_inv * sys.zx.transpose() * w2;
    let right = w2 * g2;
    let mut d = DMatrix::zeros(k, k);
    for j in 0..k {
        let mut dom = DMatrix::zeros(l, l);
        for (b, ui) in sys.blocks.iter().zip(u1) {
            let zu = b.z.transpose() * ui;
            let zx = b.z.transpose() * b.x.column(j);
            dom += &zx * zu.transpose() + &zu * zx.transpose();
        }
        d.set_column(j, &(&left * dom * &right));
    }
    d
}

fn fit(sys: &System, gmm: &GmmSpec, names: &[String]) -> Result<Fit> {
    let l = sys.zx.nrows();
    let mut a = DMatrix::zeros(l, l);
    for b in &sys.blocks {
        a += b.z.transpose() * b.h() * &b.z;
    }
    let w1 = sym_inverse(&a).ok_or(Error::SingularWeighting)?;
    let (beta1, a1_inv) = sys.estimate(&w1, names)?;
    let u1 = sys.residuals(&beta1);
    let om1 = sys.omega(&u1);
    let mid = sys.zx.transpose() * &w1 * &om1 * &w1 * &sys.zx;
    let v1r = &a1_inv * mid * &a1_inv;
    let w2 = sym_inverse(&om1).ok_or(Error::SingularWeighting)?;

    let hansen_at = |u: &[DVector<f64>]| {
        let mut g = DVector::zeros(l);
        for (b, ui) in sys.blocks.iter().zip(u) {
            g += b.z.transpose() * ui;
        }
        (g.transpose() * &w2 * &g)[(0, 0)]
    };

    match gmm.steps {
        GmmSteps::One => {
            let hansen = hansen_at(&u1);
            Ok(Fit {
                beta: beta1,
                vcov: v1r,
                a_inv: a1_inv,
                w: w1,
                resid: u1,
                hansen,
            })
        }
        GmmSteps::Two => {
            let (beta2, a2_inv) = sys.estimate(&w2, names)?;
            let u2 = sys.residuals(&beta2);
            let vcov = if gmm.windmeijer {
                let d = windmeijer_d(sys, &a2_inv, &w2, &u1, &u2);
                &a2_inv + &d * &a2_inv + &a2_inv * d.transpose() + &d * &v1r * d.transpose()
            } else {
                a2_inv.clone()
            };
            let hansen = hansen_at(&u2);
            Ok(Fit {
                beta: beta2,
                vcov,
                a_inv: a2_inv,
                w: w2,
                resid: u2,
                hansen,
            })
        }
    }
}

/// Arellano-Bond test for order-`m` serial correlation in the differenced
/// residuals.
fn ar_test(sys: &System, f: &Fit, m: usize) -> Option<Diagnostic> {
    let k = sys.zx.ncols();
    let l = sys.zx.nrows();
    let mut num = 0.0;
    let mut sum_sq = 0.0;
    let mut c = DVector::zeros(k);
    let mut zeew = DVector::zeros(l);
    let mut any = false;
    for (b, e) in sys.blocks.iter().zip(&f.resid) {
        let mut w = DVector::zeros(e.len());
        for a in 0..b.n_diff {
            let t = b.years[a];
            if t < m {
                continue;
            }
            if let Some(p) = (0..b.n_diff).find(|&q| b.years[q] == t - m) {
                w[a] = e[p];
                any = true;
            }
        }
        let we = w.dot(e);
        num += we;
        sum_sq += we * we;
        c += b.x.transpose() * &w;
        zeew += b.z.transpose() * e * we;
    }
    if !any {
        return None;
    }
    let cross = (c.transpose() * &f.a_inv * sys.zx.transpose() * &f.w * zeew)[(0, 0)];
    let var = sum_sq - 2.0 * cross + (c.transpose() * &f.vcov * &c)[(0, 0)];
    if !(var > 0.0) {
        return None;
    }
    let z = num / var.sqrt();
    Some(Diagnostic {
        statistic: z,
        p_value: normal_two_sided_p(z),
        df: None,
    })
}

fn build_system(panel: &PanelDataset, spec: &ModelSpec, gmm: &GmmSpec) -> Result<(System, Vec<String>)> {
    let dep = &spec.dependent;
    let y = panel.get(dep)?;
    let regs = spec
        .regressors
        .iter()
        .map(|r| panel.series(r))
        .collect::<Result<Vec<_>>>()?;
    let predetermined: Vec<bool> = spec
        .regressors
        .iter()
        .map(|r| parse_lag(r).is_some_and(|(_, base)| base == dep))
        .collect();
    let dynamic = predetermined.iter().any(|p| *p);
    let exog: Vec<usize> = (0..regs.len()).filter(|&q| !predetermined[q]).collect();
    let (n, t) = (panel.n_units(), panel.n_years());
    let lf = gmm.lag_from;
    let lags: Vec<usize> = (gmm.lag_from..=gmm.lag_to).collect();

    let obs = |i: usize, s: usize| y[(i, s)].is_finite() && regs.iter().all(|m| m[(i, s)].is_finite());
    let diff_ok = |i: usize, s: usize| s >= 1 && obs(i, s) && obs(i, s - 1);

    // instrument column layout
    let mut cols: BTreeMap<(u8, usize, usize), usize> = BTreeMap::new();
    let mut next = 0;
    let mut col = |key: (u8, usize, usize)| -> usize {
        *cols.entry(key).or_insert_with(|| {
            next += 1;
            next - 1
        })
    };
    if dynamic {
        for s in 0..t {
            for &lag in &lags {
                if s >= lag {
                    let key = if gmm.collapse { (0, 0, lag) } else { (0, s, lag) };
                    col(key);
                }
            }
            if s >= lf {
                let key = if gmm.collapse { (1, 0, 0) } else { (1, s, 0) };
                col(key);
            }
        }
    }
    let iv_base = next;
    let n_iv = 2 * exog.len() + usize::from(spec.intercept);
    let l = iv_base + n_iv;
    let k = spec.regressors.len() + usize::from(spec.intercept);
    let off = usize::from(spec.intercept);

    let mut blocks = Vec::with_capacity(n);
    for i in 0..n {
        let diff_rows: Vec<usize> = (0..t).filter(|&s| diff_ok(i, s)).collect();
        let level_rows: Vec<usize> = (0..t).filter(|&s| obs(i, s)).collect();
        let r = diff_rows.len() + level_rows.len();
        let mut z = DMatrix::zeros(r, l);
        let mut x = DMatrix::zeros(r, k);
        let mut yy = DVector::zeros(r);
        let mut years = Vec::with_capacity(r);
        for (a, &s) in diff_rows.iter().enumerate() {
            yy[a] = y[(i, s)] - y[(i, s - 1)];
            for (q, m) in regs.iter().enumerate() {
                x[(a, off + q)] = m[(i, s)] - m[(i, s - 1)];
            }
            if dynamic {
                for &lag in &lags {
                    if s >= lag && y[(i, s - lag)].is_finite() {
                        let key = if gmm.collapse { (0, 0, lag) } else { (0, s, lag) };
                        z[(a, cols[&key])] = y[(i, s - lag)];
                    }
                }
            }
            for (e, &q) in exog.iter().enumerate() {
                z[(a, iv_base + e)] = regs[q][(i, s)] - regs[q][(i, s - 1)];
            }
            years.push(s);
        }
        let nd = diff_rows.len();
        for (b, &s) in level_rows.iter().enumerate() {
            let a = nd + b;
            yy[a] = y[(i, s)];
            if spec.intercept {
                x[(a, 0)] = 1.0;
                z[(a, l - 1)] = 1.0;
            }
            for (q, m) in regs.iter().enumerate() {
                x[(a, off + q)] = m[(i, s)];
            }
            if dynamic && s >= lf {
                let dy = y[(i, s - lf + 1)] - y[(i, s - lf)];
                if dy.is_finite() {
                    let key = if gmm.collapse { (1, 0, 0) } else { (1, s, 0) };
                    z[(a, cols[&key])] = dy;
                }
            }
            for (e, &q) in exog.iter().enumerate() {
                z[(a, iv_base + exog.len() + e)] = regs[q][(i, s)];
            }
            years.push(s);
        }
        if r > 0 {
            blocks.push(UnitBlock {
                z,
                x,
                y: yy,
                years,
                n_diff: nd,
            });
        }
    }
    if blocks.is_empty() {
        return Err(Error::SpecInvalid("no usable observations for system GMM".into()));
    }
    Ok((System::new(blocks), spec.column_names()))
}

/// Two-step (by default) system GMM with Windmeijer-corrected standard
/// errors, Arellano-Bond AR(1)/AR(2) and Hansen J diagnostics.
pub fn system_gmm(panel: &PanelDataset, spec: &ModelSpec, gmm: &GmmSpec) -> Result<RegressionResult> {
    gmm.validate()?;
    if spec.fixed_effects.contains(&FixedEffect::Time) {
        return Err(Error::SpecInvalid(
            "time fixed effects are not supported in system GMM; add year dummies as regressors".into(),
        ));
    }
    if panel.n_years() < 4 {
        return Err(Error::SpecInvalid(format!(
            "system GMM needs at least 4 years, panel has {}",
            panel.n_years()
        )));
    }
    let mut spec = spec.clone();
    spec.fixed_effects = BTreeSet::new();
    let lag = format!("L.{}", spec.dependent);
    if gmm.include_lag && !spec.regressors.contains(&lag) {
        spec.regressors.insert(0, lag);
    }
    spec.validate()?;
    let (sys, names) = build_system(panel, &spec, gmm)?;
    let f = fit(&sys, gmm, &names)?;
    let l = sys.zx.nrows();
    let k = sys.zx.ncols();
    if l < k {
        return Err(Error::Underidentified {
            instruments: l,
            endogenous: k,
        });
    }
    let mut diagnostics = BTreeMap::new();
    for m in [1, 2] {
        if let Some(d) = ar_test(&sys, &f, m) {
            diagnostics.insert(format!("AR({m})"), d);
        }
    }
    if l > k {
        let df = (l - k) as f64;
        diagnostics.insert(
            "Hansen".into(),
            Diagnostic {
                statistic: f.hansen,
                p_value: chi2_sf(f.hansen, df),
                df: Some(df),
            },
        );
    }
    let mut warnings = Vec::new();
    let n_units = sys.blocks.len();
    if l > n_units {
        warnings.push(format!(
            "instrument count {l} exceeds number of units {n_units}; consider collapsing"
        ));
    }
    debug_assert_eq!(names.first().map(String::as_str), spec.intercept.then_some(CONST));
    Ok(RegressionResult {
        estimator: Estimator::SystemGmm,
        dependent: spec.dependent.clone(),
        coefficients: coefficients(&names, &f.beta, &f.vcov, TestDist::Z, f64::INFINITY),
        n_obs: sys.n_level,
        dist: TestDist::Z,
        df_resid: None,
        r_squared: None,
        diagnostics,
        absorbed: Vec::new(),
        n_instruments: Some(l),
        warnings,
        fixed_effects: BTreeSet::new(),
    })
}

/// Linear GMM on explicit matrices.
#[derive(Debug, Clone)]
pub struct LinearGmm {
    pub beta: DVector<f64>,
    pub residuals: DVector<f64>,
    /// `n · g' W g` with `g` the mean moment, using the supplied weighting.
    pub objective: f64,
}

/// One-step GMM `β = (X'Z W Z'X)^{-1} X'Z W Z'y`, with `W = (Z'Z)^{-1}`
/// unless a weighting matrix is supplied.
pub fn linear_gmm(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    weight: Option<&DMatrix<f64>>,
) -> Result<LinearGmm> {
    if x.nrows() != y.len() || z.nrows() != y.len() {
        return Err(Error::DimensionMismatch("X, y and Z need the same number of rows".into()));
    }
    if z.ncols() < x.ncols() {
        return Err(Error::Underidentified {
            instruments: z.ncols(),
            endogenous: x.ncols(),
        });
    }
    let w = match weight {
        Some(w) => w.clone(),
        None => sym_inverse(&(z.transpose() * z)).ok_or(Error::SingularWeighting)?,
    };
    let zx = z.transpose() * x;
    let xzw = zx.transpose() * &w;
    let a = &xzw * &zx;
    let names: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    let beta = a
        .lu()
        .solve(&(&xzw * (z.transpose() * y)))
        .ok_or(Error::SingularDesign { columns: names })?;
    let residuals = y - x * &beta;
    let g = z.transpose() * &residuals;
    let objective = (g.transpose() * &w * &g)[(0, 0)];
    Ok(LinearGmm {
        beta,
        residuals,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::least_squares;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn ar1_panel(n: usize, t: usize, gamma: f64, seed: u64) -> PanelDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let burn = 50;
        let mut y = DMatrix::zeros(n, t);
        let mut x = DMatrix::zeros(n, t);
        for i in 0..n {
            let u: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
            let mut prev = u / (1.0 - gamma);
            for s in 0..burn + t {
                let xv: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                let v = gamma * prev + 0.5 * xv + u + e;
                if s >= burn {
                    y[(i, s - burn)] = v;
                    x[(i, s - burn)] = xv;
                }
                prev = v;
            }
        }
        PanelDataset::new((0..n).map(|i| format!("u{i:03}")).collect(), (1..=t as i32).collect())
            .unwrap()
            .with_variable("y", y)
            .unwrap()
            .with_variable("x", x)
            .unwrap()
    }

    #[test]
    fn exactly_identified_equals_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40;
        let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let y = DVector::from_fn(n, |i, _| 1.0 + 2.0 * x[(i, 1)] - x[(i, 2)] + 0.3 * ((i * 7 % 11) as f64 - 5.0));
        let g = linear_gmm(&x, &y, &x, None).unwrap();
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let o = least_squares(&x, &y, &names).unwrap();
        assert!((g.beta - o.beta).amax() < 1e-8);
        assert!(g.objective.abs() < 1e-16 * n as f64 * 1e6);
    }

    #[test]
    fn instrument_layout_and_row_counts() {
        let p = ar1_panel(30, 12, 0.5, 1);
        let spec = ModelSpec::new("y", &["x"]);
        let r = system_gmm(&p, &spec, &GmmSpec::default()).unwrap();
        // level rows for years 2..12 of 30 units
        assert_eq!(r.n_obs, 330);
        // 3 collapsed lag columns, 1 level column, Δx, x, constant
        assert_eq!(r.n_instruments, Some(7));
        assert_eq!(r.coefficients[0].name, "_cons");
        assert_eq!(r.coefficients[1].name, "L.y");
        for key in ["AR(1)", "AR(2)", "Hansen"] {
            let d = &r.diagnostics[key];
            assert!((0.0..=1.0).contains(&d.p_value), "{key}");
        }
        assert_eq!(r.diagnostics["Hansen"].df, Some(4.0));
        // differenced errors of an AR(1) model are MA(1): AR(1) rejects
        assert!(r.diagnostics["AR(1)"].statistic < 0.0);
        let uncollapsed = GmmSpec {
            collapse: false,
            ..GmmSpec::default()
        };
        let r2 = system_gmm(&p, &spec, &uncollapsed).unwrap();
        // diff: years 3..12 contribute min(s-1, 3) lag columns; levels: years 3..12
        let expected: usize = (2..12).map(|s: usize| (2..=4).filter(|l| s >= *l).count()).sum::<usize>() + 10 + 3;
        assert_eq!(r2.n_instruments, Some(expected));
        assert!(!r2.warnings.is_empty());
    }

    #[test]
    fn recovers_persistence_roughly() {
        let p = ar1_panel(200, 10, 0.6, 9);
        let r = system_gmm(&p, &ModelSpec::new("y", &["x"]), &GmmSpec::default()).unwrap();
        assert!((r.estimate("L.y").unwrap() - 0.6).abs() < 0.1);
        assert!((r.estimate("x").unwrap() - 0.5).abs() < 0.1);
    }

    #[test]
    fn windmeijer_matches_finite_differences() {
        let p = ar1_panel(25, 8, 0.5, 3);
        let mut spec = ModelSpec::new("y", &["x"]);
        spec.regressors.insert(0, "L.y".into());
        let gmm = GmmSpec::default();
        let (sys, names) = build_system(&p, &spec, &gmm).unwrap();
        let l = sys.zx.nrows();
        let mut a = DMatrix::zeros(l, l);
        for b in &sys.blocks {
            a += b.z.transpose() * b.h() * &b.z;
        }
        let w1 = sym_inverse(&a).unwrap();
        let (beta1, _) = sys.estimate(&w1, &names).unwrap();
        let u1 = sys.residuals(&beta1);
        let w2 = sym_inverse(&sys.omega(&u1)).unwrap();
        let (beta2, a2_inv) = sys.estimate(&w2, &names).unwrap();
        let u2 = sys.residuals(&beta2);
        let d = windmeijer_d(&sys, &a2_inv, &w2, &u1, &u2);
        let h = 1e-6;
        for j in 0..beta1.len() {
            let mut up = beta1.clone();
            up[j] += h;
            let mut dn = beta1.clone();
            dn[j] -= h;
            let num = (sys.two_step_beta(&up, &names).unwrap() - sys.two_step_beta(&dn, &names).unwrap()) / (2.0 * h);
            for i in 0..beta1.len() {
                assert!(
                    (num[i] - d[(i, j)]).abs() < 1e-5 * (1.0 + d[(i, j)].abs()),
                    "D[{i},{j}] analytic {} numeric {}",
                    d[(i, j)],
                    num[i]
                );
            }
        }
    }

    #[test]
    fn rejects_short_panels_and_time_effects() {
        let p = ar1_panel(5, 3, 0.5, 2);
        assert!(matches!(
            system_gmm(&p, &ModelSpec::new("y", &["x"]), &GmmSpec::default()),
            Err(Error::SpecInvalid(_))
        ));
        let p = ar1_panel(5, 6, 0.5, 2);
        let spec = ModelSpec::new("y", &["x"]).with_fe(&[FixedEffect::Time]);
        assert!(matches!(system_gmm(&p, &spec, &GmmSpec::default()), Err(Error::SpecInvalid(_))));
        let bad = GmmSpec {
            lag_from: 1,
            ..GmmSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
