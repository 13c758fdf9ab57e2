//! Maximum-likelihood spatial lag model `y_t = ρ W y_t + X_t β + ε_t` on a
//! panel (W applied within each year) and its direct / indirect / total
//! effect decomposition.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{least_squares, normal_two_sided_p, sym_inverse};
use crate::panel::PanelDataset;
use crate::regression::{build_design, group_ids, within_transform, Coefficient, ModelSpec, CONST};
use crate::spatial::{SpatialWeightMatrix, WeightKind};

/// Margin kept from the admissible bounds of ρ.
pub const RHO_MARGIN: f64 = 1e-6;
const BOUNDARY_TOL: f64 = 1e-4;
const GRID: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlmResult {
    pub kind: WeightKind,
    pub dependent: String,
    pub rho: Coefficient,
    pub coefficients: Vec<Coefficient>,
    pub sigma2: f64,
    pub log_likelihood: f64,
    pub log_likelihood_rho0: f64,
    pub n_units: usize,
    pub n_years: usize,
    pub n_obs: usize,
    /// Covariance of `(β, ρ)` in coefficient order, ρ last.
    pub vcov: DMatrix<f64>,
    pub rho_bounds: (f64, f64),
    pub demeaned: bool,
}

impl SlmResult {
    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.coefficients.iter().find(|c| c.name == name).map(|c| c.estimate)
    }
}

/// Stacked SLM data, unit-major rows with every unit present in each year.
struct SlmData {
    x: DMatrix<f64>,
    y: DVector<f64>,
    wy: DVector<f64>,
    names: Vec<String>,
    unit: Vec<usize>,
    year: Vec<usize>,
    n: usize,
    t: usize,
}

/// Applies `W` to a stacked vector year by year.
fn apply_w(w: &DMatrix<f64>, v: &DVector<f64>, unit: &[usize], year: &[usize], n: usize, t: usize) -> DVector<f64> {
    let mut grid = DMatrix::zeros(n, t);
    for r in 0..v.len() {
        grid[(unit[r], year[r])] = v[r];
    }
    let lagged = w * grid;
    DVector::from_fn(v.len(), |r, _| lagged[(unit[r], year[r])])
}

fn prepare(panel: &PanelDataset, spec: &ModelSpec, w: &SpatialWeightMatrix) -> Result<SlmData> {
    if !w.row_standardized {
        return Err(Error::SpecInvalid("spatial lag model needs a row-standardised W".into()));
    }
    w.check_units(panel.units())?;
    let demean = !spec.fixed_effects.is_empty();
    let mut spec = spec.clone();
    if demean {
        spec.intercept = false;
    }
    let (d, _) = build_design(panel, &spec, &[])?;
    let n = panel.n_units();
    let mut years: Vec<usize> = d.year.clone();
    years.sort_unstable();
    years.dedup();
    for &yr in &years {
        if d.year.iter().filter(|&&v| v == yr).count() != n {
            return Err(Error::SpecInvalid(format!(
                "year {} lacks complete cross-sections for the spatial lag",
                panel.years()[yr]
            )));
        }
    }
    // compress year indices to those used
    let t_used = years.len();
    let year: Vec<usize> = d.year.iter().map(|y| years.binary_search(y).unwrap()).collect();
    let wy = apply_w(w.matrix(), &d.y, &d.unit, &year, n, t_used);
    let (mut x, mut y, mut wy) = (d.x, d.y, wy);
    if demean {
        let groups = group_ids(&spec.fixed_effects, &d.unit, &year);
        x = within_transform(&x, &groups);
        y = within_transform(&DMatrix::from_column_slice(y.len(), 1, y.as_slice()), &groups)
            .column(0)
            .into_owned();
        wy = within_transform(&DMatrix::from_column_slice(wy.len(), 1, wy.as_slice()), &groups)
            .column(0)
            .into_owned();
    }
    Ok(SlmData {
        x,
        y,
        wy,
        names: d.names,
        unit: d.unit,
        year,
        n,
        t: t_used,
    })
}

/// Concentrated log-likelihood pieces: `SSE(ρ) = a − 2ρb + ρ²c`.
struct Profile {
    a: f64,
    b: f64,
    c: f64,
    nt: f64,
    t: f64,
}

impl Profile {
    fn sse(&self, rho: f64) -> f64 {
        (self.a - 2.0 * rho * self.b + rho * rho * self.c).max(f64::MIN_POSITIVE)
    }

    fn loglik(&self, w: &SpatialWeightMatrix, rho: f64) -> f64 {
        let s2 = self.sse(rho) / self.nt;
        -0.5 * self.nt * ((2.0 * std::f64::consts::PI).ln() + 1.0 + s2.ln()) + self.t * w.log_det(rho)
    }
}

/// Admissible open interval for ρ given the eigenvalues of W.
pub fn rho_bounds(w: &SpatialWeightMatrix) -> (f64, f64) {
    let (lmin, _) = w.eigen_bounds;
    let lo = if lmin < 0.0 { 1.0 / lmin + RHO_MARGIN } else { -1.0 + RHO_MARGIN };
    (lo, 1.0 - RHO_MARGIN)
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > 1e-12 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Fits the spatial lag model by maximising the likelihood concentrated in
/// ρ. Fixed effects declared in the model spec are removed by demeaning first;
/// with none declared the model is pooled with an intercept.
pub fn slm_fit(panel: &PanelDataset, spec: &ModelSpec, w: &SpatialWeightMatrix) -> Result<SlmResult> {
    let d = prepare(panel, spec, w)?;
    let names = d.names.clone();
    let ls0 = least_squares(&d.x, &d.y, &names)?;
    let lsl = least_squares(&d.x, &d.wy, &names)?;
    let (e0, el) = (&ls0.residuals, &lsl.residuals);
    let nt = d.y.len() as f64;
    let prof = Profile {
        a: e0.norm_squared(),
        b: e0.dot(el),
        c: el.norm_squared(),
        nt,
        t: d.t as f64,
    };
    let (lo, hi) = rho_bounds(w);
    let f = |r: f64| prof.loglik(w, r);
    let step = (hi - lo) / GRID as f64;
    let mut best = (lo, f(lo));
    for g in 1..=GRID {
        let r = lo + step * g as f64;
        let v = f(r);
        if v > best.1 {
            best = (r, v);
        }
    }
    let rho = golden_max(f, (best.0 - step).max(lo), (best.0 + step).min(hi));
    if rho - lo < BOUNDARY_TOL || hi - rho < BOUNDARY_TOL {
        return Err(Error::RhoAtBoundary { rho });
    }
    let beta = &ls0.beta - &lsl.beta * rho;
    let sse = prof.sse(rho);
    let sigma2 = sse / nt;
    let k = beta.len();

    // analytic information matrix for (β, ρ, σ²)
    let a = DMatrix::identity(d.n, d.n) - w.matrix() * rho;
    let a_inv = a
        .lu()
        .try_inverse()
        .ok_or(Error::NearSingularTransform { rho })?;
    let wt = w.matrix() * &a_inv;
    let xb = &d.x * &beta;
    let gxb = apply_w(&wt, &xb, &d.unit, &d.year, d.n, d.t);
    let tf = d.t as f64;
    let tr1 = wt.trace();
    let tr2 = (&wt * &wt).trace();
    let trtt = (wt.transpose() * &wt).trace();
    let mut info = DMatrix::zeros(k + 2, k + 2);
    let xtx = d.x.transpose() * &d.x;
    info.view_mut((0, 0), (k, k)).copy_from(&(xtx / sigma2));
    let xg = d.x.transpose() * &gxb / sigma2;
    info.view_mut((0, k), (k, 1)).copy_from(&xg);
    info.view_mut((k, 0), (1, k)).copy_from(&xg.transpose());
    info[(k, k)] = tf * (tr2 + trtt) + gxb.norm_squared() / sigma2;
    info[(k, k + 1)] = tf * tr1 / sigma2;
    info[(k + 1, k)] = info[(k, k + 1)];
    info[(k + 1, k + 1)] = nt / (2.0 * sigma2 * sigma2);
    let cov = sym_inverse(&info).ok_or(Error::SingularDesign { columns: names.clone() })?;
    let vcov = cov.view((0, 0), (k + 1, k + 1)).into_owned();

    let coef = |name: &str, est: f64, var: f64| {
        let se = var.max(0.0).sqrt();
        let z = est / se;
        Coefficient {
            name: name.to_string(),
            estimate: est,
            std_error: se,
            statistic: z,
            p_value: normal_two_sided_p(z),
        }
    };
    let coefficients = names
        .iter()
        .enumerate()
        .map(|(j, nm)| coef(nm, beta[j], vcov[(j, j)]))
        .collect();
    Ok(SlmResult {
        kind: w.kind,
        dependent: spec.dependent.clone(),
        rho: coef("rho", rho, vcov[(k, k)]),
        coefficients,
        sigma2,
        log_likelihood: prof.loglik(w, rho),
        log_likelihood_rho0: prof.loglik(w, 0.0),
        n_units: d.n,
        n_years: d.t,
        n_obs: d.y.len(),
        vcov,
        rho_bounds: (lo, hi),
        demeaned: !spec.fixed_effects.is_empty(),
    })
}

/// Concentrated log-likelihood of a spec at a given ρ (for diagnostics).
pub fn slm_profile_loglik(panel: &PanelDataset, spec: &ModelSpec, w: &SpatialWeightMatrix, rho: f64) -> Result<f64> {
    let d = prepare(panel, spec, w)?;
    let ls0 = least_squares(&d.x, &d.y, &d.names)?;
    let lsl = least_squares(&d.x, &d.wy, &d.names)?;
    let prof = Profile {
        a: ls0.residuals.norm_squared(),
        b: ls0.residuals.dot(&lsl.residuals),
        c: lsl.residuals.norm_squared(),
        nt: d.y.len() as f64,
        t: d.t as f64,
    };
    Ok(prof.loglik(w, rho))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectStat {
    pub estimate: f64,
    pub sd: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub regressor: String,
    pub direct: EffectStat,
    pub indirect: EffectStat,
    pub total: EffectStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectDecomposition {
    pub kind: WeightKind,
    pub rho: f64,
    pub rows: Vec<EffectRow>,
    pub draws: usize,
    /// Draws rejected because ρ fell outside its admissible interval.
    pub rejected: usize,
    pub seed: u64,
}

impl EffectDecomposition {
    pub fn row(&self, regressor: &str) -> Option<&EffectRow> {
        self.rows.iter().find(|r| r.regressor == regressor)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["regressor", "effect", "estimate", "sd", "p"])?;
        for r in &self.rows {
            for (label, s) in [("direct", r.direct), ("indirect", r.indirect), ("total", r.total)] {
                wtr.write_record([
                    r.regressor.clone(),
                    label.to_string(),
                    format!("{:?}", s.estimate),
                    format!("{:?}", s.sd),
                    format!("{:?}", s.p_value),
                ])?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// `(mean diag S, mean of 1'S1 / N)` for `S = (I − ρW)^{-1}`.
pub fn multiplier_means(w: &DMatrix<f64>, rho: f64) -> Result<(f64, f64)> {
    let n = w.nrows();
    let a = DMatrix::identity(n, n) - w * rho;
    let lu = a.lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(Error::NearSingularTransform { rho });
    }
    let s = lu.try_inverse().ok_or(Error::NearSingularTransform { rho })?;
    let nf = n as f64;
    Ok((s.trace() / nf, s.sum() / nf))
}

/// Direct, indirect and total effect of a coefficient `beta` at `ρ`.
pub fn effects_at(w: &DMatrix<f64>, rho: f64, beta: f64) -> Result<(f64, f64, f64)> {
    let (md, mt) = multiplier_means(w, rho)?;
    let direct = md * beta;
    let total = mt * beta;
    Ok((direct, total - direct, total))
}

/// Effect decomposition with dispersion from `draws` parameter draws out of
/// the asymptotic normal of `(β, ρ)`.
pub fn effect_decomposition(
    fit: &SlmResult,
    w: &SpatialWeightMatrix,
    draws: usize,
    seed: u64,
) -> Result<EffectDecomposition> {
    let rho = fit.rho.estimate;
    if rho.abs() >= 1.0 - 1e-8 {
        return Err(Error::NearSingularTransform { rho });
    }
    let k = fit.coefficients.len();
    let idx: Vec<usize> = (0..k).filter(|&j| fit.coefficients[j].name != CONST).collect();
    let (md, mt) = multiplier_means(w.matrix(), rho)?;

    let chol = chol_factor(&fit.vcov);
    let mean: DVector<f64> = DVector::from_fn(k + 1, |j, _| {
        if j < k {
            fit.coefficients[j].estimate
        } else {
            rho
        }
    });
    let (lo, hi) = fit.rho_bounds;
    let sims: Vec<Option<Vec<(f64, f64, f64)>>> = (0..draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(d as u64 + 1);
            let e = DVector::from_fn(k + 1, |_, _| StandardNormal.sample(&mut rng));
            let theta = &mean + &chol * e;
            let r = theta[k];
            if !(r > lo && r < hi) {
                return None;
            }
            let (a, b) = multiplier_means(w.matrix(), r).ok()?;
            Some(idx.iter().map(|&j| (a * theta[j], (b - a) * theta[j], b * theta[j])).collect())
        })
        .collect();
    let kept: Vec<&Vec<(f64, f64, f64)>> = sims.iter().flatten().collect();
    let rejected = draws - kept.len();
    let sd = |vals: Vec<f64>| {
        let m = vals.len() as f64;
        if m < 2.0 {
            return f64::NAN;
        }
        let mean = vals.iter().sum::<f64>() / m;
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    };
    let stat = |est: f64, s: f64| EffectStat {
        estimate: est,
        sd: s,
        p_value: normal_two_sided_p(est / s),
    };
    let rows = idx
        .iter()
        .enumerate()
        .map(|(q, &j)| {
            let beta = fit.coefficients[j].estimate;
            let direct = md * beta;
            let total = mt * beta;
            let indirect = total - direct;
            EffectRow {
                regressor: fit.coefficients[j].name.clone(),
                direct: stat(direct, sd(kept.iter().map(|v| v[q].0).collect())),
                indirect: stat(indirect, sd(kept.iter().map(|v| v[q].1).collect())),
                total: stat(total, sd(kept.iter().map(|v| v[q].2).collect())),
            }
        })
        .collect();
    Ok(EffectDecomposition {
        kind: fit.kind,
        rho,
        rows,
        draws,
        rejected,
        seed,
    })
}

/// Lower Cholesky factor, falling back to the symmetric square root for
/// semidefinite covariances.
fn chol_factor(v: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (v + v.transpose()) * 0.5;
    if let Some(c) = sym.clone().cholesky() {
        return c.l();
    }
    let eig = sym.symmetric_eigen();
    let root = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::ols;
    use crate::spatial::contiguity_matrix;
    use crate::spatial::tests::path_meta;
    use rand::Rng;

    fn sar_panel(w: &SpatialWeightMatrix, rho: f64, t: usize, seed: u64) -> PanelDataset {
        let n = w.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a_inv = (DMatrix::identity(n, n) - w.matrix() * rho).try_inverse().unwrap();
        let mut x = DMatrix::zeros(n, t);
        let mut y = DMatrix::zeros(n, t);
        for s in 0..t {
            let xs = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0) * 2.0);
            let e = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let ys = &a_inv * (xs.map(|v| 1.0 + 0.5 * v) + e * 0.5);
            x.set_column(s, &xs);
            y.set_column(s, &ys);
        }
        PanelDataset::new(w.units.clone(), (0..t as i32).collect())
            .unwrap()
            .with_variable("x", x)
            .unwrap()
            .with_variable("y", y)
            .unwrap()
    }

    #[test]
    fn two_unit_closed_form() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let (d, i, t) = effects_at(&w, 0.5, 1.0).unwrap();
        assert!((d - 4.0 / 3.0).abs() < 1e-12);
        assert!((i - 2.0 / 3.0).abs() < 1e-12);
        assert!((t - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rho_is_identity() {
        let w = contiguity_matrix(&path_meta(5)).unwrap();
        let (d, i, t) = effects_at(w.matrix(), 0.0, 0.7).unwrap();
        assert_eq!((d, i, t), (0.7, 0.0, 0.7));
    }

    #[test]
    fn fit_recovers_and_decomposes() {
        let w = contiguity_matrix(&path_meta(30)).unwrap();
        let p = sar_panel(&w, 0.5, 12, 4);
        let spec = ModelSpec::new("y", &["x"]);
        let f = slm_fit(&p, &spec, &w).unwrap();
        assert!((f.rho.estimate - 0.5).abs() < 0.15, "{}", f.rho.estimate);
        assert!((f.estimate("x").unwrap() - 0.5).abs() < 0.1);
        assert!(f.log_likelihood >= f.log_likelihood_rho0);
        // local maximum of the profile
        for h in [-1e-3, 1e-3] {
            let l = slm_profile_loglik(&p, &spec, &w, f.rho.estimate + h).unwrap();
            assert!(l < f.log_likelihood);
        }
        let e = effect_decomposition(&f, &w, 200, 9).unwrap();
        let r = e.row("x").unwrap();
        assert!((r.total.estimate - r.direct.estimate - r.indirect.estimate).abs() < 1e-10);
        assert!(r.direct.sd > 0.0 && r.indirect.sd > 0.0);
        assert_eq!(e, effect_decomposition(&f, &w, 200, 9).unwrap());
        assert!(e.row("_cons").is_none());
    }

    #[test]
    fn rho_hat_invariant_to_relabelling() {
        let w = contiguity_matrix(&path_meta(12)).unwrap();
        let p = sar_panel(&w, 0.4, 6, 2);
        let spec = ModelSpec::new("y", &["x"]);
        let a = slm_fit(&p, &spec, &w).unwrap();
        // reverse the unit order under new names that sort the same way
        let n = w.n();
        let perm: Vec<usize> = (0..n).rev().collect();
        let mut wp = w.permuted(&perm).unwrap();
        wp.units = (0..n).map(|i| format!("q{i:02}")).collect();
        let flip = |m: &DMatrix<f64>| DMatrix::from_fn(n, m.ncols(), |i, j| m[(perm[i], j)]);
        let q = PanelDataset::new(wp.units.clone(), p.years().to_vec())
            .unwrap()
            .with_variable("x", flip(p.get("x").unwrap()))
            .unwrap()
            .with_variable("y", flip(p.get("y").unwrap()))
            .unwrap();
        let b = slm_fit(&q, &spec, &wp).unwrap();
        assert!((a.rho.estimate - b.rho.estimate).abs() < 1e-8);
    }

    #[test]
    fn zero_rho_data_gives_ols_like_beta() {
        let w = contiguity_matrix(&path_meta(20)).unwrap();
        let p = sar_panel(&w, 0.0, 10, 5);
        let spec = ModelSpec::new("y", &["x"]);
        let f = slm_fit(&p, &spec, &w).unwrap();
        let o = ols(&p, &spec).unwrap();
        // β̂(ρ) = β_OLS(y) − ρ β_OLS(Wy) exactly
        let wy = {
            let y = p.get("y").unwrap();
            w.matrix() * y
        };
        let pw = p.clone().with_variable("wy", wy).unwrap();
        let ol = ols(&pw, &ModelSpec::new("wy", &["x"])).unwrap();
        let implied = o.estimate("x").unwrap() - f.rho.estimate * ol.estimate("x").unwrap();
        assert!((f.estimate("x").unwrap() - implied).abs() < 1e-10);
    }

    #[test]
    fn demeaned_variant_runs() {
        let w = contiguity_matrix(&path_meta(15)).unwrap();
        let p = sar_panel(&w, 0.3, 8, 6);
        let spec = ModelSpec::new("y", &["x"]).with_fe(&[crate::regression::FixedEffect::Unit]);
        let f = slm_fit(&p, &spec, &w).unwrap();
        assert!(f.demeaned);
        assert!(f.estimate("_cons").is_none());
        assert!((f.estimate("x").unwrap() - 0.5).abs() < 0.15);
    }

    #[test]
    fn requires_standardised_weights() {
        let w = contiguity_matrix(&path_meta(4)).unwrap();
        let raw = SpatialWeightMatrix::from_raw(WeightKind::Custom, w.units.clone(), w.raw.clone(), false).unwrap();
        let p = sar_panel(&w, 0.0, 3, 1);
        assert!(matches!(
            slm_fit(&p, &ModelSpec::new("y", &["x"]), &raw),
            Err(Error::SpecInvalid(_))
        ));
    }
}
