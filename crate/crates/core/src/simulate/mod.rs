//! Synthetic panels with known parameters and a Monte Carlo harness.
//!
//! Every random draw comes from a counter-based stream keyed by
//! `(replicate, unit, period, variable)`, so results do not depend on the
//! order or thread in which replicates run.

mod study;

pub use study::{gen_study_panel, StudyPanelSpec};

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::spatial::SpatialWeightMatrix;

pub const DEFAULT_BURN_IN: usize = 50;
pub const MIN_REPLICATIONS: usize = 50;
const Z975: f64 = 1.959_963_984_540_054;

/// Identifies the variable a random stream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Stream {
    X = 0,
    Nu = 1,
    Eps = 2,
    UnitEffect = 3,
    Aux = 4,
}

/// Counter-based normal draw. The replicate, variable and unit select the
/// ChaCha stream; the period selects the block position. Box-Muller on two
/// fixed words keeps every draw independent of all others.
#[derive(Debug, Clone)]
pub struct CounterRng {
    seed: [u8; 32],
}

impl CounterRng {
    pub fn new(master_seed: u64) -> Self {
        Self {
            seed: ChaCha8Rng::seed_from_u64(master_seed).get_seed(),
        }
    }

    fn words(&self, replicate: u64, unit: u64, period: u64, var: u8) -> (u64, u64) {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream((replicate << 40) | ((var as u64) << 32) | (unit & 0xffff_ffff));
        rng.set_word_pos(period as u128 * 4);
        (rng.next_u64(), rng.next_u64())
    }

    pub fn uniform(&self, replicate: u64, unit: u64, period: u64, var: u8) -> f64 {
        let (a, _) = self.words(replicate, unit, period, var);
        (a >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&self, replicate: u64, unit: u64, period: u64, var: u8) -> f64 {
        let (a, b) = self.words(replicate, unit, period, var);
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

fn one() -> f64 {
    1.0
}

fn burn() -> usize {
    DEFAULT_BURN_IN
}

fn first_year() -> i32 {
    2011
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n_units: usize,
    pub n_years: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "first_year")]
    pub first_year: i32,
    /// Constant term.
    #[serde(default)]
    pub alpha: f64,
    /// x → y.
    #[serde(default)]
    pub beta: f64,
    /// x → m.
    #[serde(default)]
    pub a: f64,
    /// m → y.
    #[serde(default)]
    pub b: f64,
    /// Coefficient on y_{t-1}.
    #[serde(default)]
    pub gamma: f64,
    /// Coefficient on Wy.
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "one")]
    pub sigma_x: f64,
    #[serde(default = "one")]
    pub sigma_eps: f64,
    #[serde(default = "one")]
    pub sigma_nu: f64,
    /// Unit-effect standard deviation; zero means no unit effects.
    #[serde(default)]
    pub sigma_u: f64,
    /// Correlation between x and the unit effect, in [-1, 1].
    #[serde(default)]
    pub unit_effect_corr: f64,
    /// Correlation between x and ε, in [-1, 1].
    #[serde(default)]
    pub endogeneity: f64,
    #[serde(default = "burn")]
    pub burn_in: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<SpatialWeightMatrix>,
}

impl DgpSpec {
    pub fn new(n_units: usize, n_years: usize, seed: u64) -> Self {
        Self {
            n_units,
            n_years,
            seed,
            first_year: first_year(),
            alpha: 0.0,
            beta: 0.0,
            a: 0.0,
            b: 0.0,
            gamma: 0.0,
            rho: 0.0,
            sigma_x: 1.0,
            sigma_eps: 1.0,
            sigma_nu: 1.0,
            sigma_u: 0.0,
            unit_effect_corr: 0.0,
            endogeneity: 0.0,
            burn_in: DEFAULT_BURN_IN,
            weights: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SpecInvalid(m));
        if self.n_units == 0 || self.n_years == 0 {
            return bad("DGP needs at least one unit and one year".into());
        }
        if !(self.rho.abs() < 1.0) || !(self.gamma.abs() < 1.0) {
            return bad(format!("|rho| and |gamma| must be below 1 (rho {}, gamma {})", self.rho, self.gamma));
        }
        for (name, v) in [("sigma_x", self.sigma_x), ("sigma_eps", self.sigma_eps), ("sigma_nu", self.sigma_nu)] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.sigma_u >= 0.0) {
            return bad(format!("sigma_u must be nonnegative, got {}", self.sigma_u));
        }
        for (name, v) in [("unit_effect_corr", self.unit_effect_corr), ("endogeneity", self.endogeneity)] {
            if !(-1.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [-1, 1], got {v}"));
            }
        }
        match &self.weights {
            Some(w) => {
                if w.n() != self.n_units {
                    return bad(format!("W has {} units, DGP has {}", w.n(), self.n_units));
                }
                if !w.row_standardized {
                    return bad("W must be row-standardised".into());
                }
            }
            None if self.rho != 0.0 => return bad("rho != 0 needs a weight matrix".into()),
            None => {}
        }
        Ok(())
    }

    pub fn unit_names(&self) -> Vec<String> {
        match &self.weights {
            Some(w) => w.units.clone(),
            None => (0..self.n_units).map(|i| format!("u{:03}", i + 1)).collect(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Every parameter behind a generated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub replicate: u64,
    pub seed: u64,
    pub n_units: usize,
    pub n_years: usize,
    pub first_year: i32,
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub rho: f64,
    pub sigma_x: f64,
    pub sigma_eps: f64,
    pub sigma_nu: f64,
    pub sigma_u: f64,
    pub unit_effect_corr: f64,
    pub endogeneity: f64,
    pub burn_in: usize,
    pub weights: Option<String>,
}

impl Truth {
    fn of(spec: &DgpSpec, replicate: u64) -> Self {
        Self {
            replicate,
            seed: spec.seed,
            n_units: spec.n_units,
            n_years: spec.n_years,
            first_year: spec.first_year,
            alpha: spec.alpha,
            beta: spec.beta,
            a: spec.a,
            b: spec.b,
            gamma: spec.gamma,
            rho: spec.rho,
            sigma_x: spec.sigma_x,
            sigma_eps: spec.sigma_eps,
            sigma_nu: spec.sigma_nu,
            sigma_u: spec.sigma_u,
            unit_effect_corr: spec.unit_effect_corr,
            endogeneity: spec.endogeneity,
            burn_in: spec.burn_in,
            weights: spec.weights.as_ref().map(|w| w.kind.label().to_string()),
        }
    }
}

/// Generates replicate 0 of `spec`.
pub fn gen_panel_dgp(spec: &DgpSpec) -> Result<(PanelDataset, Truth)> {
    gen_replicate(spec, 0)
}

/// Generates one replicate. Variables: `y`, `x`, `m`.
///
/// `m = a·x + ν`, `y_t = (I − ρW)^{-1}(α + γ y_{t-1} + β x_t + b m_t + u + ε_t)`,
/// started at zero and run `burn_in` periods before the kept sample.
pub fn gen_replicate(spec: &DgpSpec, replicate: u64) -> Result<(PanelDataset, Truth)> {
    spec.validate()?;
    let rng = CounterRng::new(spec.seed);
    let (n, t) = (spec.n_units, spec.n_years);
    let periods = spec.burn_in + t;
    let draw = |i: usize, s: usize, v: Stream| rng.normal(replicate, i as u64, s as u64, v as u8);

    let kx = spec.unit_effect_corr;
    let ke = spec.endogeneity;
    let zu: Vec<f64> = (0..n).map(|i| draw(i, 0, Stream::UnitEffect)).collect();
    let solve = match &spec.weights {
        Some(w) if spec.rho != 0.0 => {
            let a = DMatrix::identity(n, n) - w.matrix() * spec.rho;
            Some(a.lu())
        }
        _ => None,
    };

    let mut y_prev = DVector::zeros(n);
    let mut xs = DMatrix::zeros(n, t);
    let mut ms = DMatrix::zeros(n, t);
    let mut ys = DMatrix::zeros(n, t);
    for s in 0..periods {
        let mut rhs = DVector::zeros(n);
        let mut xv = DVector::zeros(n);
        let mut mv = DVector::zeros(n);
        for i in 0..n {
            let zx = draw(i, s, Stream::X);
            let x = spec.sigma_x * ((1.0 - kx * kx).sqrt() * zx + kx * zu[i]);
            let eps = spec.sigma_eps * ((1.0 - ke * ke).sqrt() * draw(i, s, Stream::Eps) + ke * zx);
            let m = spec.a * x + spec.sigma_nu * draw(i, s, Stream::Nu);
            rhs[i] = spec.alpha + spec.gamma * y_prev[i] + spec.beta * x + spec.b * m + spec.sigma_u * zu[i] + eps;
            xv[i] = x;
            mv[i] = m;
        }
        let y = match &solve {
            Some(lu) => lu
                .solve(&rhs)
                .ok_or(Error::NearSingularTransform { rho: spec.rho })?,
            None => rhs,
        };
        if s >= spec.burn_in {
            let c = s - spec.burn_in;
            xs.set_column(c, &xv);
            ms.set_column(c, &mv);
            ys.set_column(c, &y);
        }
        y_prev = y;
    }
    let years: Vec<i32> = (0..t as i32).map(|k| spec.first_year + k).collect();
    let panel = PanelDataset::new(spec.unit_names(), years)?
        .with_variable("x", xs)?
        .with_variable("m", ms)?
        .with_variable("y", ys)?;
    Ok((panel, Truth::of(spec, replicate)))
}

/// One parameter estimate from one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: String,
    pub truth: f64,
    pub estimate: f64,
    pub std_error: f64,
}

impl ParamEstimate {
    pub fn new(name: &str, truth: f64, estimate: f64, std_error: f64) -> Self {
        Self {
            name: name.into(),
            truth,
            estimate,
            std_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McParam {
    pub name: String,
    pub truth: f64,
    pub n: usize,
    pub mean: f64,
    pub bias: f64,
    /// Sample standard deviation of the estimates.
    pub sd: f64,
    /// Monte Carlo standard error of the mean, `sd / √n`.
    pub mc_se: f64,
    /// Share of replicates whose nominal 95% interval covers the truth.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub replications: usize,
    pub master_seed: u64,
    pub params: Vec<McParam>,
    /// `(replicate, message)` for replicates whose estimator failed.
    pub failures: Vec<(u64, String)>,
}

impl McReport {
    pub fn param(&self, name: &str) -> Option<&McParam> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Runs `estimator` on `replications` replicates of `spec` generated under
/// `master_seed`. Estimator errors are recorded per replicate.
pub fn monte_carlo<F>(spec: &DgpSpec, replications: usize, master_seed: u64, estimator: F) -> Result<McReport>
where
    F: Fn(&PanelDataset, &Truth) -> Result<Vec<ParamEstimate>> + Sync,
{
    if replications < MIN_REPLICATIONS {
        return Err(Error::SpecInvalid(format!(
            "{replications} replications requested, at least {MIN_REPLICATIONS} needed"
        )));
    }
    let mut spec = spec.clone();
    spec.seed = master_seed;
    spec.validate()?;
    let outcomes: Vec<Result<Vec<ParamEstimate>>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let (panel, truth) = gen_replicate(&spec, r)?;
            estimator(&panel, &truth)
        })
        .collect();

    let mut names: Vec<String> = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.iter().enumerate() {
        match o {
            Ok(ests) => {
                for e in ests {
                    if !names.contains(&e.name) {
                        names.push(e.name.clone());
                    }
                }
            }
            Err(e) => failures.push((r as u64, e.to_string())),
        }
    }
    let params = names
        .iter()
        .map(|name| {
            let hits: Vec<&ParamEstimate> = outcomes
                .iter()
                .filter_map(|o| o.as_ref().ok())
                .filter_map(|v| v.iter().find(|e| &e.name == name))
                .collect();
            summarize(name, &hits)
        })
        .collect();
    Ok(McReport {
        replications,
        master_seed,
        params,
        failures,
    })
}

fn summarize(name: &str, hits: &[&ParamEstimate]) -> McParam {
    let n = hits.len();
    let nf = n as f64;
    let truth = hits.first().map(|h| h.truth).unwrap_or(f64::NAN);
    let mean = hits.iter().map(|h| h.estimate).sum::<f64>() / nf;
    let sd = if n > 1 {
        (hits.iter().map(|h| (h.estimate - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    let covered = hits
        .iter()
        .filter(|h| (h.estimate - h.truth).abs() <= Z975 * h.std_error)
        .count();
    McParam {
        name: name.to_string(),
        truth,
        n,
        mean,
        bias: mean - truth,
        sd,
        mc_se: sd / nf.sqrt(),
        coverage: covered as f64 / nf,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{fixed_effects, ols, ModelSpec};
    use crate::spatial::tests::path_meta;
    use crate::spatial::{contiguity_matrix, global_morans_i};

    #[test]
    fn counter_draws_are_standard_normal() {
        let rng = CounterRng::new(3);
        let v: Vec<f64> = (0..20_000).map(|k| rng.normal(0, k % 100, k / 100, 0)).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let s2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!(m.abs() < 0.03, "{m}");
        assert!((s2 - 1.0).abs() < 0.05, "{s2}");
        // addressing is order-free
        assert_eq!(rng.normal(4, 5, 6, 2), CounterRng::new(3).normal(4, 5, 6, 2));
        assert_ne!(rng.normal(4, 5, 6, 2), rng.normal(4, 5, 6, 1));
        let u = rng.uniform(1, 1, 1, 1);
        assert!((0.0..1.0).contains(&u));
    }

    #[test]
    fn same_seed_same_panel() {
        let mut s = DgpSpec::new(8, 5, 11);
        s.beta = 1.0;
        s.gamma = 0.5;
        let (a, ta) = gen_panel_dgp(&s).unwrap();
        let (b, tb) = gen_panel_dgp(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        s.seed = 12;
        assert_ne!(gen_panel_dgp(&s).unwrap().0, a);
    }

    #[test]
    fn white_noise_when_all_zero() {
        let s = DgpSpec::new(30, 12, 1);
        let (p, _) = gen_panel_dgp(&s).unwrap();
        let y = p.get("y").unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..30 {
            for j in 0..12 {
                den += y[(i, j)] * y[(i, j)];
                if j > 0 {
                    num += y[(i, j)] * y[(i, j - 1)];
                }
            }
        }
        let r1 = num / den;
        assert!(r1.abs() < 3.0 / (360f64).sqrt() * 3.0);
    }

    #[test]
    fn spatial_dgp_clusters() {
        let w = contiguity_matrix(&path_meta(30)).unwrap();
        let mut s = DgpSpec::new(30, 1, 5);
        s.rho = 0.6;
        s.weights = Some(w.clone());
        let mut positive = 0;
        for r in 0..200 {
            let (p, _) = gen_replicate(&s, r).unwrap();
            let y = p.cross_section("y", 0).unwrap();
            if global_morans_i(&y, &w).unwrap().i > 0.0 {
                positive += 1;
            }
        }
        assert!(positive >= 190, "{positive}");
    }

    #[test]
    fn truth_round_trips() {
        let mut s = DgpSpec::new(4, 3, 9);
        s.beta = 0.25;
        s.weights = Some(contiguity_matrix(&path_meta(4)).unwrap());
        let (_, t) = gen_panel_dgp(&s).unwrap();
        let back: Truth = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        let spec_back = DgpSpec::from_json_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(spec_back, s);
    }

    #[test]
    fn csv_round_trip() {
        let mut s = DgpSpec::new(5, 4, 2);
        s.beta = 0.7;
        let (p, _) = gen_panel_dgp(&s).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = crate::panel::read_panel(buf.as_slice(), &Default::default()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn stationary_variance_bounded() {
        let mut s = DgpSpec::new(40, 60, 8);
        s.gamma = 0.9;
        let (p, _) = gen_panel_dgp(&s).unwrap();
        let y = p.get("y").unwrap();
        let var = |j: usize| y.column(j).iter().map(|v| v * v).sum::<f64>() / 40.0;
        let theory = 1.0 / (1.0 - 0.81);
        for j in [0, 30, 59] {
            assert!(var(j) < 3.0 * theory, "{}", var(j));
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = DgpSpec::new(4, 3, 0);
        s.rho = 0.5;
        assert!(matches!(s.validate(), Err(Error::SpecInvalid(_))));
        let mut s = DgpSpec::new(4, 3, 0);
        s.gamma = 1.0;
        assert!(s.validate().is_err());
        s.gamma = 0.0;
        s.sigma_eps = 0.0;
        assert!(s.validate().is_err());
        let ok = DgpSpec::new(4, 3, 0);
        assert!(matches!(
            monte_carlo(&ok, 10, 1, |_, _| Ok(vec![])),
            Err(Error::SpecInvalid(_))
        ));
    }

    #[test]
    fn ols_recovery_and_coverage() {
        let mut s = DgpSpec::new(20, 10, 0);
        s.alpha = 1.0;
        s.beta = 0.5;
        let rep = monte_carlo(&s, 500, 17, |p, t| {
            let r = ols(p, &ModelSpec::new("y", &["x"]))?;
            let c = r.coef("x").unwrap();
            Ok(vec![ParamEstimate::new("beta", t.beta, c.estimate, c.std_error)])
        })
        .unwrap();
        let b = rep.param("beta").unwrap();
        assert_eq!(b.n, 500);
        assert!(b.bias.abs() < 2.0 * b.mc_se, "{b:?}");
        assert!((0.92..=0.98).contains(&b.coverage), "{b:?}");
        // order independence
        let again = monte_carlo(&s, 500, 17, |p, t| {
            let r = ols(p, &ModelSpec::new("y", &["x"]))?;
            let c = r.coef("x").unwrap();
            Ok(vec![ParamEstimate::new("beta", t.beta, c.estimate, c.std_error)])
        })
        .unwrap();
        assert_eq!(again, rep);
    }

    #[test]
    fn fe_removes_correlated_effect_bias() {
        let mut s = DgpSpec::new(30, 8, 0);
        s.beta = 0.5;
        s.sigma_u = 1.0;
        s.unit_effect_corr = 0.6;
        let rep = monte_carlo(&s, 100, 3, |p, t| {
            let o = ols(p, &ModelSpec::new("y", &["x"]))?;
            let f = fixed_effects(p, &ModelSpec::new("y", &["x"]))?;
            Ok(vec![
                ParamEstimate::new("ols", t.beta, o.estimate("x").unwrap(), o.coef("x").unwrap().std_error),
                ParamEstimate::new("fe", t.beta, f.estimate("x").unwrap(), f.coef("x").unwrap().std_error),
            ])
        })
        .unwrap();
        let (o, f) = (rep.param("ols").unwrap(), rep.param("fe").unwrap());
        assert!(o.bias.abs() > 2.0 * o.mc_se, "{o:?}");
        assert!(f.bias.abs() < 2.0 * f.mc_se, "{f:?}");
    }

    #[test]
    fn failures_are_recorded() {
        let s = DgpSpec::new(5, 3, 0);
        let rep = monte_carlo(&s, 60, 1, |_, t| {
            if t.replicate % 2 == 0 {
                Err(Error::SpecInvalid("boom".into()))
            } else {
                Ok(vec![ParamEstimate::new("k", 0.0, 0.1, 1.0)])
            }
        })
        .unwrap();
        assert_eq!(rep.failures.len(), 30);
        assert_eq!(rep.param("k").unwrap().n, 30);
    }
}
