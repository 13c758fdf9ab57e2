//! Stepwise mediation: `Y ~ X` (c), `M ~ X` (a) and `Y ~ X + M` (b, c′)
//! fitted on one common sample with identical controls.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::normal_two_sided_p;
use crate::panel::PanelDataset;
use crate::regression::{fixed_effects, ols, Coefficient, FixedEffect, ModelSpec, RegressionResult};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediationEstimator {
    Ols,
    /// Two-way fixed effects, the baseline configuration.
    #[default]
    FixedEffects,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Partial,
    Complete,
    None,
    Suppression,
}

impl Classification {
    pub fn label(self) -> &'static str {
        match self {
            Classification::Partial => "partial",
            Classification::Complete => "complete",
            Classification::None => "none",
            Classification::Suppression => "suppression",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediationSpec {
    pub treatment: String,
    pub mediator: String,
    pub outcome: String,
    #[serde(default)]
    pub controls: Vec<String>,
    #[serde(default)]
    pub estimator: MediationEstimator,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl MediationSpec {
    pub fn new(treatment: &str, mediator: &str, outcome: &str) -> Self {
        Self {
            treatment: treatment.into(),
            mediator: mediator.into(),
            outcome: outcome.into(),
            controls: Vec::new(),
            estimator: MediationEstimator::default(),
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn controls<S: AsRef<str>>(mut self, controls: &[S]) -> Self {
        self.controls = controls.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn estimator(mut self, e: MediationEstimator) -> Self {
        self.estimator = e;
        self
    }

    pub fn alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediationReport {
    pub treatment: String,
    pub mediator: String,
    pub outcome: String,
    pub estimator: MediationEstimator,
    pub alpha: f64,
    pub c: Coefficient,
    pub a: Coefficient,
    pub b: Coefficient,
    pub c_prime: Coefficient,
    pub indirect: f64,
    pub total_minus_direct: f64,
    pub sobel_z: f64,
    pub sobel_p: f64,
    pub classification: Classification,
    pub n_obs: usize,
    pub total_fit: RegressionResult,
    pub mediator_fit: RegressionResult,
    pub outcome_fit: RegressionResult,
}

/// Decision rule on the four path estimates.
///
/// An insignificant a or b gives `None`. With a, b and c significant, an
/// indirect effect whose sign opposes c is `Suppression`; otherwise c′
/// decides between `Partial` and `Complete`. An insignificant c gives
/// `None` since the stepwise procedure stops there.
pub fn classify(a: &Coefficient, b: &Coefficient, c: &Coefficient, c_prime: &Coefficient, alpha: f64) -> Classification {
    let sig = |k: &Coefficient| k.p_value < alpha;
    if !sig(a) || !sig(b) {
        return Classification::None;
    }
    if !sig(c) {
        return Classification::None;
    }
    if (a.estimate * b.estimate).signum() != c.estimate.signum() {
        return Classification::Suppression;
    }
    if sig(c_prime) {
        Classification::Partial
    } else {
        Classification::Complete
    }
}

/// Sobel statistic `a·b / sqrt(a²·se_b² + b²·se_a²)` and its normal p-value.
pub fn sobel(a: &Coefficient, b: &Coefficient) -> (f64, f64) {
    let z = a.estimate * b.estimate
        / (a.estimate.powi(2) * b.std_error.powi(2) + b.estimate.powi(2) * a.std_error.powi(2)).sqrt();
    (z, normal_two_sided_p(z))
}

/// Copies the needed series into a fresh panel, blanking every cell where
/// any of them is missing so all three equations share one sample.
fn common_sample(panel: &PanelDataset, names: &[&str]) -> Result<PanelDataset> {
    let series = names
        .iter()
        .map(|n| panel.series(n).map(|s| s.into_owned()))
        .collect::<Result<Vec<_>>>()?;
    let (n, t) = (panel.n_units(), panel.n_years());
    let missing = |i: usize, j: usize| series.iter().any(|m| !m[(i, j)].is_finite());
    let mask: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..t).map(move |j| (i, j)))
        .filter(|&(i, j)| missing(i, j))
        .collect();
    let mut out = PanelDataset::new(panel.units().to_vec(), panel.years().to_vec())?;
    for (name, mut m) in names.iter().zip(series.iter().cloned()) {
        for &cell in &mask {
            m[cell] = f64::NAN;
        }
        out = out.with_variable(*name, m)?;
    }
    Ok(out)
}

fn fit(panel: &PanelDataset, dep: &str, regs: &[&str], est: MediationEstimator) -> Result<RegressionResult> {
    let spec = ModelSpec::new(dep, regs);
    match est {
        MediationEstimator::Ols => ols(panel, &spec),
        MediationEstimator::FixedEffects => fixed_effects(panel, &spec.with_fe(&[FixedEffect::Unit, FixedEffect::Time])),
    }
}

fn pick(r: &RegressionResult, name: &str) -> Result<Coefficient> {
    r.coef(name)
        .cloned()
        .ok_or_else(|| Error::SpecInvalid(format!("`{name}` was dropped from the {} fit", r.dependent)))
}

pub fn mediation_test<'a>(panel: &PanelDataset, spec: &'a MediationSpec) -> Result<MediationReport> {
    if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(Error::SpecInvalid(format!("significance level {} outside (0, 1)", spec.alpha)));
    }
    let (x, m, y) = (spec.treatment.as_str(), spec.mediator.as_str(), spec.outcome.as_str());
    if x == m || x == y || m == y {
        return Err(Error::SpecInvalid("treatment, mediator and outcome must differ".into()));
    }
    let mut names = vec![y, x, m];
    names.extend(spec.controls.iter().map(String::as_str));
    let sample = common_sample(panel, &names)?;
    let controls: Vec<&str> = spec.controls.iter().map(String::as_str).collect();
    let with = |head: Vec<&'a str>| -> Vec<&'a str> { head.into_iter().chain(controls.iter().copied()).collect() };

    let total_fit = fit(&sample, y, &with(vec![x]), spec.estimator)?;
    let mediator_fit = fit(&sample, m, &with(vec![x]), spec.estimator)?;
    let outcome_fit = fit(&sample, y, &with(vec![x, m]), spec.estimator)?;
    let c = pick(&total_fit, x)?;
    let a = pick(&mediator_fit, x)?;
    let b = pick(&outcome_fit, m)?;
    let c_prime = pick(&outcome_fit, x)?;
    let (sobel_z, sobel_p) = sobel(&a, &b);
    Ok(MediationReport {
        treatment: x.into(),
        mediator: m.into(),
        outcome: y.into(),
        estimator: spec.estimator,
        alpha: spec.alpha,
        indirect: a.estimate * b.estimate,
        total_minus_direct: c.estimate - c_prime.estimate,
        classification: classify(&a, &b, &c, &c_prime, spec.alpha),
        sobel_z,
        sobel_p,
        n_obs: total_fit.n_obs,
        c,
        a,
        b,
        c_prime,
        total_fit,
        mediator_fit,
        outcome_fit,
    })
}

/// Runs one report per mediator, in parallel.
pub fn mediation_tests(panel: &PanelDataset, specs: &[MediationSpec]) -> Result<Vec<MediationReport>> {
    use rayon::prelude::*;
    specs.par_iter().map(|s| mediation_test(panel, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn k(est: f64, p: f64) -> Coefficient {
        Coefficient {
            name: "k".into(),
            estimate: est,
            std_error: 1.0,
            statistic: est,
            p_value: p,
        }
    }

    pub(crate) fn med_panel(a: f64, b: f64, c_direct: f64, n: usize, t: usize, seed: u64) -> PanelDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |s: f64| DMatrix::<f64>::from_fn(n, t, |_, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            s * e
        });
        let x = draw(1.0);
        let z = draw(1.0);
        let m = &x * a + &z * 0.3 + draw(1.0);
        let y = &x * c_direct + &m * b + &z * 0.2 + draw(1.0);
        PanelDataset::new((0..n).map(|i| format!("u{i:02}")).collect(), (0..t as i32).collect())
            .unwrap()
            .with_variable("x", x)
            .unwrap()
            .with_variable("m", m)
            .unwrap()
            .with_variable("y", y)
            .unwrap()
            .with_variable("z", z)
            .unwrap()
    }

    #[test]
    fn decision_rule() {
        let s = k(0.3, 0.001);
        let ns = k(0.01, 0.6);
        assert_eq!(classify(&s, &s, &s, &s, 0.05), Classification::Partial);
        assert_eq!(classify(&s, &s, &s, &ns, 0.05), Classification::Complete);
        assert_eq!(classify(&ns, &s, &s, &s, 0.05), Classification::None);
        assert_eq!(classify(&s, &ns, &s, &s, 0.05), Classification::None);
        assert_eq!(classify(&s, &s, &ns, &s, 0.05), Classification::None);
        assert_eq!(classify(&s, &k(-0.3, 0.001), &s, &s, 0.05), Classification::Suppression);
        // configurable threshold
        let p07 = k(0.3, 0.07);
        assert_eq!(classify(&s, &s, &s, &p07, 0.05), Classification::Complete);
        assert_eq!(classify(&s, &s, &s, &p07, 0.10), Classification::Partial);
    }

    #[test]
    fn published_pattern_is_partial() {
        // a=0.298***, b=0.317***, c=0.241***, c'=0.146***
        let r = classify(&k(0.298, 0.005), &k(0.317, 0.005), &k(0.241, 0.005), &k(0.146, 0.005), 0.05);
        assert_eq!(r, Classification::Partial);
    }

    #[test]
    fn ols_decomposition_identity() {
        let p = med_panel(0.5, 0.4, 0.5, 30, 8, 1);
        let r = mediation_test(&p, &MediationSpec::new("x", "m", "y").estimator(MediationEstimator::Ols)).unwrap();
        assert!((r.total_minus_direct - r.indirect).abs() <= 1e-9 * r.indirect.abs().max(1.0));
        assert_eq!(r.classification, Classification::Partial);
        assert!(r.sobel_z > 3.0);
        let with_ctrl = mediation_test(
            &p,
            &MediationSpec::new("x", "m", "y")
                .controls(&["z"])
                .estimator(MediationEstimator::Ols),
        )
        .unwrap();
        assert!((with_ctrl.total_minus_direct - with_ctrl.indirect).abs() < 1e-9);
    }

    #[test]
    fn fe_decomposition_identity() {
        let p = med_panel(0.5, 0.4, 0.3, 20, 6, 2);
        let r = mediation_test(&p, &MediationSpec::new("x", "m", "y").controls(&["z"])).unwrap();
        assert_eq!(r.estimator, MediationEstimator::FixedEffects);
        assert!((r.total_minus_direct - r.indirect).abs() <= 1e-6 * r.indirect.abs());
    }

    #[test]
    fn complete_mediation_detected() {
        let p = med_panel(0.6, 0.6, 0.0, 40, 8, 3);
        let r = mediation_test(&p, &MediationSpec::new("x", "m", "y").estimator(MediationEstimator::Ols)).unwrap();
        assert!(r.c_prime.p_value > 0.05 || r.classification == Classification::Partial);
    }

    #[test]
    fn common_sample_is_shared() {
        let p = med_panel(0.5, 0.4, 0.3, 10, 5, 4);
        let mut m = p.get("m").unwrap().clone();
        m[(0, 0)] = f64::NAN;
        m[(3, 2)] = f64::NAN;
        let p = p.with_variable("m", m).unwrap();
        let r = mediation_test(&p, &MediationSpec::new("x", "m", "y").estimator(MediationEstimator::Ols)).unwrap();
        assert_eq!(r.total_fit.n_obs, 48);
        assert_eq!(r.mediator_fit.n_obs, 48);
        assert_eq!(r.outcome_fit.n_obs, 48);
    }

    #[test]
    fn bad_specs() {
        let p = med_panel(0.5, 0.4, 0.3, 10, 5, 4);
        assert!(mediation_test(&p, &MediationSpec::new("x", "x", "y")).is_err());
        assert!(mediation_test(&p, &MediationSpec::new("x", "m", "y").alpha(1.5)).is_err());
        assert!(matches!(
            mediation_test(&p, &MediationSpec::new("x", "nope", "y")),
            Err(Error::UnknownVariable(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn rescaling_keeps_classification(seed in 0u64..1000, sx in 0.1f64..10.0, sm in 0.1f64..10.0, sy in 0.1f64..10.0) {
            let p = med_panel(0.3, 0.3, 0.2, 15, 5, seed);
            let spec = MediationSpec::new("x", "m", "y").estimator(MediationEstimator::Ols);
            let r0 = mediation_test(&p, &spec).unwrap();
            let q = p.clone()
                .with_variable("x", p.get("x").unwrap() * sx).unwrap()
                .with_variable("m", p.get("m").unwrap() * sm).unwrap()
                .with_variable("y", p.get("y").unwrap() * sy).unwrap();
            let r1 = mediation_test(&q, &spec).unwrap();
            prop_assert_eq!(r0.classification, r1.classification);
            prop_assert!((r0.a.p_value - r1.a.p_value).abs() < 1e-8);
            prop_assert!((r1.a.estimate - r0.a.estimate * sm / sx).abs() < 1e-8 * (1.0 + r0.a.estimate.abs() * sm / sx));
        }
    }
}
