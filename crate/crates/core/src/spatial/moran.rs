use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SpatialWeightMatrix;
use crate::error::{Error, Result};
use crate::linalg::normal_two_sided_p;
use crate::panel::PanelDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub permutations: usize,
    pub mean: f64,
    pub sd: f64,
    /// Two-sided pseudo p-value `(1 + #{|I_k − E| ≥ |I − E|}) / (1 + K)`.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoranResult {
    pub i: f64,
    pub expected: f64,
    pub variance: f64,
    pub z: f64,
    pub p_value: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<PermutationTest>,
}

fn deviations(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let scale = x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if d.iter().all(|v| v.abs() <= 1e-14 * scale.max(1e-300)) {
        return Err(Error::ConstantVector);
    }
    Ok(d)
}

fn statistic(d: &[f64], w: &SpatialWeightMatrix, s0: f64) -> f64 {
    let lag = w.lag(d);
    let cross: f64 = d.iter().zip(&lag).map(|(a, b)| a * b).sum();
    let ss: f64 = d.iter().map(|v| v * v).sum();
    (d.len() as f64 / s0) * cross / ss
}

/// Global Moran's I with inference under the normality assumption.
pub fn global_morans_i(x: &[f64], w: &SpatialWeightMatrix) -> Result<MoranResult> {
    let n = w.n();
    if x.len() != n {
        return Err(Error::DimensionMismatch(format!("{} values for {n} units", x.len())));
    }
    if n < 3 {
        return Err(Error::SpecInvalid("Moran's I needs at least three units".into()));
    }
    let d = deviations(x)?;
    let wm = w.matrix();
    let s0 = wm.sum();
    if s0 == 0.0 {
        return Err(Error::SpecInvalid("weight matrix has no links".into()));
    }
    let i_stat = statistic(&d, w, s0);
    let nf = n as f64;
    let expected = -1.0 / (nf - 1.0);
    let mut s1 = 0.0;
    for a in 0..n {
        for b in 0..n {
            s1 += (wm[(a, b)] + wm[(b, a)]).powi(2);
        }
    }
    s1 *= 0.5;
    let s2: f64 = (0..n)
        .map(|a| (wm.row(a).sum() + wm.column(a).sum()).powi(2))
        .sum();
    let variance = (nf * nf * s1 - nf * s2 + 3.0 * s0 * s0) / ((nf * nf - 1.0) * s0 * s0) - expected * expected;
    let z = (i_stat - expected) / variance.sqrt();
    Ok(MoranResult {
        i: i_stat,
        expected,
        variance,
        z,
        p_value: normal_two_sided_p(z),
        n,
        permutation: None,
    })
}

/// Conditional permutation reference distribution with a seeded shuffle.
pub fn moran_permutation(x: &[f64], w: &SpatialWeightMatrix, permutations: usize, seed: u64) -> Result<PermutationTest> {
    let base = global_morans_i(x, w)?;
    let d = deviations(x)?;
    let s0 = w.matrix().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm = d.clone();
    let mut draws = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        perm.shuffle(&mut rng);
        draws.push(statistic(&perm, w, s0));
    }
    let k = permutations as f64;
    let mean = draws.iter().sum::<f64>() / k;
    let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    let obs = (base.i - base.expected).abs();
    let extreme = draws.iter().filter(|v| (*v - base.expected).abs() >= obs).count();
    Ok(PermutationTest {
        permutations,
        mean,
        sd,
        p_value: (1.0 + extreme as f64) / (1.0 + k),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    HH,
    LH,
    LL,
    HL,
}

impl Quadrant {
    pub fn of(z: f64, lag: f64) -> Self {
        match (z >= 0.0, lag >= 0.0) {
            (true, true) => Quadrant::HH,
            (false, true) => Quadrant::LH,
            (false, false) => Quadrant::LL,
            (true, false) => Quadrant::HL,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Quadrant::HH => "HH",
            Quadrant::LH => "LH",
            Quadrant::LL => "LL",
            Quadrant::HL => "HL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoranScatter {
    pub units: Vec<String>,
    /// `(x − x̄) / s` with the population standard deviation.
    pub z: Vec<f64>,
    pub lag: Vec<f64>,
    pub quadrant: Vec<Quadrant>,
}

impl MoranScatter {
    /// Least-squares slope of the lag on `z` (through the origin, since `z`
    /// is centred).
    pub fn slope(&self) -> f64 {
        let num: f64 = self.z.iter().zip(&self.lag).map(|(a, b)| a * b).sum();
        let den: f64 = self.z.iter().map(|v| v * v).sum();
        num / den
    }

    pub fn count(&self, q: Quadrant) -> usize {
        self.quadrant.iter().filter(|v| **v == q).count()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["unit", "z", "spatial_lag", "quadrant"])?;
        for a in 0..self.units.len() {
            wtr.write_record([
                self.units[a].clone(),
                format!("{:?}", self.z[a]),
                format!("{:?}", self.lag[a]),
                self.quadrant[a].label().to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

pub fn moran_scatter(x: &[f64], w: &SpatialWeightMatrix) -> Result<MoranScatter> {
    if x.len() != w.n() {
        return Err(Error::DimensionMismatch(format!("{} values for {} units", x.len(), w.n())));
    }
    let d = deviations(x)?;
    let sd = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
    let z: Vec<f64> = d.iter().map(|v| v / sd).collect();
    let lag = w.lag(&z);
    let quadrant = z.iter().zip(&lag).map(|(a, b)| Quadrant::of(*a, *b)).collect();
    Ok(MoranScatter {
        units: w.units.clone(),
        z,
        lag,
        quadrant,
    })
}

/// Per-year Moran statistics of one panel variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoranTable {
    pub variable: String,
    pub weights: String,
    pub rows: Vec<(i32, MoranResult)>,
}

impl MoranTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["year", "I", "z", "p"])?;
        for (year, r) in &self.rows {
            wtr.write_record([
                year.to_string(),
                format!("{:?}", r.i),
                format!("{:?}", r.z),
                format!("{:?}", r.p_value),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

pub fn moran_by_year(panel: &PanelDataset, variable: &str, w: &SpatialWeightMatrix) -> Result<MoranTable> {
    w.check_units(panel.units())?;
    let m = panel.get(variable)?;
    let rows = (0..panel.n_years())
        .into_par_iter()
        .map(|t| {
            let x: Vec<f64> = m.column(t).iter().copied().collect();
            global_morans_i(&x, w).map(|r| (panel.years()[t], r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MoranTable {
        variable: variable.to_string(),
        weights: w.kind.label().to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;
    use rand::Rng;

    use super::super::tests::path_meta;
    use super::super::{contiguity_matrix, WeightKind};
    use super::*;

    /// Moran's I straight from the double-sum definition.
    pub(crate) fn brute_force_i(x: &[f64], w: &DMatrix<f64>) -> f64 {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let mut num = 0.0;
        let mut s0 = 0.0;
        for i in 0..n {
            for j in 0..n {
                num += w[(i, j)] * (x[i] - mean) * (x[j] - mean);
                s0 += w[(i, j)];
            }
        }
        let den: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        n as f64 / s0 * num / den
    }

    #[test]
    fn path_of_four_matches_double_sum() {
        let w = contiguity_matrix(&path_meta(4)).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0];
        let r = global_morans_i(&x, &w).unwrap();
        assert!((r.i - brute_force_i(&x, &w.weights)).abs() < 1e-12);
        assert!(r.i > 0.0);
        assert_eq!(r.expected, -1.0 / 3.0);
        assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn checkerboard_is_negative() {
        let w = contiguity_matrix(&path_meta(8)).unwrap();
        let x: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let r = global_morans_i(&x, &w).unwrap();
        assert!(r.i < 0.0);
        assert!(r.z < 0.0);
    }

    #[test]
    fn constant_vector_rejected() {
        let w = contiguity_matrix(&path_meta(4)).unwrap();
        assert!(matches!(global_morans_i(&[2.0; 4], &w), Err(Error::ConstantVector)));
        assert!(matches!(moran_scatter(&[2.0; 4], &w), Err(Error::ConstantVector)));
    }

    #[test]
    fn variance_matches_enumeration_of_permutations() {
        // exact randomisation moments on 5 units versus the normality
        // formula's expectation
        let w = contiguity_matrix(&path_meta(5)).unwrap();
        let x = [0.3, 1.9, -0.4, 2.2, 0.8];
        let r = global_morans_i(&x, &w).unwrap();
        let mut idx = [0usize, 1, 2, 3, 4];
        let mut all = Vec::new();
        permute(&mut idx, 0, &mut |p| {
            let v: Vec<f64> = p.iter().map(|&k| x[k]).collect();
            all.push(brute_force_i(&v, &w.weights));
        });
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        assert!((mean - r.expected).abs() < 1e-12);
    }

    fn permute(a: &mut [usize; 5], k: usize, f: &mut dyn FnMut(&[usize; 5])) {
        if k == a.len() {
            f(a);
            return;
        }
        for i in k..a.len() {
            a.swap(k, i);
            permute(a, k + 1, f);
            a.swap(k, i);
        }
    }

    #[test]
    fn scatter_slope_equals_i_and_quadrants() {
        let w = contiguity_matrix(&path_meta(9)).unwrap();
        let x = [3.0, 2.5, 4.1, 1.0, 0.2, 0.9, 5.5, 6.0, 4.4];
        let s = moran_scatter(&x, &w).unwrap();
        let r = global_morans_i(&x, &w).unwrap();
        assert!((s.slope() - r.i).abs() < 1e-9);
        assert!(s.z.iter().sum::<f64>().abs() < 1e-12);
        let total: usize = [Quadrant::HH, Quadrant::LH, Quadrant::LL, Quadrant::HL]
            .iter()
            .map(|q| s.count(*q))
            .sum();
        assert_eq!(total, 9);
        for a in 0..9 {
            assert_eq!(s.quadrant[a], Quadrant::of(s.z[a], s.lag[a]));
        }
    }

    #[test]
    fn all_high_with_positive_lags_is_hh() {
        assert_eq!(Quadrant::of(0.5, 0.2), Quadrant::HH);
        assert_eq!(Quadrant::of(-0.5, 0.2), Quadrant::LH);
        assert_eq!(Quadrant::of(-0.5, -0.2), Quadrant::LL);
        assert_eq!(Quadrant::of(0.5, -0.2), Quadrant::HL);
    }

    #[test]
    fn permutation_mean_near_expectation() {
        let w = contiguity_matrix(&path_meta(12)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..1.0)).collect();
        let r = global_morans_i(&x, &w).unwrap();
        let p = moran_permutation(&x, &w, 999, 42).unwrap();
        let se = p.sd / (999f64).sqrt();
        assert!((p.mean - r.expected).abs() < 3.0 * se);
        assert!((0.0..=1.0).contains(&p.p_value));
        assert_eq!(p, moran_permutation(&x, &w, 999, 42).unwrap());
    }

    #[test]
    fn by_year_table() {
        let meta = path_meta(4);
        let units: Vec<String> = meta.keys().cloned().collect();
        let p = PanelDataset::new(units, vec![2011, 2012])
            .unwrap()
            .with_variable("v", DMatrix::from_row_slice(4, 2, &[1.0, 4.0, 2.0, 3.0, 3.0, 2.0, 4.0, 1.0]))
            .unwrap()
            .with_meta(&meta)
            .unwrap();
        let w = contiguity_matrix(p.meta()).unwrap();
        assert_eq!(w.kind, WeightKind::Contiguity);
        let t = moran_by_year(&p, "v", &w).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!((t.rows[0].1.i - t.rows[1].1.i).abs() < 1e-12);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("year,I,z,p\n2011,"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn affine_invariance(
                x in proptest::collection::vec(-10.0f64..10.0, 7),
                a in prop_oneof![0.1f64..10.0, -10.0f64..-0.1],
                b in -100.0f64..100.0,
            ) {
                let w = contiguity_matrix(&path_meta(7)).unwrap();
                let base = global_morans_i(&x, &w);
                prop_assume!(base.is_ok());
                let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let r = global_morans_i(&y, &w).unwrap();
                prop_assert!((r.i - base.unwrap().i).abs() < 1e-9);
                if a > 0.0 {
                    let s1 = moran_scatter(&x, &w).unwrap();
                    let s2 = moran_scatter(&y, &w).unwrap();
                    prop_assert_eq!(s1.count(Quadrant::HH), s2.count(Quadrant::HH));
                    prop_assert_eq!(s1.count(Quadrant::LL), s2.count(Quadrant::LL));
                }
            }
        }
    }
}
