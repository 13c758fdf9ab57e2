//! Composite indices from hierarchical indicator systems weighted by the
//! entropy method.
//!
//! Steps: min-max normalisation of each leaf (orientation by direction),
//! a small zero-shift so that `ln p` is defined, entropy weights
//! `w_j = (1 - e_j) / Σ_k (1 - e_k)`, and the weighted sum of the *unshifted*
//! normalised leaves as the score. Weighting is flat over the leaves; the
//! primary/secondary hierarchy is carried as metadata only.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelDataset;

/// Default shift applied before the entropy step: `x ← x(1-ε) + ε`.
pub const ZERO_SHIFT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorLeaf {
    pub name: String,
    /// Panel variable holding the raw indicator.
    pub variable: String,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSystem {
    pub name: String,
    pub leaves: Vec<IndicatorLeaf>,
    /// leaf name → `[secondary, primary]` labels.
    #[serde(default)]
    pub hierarchy: BTreeMap<String, [String; 2]>,
}

impl IndicatorSystem {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let sys: Self = serde_json::from_str(s)?;
        sys.validate()?;
        Ok(sys)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let sys: Self = serde_json::from_reader(BufReader::new(file))?;
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if self.leaves.is_empty() {
            return Err(Error::SpecInvalid(format!("indicator system {} has no leaves", self.name)));
        }
        let mut seen = BTreeSet::new();
        for leaf in &self.leaves {
            if !seen.insert(leaf.name.as_str()) {
                return Err(Error::SpecInvalid(format!("duplicate leaf {}", leaf.name)));
            }
            if let Some(w) = leaf.published_weight {
                if !(w > 0.0 && w < 1.0) {
                    return Err(Error::SpecInvalid(format!(
                        "published weight {w} of {} outside (0, 1)",
                        leaf.name
                    )));
                }
            }
        }
        for leaf in self.hierarchy.keys() {
            if !seen.contains(leaf.as_str()) {
                return Err(Error::SpecInvalid(format!("hierarchy names unknown leaf {leaf}")));
            }
        }
        Ok(())
    }

    pub fn leaf_names(&self) -> Vec<String> {
        self.leaves.iter().map(|l| l.name.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Extremes taken over all unit-years, so scores compare across years.
    #[default]
    Pooled,
    /// Extremes taken within each year.
    ByYear,
}

/// Normalised indicator values; row `unit * n_years + year`, one column per leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedArray {
    pub leaves: Vec<String>,
    pub n_units: usize,
    pub n_years: usize,
    pub data: DMatrix<f64>,
}

impl NormalizedArray {
    pub fn row(&self, unit: usize, year: usize) -> usize {
        unit * self.n_years + year
    }
}

fn minmax(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Min-max normalisation of every leaf of `system`.
pub fn normalize(panel: &PanelDataset, system: &IndicatorSystem, mode: NormalizationMode) -> Result<NormalizedArray> {
    let (nu, ny) = (panel.n_units(), panel.n_years());
    let mut data = DMatrix::zeros(nu * ny, system.leaves.len());
    for (k, leaf) in system.leaves.iter().enumerate() {
        let raw = panel
            .get(&leaf.variable)
            .map_err(|_| Error::MissingIndicator(leaf.name.clone()))?;
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::MissingIndicator(leaf.name.clone()));
        }
        let groups: Vec<Vec<usize>> = match mode {
            NormalizationMode::Pooled => vec![(0..ny).collect()],
            NormalizationMode::ByYear => (0..ny).map(|j| vec![j]).collect(),
        };
        for cols in groups {
            let (lo, hi) = minmax(cols.iter().flat_map(|&j| raw.column(j).iter().copied().collect::<Vec<_>>()));
            if hi <= lo {
                return Err(Error::DegenerateIndicator(leaf.name.clone()));
            }
            let range = hi - lo;
            for &j in &cols {
                for i in 0..nu {
                    let x = raw[(i, j)];
                    data[(i * ny + j, k)] = match leaf.direction {
                        Direction::Positive => (x - lo) / range,
                        Direction::Negative => (hi - x) / range,
                    };
                }
            }
        }
    }
    Ok(NormalizedArray {
        leaves: system.leaf_names(),
        n_units: nu,
        n_years: ny,
        data,
    })
}

/// `x ← x(1-ε) + ε`, keeping values inside `[ε, 1]`.
pub fn zero_shift(data: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    data.map(|x| x * (1.0 - eps) + eps)
}

/// Entropy weights of the columns of `data` (rows are observations).
/// `0 · ln 0` is taken as 0.
pub fn entropy_weights_matrix(data: &DMatrix<f64>, leaves: &[String]) -> Result<Vec<f64>> {
    let n = data.nrows();
    let k = data.ncols();
    if n < 2 {
        return Err(Error::SpecInvalid("entropy weights need at least two observations".into()));
    }
    let ln_n = (n as f64).ln();
    let mut divergence = Vec::with_capacity(k);
    for j in 0..k {
        let col = data.column(j);
        if col.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::SpecInvalid(format!(
                "normalised values of {} must be nonnegative",
                leaves.get(j).map_or("?", String::as_str)
            )));
        }
        let total: f64 = col.sum();
        if total <= 0.0 {
            return Err(Error::AllZeroIndicator(
                leaves.get(j).cloned().unwrap_or_else(|| format!("col{j}")),
            ));
        }
        let h: f64 = col
            .iter()
            .map(|x| {
                let p = x / total;
                if p > 0.0 {
                    p * p.ln()
                } else {
                    0.0
                }
            })
            .sum();
        let e = -h / ln_n;
        divergence.push((1.0 - e).max(0.0));
    }
    let sum: f64 = divergence.iter().sum();
    if sum <= 0.0 {
        return Err(Error::AllIndicatorsUninformative);
    }
    Ok(divergence.into_iter().map(|d| d / sum).collect())
}

/// Entropy weights keyed by leaf name.
pub fn entropy_weights(normalized: &NormalizedArray) -> Result<BTreeMap<String, f64>> {
    let w = entropy_weights_matrix(&normalized.data, &normalized.leaves)?;
    Ok(normalized.leaves.iter().cloned().zip(w).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexOptions {
    pub mode: NormalizationMode,
    pub zero_shift: f64,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self {
            mode: NormalizationMode::Pooled,
            zero_shift: ZERO_SHIFT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexResult {
    pub system: String,
    pub units: Vec<String>,
    pub years: Vec<i32>,
    /// `units × years`, each in `[0, 1]`.
    pub scores: DMatrix<f64>,
    /// Computed weights in leaf order.
    pub weights: Vec<(String, f64)>,
    pub published: BTreeMap<String, f64>,
    pub normalized: NormalizedArray,
}

impl IndexResult {
    pub fn weight(&self, leaf: &str) -> Option<f64> {
        self.weights.iter().find(|(n, _)| n == leaf).map(|(_, w)| *w)
    }

    /// Long CSV `unit,year,score`.
    pub fn write_scores_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["unit", "year", "score"])?;
        for (i, u) in self.units.iter().enumerate() {
            for (j, y) in self.years.iter().enumerate() {
                wtr.write_record([u.clone(), y.to_string(), format!("{:?}", self.scores[(i, j)])])?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// CSV `leaf,weight,published_weight`.
    pub fn write_weights_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["leaf", "weight", "published_weight"])?;
        for (leaf, w) in &self.weights {
            let published = self.published.get(leaf).map(|p| format!("{p:?}")).unwrap_or_default();
            wtr.write_record([leaf.clone(), format!("{w:?}"), published])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Normalise, weight and aggregate the leaves of `system` into one score per unit-year.
pub fn index_scores(panel: &PanelDataset, system: &IndicatorSystem, opts: &IndexOptions) -> Result<IndexResult> {
    system.validate()?;
    let normalized = normalize(panel, system, opts.mode)?;
    let shifted = zero_shift(&normalized.data, opts.zero_shift);
    let w = entropy_weights_matrix(&shifted, &normalized.leaves)?;
    let flat = &normalized.data * nalgebra::DVector::from_vec(w.clone());
    let (nu, ny) = (panel.n_units(), panel.n_years());
    let scores = DMatrix::from_fn(nu, ny, |i, j| flat[i * ny + j].clamp(0.0, 1.0));
    let published = system
        .leaves
        .iter()
        .filter_map(|l| l.published_weight.map(|p| (l.name.clone(), p)))
        .collect();
    Ok(IndexResult {
        system: system.name.clone(),
        units: panel.units().to_vec(),
        years: panel.years().to_vec(),
        scores,
        weights: normalized.leaves.iter().cloned().zip(w).collect(),
        published,
        normalized,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDeviation {
    pub leaf: String,
    pub computed: f64,
    pub published: f64,
    pub abs_deviation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightComparison {
    pub system: String,
    pub tolerance: f64,
    pub leaves: Vec<WeightDeviation>,
    pub published_sum: f64,
    pub sum_ok: bool,
}

impl WeightComparison {
    pub fn all_pass(&self) -> bool {
        self.sum_ok && self.leaves.iter().all(|l| l.pass)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "**{}** (tolerance {}; published weights sum to {:.3}, {})\n\n| leaf | computed | published | |dev| | pass |\n|---|---:|---:|---:|:---:|\n",
            self.system,
            self.tolerance,
            self.published_sum,
            if self.sum_ok { "ok" } else { "out of tolerance" }
        );
        for l in &self.leaves {
            s.push_str(&format!(
                "| {} | {:.3} | {:.3} | {:.3} | {} |\n",
                l.leaf,
                l.computed,
                l.published,
                l.abs_deviation,
                if l.pass { "yes" } else { "no" }
            ));
        }
        s
    }
}

/// Checks computed weights against the published column of `system`.
pub fn compare_published_weights(result: &IndexResult, system: &IndicatorSystem, tol: f64) -> Result<WeightComparison> {
    let published: Vec<(&IndicatorLeaf, f64)> = system
        .leaves
        .iter()
        .filter_map(|l| l.published_weight.map(|w| (l, w)))
        .collect();
    if published.is_empty() {
        return Err(Error::NoPublishedWeights(system.name.clone()));
    }
    let published_sum: f64 = published.iter().map(|(_, w)| w).sum();
    let mut leaves = Vec::new();
    for (leaf, p) in published {
        let computed = result
            .weight(&leaf.name)
            .ok_or_else(|| Error::MissingIndicator(leaf.name.clone()))?;
        let abs_deviation = (computed - p).abs();
        leaves.push(WeightDeviation {
            leaf: leaf.name.clone(),
            computed,
            published: p,
            abs_deviation,
            pass: abs_deviation <= tol,
        });
    }
    Ok(WeightComparison {
        system: system.name.clone(),
        tolerance: tol,
        leaves,
        published_sum,
        sum_ok: (published_sum - 1.0).abs() <= tol,
    })
}
