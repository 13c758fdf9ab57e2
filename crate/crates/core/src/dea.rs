//! Output-oriented CRS (CCR) DEA distance functions and the Malmquist
//! productivity index.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, Relation, Sense};
use crate::panel::{Derivation, PanelDataset};

/// Reference technology of one period.
#[derive(Debug, Clone, PartialEq)]
pub struct DeaFrontier {
    /// `n × k`
    pub inputs: DMatrix<f64>,
    /// `n × m`
    pub outputs: DMatrix<f64>,
    pub period: i32,
}

impl DeaFrontier {
    pub fn new(inputs: DMatrix<f64>, outputs: DMatrix<f64>, period: i32) -> Result<Self> {
        if inputs.nrows() != outputs.nrows() || inputs.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} input rows vs {} output rows",
                inputs.nrows(),
                outputs.nrows()
            )));
        }
        if let Some(v) = inputs.iter().chain(outputs.iter()).find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::NonPositiveData(format!("DEA data value {v} in period {period}")));
        }
        let (n, k, m) = (inputs.nrows(), inputs.ncols(), outputs.ncols());
        if n < k + m {
            log::warn!("DEA period {period}: {n} DMUs for {k} inputs and {m} outputs");
        }
        Ok(Self {
            inputs,
            outputs,
            period,
        })
    }

    pub fn n_dmus(&self) -> usize {
        self.inputs.nrows()
    }

    /// Farrell output distance `θ = 1/φ*` of `(x, y)` against this
    /// technology, where `φ* = max φ  s.t.  Σλx ≤ x,  Σλy ≥ φy,  λ ≥ 0`.
    pub fn output_distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let (n, k, m) = (self.n_dmus(), self.inputs.ncols(), self.outputs.ncols());
        if x.len() != k || y.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "DMU has {} inputs / {} outputs, frontier {k} / {m}",
                x.len(),
                y.len()
            )));
        }
        if let Some(v) = x.iter().chain(y).find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::NonPositiveData(format!("DMU value {v}")));
        }
        // variables: φ, λ_1..λ_n
        let mut objective = vec![0.0; n + 1];
        objective[0] = 1.0;
        let mut lp = LinearProgram::new(Sense::Maximize, objective);
        for c in 0..k {
            let mut row = vec![0.0; n + 1];
            for j in 0..n {
                row[1 + j] = self.inputs[(j, c)];
            }
            lp = lp.constrain(row, Relation::Le, x[c]);
        }
        for r in 0..m {
            let mut row = vec![0.0; n + 1];
            row[0] = y[r];
            for j in 0..n {
                row[1 + j] = -self.outputs[(j, r)];
            }
            lp = lp.constrain(row, Relation::Le, 0.0);
        }
        let sol = solve_lp(&lp)?;
        let phi = sol.objective_value;
        if !(phi > 0.0) {
            return Err(Error::Infeasible);
        }
        Ok(1.0 / phi)
    }
}

pub fn output_distance(frontier: &DeaFrontier, x: &[f64], y: &[f64]) -> Result<f64> {
    frontier.output_distance(x, y)
}

/// Inputs and outputs by year: `data[t]` is the frontier of year `years[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeaPanel {
    pub units: Vec<String>,
    pub years: Vec<i32>,
    pub periods: Vec<DeaFrontier>,
}

impl DeaPanel {
    pub fn new(units: Vec<String>, years: Vec<i32>, periods: Vec<DeaFrontier>) -> Result<Self> {
        if years.len() != periods.len() {
            return Err(Error::DimensionMismatch("one frontier per year expected".into()));
        }
        for p in &periods {
            if p.n_dmus() != units.len() {
                return Err(Error::DimensionMismatch(format!(
                    "period {} has {} DMUs, expected {}",
                    p.period,
                    p.n_dmus(),
                    units.len()
                )));
            }
        }
        Ok(Self { units, years, periods })
    }

    /// Extracts the mapped variables from a panel, deflating the outputs first
    /// when a deflator is configured.
    pub fn from_panel(panel: &PanelDataset, mapping: &DeaMapping) -> Result<Self> {
        mapping.validate()?;
        let mut owned;
        let mut src = panel;
        let mut outputs = mapping.outputs.clone();
        if let Some(defl) = &mapping.deflator {
            let base = mapping.base_year.unwrap_or(panel.years()[0]);
            owned = panel.clone();
            for o in outputs.iter_mut() {
                let name = format!("{o}_real");
                owned = owned.derive_variable(
                    &name,
                    &Derivation::Deflate {
                        var: o.clone(),
                        index: defl.clone(),
                        base_year: base,
                        base_value: 100.0,
                    },
                )?;
                *o = name;
            }
            src = &owned;
        }
        let ins = mapping
            .inputs
            .iter()
            .map(|v| src.get(v))
            .collect::<Result<Vec<_>>>()?;
        let outs = outputs.iter().map(|v| src.get(v)).collect::<Result<Vec<_>>>()?;
        let n = src.n_units();
        let periods = src
            .years()
            .iter()
            .enumerate()
            .map(|(t, &year)| {
                let x = DMatrix::from_fn(n, ins.len(), |i, c| ins[c][(i, t)]);
                let y = DMatrix::from_fn(n, outs.len(), |i, c| outs[c][(i, t)]);
                DeaFrontier::new(x, y, year)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(src.units().to_vec(), src.years().to_vec(), periods)
    }

    fn dmu(&self, t: usize, i: usize) -> (Vec<f64>, Vec<f64>) {
        let p = &self.periods[t];
        (
            p.inputs.row(i).iter().copied().collect(),
            p.outputs.row(i).iter().copied().collect(),
        )
    }

    /// `D^{frontier}(data of period `at`)` for DMU `i`.
    fn distance(&self, frontier: usize, at: usize, i: usize) -> Result<f64> {
        let (x, y) = self.dmu(at, i);
        self.periods[frontier].output_distance(&x, &y)
    }
}

/// JSON mapping from panel variables to DEA inputs and outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeaMapping {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deflator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_year: Option<i32>,
}

impl DeaMapping {
    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() || self.outputs.is_empty() {
            return Err(Error::Config("DEA mapping needs at least one input and one output".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }
}

/// Which Malmquist series feeds downstream regressions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TfpMode {
    /// Year-pair index assigned to the later year, first year set to 1.
    #[default]
    YearPair,
    /// Cumulative product of year-pair indices, 1 in the first year.
    Chained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MalmquistEntry {
    pub ec: f64,
    pub tc: f64,
    pub mi: f64,
    /// Chained TFP level at the later year of the pair.
    pub chained_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalmquistResult {
    pub units: Vec<String>,
    pub years: Vec<i32>,
    /// `entries[i][t]` covers the pair `(years[t], years[t+1])`.
    pub entries: Vec<Vec<MalmquistEntry>>,
    /// Same-period distances `D^t(t)`, `units × years`.
    pub efficiency: DMatrix<f64>,
}

impl MalmquistResult {
    /// `units × years` TFP series for regressions.
    pub fn tfp_series(&self, mode: TfpMode) -> DMatrix<f64> {
        let n = self.units.len();
        let t = self.years.len();
        DMatrix::from_fn(n, t, |i, j| {
            if j == 0 {
                1.0
            } else {
                let e = &self.entries[i][j - 1];
                match mode {
                    TfpMode::YearPair => e.mi,
                    TfpMode::Chained => e.chained_level,
                }
            }
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["unit", "year_pair", "EC", "TC", "MI", "chained_level"])?;
        for (i, u) in self.units.iter().enumerate() {
            for (t, e) in self.entries[i].iter().enumerate() {
                wtr.write_record([
                    u.clone(),
                    format!("{}-{}", self.years[t], self.years[t + 1]),
                    format!("{:?}", e.ec),
                    format!("{:?}", e.tc),
                    format!("{:?}", e.mi),
                    format!("{:?}", e.chained_level),
                ])?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Geometric-mean Malmquist index with its efficiency-change and
/// technical-change components for every unit and adjacent year pair.
pub fn malmquist(data: &DeaPanel) -> Result<MalmquistResult> {
    let n = data.units.len();
    let t = data.years.len();
    if t < 2 {
        return Err(Error::SpecInvalid("Malmquist index needs at least two years".into()));
    }
    // (frontier, at) pairs: same-period and both cross-period directions
    let jobs: Vec<(usize, usize, usize)> = (0..n)
        .flat_map(|i| {
            (0..t).flat_map(move |s| {
                let mut v = vec![(i, s, s)];
                if s + 1 < t {
                    v.push((i, s, s + 1));
                    v.push((i, s + 1, s));
                }
                v
            })
        })
        .collect();
    let vals = jobs
        .par_iter()
        .map(|&(i, f, a)| data.distance(f, a, i))
        .collect::<Result<Vec<_>>>()?;
    let mut same = DMatrix::zeros(n, t);
    let mut fwd = DMatrix::zeros(n, t); // D^s(s+1)
    let mut back = DMatrix::zeros(n, t); // D^{s+1}(s)
    for (&(i, f, a), v) in jobs.iter().zip(vals) {
        if f == a {
            same[(i, f)] = v;
        } else if a == f + 1 {
            fwd[(i, f)] = v;
        } else {
            back[(i, a)] = v;
        }
    }
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(t - 1);
        let mut level = 1.0;
        for s in 0..t - 1 {
            let ec = same[(i, s + 1)] / same[(i, s)];
            let tc = ((fwd[(i, s)] / same[(i, s + 1)]) * (same[(i, s)] / back[(i, s)])).sqrt();
            let mi = ec * tc;
            level *= mi;
            row.push(MalmquistEntry {
                ec,
                tc,
                mi,
                chained_level: level,
            });
        }
        entries.push(row);
    }
    Ok(MalmquistResult {
        units: data.units.clone(),
        years: data.years.clone(),
        entries,
        efficiency: same,
    })
}
