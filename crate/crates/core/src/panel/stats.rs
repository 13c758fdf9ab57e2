use std::io::Write;

use serde::{Deserialize, Serialize};

use super::PanelDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub variable: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub rows: Vec<StatsRow>,
}

impl PanelDataset {
    /// Pooled N / mean / sd / min / max over all unit-years for each variable.
    pub fn descriptive_stats<S: AsRef<str>>(&self, variables: &[S]) -> Result<StatsTable> {
        let mut rows = Vec::with_capacity(variables.len());
        for var in variables {
            let var = var.as_ref();
            let m = self.series(var)?;
            let vals: Vec<f64> = m.iter().copied().filter(|v| v.is_finite()).collect();
            if vals.len() != m.len() {
                return Err(Error::MissingCell {
                    unit: String::from("?"),
                    year: 0,
                    variable: var.to_string(),
                });
            }
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let ss: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum();
            let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            // summation rounding can push the mean a hair outside [min, max]
            let mean = mean.clamp(min, max);
            rows.push(StatsRow {
                variable: var.to_string(),
                n,
                mean,
                sd,
                min,
                max,
            });
        }
        Ok(StatsTable { rows })
    }
}

impl StatsTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["variable", "N", "mean", "sd", "min", "max"])?;
        for r in &self.rows {
            wtr.write_record([
                r.variable.clone(),
                r.n.to_string(),
                format!("{:?}", r.mean),
                format!("{:?}", r.sd),
                format!("{:?}", r.min),
                format!("{:?}", r.max),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn to_markdown(&self, precision: usize) -> String {
        let mut s = String::from("| variable | N | mean | sd | min | max |\n|---|---:|---:|---:|---:|---:|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {} | {:.p$} | {:.p$} | {:.p$} | {:.p$} |\n",
                r.variable,
                r.n,
                r.mean,
                r.sd,
                r.min,
                r.max,
                p = precision
            ));
        }
        s
    }
}
