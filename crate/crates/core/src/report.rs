//! Coefficient tables (estimate over standard error, with stars), Moran
//! tables and figure data, rendered as Markdown, CSV and JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mediation::MediationReport;
use crate::regression::{Diagnostic, RegressionResult, CONST};
use crate::slm::{EffectDecomposition, SlmResult};
use crate::spatial::{MoranScatter, MoranTable};

pub const DISPLAY_PRECISION: usize = 3;

/// `***` below 1%, `**` below 5%, `*` below 10%.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    }
}

/// Fixed-point rendering; non-finite values render as `.`.
pub fn fmt_fixed(x: f64, precision: usize) -> String {
    if x.is_finite() {
        format!("{x:.precision$}")
    } else {
        ".".to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub estimate: f64,
    pub std_error: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableColumn {
    pub header: String,
    pub label: String,
    pub cells: BTreeMap<String, Cell>,
    /// Row order of the cells as produced by the estimator.
    pub order: Vec<String>,
    pub n_obs: Option<usize>,
    pub r_squared: Option<f64>,
    pub diagnostics: BTreeMap<String, Diagnostic>,
    /// Instrument count for IV and GMM columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_instruments: Option<usize>,
}

impl TableColumn {
    pub fn new(header: &str, label: &str) -> Self {
        Self {
            header: header.into(),
            label: label.into(),
            cells: BTreeMap::new(),
            order: Vec::new(),
            n_obs: None,
            r_squared: None,
            diagnostics: BTreeMap::new(),
            n_instruments: None,
        }
    }

    pub fn push(&mut self, row: &str, cell: Cell) {
        if self.cells.insert(row.to_string(), cell).is_none() {
            self.order.push(row.to_string());
        }
    }

    pub fn from_regression(header: &str, r: &RegressionResult) -> Self {
        let mut c = Self::new(header, &r.estimator.label());
        for k in &r.coefficients {
            c.push(
                &k.name,
                Cell {
                    estimate: k.estimate,
                    std_error: k.std_error,
                    p_value: k.p_value,
                },
            );
        }
        c.n_obs = Some(r.n_obs);
        c.r_squared = r.r_squared;
        c.diagnostics = r.diagnostics.clone();
        c.n_instruments = r.n_instruments;
        c
    }

    /// Spatial lag column: the focus coefficient, its direct, indirect and
    /// total effects, then ρ.
    pub fn from_slm(header: &str, fit: &SlmResult, effects: &EffectDecomposition, focus: &str) -> Result<Self> {
        let coef = fit
            .coefficients
            .iter()
            .find(|c| c.name == focus)
            .ok_or_else(|| Error::UnknownVariable(focus.to_string()))?;
        let row = effects
            .row(focus)
            .ok_or_else(|| Error::UnknownVariable(focus.to_string()))?;
        let mut c = Self::new(header, "SLM");
        c.push(
            focus,
            Cell {
                estimate: coef.estimate,
                std_error: coef.std_error,
                p_value: coef.p_value,
            },
        );
        for (name, s) in [("Direct", row.direct), ("Indirect", row.indirect), ("Total", row.total)] {
            c.push(
                name,
                Cell {
                    estimate: s.estimate,
                    std_error: s.sd,
                    p_value: s.p_value,
                },
            );
        }
        c.push(
            "rho",
            Cell {
                estimate: fit.rho.estimate,
                std_error: fit.rho.std_error,
                p_value: fit.rho.p_value,
            },
        );
        c.n_obs = Some(fit.n_obs);
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTable {
    pub title: String,
    pub columns: Vec<TableColumn>,
    /// Rows collapsed into a single `YES` line, e.g. the controls.
    #[serde(default)]
    pub collapsed: Vec<String>,
    #[serde(default)]
    pub collapsed_label: String,
    /// Explicit row order; defaults to first appearance with the constant last.
    #[serde(default)]
    pub row_order: Vec<String>,
}

impl RegressionTable {
    pub fn new(title: &str, columns: Vec<TableColumn>) -> Self {
        Self {
            title: title.into(),
            columns,
            collapsed: Vec::new(),
            collapsed_label: String::new(),
            row_order: Vec::new(),
        }
    }

    /// Shows the given rows as one `label  YES` line.
    pub fn collapse<S: AsRef<str>>(mut self, rows: &[S], label: &str) -> Self {
        self.collapsed = rows.iter().map(|s| s.as_ref().to_string()).collect();
        self.collapsed_label = label.into();
        self
    }

    pub fn rows(&self) -> Vec<String> {
        if !self.row_order.is_empty() {
            return self.row_order.clone();
        }
        let mut rows: Vec<String> = Vec::new();
        for c in &self.columns {
            for r in &c.order {
                if r != CONST && !self.collapsed.contains(r) && !rows.contains(r) {
                    rows.push(r.clone());
                }
            }
        }
        rows
    }

    fn diagnostic_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for c in &self.columns {
            for k in c.diagnostics.keys() {
                if !names.contains(k) {
                    names.push(k.clone());
                }
            }
        }
        names
    }

    pub fn to_markdown(&self, precision: usize) -> String {
        let mut s = String::new();
        if !self.title.is_empty() {
            let _ = writeln!(s, "**{}**\n", self.title);
        }
        let k = self.columns.len();
        let head: Vec<String> = (1..=k).map(|j| format!("({j})")).collect();
        let _ = writeln!(s, "| variable | {} |", head.join(" | "));
        let _ = writeln!(s, "|---|{}", "---|".repeat(k));
        let labels: Vec<&str> = self.columns.iter().map(|c| c.header.as_str()).collect();
        let _ = writeln!(s, "| | {} |", labels.join(" | "));

        let coef_rows = |s: &mut String, row: &str| {
            let est: Vec<String> = self
                .columns
                .iter()
                .map(|c| match c.cells.get(row) {
                    Some(x) => format!("{}{}", fmt_fixed(x.estimate, precision), stars(x.p_value)),
                    None => String::new(),
                })
                .collect();
            let se: Vec<String> = self
                .columns
                .iter()
                .map(|c| match c.cells.get(row) {
                    Some(x) => format!("({})", fmt_fixed(x.std_error, precision)),
                    None => String::new(),
                })
                .collect();
            let _ = writeln!(s, "| {row} | {} |", est.join(" | "));
            let _ = writeln!(s, "| | {} |", se.join(" | "));
        };
        for row in self.rows() {
            coef_rows(&mut s, &row);
        }
        if !self.collapsed.is_empty() {
            let yes: Vec<&str> = self
                .columns
                .iter()
                .map(|c| if self.collapsed.iter().any(|r| c.cells.contains_key(r)) { "YES" } else { "NO" })
                .collect();
            let _ = writeln!(s, "| {} | {} |", self.collapsed_label, yes.join(" | "));
        }
        for name in self.diagnostic_names() {
            let cells: Vec<String> = self
                .columns
                .iter()
                .map(|c| match c.diagnostics.get(&name) {
                    Some(d) => format!(
                        "{}{} [{}]",
                        fmt_fixed(d.statistic, precision),
                        stars(d.p_value),
                        fmt_fixed(d.p_value, precision)
                    ),
                    None => String::new(),
                })
                .collect();
            let _ = writeln!(s, "| {name} | {} |", cells.join(" | "));
        }
        if self.columns.iter().any(|c| c.cells.contains_key(CONST)) && self.row_order.is_empty() {
            coef_rows(&mut s, CONST);
        }
        let n: Vec<String> = self
            .columns
            .iter()
            .map(|c| c.n_obs.map(|n| n.to_string()).unwrap_or_default())
            .collect();
        let _ = writeln!(s, "| N | {} |", n.join(" | "));
        if self.columns.iter().any(|c| c.n_instruments.is_some()) {
            let l: Vec<String> = self
                .columns
                .iter()
                .map(|c| c.n_instruments.map(|n| n.to_string()).unwrap_or_default())
                .collect();
            let _ = writeln!(s, "| Instruments | {} |", l.join(" | "));
        }
        if self.columns.iter().any(|c| c.r_squared.is_some()) {
            let r2: Vec<String> = self
                .columns
                .iter()
                .map(|c| c.r_squared.map(|r| fmt_fixed(r, precision)).unwrap_or_default())
                .collect();
            let _ = writeln!(s, "| R2 | {} |", r2.join(" | "));
        }
        s.push_str("\nStandard errors in parentheses; diagnostic p-values in brackets. * p<0.10, ** p<0.05, *** p<0.01.\n");
        s
    }

    /// Long CSV at full precision: `column,header,row,estimate,std_error,p_value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["column", "header", "row", "estimate", "std_error", "p_value"])?;
        for (j, c) in self.columns.iter().enumerate() {
            for r in &c.order {
                let x = c.cells[r];
                wtr.write_record([
                    (j + 1).to_string(),
                    c.header.clone(),
                    r.clone(),
                    format!("{:?}", x.estimate),
                    format!("{:?}", x.std_error),
                    format!("{:?}", x.p_value),
                ])?;
            }
            for (name, d) in &c.diagnostics {
                wtr.write_record([
                    (j + 1).to_string(),
                    c.header.clone(),
                    name.clone(),
                    format!("{:?}", d.statistic),
                    String::new(),
                    format!("{:?}", d.p_value),
                ])?;
            }
            if let Some(l) = c.n_instruments {
                wtr.write_record([
                    (j + 1).to_string(),
                    c.header.clone(),
                    "instruments".into(),
                    l.to_string(),
                    String::new(),
                    String::new(),
                ])?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Table with `(Y~X)`, one `(M~X)` per mediator, then one `(Y~X+M)` per
/// mediator. All reports must share treatment and outcome.
pub fn mediation_table(reports: &[MediationReport]) -> Result<RegressionTable> {
    let first = reports
        .first()
        .ok_or_else(|| Error::SpecInvalid("mediation table needs at least one report".into()))?;
    if reports
        .iter()
        .any(|r| r.treatment != first.treatment || r.outcome != first.outcome)
    {
        return Err(Error::SpecInvalid("mediation reports disagree on treatment or outcome".into()));
    }
    let mut cols = vec![TableColumn::from_regression(&first.outcome, &first.total_fit)];
    for r in reports {
        cols.push(TableColumn::from_regression(&r.mediator, &r.mediator_fit));
    }
    for r in reports {
        cols.push(TableColumn::from_regression(&r.outcome, &r.outcome_fit));
    }
    Ok(RegressionTable::new("Mediation effects", cols))
}

/// Per-mediator summary: paths, Sobel statistic and classification.
pub fn mediation_summary_markdown(reports: &[MediationReport], precision: usize) -> String {
    let mut s = String::from("| mediator | a | b | c | c' | a*b | Sobel z | classification |\n|---|---|---|---|---|---|---|---|\n");
    let f = |k: &crate::regression::Coefficient| format!("{}{}", fmt_fixed(k.estimate, precision), stars(k.p_value));
    for r in reports {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            r.mediator,
            f(&r.a),
            f(&r.b),
            f(&r.c),
            f(&r.c_prime),
            fmt_fixed(r.indirect, precision),
            fmt_fixed(r.sobel_z, precision),
            r.classification.label()
        );
    }
    s
}

/// Year rows with `I, z, p` blocks side by side, one block per table.
pub fn moran_markdown(tables: &[MoranTable], precision: usize) -> String {
    let mut s = String::from("| year |");
    let mut rule = String::from("|---|");
    for t in tables {
        let _ = write!(s, " {v} I | {v} z | {v} p |", v = t.variable);
        rule.push_str("---|---|---|");
    }
    s.push('\n');
    s.push_str(&rule);
    s.push('\n');
    let mut years: Vec<i32> = tables.iter().flat_map(|t| t.rows.iter().map(|r| r.0)).collect();
    years.sort_unstable();
    years.dedup();
    for y in years {
        let _ = write!(s, "| {y} |");
        for t in tables {
            match t.rows.iter().find(|r| r.0 == y) {
                Some((_, m)) => {
                    let _ = write!(
                        s,
                        " {}{} | {} | {} |",
                        fmt_fixed(m.i, precision),
                        stars(m.p_value),
                        fmt_fixed(m.z, precision),
                        fmt_fixed(m.p_value, precision)
                    );
                }
                None => s.push_str(" | | |"),
            }
        }
        s.push('\n');
    }
    s
}

/// National-mean series `(year, CMX_index, DIG_index)`.
pub fn write_fig1_csv<W: Write>(writer: W, years: &[i32], cmx: &[f64], dig: &[f64]) -> Result<()> {
    if years.len() != cmx.len() || years.len() != dig.len() {
        return Err(Error::DimensionMismatch("figure series lengths differ".into()));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["year", "CMX_index", "DIG_index"])?;
    for k in 0..years.len() {
        wtr.write_record([years[k].to_string(), format!("{:?}", cmx[k]), format!("{:?}", dig[k])])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Moran scatter data `(unit, z, spatial_lag, quadrant)`.
pub fn write_fig2_csv<W: Write>(writer: W, scatter: &MoranScatter) -> Result<()> {
    scatter.write_csv(writer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{Coefficient, Estimator, TestDist};
    use std::collections::BTreeSet;

    fn coef(name: &str, est: f64, se: f64, p: f64) -> Coefficient {
        Coefficient {
            name: name.into(),
            estimate: est,
            std_error: se,
            statistic: est / se,
            p_value: p,
        }
    }

    fn result(diag: bool) -> RegressionResult {
        let mut diagnostics = BTreeMap::new();
        if diag {
            diagnostics.insert(
                "AR(1)".to_string(),
                Diagnostic {
                    statistic: -2.5,
                    p_value: 0.011,
                    df: None,
                },
            );
        }
        RegressionResult {
            estimator: Estimator::Ols,
            dependent: "CMX".into(),
            coefficients: vec![
                coef("_cons", -0.134, 0.046, 0.004),
                coef("DIG", 0.156, 0.029, 0.004),
                coef("STU", 0.006, 0.002, 0.2),
            ],
            n_obs: 360,
            dist: TestDist::T,
            df_resid: Some(357.0),
            r_squared: Some(0.43),
            diagnostics,
            absorbed: vec![],
            n_instruments: None,
            warnings: vec![],
            fixed_effects: BTreeSet::new(),
        }
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(0.004), "***");
        assert_eq!(stars(0.01), "**");
        assert_eq!(stars(0.049), "**");
        assert_eq!(stars(0.05), "*");
        assert_eq!(stars(0.0999), "*");
        assert_eq!(stars(0.1), "");
    }

    #[test]
    fn coefficient_over_se_layout() {
        let t = RegressionTable::new("Baseline", vec![TableColumn::from_regression("OLS", &result(false))]);
        let md = t.to_markdown(3);
        let lines: Vec<&str> = md.lines().collect();
        let i = lines.iter().position(|l| l.starts_with("| DIG |")).unwrap();
        assert_eq!(lines[i], "| DIG | 0.156*** |");
        assert_eq!(lines[i + 1], "| | (0.029) |");
        // constant comes after the other coefficients
        let c = lines.iter().position(|l| l.starts_with("| _cons |")).unwrap();
        assert!(c > i);
        assert!(md.contains("| N | 360 |"));
        assert!(!md.contains("AR(1)"));
    }

    #[test]
    fn diagnostics_block_when_present() {
        let t = RegressionTable::new("", vec![TableColumn::from_regression("GMM", &result(true))]);
        assert!(t.to_markdown(3).contains("| AR(1) | -2.500** [0.011] |"));
    }

    #[test]
    fn instrument_count_row() {
        let mut r = result(true);
        assert!(!RegressionTable::new("", vec![TableColumn::from_regression("GMM", &r)])
            .to_markdown(3)
            .contains("Instruments"));
        r.n_instruments = Some(9);
        let t = RegressionTable::new("", vec![TableColumn::from_regression("GMM", &r)]);
        assert!(t.to_markdown(3).contains("| Instruments | 9 |"));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("1,GMM,instruments,9,,"));
    }

    #[test]
    fn collapsed_controls() {
        let t = RegressionTable::new("", vec![TableColumn::from_regression("FE", &result(false))])
            .collapse(&["STU"], "control variable");
        let md = t.to_markdown(3);
        assert!(md.contains("| control variable | YES |"));
        assert!(!md.contains("| STU |"));
    }

    #[test]
    fn rendered_numbers_round_trip() {
        let r = result(false);
        let t = RegressionTable::new("", vec![TableColumn::from_regression("OLS", &r)]);
        let md = t.to_markdown(3);
        let json: RegressionTable = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        for c in &r.coefficients {
            let line = md.lines().find(|l| l.starts_with(&format!("| {} |", c.name))).unwrap();
            let shown: f64 = line.split('|').nth(2).unwrap().trim().trim_end_matches('*').parse().unwrap();
            let full = json.columns[0].cells[&c.name].estimate;
            assert_eq!(shown, (full * 1000.0).round() / 1000.0);
        }
    }

    #[test]
    fn csv_has_full_precision() {
        let t = RegressionTable::new("", vec![TableColumn::from_regression("OLS", &result(true))]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("column,header,row,estimate,std_error,p_value\n"));
        assert!(s.contains("1,OLS,DIG,0.156,0.029,0.004"));
        assert!(s.contains("1,OLS,AR(1),-2.5,,0.011"));
    }

    #[test]
    fn fig1_layout() {
        let mut buf = Vec::new();
        write_fig1_csv(&mut buf, &[2011, 2012], &[0.2, 0.3], &[0.1, 0.15]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "year,CMX_index,DIG_index\n2011,0.2,0.1\n2012,0.3,0.15\n");
        assert!(write_fig1_csv(Vec::new(), &[2011], &[], &[]).is_err());
    }
}
