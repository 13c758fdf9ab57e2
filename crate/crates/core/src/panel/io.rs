use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{validate_meta, PanelDataset, UnitMeta};
use crate::error::{Error, Result};

/// How holes in the long-format input are handled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    #[default]
    Strict,
    /// Linear interpolation inside a unit's own series. Leading and trailing
    /// gaps cannot be interpolated and are still reported as missing.
    Interpolate,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Declared variables. When set, undeclared variables are rejected and
    /// every declared variable must be complete.
    pub schema: Option<Vec<String>>,
    pub fill: FillPolicy,
}

pub fn load_panel(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<PanelDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel(BufReader::new(file), opts)
}

fn is_missing(s: &str) -> bool {
    let s = s.trim();
    s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan")
}

/// Reads the canonical long format `unit,year,variable,value`.
pub fn read_panel<R: Read>(reader: R, opts: &LoadOptions) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => {
            return Err(Error::MalformedRow {
                line: 1,
                reason: "empty file".into(),
            })
        }
        Some(h) => h?,
    };
    let expected = ["unit", "year", "variable", "value"];
    if header.len() != 4 || header.iter().zip(expected).any(|(a, b)| !a.eq_ignore_ascii_case(b)) {
        return Err(Error::MalformedRow {
            line: 1,
            reason: format!("expected header `unit,year,variable,value`, got `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let schema: Option<BTreeSet<&str>> = opts
        .schema
        .as_ref()
        .map(|s| s.iter().map(String::as_str).collect());

    let mut cells: BTreeMap<(String, String, i32), f64> = BTreeMap::new();
    let mut units = BTreeSet::new();
    let mut years = BTreeSet::new();
    let mut vars = BTreeSet::new();
    for (idx, rec) in records.enumerate() {
        let line = idx + 2;
        let rec = rec?;
        if rec.len() == 1 && rec.get(0).is_some_and(str::is_empty) {
            continue;
        }
        if rec.len() != 4 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 4 fields, found {}", rec.len()),
            });
        }
        let unit = rec[0].to_string();
        if unit.is_empty() {
            return Err(Error::MalformedRow {
                line,
                reason: "empty unit".into(),
            });
        }
        let year: i32 = rec[1].parse().map_err(|_| Error::MalformedRow {
            line,
            reason: format!("bad year `{}`", &rec[1]),
        })?;
        let var = rec[2].to_string();
        if let Some(schema) = &schema {
            if !schema.contains(var.as_str()) {
                return Err(Error::UnknownVariable(var));
            }
        }
        let value = if is_missing(&rec[3]) {
            f64::NAN
        } else {
            rec[3].parse::<f64>().map_err(|_| Error::MalformedRow {
                line,
                reason: format!("bad value `{}`", &rec[3]),
            })?
        };
        units.insert(unit.clone());
        years.insert(year);
        vars.insert(var.clone());
        if cells.insert((var, unit, year), value).is_some() {
            return Err(Error::MalformedRow {
                line,
                reason: "duplicate (unit, year, variable)".into(),
            });
        }
    }
    if cells.is_empty() {
        return Err(Error::MalformedRow {
            line: 2,
            reason: "no data rows".into(),
        });
    }
    if let Some(schema) = &opts.schema {
        for v in schema {
            vars.insert(v.clone());
        }
    }
    let mut panel = PanelDataset::new(units.into_iter().collect(), years.into_iter().collect())?;
    let (nu, ny) = (panel.n_units(), panel.n_years());
    for var in &vars {
        let mut m = DMatrix::from_element(nu, ny, f64::NAN);
        for (i, u) in panel.units.iter().enumerate() {
            for (j, y) in panel.years.iter().enumerate() {
                if let Some(v) = cells.get(&(var.clone(), u.clone(), *y)) {
                    m[(i, j)] = *v;
                }
            }
        }
        if opts.fill == FillPolicy::Interpolate {
            interpolate_rows(&mut m, &panel.years);
        }
        panel.values.insert(var.clone(), m);
    }
    panel.validate_balanced(&vars.iter().collect::<Vec<_>>())?;
    Ok(panel)
}

fn interpolate_rows(m: &mut DMatrix<f64>, years: &[i32]) {
    for i in 0..m.nrows() {
        let known: Vec<usize> = (0..m.ncols()).filter(|&j| m[(i, j)].is_finite()).collect();
        for w in known.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (ya, yb) = (years[a] as f64, years[b] as f64);
            let (va, vb) = (m[(i, a)], m[(i, b)]);
            for j in a + 1..b {
                let t = (years[j] as f64 - ya) / (yb - ya);
                m[(i, j)] = va + t * (vb - va);
            }
        }
    }
}

/// Reads a wide table `unit,year,<var1>,<var2>,...` into a panel.
pub fn read_wide_panel<R: Read>(reader: R, opts: &LoadOptions) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "unit" || &headers[1] != "year" {
        return Err(Error::MalformedRow {
            line: 1,
            reason: "wide header must start with `unit,year` and name at least one variable".into(),
        });
    }
    let mut long = String::from("unit,year,variable,value\n");
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::MalformedRow {
                line: idx + 2,
                reason: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        for k in 2..headers.len() {
            long.push_str(&format!("{},{},{},{}\n", &rec[0], &rec[1], &headers[k], &rec[k]));
        }
    }
    read_panel(long.as_bytes(), opts)
}

impl PanelDataset {
    /// Writes the canonical long format, sorted by unit, year, variable.
    /// Values use the shortest representation that parses back exactly.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["unit", "year", "variable", "value"])?;
        for (i, unit) in self.units.iter().enumerate() {
            for (j, year) in self.years.iter().enumerate() {
                for (var, m) in &self.values {
                    let v = m[(i, j)];
                    if v.is_finite() {
                        wtr.write_record([unit.as_str(), &year.to_string(), var.as_str(), &format!("{v:?}")])?;
                    }
                }
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Reads a metadata document `{unit: {region_group, is_municipality, centroid: [lat, lon], neighbors: [..]}}`.
pub fn read_metadata<R: Read>(reader: R) -> Result<BTreeMap<String, UnitMeta>> {
    let meta: BTreeMap<String, UnitMeta> = serde_json::from_reader(reader)?;
    validate_meta(&meta)?;
    Ok(meta)
}

pub fn load_metadata(path: impl AsRef<Path>) -> Result<BTreeMap<String, UnitMeta>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_metadata(BufReader::new(file))
}

pub fn save_metadata(meta: &BTreeMap<String, UnitMeta>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(file, meta)?;
    Ok(())
}
