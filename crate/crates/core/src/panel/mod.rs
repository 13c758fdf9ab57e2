//! Balanced unit × year panels, unit metadata and the operations that build
//! model variables out of raw series.
//!
//! Every variable is stored as a `units × years` matrix. Missing cells are
//! `NaN` until [`PanelDataset::validate_balanced`] has been run for the
//! variables in use. Datasets are immutable: every transformation returns a
//! new panel.

mod derive;
mod io;
mod stats;

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use derive::{education_years, labor_transfer_share, Derivation, Expr, EDUCATION_LEVEL_YEARS};
pub use io::{
    load_metadata, load_panel, read_metadata, read_panel, read_wide_panel, save_metadata,
    FillPolicy, LoadOptions,
};
pub use stats::{StatsRow, StatsTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RegionGroup {
    East,
    Central,
    West,
}

impl RegionGroup {
    pub const ALL: [RegionGroup; 3] = [RegionGroup::East, RegionGroup::Central, RegionGroup::West];

    pub fn label(self) -> &'static str {
        match self {
            RegionGroup::East => "East",
            RegionGroup::Central => "Central",
            RegionGroup::West => "West",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitMeta {
    pub region_group: RegionGroup,
    #[serde(default)]
    pub is_municipality: bool,
    /// `[latitude, longitude]` in degrees.
    pub centroid: [f64; 2],
    #[serde(default)]
    pub neighbors: BTreeSet<String>,
}

/// Unit selection used by [`PanelDataset::subset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitFilter {
    All,
    ExcludeMunicipalities,
    Regions(Vec<RegionGroup>),
    Units(Vec<String>),
    Not(Box<UnitFilter>),
    And(Vec<UnitFilter>),
    Or(Vec<UnitFilter>),
}

impl UnitFilter {
    pub fn matches(&self, unit: &str, meta: &UnitMeta) -> bool {
        match self {
            UnitFilter::All => true,
            UnitFilter::ExcludeMunicipalities => !meta.is_municipality,
            UnitFilter::Regions(groups) => groups.contains(&meta.region_group),
            UnitFilter::Units(names) => names.iter().any(|n| n == unit),
            UnitFilter::Not(inner) => !inner.matches(unit, meta),
            UnitFilter::And(parts) => parts.iter().all(|p| p.matches(unit, meta)),
            UnitFilter::Or(parts) => parts.iter().any(|p| p.matches(unit, meta)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    units: Vec<String>,
    years: Vec<i32>,
    values: BTreeMap<String, DMatrix<f64>>,
    meta: BTreeMap<String, UnitMeta>,
}

impl PanelDataset {
    /// Creates an empty panel. Units and years are sorted; duplicates are rejected.
    pub fn new(mut units: Vec<String>, mut years: Vec<i32>) -> Result<Self> {
        units.sort();
        years.sort_unstable();
        if units.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::SpecInvalid("duplicate unit identifier".into()));
        }
        if years.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::SpecInvalid("duplicate year".into()));
        }
        if units.is_empty() || years.is_empty() {
            return Err(Error::SpecInvalid("panel needs at least one unit and one year".into()));
        }
        Ok(Self {
            units,
            years,
            values: BTreeMap::new(),
            meta: BTreeMap::new(),
        })
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn has_variable(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn meta(&self) -> &BTreeMap<String, UnitMeta> {
        &self.meta
    }

    pub fn unit_meta(&self, unit: &str) -> Option<&UnitMeta> {
        self.meta.get(unit)
    }

    pub fn unit_index(&self, unit: &str) -> Option<usize> {
        self.units.binary_search_by(|u| u.as_str().cmp(unit)).ok()
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        self.years.binary_search(&year).ok()
    }

    /// Raw stored matrix for `name` (no lag resolution).
    pub fn get(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.values
            .get(name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    /// Resolves `name`, accepting lag notation `L.x` / `L2.x`. Lagged cells
    /// without a predecessor year are `NaN`.
    pub fn series(&self, name: &str) -> Result<Cow<'_, DMatrix<f64>>> {
        if let Some(m) = self.values.get(name) {
            return Ok(Cow::Borrowed(m));
        }
        if let Some((lag, base)) = parse_lag(name) {
            let src = self.get(base)?;
            let mut out = DMatrix::from_element(src.nrows(), src.ncols(), f64::NAN);
            for j in lag..src.ncols() {
                out.set_column(j, &src.column(j - lag));
            }
            return Ok(Cow::Owned(out));
        }
        Err(Error::UnknownVariable(name.to_string()))
    }

    pub fn value(&self, name: &str, unit: usize, year: usize) -> Result<f64> {
        Ok(self.get(name)?[(unit, year)])
    }

    /// Adds or replaces a variable. The matrix must be `units × years`.
    pub fn with_variable(mut self, name: impl Into<String>, data: DMatrix<f64>) -> Result<Self> {
        self.insert_variable(name, data)?;
        Ok(self)
    }

    pub(crate) fn insert_variable(&mut self, name: impl Into<String>, data: DMatrix<f64>) -> Result<()> {
        let name = name.into();
        if data.shape() != (self.units.len(), self.years.len()) {
            return Err(Error::DimensionMismatch(format!(
                "variable `{name}` is {:?}, panel is {}x{}",
                data.shape(),
                self.units.len(),
                self.years.len()
            )));
        }
        self.values.insert(name, data);
        Ok(())
    }

    /// Attaches metadata for every unit of the panel. Neighbor sets are
    /// restricted to units present in the panel.
    pub fn with_meta(mut self, meta: &BTreeMap<String, UnitMeta>) -> Result<Self> {
        let present: BTreeSet<&str> = self.units.iter().map(String::as_str).collect();
        let mut kept = BTreeMap::new();
        for unit in &self.units {
            let m = meta
                .get(unit)
                .ok_or_else(|| Error::InvalidMetadata(format!("no metadata for unit {unit}")))?;
            let mut m = m.clone();
            m.neighbors.retain(|n| present.contains(n.as_str()));
            kept.insert(unit.clone(), m);
        }
        validate_meta(&kept)?;
        self.meta = kept;
        Ok(self)
    }

    /// Checks that the listed variables have no missing cells.
    pub fn validate_balanced<S: AsRef<str>>(&self, variables: &[S]) -> Result<()> {
        for var in variables {
            let var = var.as_ref();
            let m = self.get(var)?;
            for (i, unit) in self.units.iter().enumerate() {
                for (j, &year) in self.years.iter().enumerate() {
                    if !m[(i, j)].is_finite() {
                        return Err(Error::MissingCell {
                            unit: unit.clone(),
                            year,
                            variable: var.to_string(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Restricts the panel to units accepted by `filter`.
    pub fn subset(&self, filter: &UnitFilter) -> Result<Self> {
        if matches!(filter, UnitFilter::All) {
            return Ok(self.clone());
        }
        if self.meta.len() != self.units.len() {
            return Err(Error::InvalidMetadata(
                "subsetting by a unit filter needs metadata for every unit".into(),
            ));
        }
        self.subset_by(|unit, meta| meta.is_some_and(|m| filter.matches(unit, m)))
    }

    /// Restricts the panel to units accepted by `keep`. Years are unchanged and
    /// adjacency is restricted to surviving units.
    pub fn subset_by<F>(&self, keep: F) -> Result<Self>
    where
        F: Fn(&str, Option<&UnitMeta>) -> bool,
    {
        let rows: Vec<usize> = (0..self.units.len())
            .filter(|&i| keep(&self.units[i], self.meta.get(&self.units[i])))
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptySelection);
        }
        let units: Vec<String> = rows.iter().map(|&i| self.units[i].clone()).collect();
        let kept: BTreeSet<&str> = units.iter().map(String::as_str).collect();
        let values = self
            .values
            .iter()
            .map(|(k, m)| (k.clone(), m.select_rows(rows.iter())))
            .collect();
        let meta = self
            .meta
            .iter()
            .filter(|(u, _)| kept.contains(u.as_str()))
            .map(|(u, m)| {
                let mut m = m.clone();
                m.neighbors.retain(|n| kept.contains(n.as_str()));
                (u.clone(), m)
            })
            .collect();
        Ok(Self {
            units,
            years: self.years.clone(),
            values,
            meta,
        })
    }

    /// Restricts the panel to years in `[from, to]`.
    pub fn year_range(&self, from: i32, to: i32) -> Result<Self> {
        let cols: Vec<usize> = (0..self.years.len())
            .filter(|&j| self.years[j] >= from && self.years[j] <= to)
            .collect();
        if cols.is_empty() {
            return Err(Error::EmptySelection);
        }
        Ok(Self {
            units: self.units.clone(),
            years: cols.iter().map(|&j| self.years[j]).collect(),
            values: self
                .values
                .iter()
                .map(|(k, m)| (k.clone(), m.select_columns(cols.iter())))
                .collect(),
            meta: self.meta.clone(),
        })
    }

    /// Cross-section of `name` for the year at index `year`.
    pub fn cross_section(&self, name: &str, year: usize) -> Result<Vec<f64>> {
        let m = self.series(name)?;
        Ok(m.column(year).iter().copied().collect())
    }

    /// Per-unit mean of `name` over all years.
    pub fn unit_means(&self, name: &str) -> Result<Vec<f64>> {
        let m = self.series(name)?;
        Ok(m.row_iter().map(|r| r.mean()).collect())
    }
}

/// Parses `L.x` (lag 1) or `L<k>.x` (lag k).
pub fn parse_lag(name: &str) -> Option<(usize, &str)> {
    let rest = name.strip_prefix('L')?;
    let (digits, base) = rest.split_once('.')?;
    if base.is_empty() {
        return None;
    }
    let lag = if digits.is_empty() {
        1
    } else {
        digits.parse().ok()?
    };
    (lag > 0).then_some((lag, base))
}

pub(crate) fn validate_meta(meta: &BTreeMap<String, UnitMeta>) -> Result<()> {
    for (unit, m) in meta {
        let [lat, lon] = m.centroid;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidMetadata(format!(
                "centroid of {unit} out of range: [{lat}, {lon}]"
            )));
        }
        if m.neighbors.contains(unit) {
            return Err(Error::InvalidMetadata(format!("{unit} lists itself as a neighbor")));
        }
        for n in &m.neighbors {
            match meta.get(n) {
                Some(other) if other.neighbors.contains(unit) => {}
                Some(_) => {
                    return Err(Error::InvalidMetadata(format!(
                        "asymmetric adjacency: {unit} lists {n} but not the reverse"
                    )))
                }
                None => {
                    return Err(Error::InvalidMetadata(format!(
                        "{unit} lists unknown neighbor {n}"
                    )))
                }
            }
        }
    }
    Ok(())
}
