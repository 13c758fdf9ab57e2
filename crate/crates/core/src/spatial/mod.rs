//! Spatial weight matrices and Moran statistics.

mod moran;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use moran::{
    global_morans_i, moran_by_year, moran_permutation, moran_scatter, MoranResult, MoranScatter, MoranTable,
    PermutationTest, Quadrant,
};

use crate::error::{Error, Result};
use crate::panel::{validate_meta, PanelDataset, UnitMeta};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Added to a zero gap between unit means in the economic matrix.
pub const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Contiguity,
    InverseDistance,
    Economic,
    Custom,
}

impl WeightKind {
    pub fn label(self) -> &'static str {
        match self {
            WeightKind::Contiguity => "contiguity",
            WeightKind::InverseDistance => "distance",
            WeightKind::Economic => "economic",
            WeightKind::Custom => "custom",
        }
    }

    pub const BUILTIN: [WeightKind; 3] = [WeightKind::Contiguity, WeightKind::InverseDistance, WeightKind::Economic];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialWeightMatrix {
    pub kind: WeightKind,
    pub units: Vec<String>,
    /// Weights before row standardisation.
    pub raw: DMatrix<f64>,
    /// Weights in use (row-standardised when `row_standardized`).
    pub weights: DMatrix<f64>,
    pub row_standardized: bool,
    /// Real and imaginary parts of the eigenvalues of `weights`.
    pub eigen_re: Vec<f64>,
    pub eigen_im: Vec<f64>,
    /// `(λ_min, λ_max)` over the real eigenvalues.
    pub eigen_bounds: (f64, f64),
    /// Units with no neighbours (zero rows).
    pub isolated: Vec<String>,
    pub notes: Vec<String>,
}

impl SpatialWeightMatrix {
    /// Builds from a nonnegative matrix with zero diagonal, row-standardising
    /// when asked.
    pub fn from_raw(kind: WeightKind, units: Vec<String>, raw: DMatrix<f64>, standardize: bool) -> Result<Self> {
        let n = units.len();
        if raw.shape() != (n, n) || n == 0 {
            return Err(Error::DimensionMismatch(format!(
                "weight matrix is {:?} for {n} units",
                raw.shape()
            )));
        }
        for i in 0..n {
            if raw[(i, i)] != 0.0 {
                return Err(Error::SpecInvalid(format!("nonzero diagonal weight for {}", units[i])));
            }
            if let Some(v) = raw.row(i).iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                return Err(Error::SpecInvalid(format!("invalid weight {v} in row {}", units[i])));
            }
        }
        let mut isolated = Vec::new();
        let mut notes = Vec::new();
        let mut weights = raw.clone();
        for i in 0..n {
            let s: f64 = raw.row(i).sum();
            if s == 0.0 {
                isolated.push(units[i].clone());
                log::warn!("spatial unit {} has no neighbours; its row stays zero", units[i]);
                notes.push(format!("isolated unit {} left as a zero row", units[i]));
            } else if standardize {
                let mut row = weights.row_mut(i);
                row /= s;
            }
        }
        let (eigen_re, eigen_im) = eigenvalues(&raw, &weights, standardize);
        let reals: Vec<f64> = eigen_re
            .iter()
            .zip(&eigen_im)
            .filter(|(_, im)| im.abs() < 1e-10)
            .map(|(re, _)| *re)
            .collect();
        let lo = reals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = reals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            kind,
            units,
            raw,
            weights,
            row_standardized: standardize,
            eigen_re,
            eigen_im,
            eigen_bounds: (lo, hi),
            isolated,
            notes,
        })
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// `W x`.
    pub fn lag(&self, x: &[f64]) -> Vec<f64> {
        let v = &self.weights * DVector::from_column_slice(x);
        v.iter().copied().collect()
    }

    /// `ln|det(I − ρW)|` from the cached eigenvalues.
    pub fn log_det(&self, rho: f64) -> f64 {
        self.eigen_re
            .iter()
            .zip(&self.eigen_im)
            .map(|(re, im)| 0.5 * ((1.0 - rho * re).powi(2) + (rho * im).powi(2)).ln())
            .sum()
    }

    /// Errors unless the matrix rows follow the panel's unit order.
    pub fn check_units(&self, units: &[String]) -> Result<()> {
        if self.units != units {
            return Err(Error::DimensionMismatch(format!(
                "{} weight matrix units do not match the panel units",
                self.kind.label()
            )));
        }
        Ok(())
    }

    /// Relabels units by `perm`: new unit `a` is old unit `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        let raw = DMatrix::from_fn(n, n, |a, b| self.raw[(perm[a], perm[b])]);
        let units = perm.iter().map(|&p| self.units[p].clone()).collect();
        Self::from_raw(self.kind, units, raw, self.row_standardized)
    }

    /// Dense CSV: header `unit,<u1>,<u2>,...`, one row per unit.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec![String::from("unit")];
        header.extend(self.units.iter().cloned());
        wtr.write_record(&header)?;
        for (i, u) in self.units.iter().enumerate() {
            let mut rec = vec![u.clone()];
            rec.extend(self.weights.row(i).iter().map(|v| format!("{v:?}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Reads a dense CSV written by [`write_csv`](Self::write_csv). The
    /// matrix is used as given; it counts as row-standardised when every
    /// nonzero row sums to one.
    pub fn read_csv<R: Read>(reader: R, kind: WeightKind) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        let units: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let n = units.len();
        let mut raw = DMatrix::zeros(n, n);
        let mut seen = 0;
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = r + 2;
            if rec.len() != n + 1 {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("expected {} fields, found {}", n + 1, rec.len()),
                });
            }
            if r >= n || rec[0] != units[r] {
                return Err(Error::MalformedRow {
                    line,
                    reason: "row order must follow the header".into(),
                });
            }
            for j in 0..n {
                raw[(r, j)] = rec[j + 1].trim().parse().map_err(|_| Error::MalformedRow {
                    line,
                    reason: format!("bad weight `{}`", &rec[j + 1]),
                })?;
            }
            seen += 1;
        }
        if seen != n {
            return Err(Error::MalformedRow {
                line: seen + 2,
                reason: format!("expected {n} rows, found {seen}"),
            });
        }
        let standardized = (0..n).all(|i| {
            let s: f64 = raw.row(i).sum();
            s == 0.0 || (s - 1.0).abs() < 1e-12
        });
        Self::from_raw(kind, units, raw, standardized)
    }
}

/// Eigenvalues of the matrix in use. A row-standardised symmetric matrix
/// `D^{-1}C` is similar to the symmetric `D^{-1/2} C D^{-1/2}`, so its
/// spectrum is real and computed from the symmetric form.
fn eigenvalues(raw: &DMatrix<f64>, weights: &DMatrix<f64>, standardized: bool) -> (Vec<f64>, Vec<f64>) {
    let n = raw.nrows();
    let symmetric = (0..n).all(|i| (0..i).all(|j| raw[(i, j)] == raw[(j, i)]));
    if symmetric {
        let sym = if standardized {
            let d: Vec<f64> = (0..n)
                .map(|i| {
                    let s: f64 = raw.row(i).sum();
                    if s > 0.0 {
                        1.0 / s.sqrt()
                    } else {
                        0.0
                    }
                })
                .collect();
            DMatrix::from_fn(n, n, |i, j| d[i] * raw[(i, j)] * d[j])
        } else {
            raw.clone()
        };
        let ev = sym.symmetric_eigen().eigenvalues;
        let mut re: Vec<f64> = ev.iter().copied().collect();
        re.sort_by(f64::total_cmp);
        (re, vec![0.0; n])
    } else {
        let ev = weights.complex_eigenvalues();
        let mut pairs: Vec<(f64, f64)> = ev.iter().map(|c| (c.re, c.im)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pairs.into_iter().unzip()
    }
}

/// Great-circle distance in km between `[lat, lon]` points in degrees.
pub fn haversine_km(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (la1, lo1) = (a[0].to_radians(), a[1].to_radians());
    let (la2, lo2) = (b[0].to_radians(), b[1].to_radians());
    let h = ((la2 - la1) / 2.0).sin().powi(2) + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Binary first-order contiguity from the metadata neighbour sets,
/// row-standardised.
pub fn contiguity_matrix(meta: &BTreeMap<String, UnitMeta>) -> Result<SpatialWeightMatrix> {
    validate_meta(meta)?;
    let units: Vec<String> = meta.keys().cloned().collect();
    let idx: BTreeMap<&str, usize> = units.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let n = units.len();
    let mut raw = DMatrix::zeros(n, n);
    for (i, u) in units.iter().enumerate() {
        for nb in &meta[u].neighbors {
            raw[(i, idx[nb.as_str()])] = 1.0;
        }
    }
    SpatialWeightMatrix::from_raw(WeightKind::Contiguity, units, raw, true)
}

/// Inverse great-circle distance between centroids, row-standardised.
pub fn inverse_distance_matrix(meta: &BTreeMap<String, UnitMeta>) -> Result<SpatialWeightMatrix> {
    validate_meta(meta)?;
    let units: Vec<String> = meta.keys().cloned().collect();
    let n = units.len();
    let mut raw = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = haversine_km(meta[&units[i]].centroid, meta[&units[j]].centroid);
            if d == 0.0 {
                return Err(Error::CoincidentCentroids(units[i].clone(), units[j].clone()));
            }
            raw[(i, j)] = 1.0 / d;
            raw[(j, i)] = 1.0 / d;
        }
    }
    SpatialWeightMatrix::from_raw(WeightKind::InverseDistance, units, raw, true)
}

/// `1 / |x̄_i − x̄_j|` on period means of `variable`, row-standardised.
/// Equal means get [`TIE_EPS`] added to the gap and are noted.
pub fn economic_matrix(panel: &PanelDataset, variable: &str) -> Result<SpatialWeightMatrix> {
    let means = panel.unit_means(variable)?;
    let units = panel.units().to_vec();
    let n = units.len();
    let mut raw = DMatrix::zeros(n, n);
    let mut notes = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let mut gap = (means[i] - means[j]).abs();
            if gap == 0.0 {
                gap = TIE_EPS;
                notes.push(format!("equal {variable} means for {} and {}", units[i], units[j]));
            }
            raw[(i, j)] = 1.0 / gap;
            raw[(j, i)] = 1.0 / gap;
        }
    }
    for note in &notes {
        log::warn!("economic weights: {note}");
    }
    let mut w = SpatialWeightMatrix::from_raw(WeightKind::Economic, units, raw, true)?;
    w.notes.extend(notes);
    Ok(w)
}

/// Builds the requested kind for a panel carrying metadata.
pub fn weights_for_panel(panel: &PanelDataset, kind: WeightKind, economic_var: &str) -> Result<SpatialWeightMatrix> {
    let w = match kind {
        WeightKind::Contiguity => contiguity_matrix(panel.meta())?,
        WeightKind::InverseDistance => inverse_distance_matrix(panel.meta())?,
        WeightKind::Economic => economic_matrix(panel, economic_var)?,
        WeightKind::Custom => return Err(Error::SpecInvalid("custom weights must be read from CSV".into())),
    };
    w.check_units(panel.units())?;
    Ok(w)
}

#[cfg(test)]
pub(crate) mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::panel::RegionGroup;

    pub(crate) fn path_meta(n: usize) -> BTreeMap<String, UnitMeta> {
        (0..n)
            .map(|i| {
                let mut nb = BTreeSet::new();
                if i > 0 {
                    nb.insert(format!("p{}", i - 1));
                }
                if i + 1 < n {
                    nb.insert(format!("p{}", i + 1));
                }
                (
                    format!("p{i}"),
                    UnitMeta {
                        region_group: RegionGroup::East,
                        is_municipality: false,
                        centroid: [30.0, 100.0 + i as f64],
                        neighbors: nb,
                    },
                )
            })
            .collect()
    }

    #[test]
    fn path_graph_rows() {
        let w = contiguity_matrix(&path_meta(3)).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.5, 0.0, 0.5, 0.0, 1.0, 0.0]);
        assert_eq!(w.weights, expect);
        assert!((w.eigen_bounds.1 - 1.0).abs() < 1e-12);
        assert!((w.eigen_bounds.0 + 1.0).abs() < 1e-12);
    }

    #[test]
    fn isolated_unit_keeps_zero_row() {
        let mut meta = path_meta(3);
        meta.insert(
            "island".into(),
            UnitMeta {
                region_group: RegionGroup::East,
                is_municipality: false,
                centroid: [20.0, 110.0],
                neighbors: BTreeSet::new(),
            },
        );
        let w = contiguity_matrix(&meta).unwrap();
        assert_eq!(w.isolated, vec!["island".to_string()]);
        let i = w.units.iter().position(|u| u == "island").unwrap();
        assert_eq!(w.weights.row(i).sum(), 0.0);
        assert!(w.eigen_re.iter().any(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_units_standardize_to_one() {
        let mut meta = path_meta(2);
        // ~100 km apart on a meridian
        let deg = 100.0 / (EARTH_RADIUS_KM * std::f64::consts::PI / 180.0);
        meta.get_mut("p0").unwrap().centroid = [10.0, 50.0];
        meta.get_mut("p1").unwrap().centroid = [10.0 + deg, 50.0];
        let w = inverse_distance_matrix(&meta).unwrap();
        assert!((w.raw[(0, 1)] - 0.01).abs() < 1e-12);
        assert!((w.raw[(1, 0)] - 0.01).abs() < 1e-12);
        assert_eq!(w.weights[(0, 1)], 1.0);
        assert_eq!(w.weights[(1, 0)], 1.0);
    }

    #[test]
    fn collinear_equidistant_middle_splits() {
        let mut meta = path_meta(3);
        for (i, u) in ["p0", "p1", "p2"].iter().enumerate() {
            meta.get_mut(*u).unwrap().centroid = [0.0, i as f64];
        }
        let w = inverse_distance_matrix(&meta).unwrap();
        assert!((w.weights[(1, 0)] - 0.5).abs() < 1e-12);
        assert!((w.weights[(1, 2)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn coincident_centroids_rejected() {
        let mut meta = path_meta(2);
        meta.get_mut("p1").unwrap().centroid = meta["p0"].centroid;
        assert!(matches!(inverse_distance_matrix(&meta), Err(Error::CoincidentCentroids(_, _))));
    }

    #[test]
    fn haversine_oracle() {
        // quarter of a great circle along the equator
        let q = haversine_km([0.0, 0.0], [0.0, 90.0]);
        assert!((q - EARTH_RADIUS_KM * std::f64::consts::FRAC_PI_2).abs() < 1e-9);
        // spherical law of cosines as an independent route
        let (a, b): ([f64; 2], [f64; 2]) = ([39.9042, 116.4074], [31.2304, 121.4737]);
        let (p1, p2) = (a[0].to_radians(), b[0].to_radians());
        let dl = (b[1] - a[1]).to_radians();
        let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).acos() * EARTH_RADIUS_KM;
        assert!((haversine_km(a, b) - c).abs() < 1e-6);
    }

    fn means_panel(vals: &[f64]) -> PanelDataset {
        let n = vals.len();
        PanelDataset::new((0..n).map(|i| format!("u{i}")).collect(), vec![1, 2])
            .unwrap()
            .with_variable("g", DMatrix::from_fn(n, 2, |i, j| vals[i] + if j == 0 { -0.5 } else { 0.5 }))
            .unwrap()
    }

    #[test]
    fn economic_hand_values() {
        let w = economic_matrix(&means_panel(&[1.0, 2.0, 4.0]), "g").unwrap();
        let expect = [[0.0, 1.0, 1.0 / 3.0], [1.0, 0.0, 0.5], [1.0 / 3.0, 0.5, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((w.raw[(i, j)] - expect[i][j]).abs() < 1e-12);
            }
        }
        let two = economic_matrix(&means_panel(&[1.0, 9.0]), "g").unwrap();
        assert_eq!(two.weights[(0, 1)], 1.0);
        let tie = economic_matrix(&means_panel(&[1.0, 1.0, 3.0]), "g").unwrap();
        assert_eq!(tie.notes.len(), 1);
        assert!((tie.raw[(0, 1)] - 1.0 / TIE_EPS).abs() < 1.0);
    }

    #[test]
    fn economic_scale_absorbed() {
        let p = means_panel(&[1.0, 2.5, 4.0, 7.0]);
        let scaled = p
            .derive_variable(
                "g10",
                &crate::panel::Derivation::Expr(crate::panel::Expr::Mul(vec![
                    crate::panel::Expr::Const(10.0),
                    crate::panel::Expr::var("g"),
                ])),
            )
            .unwrap();
        let a = economic_matrix(&p, "g").unwrap();
        let b = economic_matrix(&scaled, "g10").unwrap();
        assert!((&b.raw * 10.0 - &a.raw).amax() < 1e-12);
        assert!((&b.weights - &a.weights).amax() < 1e-12);
    }

    #[test]
    fn log_det_matches_lu() {
        let w = contiguity_matrix(&path_meta(7)).unwrap();
        for rho in [-0.9, -0.3, 0.0, 0.4, 0.95] {
            let a = DMatrix::identity(7, 7) - &w.weights * rho;
            let lu = a.lu().determinant().abs().ln();
            assert!((w.log_det(rho) - lu).abs() < 1e-8 * lu.abs().max(1.0));
        }
    }

    #[test]
    fn spectral_radius_by_power_iteration() {
        let w = inverse_distance_matrix(&path_meta(6)).unwrap();
        let mut v = DVector::from_element(6, 1.0) + DVector::from_fn(6, |i, _| 0.1 * i as f64);
        let mut lambda = 0.0;
        for _ in 0..500 {
            let nv = &w.weights * &v;
            lambda = nv.norm() / v.norm();
            v = nv / lambda;
        }
        assert!((lambda - 1.0).abs() < 1e-6);
    }

    #[test]
    fn csv_round_trip() {
        let w = contiguity_matrix(&path_meta(4)).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let back = SpatialWeightMatrix::read_csv(buf.as_slice(), WeightKind::Contiguity).unwrap();
        assert_eq!(back.weights, w.weights);
        assert!(back.row_standardized);
        assert_eq!(back.units, w.units);
    }
}
