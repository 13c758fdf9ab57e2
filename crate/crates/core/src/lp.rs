//! Dense two-phase primal simplex for small linear programs in the form
//!
//! ```text
//! optimise  c'x   subject to  a_i'x {<=, >=, =} b_i,   x >= 0
//! ```
//!
//! Pivoting is deterministic: the most negative reduced cost enters until a
//! degenerate pivot is seen, after which Bland's smallest-index rule is used
//! for the rest of the phase so the method cannot cycle. Ratio-test ties go to
//! the basic variable with the smallest index. The final basic solution is
//! recomputed from the original data by an LU solve on the optimal basis.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;
pub const DEFAULT_ITERATION_LIMIT: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        Self { coeffs, relation, rhs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        Self {
            sense,
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn constrain(mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        self.constraints.push(Constraint::new(coeffs, relation, rhs));
        self
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    /// Largest violation of `a_i'x (rel) b_i` and of `x >= 0`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().fold(0.0_f64, |w, v| w.max(-v));
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let v = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub objective_value: f64,
    pub x: Vec<f64>,
    pub iterations: usize,
}

pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    solve_lp_with_limit(lp, DEFAULT_ITERATION_LIMIT)
}

pub fn solve_lp_with_limit(lp: &LinearProgram, max_iter: usize) -> Result<LpSolution> {
    let n = lp.n_vars();
    for (i, c) in lp.constraints.iter().enumerate() {
        if c.coeffs.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "constraint {i} has {} coefficients, objective has {n}",
                c.coeffs.len()
            )));
        }
        if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::SpecInvalid(format!("constraint {i} has non-finite data")));
        }
    }
    if lp.constraints.is_empty() {
        // only x >= 0: optimum at 0 unless some direction improves forever
        let improving = lp.objective.iter().any(|&c| match lp.sense {
            Sense::Maximize => c > 0.0,
            Sense::Minimize => c < 0.0,
        });
        if improving {
            return Err(Error::Unbounded);
        }
        return Ok(LpSolution {
            objective_value: 0.0,
            x: vec![0.0; n],
            iterations: 0,
        });
    }
    let mut t = Tableau::build(lp);
    let mut iterations = 0;
    if t.n_artificial > 0 {
        t.set_phase_one_costs();
        t.run(&mut iterations, max_iter, true)?;
        let scale = 1.0 + t.rhs_scale;
        if t.obj_value() > 1e-9 * scale {
            return Err(Error::Infeasible);
        }
        t.expel_artificials();
    }
    t.set_phase_two_costs(lp);
    t.run(&mut iterations, max_iter, false)?;

    let x = t.polished_solution(lp);
    let value: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        objective_value: value,
        x,
        iterations,
    })
}

struct Tableau {
    m: usize,
    n_orig: usize,
    /// total columns excluding rhs
    n_cols: usize,
    n_artificial: usize,
    first_artificial: usize,
    /// row-major `(m + 1) x (n_cols + 1)`; last row is the reduced-cost row,
    /// last column the right-hand side.
    a: Vec<f64>,
    basis: Vec<usize>,
    /// rows whose artificial variable could not be pivoted out (redundant)
    dead_rows: Vec<bool>,
    /// per-row sign applied to make `b >= 0`
    row_sign: Vec<f64>,
    /// column index of the slack/surplus variable for each row, if any
    slack_col: Vec<Option<usize>>,
    rhs_scale: f64,
}

impl Tableau {
    fn width(&self) -> usize {
        self.n_cols + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.width() + c]
    }

    fn build(lp: &LinearProgram) -> Self {
        let m = lp.constraints.len();
        let n = lp.n_vars();
        let mut row_sign = vec![1.0; m];
        let mut rel = Vec::with_capacity(m);
        for (i, c) in lp.constraints.iter().enumerate() {
            let mut r = c.relation;
            if c.rhs < 0.0 {
                row_sign[i] = -1.0;
                r = match r {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
            }
            rel.push(r);
        }
        let n_slack = rel.iter().filter(|r| **r != Relation::Eq).count();

        // equality/>= rows may reuse an existing identity column as their
        // starting basic variable instead of an artificial one
        let mut crash: Vec<Option<usize>> = vec![None; m];
        let mut used = vec![false; n];
        for i in 0..m {
            if rel[i] != Relation::Eq {
                continue;
            }
            for j in 0..n {
                if used[j] || lp.objective.len() <= j {
                    continue;
                }
                let v = row_sign[i] * lp.constraints[i].coeffs[j];
                if (v - 1.0).abs() > 0.0 {
                    continue;
                }
                let alone = lp
                    .constraints
                    .iter()
                    .enumerate()
                    .all(|(k, c)| k == i || c.coeffs[j] == 0.0);
                if alone {
                    crash[i] = Some(j);
                    used[j] = true;
                    break;
                }
            }
        }
        let n_artificial = (0..m)
            .filter(|&i| rel[i] == Relation::Ge || (rel[i] == Relation::Eq && crash[i].is_none()))
            .count();
        let first_artificial = n + n_slack;
        let n_cols = n + n_slack + n_artificial;
        let width = n_cols + 1;
        let mut a = vec![0.0; (m + 1) * width];
        let mut basis = vec![0; m];
        let mut slack_col = vec![None; m];
        let mut next_slack = n;
        let mut next_art = first_artificial;
        let mut rhs_scale: f64 = 0.0;
        for i in 0..m {
            let s = row_sign[i];
            let c = &lp.constraints[i];
            for j in 0..n {
                a[i * width + j] = s * c.coeffs[j];
            }
            a[i * width + n_cols] = s * c.rhs;
            rhs_scale = rhs_scale.max(c.rhs.abs());
            match rel[i] {
                Relation::Le => {
                    a[i * width + next_slack] = 1.0;
                    basis[i] = next_slack;
                    slack_col[i] = Some(next_slack);
                    next_slack += 1;
                }
                Relation::Ge => {
                    a[i * width + next_slack] = -1.0;
                    slack_col[i] = Some(next_slack);
                    next_slack += 1;
                    a[i * width + next_art] = 1.0;
                    basis[i] = next_art;
                    next_art += 1;
                }
                Relation::Eq => match crash[i] {
                    Some(j) => basis[i] = j,
                    None => {
                        a[i * width + next_art] = 1.0;
                        basis[i] = next_art;
                        next_art += 1;
                    }
                },
            }
        }
        Self {
            m,
            n_orig: n,
            n_cols,
            n_artificial,
            first_artificial,
            a,
            basis,
            dead_rows: vec![false; m],
            row_sign,
            slack_col,
            rhs_scale,
        }
    }

    fn is_artificial(&self, col: usize) -> bool {
        col >= self.first_artificial
    }

    fn obj_value(&self) -> f64 {
        // the cost row stores -z in the rhs slot
        -self.at(self.m, self.n_cols)
    }

    /// Sets the cost row to `costs` (minimisation) and prices out the basis.
    fn load_costs(&mut self, costs: &[f64]) {
        let w = self.width();
        let m = self.m;
        for j in 0..w {
            self.a[m * w + j] = if j < self.n_cols { costs[j] } else { 0.0 };
        }
        for i in 0..m {
            let cb = costs[self.basis[i]];
            if cb != 0.0 {
                for j in 0..w {
                    let v = self.a[i * w + j];
                    self.a[m * w + j] -= cb * v;
                }
            }
        }
    }

    fn set_phase_one_costs(&mut self) {
        let mut costs = vec![0.0; self.n_cols];
        for c in costs.iter_mut().skip(self.first_artificial) {
            *c = 1.0;
        }
        self.load_costs(&costs);
    }

    fn set_phase_two_costs(&mut self, lp: &LinearProgram) {
        let mut costs = vec![0.0; self.n_cols];
        for (j, c) in lp.objective.iter().enumerate() {
            costs[j] = match lp.sense {
                Sense::Minimize => *c,
                Sense::Maximize => -*c,
            };
        }
        self.load_costs(&costs);
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width();
        let p = self.at(row, col);
        for j in 0..w {
            self.a[row * w + j] /= p;
        }
        self.a[row * w + col] = 1.0;
        let pivot_row: Vec<f64> = self.a[row * w..(row + 1) * w].to_vec();
        for i in 0..=self.m {
            if i == row {
                continue;
            }
            let f = self.a[i * w + col];
            if f != 0.0 {
                let dst = &mut self.a[i * w..(i + 1) * w];
                for (d, s) in dst.iter_mut().zip(&pivot_row) {
                    *d -= f * s;
                }
                dst[col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    fn run(&mut self, iterations: &mut usize, max_iter: usize, phase_one: bool) -> Result<()> {
        let mut bland = false;
        loop {
            let eligible = |j: usize| phase_one || !self.is_artificial(j);
            let cost_row = self.m;
            let entering = if bland {
                (0..self.n_cols).find(|&j| eligible(j) && self.at(cost_row, j) < -COST_TOL)
            } else {
                let mut best: Option<(usize, f64)> = None;
                for j in 0..self.n_cols {
                    let rc = self.at(cost_row, j);
                    if eligible(j) && rc < -COST_TOL && best.is_none_or(|(_, b)| rc < b) {
                        best = Some((j, rc));
                    }
                }
                best.map(|(j, _)| j)
            };
            let Some(col) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if self.dead_rows[i] {
                    continue;
                }
                let aij = self.at(i, col);
                if aij > PIVOT_TOL {
                    let ratio = self.at(i, self.n_cols).max(0.0) / aij;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((r, best)) => {
                            if ratio < best - 1e-12 * (1.0 + best.abs())
                                || (ratio <= best + 1e-12 * (1.0 + best.abs()) && self.basis[i] < self.basis[r])
                            {
                                leave = Some((i, ratio.min(best)));
                            }
                        }
                    }
                }
            }
            let Some((row, ratio)) = leave else {
                return Err(if phase_one { Error::Infeasible } else { Error::Unbounded });
            };
            if ratio <= 1e-12 {
                bland = true;
            }
            *iterations += 1;
            if *iterations > max_iter {
                return Err(Error::IterationLimit(max_iter));
            }
            self.pivot(row, col);
        }
    }

    /// After phase one, pivots zero-level artificials out of the basis or
    /// marks their rows redundant.
    fn expel_artificials(&mut self) {
        for i in 0..self.m {
            if !self.is_artificial(self.basis[i]) {
                continue;
            }
            let col = (0..self.first_artificial)
                .filter(|&j| self.at(i, j).abs() > 1e-9)
                .max_by(|&a, &b| self.at(i, a).abs().total_cmp(&self.at(i, b).abs()));
            match col {
                Some(j) => self.pivot(i, j),
                None => self.dead_rows[i] = true,
            }
        }
    }

    /// Recomputes the basic solution from the original data for accuracy.
    fn polished_solution(&self, lp: &LinearProgram) -> Vec<f64> {
        let n = self.n_orig;
        let w = self.width();
        let mut x_tab = vec![0.0; self.n_cols];
        for i in 0..self.m {
            x_tab[self.basis[i]] = self.a[i * w + self.n_cols].max(0.0);
        }
        let live: Vec<usize> = (0..self.m).filter(|&i| !self.dead_rows[i]).collect();
        let k = live.len();
        let mut bmat = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for (r, &i) in live.iter().enumerate() {
            let s = self.row_sign[i];
            let c = &lp.constraints[i];
            rhs[r] = s * c.rhs;
            for (q, &bi) in live.iter().enumerate() {
                let col = self.basis[bi];
                bmat[(r, q)] = if col < n {
                    s * c.coeffs[col]
                } else if Some(col) == self.slack_col[i] {
                    match c.relation {
                        Relation::Le => s,
                        Relation::Ge => -s,
                        Relation::Eq => 0.0,
                    }
                } else {
                    0.0
                };
            }
        }
        let polished = if k > 0 && live.iter().all(|&i| !self.is_artificial(self.basis[i])) {
            bmat.lu().solve(&rhs)
        } else {
            None
        };
        let mut x = vec![0.0; n];
        match polished {
            Some(xb) if xb.iter().all(|v| v.is_finite()) => {
                for (q, &bi) in live.iter().enumerate() {
                    let col = self.basis[bi];
                    if col < n {
                        x[col] = xb[q].max(0.0);
                    }
                }
            }
            _ => x.copy_from_slice(&x_tab[..n]),
        }
        // keep whichever is more accurate
        let tab: Vec<f64> = x_tab[..n].to_vec();
        if lp.max_violation(&tab) < lp.max_violation(&x) {
            tab
        } else {
            x
        }
    }
}
