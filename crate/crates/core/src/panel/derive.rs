//! Construction of model variables from raw series: ratios, products, affine
//! combinations, per-capita divisions, price deflation, education years and
//! the two-group Theil index.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::PanelDataset;
use crate::error::{Error, Result};
use crate::regression::theil_index;

/// Years of schooling attached to illiterate, primary, junior, senior and
/// college-or-above attainment.
pub const EDUCATION_LEVEL_YEARS: [f64; 5] = [1.0, 6.0, 9.0, 12.0, 16.0];

/// Cell-wise arithmetic over panel variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Var(String),
    Const(f64),
    Add(Vec<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Vec<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// `Σ coef_k · var_k + constant`.
    Affine {
        terms: Vec<(String, f64)>,
        #[serde(default)]
        constant: f64,
    },
}

impl Expr {
    pub fn var(name: &str) -> Self {
        Expr::Var(name.to_string())
    }

    fn eval(&self, panel: &PanelDataset, i: usize, j: usize) -> Result<f64> {
        Ok(match self {
            Expr::Var(v) => panel.value(v, i, j)?,
            Expr::Const(c) => *c,
            Expr::Add(parts) => parts
                .iter()
                .map(|p| p.eval(panel, i, j))
                .sum::<Result<f64>>()?,
            Expr::Sub(a, b) => a.eval(panel, i, j)? - b.eval(panel, i, j)?,
            Expr::Mul(parts) => parts
                .iter()
                .map(|p| p.eval(panel, i, j))
                .product::<Result<f64>>()?,
            Expr::Div(a, b) => {
                let den = b.eval(panel, i, j)?;
                if den == 0.0 {
                    return Err(Error::DivisionByZero {
                        unit: panel.units[i].clone(),
                        year: panel.years[j],
                    });
                }
                a.eval(panel, i, j)? / den
            }
            Expr::Affine { terms, constant } => {
                let mut acc = *constant;
                for (v, c) in terms {
                    acc += c * panel.value(v, i, j)?;
                }
                acc
            }
        })
    }

    fn check_vars(&self, panel: &PanelDataset) -> Result<()> {
        match self {
            Expr::Var(v) => panel.get(v).map(|_| ()),
            Expr::Const(_) => Ok(()),
            Expr::Add(p) | Expr::Mul(p) => p.iter().try_for_each(|e| e.check_vars(panel)),
            Expr::Sub(a, b) | Expr::Div(a, b) => {
                a.check_vars(panel)?;
                b.check_vars(panel)
            }
            Expr::Affine { terms, .. } => terms.iter().try_for_each(|(v, _)| panel.get(v).map(|_| ())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivation {
    Expr(Expr),
    /// Real value `var / (index / base)`. When `base_year` is inside the panel
    /// the index is rebased per unit to that year; otherwise the index is taken
    /// to already equal `base_value` in `base_year` (e.g. 1997 = 100).
    Deflate {
        var: String,
        index: String,
        base_year: i32,
        #[serde(default = "hundred")]
        base_value: f64,
    },
    /// Average years of schooling from five attainment-share variables.
    EducationYears { shares: [String; 5] },
    /// Two-group Theil-T from per-capita incomes and populations.
    Theil {
        urban_income: String,
        rural_income: String,
        urban_pop: String,
        rural_pop: String,
    },
}

fn hundred() -> f64 {
    100.0
}

impl Derivation {
    pub fn ratio(num: &str, den: &str) -> Self {
        Derivation::Expr(Expr::Div(Box::new(Expr::var(num)), Box::new(Expr::var(den))))
    }

    pub fn product(a: &str, b: &str) -> Self {
        Derivation::Expr(Expr::Mul(vec![Expr::var(a), Expr::var(b)]))
    }

    pub fn per_capita(var: &str, population: &str, scale: f64) -> Self {
        Derivation::Expr(Expr::Div(
            Box::new(Expr::Mul(vec![Expr::Const(scale), Expr::var(var)])),
            Box::new(Expr::var(population)),
        ))
    }

    fn compute(&self, panel: &PanelDataset) -> Result<DMatrix<f64>> {
        let (nu, ny) = (panel.n_units(), panel.n_years());
        match self {
            Derivation::Expr(e) => {
                e.check_vars(panel)?;
                let mut out = DMatrix::zeros(nu, ny);
                for i in 0..nu {
                    for j in 0..ny {
                        out[(i, j)] = e.eval(panel, i, j)?;
                    }
                }
                Ok(out)
            }
            Derivation::Deflate {
                var,
                index,
                base_year,
                base_value,
            } => {
                let x = panel.get(var)?;
                let idx = panel.get(index)?;
                let base_col = panel.year_index(*base_year);
                let mut out = DMatrix::zeros(nu, ny);
                for i in 0..nu {
                    let base = match base_col {
                        Some(b) => idx[(i, b)],
                        None => *base_value,
                    };
                    for j in 0..ny {
                        let rebased = idx[(i, j)] / base;
                        if rebased == 0.0 || !rebased.is_finite() {
                            return Err(Error::DivisionByZero {
                                unit: panel.units[i].clone(),
                                year: panel.years[j],
                            });
                        }
                        out[(i, j)] = x[(i, j)] / rebased;
                    }
                }
                Ok(out)
            }
            Derivation::EducationYears { shares } => {
                let cols = shares
                    .iter()
                    .map(|s| panel.get(s))
                    .collect::<Result<Vec<_>>>()?;
                let mut out = DMatrix::zeros(nu, ny);
                for i in 0..nu {
                    for j in 0..ny {
                        let s = [
                            cols[0][(i, j)],
                            cols[1][(i, j)],
                            cols[2][(i, j)],
                            cols[3][(i, j)],
                            cols[4][(i, j)],
                        ];
                        out[(i, j)] = education_years(&s)?;
                    }
                }
                Ok(out)
            }
            Derivation::Theil {
                urban_income,
                rural_income,
                urban_pop,
                rural_pop,
            } => {
                let (ui, ri) = (panel.get(urban_income)?, panel.get(rural_income)?);
                let (up, rp) = (panel.get(urban_pop)?, panel.get(rural_pop)?);
                let mut out = DMatrix::zeros(nu, ny);
                for i in 0..nu {
                    for j in 0..ny {
                        out[(i, j)] = theil_index(ui[(i, j)], ri[(i, j)], up[(i, j)], rp[(i, j)])?;
                    }
                }
                Ok(out)
            }
        }
    }
}

impl PanelDataset {
    /// Appends `name` computed by `derivation`. Existing variables are never
    /// modified: re-deriving an existing name succeeds only when the values are
    /// identical.
    pub fn derive_variable(&self, name: &str, derivation: &Derivation) -> Result<PanelDataset> {
        let values = derivation.compute(self)?;
        if let Some(existing) = self.values.get(name) {
            let same = existing
                .iter()
                .zip(values.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if same {
                return Ok(self.clone());
            }
            return Err(Error::VariableExists(name.to_string()));
        }
        self.clone().with_variable(name, values)
    }
}

/// Weighted average of the attainment years with population `shares`
/// (illiterate, primary, junior, senior, college+).
pub fn education_years(shares: &[f64; 5]) -> Result<f64> {
    let total: f64 = shares.iter().sum();
    if shares.iter().any(|s| *s < 0.0 || !s.is_finite()) || (total - 1.0).abs() > 1e-6 {
        return Err(Error::SharesDoNotSumToOne(total));
    }
    Ok(shares
        .iter()
        .zip(EDUCATION_LEVEL_YEARS)
        .map(|(s, y)| s * y)
        .sum())
}

/// Appends `LABOR = workers / rural population`.
pub fn labor_transfer_share(panel: &PanelDataset, workers_var: &str, rural_pop_var: &str) -> Result<PanelDataset> {
    let pop = panel.get(rural_pop_var)?;
    for (i, unit) in panel.units.iter().enumerate() {
        for (j, year) in panel.years.iter().enumerate() {
            if pop[(i, j)] <= 0.0 {
                return Err(Error::DivisionByZero {
                    unit: unit.clone(),
                    year: *year,
                });
            }
        }
    }
    panel.derive_variable("LABOR", &Derivation::ratio(workers_var, rural_pop_var))
}
