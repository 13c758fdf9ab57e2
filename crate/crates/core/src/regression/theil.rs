use crate::error::{Error, Result};

/// Two-group Theil-T index from per-capita incomes and populations:
/// `Σ_g (Y_g/Y) ln[(Y_g/Y) / (P_g/P)]` with `Y_g = income_g · P_g`.
pub fn theil_index(urban_income: f64, rural_income: f64, urban_pop: f64, rural_pop: f64) -> Result<f64> {
    for (label, v) in [
        ("urban income", urban_income),
        ("rural income", rural_income),
        ("urban population", urban_pop),
        ("rural population", rural_pop),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPositiveInput(format!("{label} = {v}")));
        }
    }
    // Written through q = rural/urban income: an exact common rescaling of
    // both incomes leaves q, and so the index, bit-for-bit unchanged.
    let q = rural_income / urban_income;
    let p = urban_pop + rural_pop;
    // total income in units of urban per-capita income
    let y = urban_pop + q * rural_pop;
    let su = urban_pop / y;
    let sr = q * rural_pop / y;
    let t = su * (p / y).ln() + sr * (q * p / y).ln();
    Ok(t.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equality_gives_zero() {
        assert_eq!(theil_index(3.0, 3.0, 10.0, 40.0).unwrap(), 0.0);
    }

    #[test]
    fn double_income_equal_population() {
        // shares 2/3 and 1/3 of income, 1/2 of population each
        let hand = (2.0 / 3.0) * (4.0f64 / 3.0).ln() + (1.0 / 3.0) * (2.0f64 / 3.0).ln();
        let t = theil_index(2.0, 1.0, 5.0, 5.0).unwrap();
        assert!((t - hand).abs() < 1e-12);
    }

    #[test]
    fn scale_invariance() {
        let a = theil_index(3.2, 1.3, 7.0, 11.0).unwrap();
        let b = theil_index(3.2e6, 1.3e6, 7.0, 11.0).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn non_positive_inputs() {
        assert!(matches!(theil_index(0.0, 1.0, 1.0, 1.0), Err(Error::NonPositiveInput(_))));
        assert!(matches!(theil_index(1.0, 1.0, -1.0, 1.0), Err(Error::NonPositiveInput(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn nonnegative(a in 0.1f64..100.0, b in 0.1f64..100.0, p in 0.1f64..100.0, q in 0.1f64..100.0) {
                let t = theil_index(a, b, p, q).unwrap();
                prop_assert!(t >= 0.0);
                if (a - b).abs() > 1e-3 {
                    prop_assert!(t > 0.0);
                }
            }
        }
    }
}
