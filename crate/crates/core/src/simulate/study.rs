//! A synthetic stand-in for the provincial study panel: every raw series
//! the pipeline consumes, driven by a latent digital level and a latent
//! prosperity level so the downstream estimates have a known sign.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::CounterRng;
use crate::error::{Error, Result};
use crate::panel::{PanelDataset, RegionGroup, UnitMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPanelSpec {
    pub seed: u64,
    pub first_year: i32,
    pub n_years: usize,
}

impl Default for StudyPanelSpec {
    fn default() -> Self {
        Self {
            seed: 2024,
            first_year: 2011,
            n_years: 12,
        }
    }
}

/// Raw series names, in stream order.
const SERIES: &[&str] = &[
    // common prosperity leaves
    "cmx_income_ratio",
    "cmx_consumption_ratio",
    "cmx_engel_ratio",
    "cmx_industry_ratio",
    "cmx_employment_ratio",
    "cmx_urbanization",
    "cmx_beds_ratio",
    "cmx_insurance_rate",
    "cmx_culture_spend_ratio",
    "cmx_forest_cover",
    "cmx_garbage_treatment",
    // digital village leaves
    "dig_delivery_routes",
    "dig_broadband_users",
    "dig_mobile_phones",
    "dig_computers",
    "dig_cable_tv_rate",
    "dig_weather_stations",
    "dig_power_per_capita",
    "dig_postal_rate",
    "dig_transport_va",
    "dig_comm_spending",
    "dig_ecommerce",
    "dig_finance_index",
    "dig_taobao_share",
    // production inputs and output
    "land",
    "labor_ag",
    "machinery",
    "fertilizer",
    "ag_output",
    "ag_price_index",
    // labour transfer
    "migrant_workers",
    "rural_pop",
    // controls
    "tertiary_va",
    "secondary_va",
    "highway_km",
    "land_area",
    "ag_expenditure",
    "gdp",
    "edu_illiterate",
    "edu_primary",
    "edu_junior",
    "edu_senior",
    "edu_college",
    "trade_usd",
    "exchange_rate",
    // inequality
    "urban_income",
    "rural_income",
    "urban_pop",
];

fn stream(name: &str) -> u8 {
    SERIES.iter().position(|s| *s == name).expect("known series") as u8
}

/// Generates the raw study series for the units in `meta`.
pub fn gen_study_panel(meta: &BTreeMap<String, UnitMeta>, spec: &StudyPanelSpec) -> Result<PanelDataset> {
    if meta.is_empty() || spec.n_years < 2 {
        return Err(Error::SpecInvalid("study panel needs units and at least two years".into()));
    }
    let units: Vec<String> = meta.keys().cloned().collect();
    let years: Vec<i32> = (0..spec.n_years as i32).map(|k| spec.first_year + k).collect();
    let (n, t) = (units.len(), years.len());
    let rng = CounterRng::new(spec.seed);
    let z = |i: usize, j: usize, name: &str| rng.normal(0, i as u64, j as u64, stream(name));
    // unit-level draws live at period index `t` (past the sample)
    let zu = |i: usize, name: &str| rng.normal(0, i as u64, 1_000 + t as u64, stream(name));

    let dev: Vec<f64> = units
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let m = &meta[u];
            let base = match m.region_group {
                RegionGroup::East => 0.8,
                RegionGroup::Central => 0.45,
                RegionGroup::West => 0.25,
            };
            base + if m.is_municipality { 0.3 } else { 0.0 } + 0.08 * zu(i, "gdp")
        })
        .collect();

    let mut out: BTreeMap<&str, DMatrix<f64>> = SERIES.iter().map(|s| (*s, DMatrix::zeros(n, t))).collect();
    let mut set = |name: &'static str, i: usize, j: usize, v: f64| {
        out.get_mut(name).expect("known series")[(i, j)] = v;
    };

    for i in 0..n {
        let d0 = dev[i];
        let forest = (0.15 + 0.4 * (0.5 + 0.5 * zu(i, "cmx_forest_cover").tanh())).min(0.7);
        let area = 10.0 + 30.0 * (1.0 - d0).max(0.1) * (1.0 + 0.3 * zu(i, "land_area").abs());
        let land0 = 2000.0 * (1.2 - d0).max(0.2) * (1.0 + 0.3 * zu(i, "land").abs());
        let rural0 = 1500.0 + 1500.0 * (1.0 - d0).max(0.0) + 300.0 * zu(i, "rural_pop").abs();
        let mut log_a = 0.0;
        for j in 0..t {
            let tt = j as f64;
            let e = |name: &str| z(i, j, name);
            // latent digital level grows faster where development is higher
            let dig = (0.05 + 0.25 * d0) * (0.12 * tt * (0.8 + 0.4 * d0)).exp() + 0.02 * e("dig_ecommerce");
            let dig = dig.max(0.01);
            let growth = 0.01 + 0.12 * dig + 0.01 * e("ag_output");
            log_a += growth;
            let labor_share = (0.15 + 0.35 * d0 + 0.02 * tt + 0.25 * dig + 0.03 * e("migrant_workers")).clamp(0.05, 0.95);
            let pros = 0.2 + 0.3 * d0 + 0.35 * dig + 0.3 * log_a + 1.5 * growth + 0.3 * labor_share + 0.02 * e("cmx_income_ratio");

            set("cmx_income_ratio", i, j, 0.30 + 0.25 * pros + 0.01 * e("cmx_consumption_ratio"));
            set("cmx_consumption_ratio", i, j, 0.40 + 0.25 * pros + 0.015 * e("cmx_engel_ratio"));
            set("cmx_engel_ratio", i, j, 0.80 + 0.10 * pros + 0.01 * e("cmx_industry_ratio"));
            set("cmx_industry_ratio", i, j, (0.25 - 0.12 * pros + 0.01 * e("cmx_employment_ratio")).max(0.005));
            set("cmx_employment_ratio", i, j, (0.5 + 6.0 * pros.powi(3) + 0.1 * e("cmx_urbanization")).max(0.2));
            set("cmx_urbanization", i, j, (0.35 + 0.3 * pros + 0.01 * e("cmx_beds_ratio")).min(0.95));
            set("cmx_beds_ratio", i, j, 0.45 + 0.3 * pros + 0.03 * e("cmx_insurance_rate"));
            set("cmx_insurance_rate", i, j, (0.90 + 0.06 * pros + 0.005 * e("cmx_culture_spend_ratio")).min(1.0));
            set("cmx_culture_spend_ratio", i, j, 0.35 + 0.3 * pros + 0.03 * e("cmx_forest_cover"));
            set("cmx_forest_cover", i, j, forest + 0.003 * tt);
            set("cmx_garbage_treatment", i, j, (0.85 + 0.012 * tt + 0.01 * e("cmx_garbage_treatment")).min(1.0));

            let scale = (1.0 + d0) * 100.0;
            set("dig_delivery_routes", i, j, scale * 300.0 * (1.0 + 0.5 * dig) * (1.0 + 0.05 * e("dig_delivery_routes")).abs());
            set("dig_broadband_users", i, j, scale * 2.0 * dig * (1.0 + 0.1 * e("dig_broadband_users")).abs());
            set("dig_mobile_phones", i, j, 220.0 + 40.0 * dig + 5.0 * e("dig_mobile_phones"));
            set("dig_computers", i, j, 10.0 + 40.0 * dig + 2.0 * e("dig_computers"));
            set("dig_cable_tv_rate", i, j, (0.97 + 0.02 * dig + 0.005 * e("dig_cable_tv_rate")).min(1.0));
            set("dig_weather_stations", i, j, (80.0 + 60.0 * dig + 10.0 * e("dig_weather_stations")).max(5.0));
            set("dig_power_per_capita", i, j, 300.0 + 3000.0 * dig.powi(2) * (1.0 + 0.1 * e("dig_power_per_capita")).abs());
            set("dig_postal_rate", i, j, (0.98 + 0.015 * dig + 0.002 * e("dig_postal_rate")).min(1.0));
            set("dig_transport_va", i, j, scale * 5.0 * (1.0 + dig) * (1.0 + 0.05 * e("dig_transport_va")).abs());
            set("dig_comm_spending", i, j, 800.0 + 1500.0 * dig + 50.0 * e("dig_comm_spending"));
            set("dig_ecommerce", i, j, scale * 20.0 * dig.powi(2) * (1.0 + 0.2 * e("dig_taobao_share")).abs());
            set("dig_finance_index", i, j, 100.0 + 300.0 * dig + 10.0 * e("dig_finance_index"));
            set("dig_taobao_share", i, j, (0.5 * dig.powi(3) + 0.005 * e("trade_usd").abs()).min(0.9));

            let land = land0 * (1.0 + 0.01 * tt + 0.02 * e("land"));
            let labor_ag = rural0 * (0.6 - 0.3 * labor_share).max(0.1) * (1.0 + 0.02 * e("labor_ag"));
            let machinery = land * 1.5 * (1.0 + 0.04 * tt) * (1.0 + 0.05 * e("machinery")).abs();
            let fertilizer = land * 0.08 * (1.0 + 0.05 * e("fertilizer")).abs();
            let price = 150.0 * (1.03f64).powf(tt) * (1.0 + 0.01 * e("ag_price_index"));
            let real = log_a.exp() * land.powf(0.3) * labor_ag.powf(0.2) * machinery.powf(0.2) * fertilizer.powf(0.3) * 10.0;
            set("land", i, j, land);
            set("labor_ag", i, j, labor_ag);
            set("machinery", i, j, machinery);
            set("fertilizer", i, j, fertilizer);
            set("ag_price_index", i, j, price);
            set("ag_output", i, j, real * price / 100.0);

            let rural_pop = rural0 * (1.0 - 0.015 * tt);
            set("rural_pop", i, j, rural_pop);
            set("migrant_workers", i, j, labor_share * rural_pop);

            let gdp = 5000.0 * (1.0 + 2.0 * d0) * (1.07f64).powf(tt) * (1.0 + 0.02 * e("gdp"));
            let sec = gdp * 0.42;
            let stu = (0.7 + 0.8 * d0 + 0.04 * tt + 0.1 * e("tertiary_va")).max(0.4);
            set("gdp", i, j, gdp);
            set("secondary_va", i, j, sec);
            set("tertiary_va", i, j, sec * stu);
            set("land_area", i, j, area);
            set("highway_km", i, j, area * (0.3 + 1.2 * d0 + 0.03 * tt) * (1.0 + 0.05 * e("highway_km")).abs());
            set("ag_expenditure", i, j, gdp * (0.14 - 0.06 * d0 + 0.01 * e("ag_expenditure")).max(0.03));

            // five attainment shares summing to one
            let lift = (0.3 * d0 + 0.02 * tt + 0.05 * e("edu_junior")).clamp(0.0, 0.6);
            let raw = [0.06 - 0.05 * lift, 0.35 - 0.2 * lift, 0.45, 0.10 + 0.15 * lift, 0.04 + 0.1 * lift];
            let total: f64 = raw.iter().sum();
            for (name, v) in ["edu_illiterate", "edu_primary", "edu_junior", "edu_senior", "edu_college"]
                .iter()
                .zip(raw)
            {
                set(name, i, j, v / total);
            }
            let fx = 6.2 + 0.3 * (tt * 0.7).sin();
            set("exchange_rate", i, j, fx);
            set("trade_usd", i, j, gdp * (0.02 + 0.6 * d0.powi(2)) * (1.0 + 0.1 * e("exchange_rate")).abs() / fx);

            let urban_inc = 20.0 * (1.0 + d0) * (1.06f64).powf(tt);
            set("urban_income", i, j, urban_inc);
            set("rural_income", i, j, urban_inc * (0.45 + 0.35 * dig + 0.01 * e("rural_income")).min(0.95));
            set("urban_pop", i, j, rural_pop * (0.8 + 1.5 * d0 + 0.03 * tt) * (1.0 + 0.01 * e("urban_pop")).abs());
        }
    }

    let mut panel = PanelDataset::new(units, years)?;
    for (name, m) in out {
        panel = panel.with_variable(name, m)?;
    }
    panel.with_meta(meta)
}
