//! Seeded synthetic waterflood fields for tests, examples and benchmarks.
//!
//! Producer rates follow known CRM dynamics driven by piecewise-constant
//! injection schedules, optionally overlaid with periodic disturbances the
//! CRM cannot represent and with multiplicative noise.

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::crm::{simulate, CrmParameters};
use crate::ingest::FieldData;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFieldSpec {
    pub n_producers: usize,
    pub n_injectors: usize,
    pub days: usize,
    pub seed: u64,
    /// Amplitude of the periodic disturbance relative to the mean CRM rate.
    pub disturbance: f64,
    /// Range of disturbance periods in days.
    pub period_range: (f64, f64),
    /// Standard deviation of multiplicative noise.
    pub noise: f64,
    pub tau_range: (f64, f64),
    pub with_pressure: bool,
}

impl Default for SyntheticFieldSpec {
    fn default() -> Self {
        SyntheticFieldSpec {
            n_producers: 5,
            n_injectors: 4,
            days: 900,
            seed: 42,
            disturbance: 0.25,
            period_range: (30.0, 60.0),
            noise: 0.0,
            tau_range: (5.0, 30.0),
            with_pressure: false,
        }
    }
}

/// A generated field together with the parameters that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticField {
    pub field: FieldData,
    pub truth: CrmParameters,
    /// Pure CRM component of each producer's rate.
    pub crm_rates: Vec<Vec<f64>>,
}

pub fn start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2008, 1, 1).expect("valid date")
}

fn dates(days: usize) -> Vec<NaiveDate> {
    (0..days).map(|k| start_date() + Duration::days(k as i64)).collect()
}

pub fn well_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}{k}")).collect()
}

/// Piecewise-constant schedule with levels in `[lo, hi]` held for 20 to 60 days.
pub fn step_schedule(days: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(days);
    while out.len() < days {
        let level = rng.gen_range(lo..hi);
        let hold = rng.gen_range(20..=60);
        out.extend(std::iter::repeat(level).take(hold));
    }
    out.truncate(days);
    out
}

/// Field whose producer rates are exactly the CRM response of `truth` to the
/// given injections.
pub fn crm_field(truth: &CrmParameters, injections: Vec<Vec<f64>>) -> FieldData {
    let days = injections.first().map_or(0, Vec::len);
    let oil = simulate(truth, &injections, None, days).expect("valid synthetic parameters");
    FieldData {
        dates: dates(days),
        producers: truth.producers.clone(),
        injectors: truth.injectors.clone(),
        oil,
        injection: injections,
        pressure: None,
    }
}

/// The two-injector, two-producer recovery case with known gains
/// `[[0.3, 0.2], [0.1, 0.7]]`.
pub fn two_by_two(days: usize, seed: u64) -> SyntheticField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = CrmParameters {
        injectors: well_names("I", 2),
        producers: well_names("P", 2),
        gains: vec![vec![0.3, 0.2], vec![0.1, 0.7]],
        taus: vec![vec![6.0, 12.0], vec![9.0, 14.0]],
        productivity: None,
        initial_rates: vec![vec![120.0, 80.0], vec![40.0, 280.0]],
    };
    let injections = (0..2).map(|_| step_schedule(days, 200.0, 800.0, &mut rng)).collect();
    let field = crm_field(&truth, injections);
    SyntheticField {
        crm_rates: field.oil.clone(),
        field,
        truth,
    }
}

/// Generates a field per `spec`.
pub fn generate(spec: &SyntheticFieldSpec) -> SyntheticField {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (ni, np) = (spec.n_injectors, spec.n_producers);
    let mut gains = vec![vec![0.0; np]; ni];
    for row in gains.iter_mut() {
        let raw: Vec<f64> = (0..np).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let keep = rng.gen_range(0.6..0.95);
        for (g, r) in row.iter_mut().zip(raw) {
            *g = keep * r / total;
        }
    }
    let taus = (0..ni)
        .map(|_| (0..np).map(|_| rng.gen_range(spec.tau_range.0..spec.tau_range.1)).collect())
        .collect();
    let injections: Vec<Vec<f64>> = (0..ni)
        .map(|_| step_schedule(spec.days, 300.0, 900.0, &mut rng))
        .collect();
    let initial_rates = (0..ni)
        .map(|i| (0..np).map(|j| gains[i][j] * injections[i][0]).collect())
        .collect();
    let truth = CrmParameters {
        injectors: well_names("I", ni),
        producers: well_names("P", np),
        gains,
        taus,
        productivity: None,
        initial_rates,
    };
    let crm_rates = simulate(&truth, &injections, None, spec.days).expect("valid synthetic parameters");

    let mut oil = Vec::with_capacity(np);
    for rates in &crm_rates {
        let mean = rates.iter().sum::<f64>() / rates.len().max(1) as f64;
        let period = rng.gen_range(spec.period_range.0..=spec.period_range.1);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let series = rates
            .iter()
            .enumerate()
            .map(|(t, &q)| {
                let wave = spec.disturbance * mean * (std::f64::consts::TAU * t as f64 / period + phase).sin();
                let noise = 1.0 + spec.noise * rng.sample::<f64, _>(StandardNormal);
                ((q + wave) * noise).max(0.0)
            })
            .collect();
        oil.push(series);
    }
    let pressure = spec.with_pressure.then(|| {
        (0..np)
            .map(|_| {
                let base = rng.gen_range(180.0..240.0);
                (0..spec.days)
                    .map(|t| base - 0.02 * t as f64 + 2.0 * (t as f64 / 45.0).sin())
                    .collect()
            })
            .collect()
    });
    SyntheticField {
        field: FieldData {
            dates: dates(spec.days),
            producers: truth.producers.clone(),
            injectors: truth.injectors.clone(),
            oil,
            injection: injections,
            pressure,
        },
        truth,
        crm_rates,
    }
}
