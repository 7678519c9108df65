//! Seeded synthetic scenarios for desk-scale oracle testing.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{GridParams, PriceSeries, Scenario, StorageParams, TimeGrid};
use crate::peak_tariff::TieredPeakSchedule;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub months: usize,
    pub days: usize,
    pub day_length: usize,
    pub levels: usize,
    pub n_days: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            months: 2,
            days: 5,
            day_length: 4,
            levels: 3,
            n_days: 2,
        }
    }
}

pub const SYNTH_MAX_POWER: f64 = 10.0;

/// Tier schedule with inner thresholds spread over 2..6 kW and convex costs.
pub fn synth_schedule(levels: usize, n_days: usize) -> Result<TieredPeakSchedule> {
    let levels = levels.max(1);
    let inner = levels - 1;
    let thresholds: Vec<f64> = match inner {
        0 => Vec::new(),
        1 => vec![2.0],
        _ => (0..inner)
            .map(|i| 2.0 + 4.0 * i as f64 / (inner - 1) as f64)
            .collect(),
    };
    let costs: Vec<f64> = (1..=levels)
        .map(|j| 5.0 * j as f64 + 2.0 * (j * j) as f64)
        .collect();
    TieredPeakSchedule::new(costs, thresholds, SYNTH_MAX_POWER, n_days)
}

/// Random but always feasible instance: loads in `[0, 8]` kW under a 10 kW
/// connection, day/night TOU rates and noisy day-ahead prices.
pub fn synth_scenario(spec: &SynthSpec) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let start = NaiveDate::from_ymd_opt(2022, 1, 1)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time");
    let grid = TimeGrid::from_month_lengths(start, &vec![spec.days; spec.months], spec.day_length, 1.0)?;
    let n = grid.periods();
    let dl = spec.day_length as f64;
    let mut load = Vec::with_capacity(n);
    let mut tou = Vec::with_capacity(n);
    let mut da = Vec::with_capacity(n);
    for t in 0..n {
        let phase = grid.period_of_day(t) as f64 / dl;
        let shape = 2.0 + 1.5 * (2.0 * std::f64::consts::PI * phase).sin();
        let spike = if rng.random::<f64>() < 0.1 {
            rng.random_range(1.0..3.0)
        } else {
            0.0
        };
        load.push((shape + rng.random_range(0.0..2.0) + spike).clamp(0.0, 8.0));
        tou.push(if phase >= 0.25 { 0.4 } else { 0.25 });
        da.push(rng.random_range(0.1..1.5));
    }
    let capacity = 6.0;
    let storage = StorageParams {
        capacity,
        max_charge: 3.0,
        max_discharge: 3.0,
        q_init: capacity / 2.0,
        q_final: capacity / 2.0,
        ..StorageParams::default()
    };
    Ok(Scenario {
        prices: PriceSeries {
            tou,
            day_ahead: da,
            announcement_hour: (13 * spec.day_length) / 24,
        },
        grid,
        load,
        storage,
        grid_params: GridParams {
            max_power: SYNTH_MAX_POWER,
        },
        peak: synth_schedule(spec.levels, spec.n_days)?,
    })
}
