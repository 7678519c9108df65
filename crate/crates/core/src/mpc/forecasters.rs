//! Forecast sources for the receding-horizon controller.

use crate::domain::{Scenario, TimeGrid};
use crate::forecast::{hour_index, ForecastModel};
use crate::{Error, Result};

/// What the controller has observed at period `t`.
#[derive(Debug, Clone, Copy)]
pub struct Observed<'a> {
    pub grid: &'a TimeGrid,
    pub t: usize,
    /// Loads of periods `0..=t`.
    pub load: &'a [f64],
    /// Day-ahead prices of periods `0..t + known`, the last `known` of which
    /// lie in the future but are already published.
    pub day_ahead: &'a [f64],
}

impl Observed<'_> {
    /// Last period with a published day-ahead price.
    pub fn last_known_price(&self) -> usize {
        self.day_ahead.len() - 1
    }
}

pub trait Forecaster: Sync {
    /// Loads for periods `t..t + len`. The first entry is replaced by the
    /// observed load by the caller.
    fn load(&self, obs: &Observed<'_>, len: usize) -> Result<Vec<f64>>;

    /// Day-ahead prices for the `len` periods after the last published one.
    fn day_ahead(&self, obs: &Observed<'_>, len: usize) -> Result<Vec<f64>>;
}

/// Perfect foresight, for bounds and tests.
#[derive(Debug, Clone)]
pub struct OracleForecaster {
    load: Vec<f64>,
    day_ahead: Vec<f64>,
}

impl OracleForecaster {
    pub fn new(s: &Scenario) -> Self {
        OracleForecaster {
            load: s.load.clone(),
            day_ahead: s.prices.day_ahead.clone(),
        }
    }
}

fn slice_or_err(v: &[f64], start: usize, len: usize, what: &str) -> Result<Vec<f64>> {
    v.get(start..start + len)
        .map(<[f64]>::to_vec)
        .ok_or_else(|| Error::invalid("mpc", format!("oracle {what} requested past the data end")))
}

impl Forecaster for OracleForecaster {
    fn load(&self, obs: &Observed<'_>, len: usize) -> Result<Vec<f64>> {
        slice_or_err(&self.load, obs.t, len, "load")
    }

    fn day_ahead(&self, obs: &Observed<'_>, len: usize) -> Result<Vec<f64>> {
        slice_or_err(&self.day_ahead, obs.last_known_price() + 1, len, "price")
    }
}

/// Persistence: load repeats the last day, prices repeat the last published
/// value.
#[derive(Debug, Clone, Copy, Default)]
pub struct PersistenceForecaster;

impl Forecaster for PersistenceForecaster {
    fn load(&self, obs: &Observed<'_>, len: usize) -> Result<Vec<f64>> {
        let dl = obs.grid.day_length();
        let t = obs.t;
        Ok((0..len)
            .map(|k| {
                if k == 0 {
                    return obs.load[t];
                }
                // same period of the most recent observed day
                let back = dl * k.div_ceil(dl);
                obs.load[(t + k).saturating_sub(back)]
            })
            .collect())
    }

    fn day_ahead(&self, obs: &Observed<'_>, len: usize) -> Result<Vec<f64>> {
        let last = *obs
            .day_ahead
            .last()
            .ok_or_else(|| Error::invalid("mpc", "no published day-ahead price"))?;
        Ok(vec![last; len])
    }
}

/// Baseline-residual models for load and day-ahead price.
///
/// `*_history` are observations immediately before the scenario start, used
/// to fill the autoregressive input window early in the run. Missing values
/// fall back to the baseline.
#[derive(Debug, Clone)]
pub struct FittedForecaster {
    pub load_model: ForecastModel,
    pub price_model: ForecastModel,
    pub load_history: Vec<f64>,
    pub price_history: Vec<f64>,
}

fn window(model: &ForecastModel, history: &[f64], observed: &[f64], origin: usize, origin_hour: i64) -> Vec<f64> {
    let m = model.ar.m_in;
    (0..m)
        .map(|i| {
            let back = (m - 1 - i) as i64;
            let idx = origin as i64 - back;
            if idx >= 0 {
                observed[idx as usize]
            } else {
                let h = history.len() as i64 + idx;
                if h >= 0 {
                    history[h as usize]
                } else {
                    model.baseline.value_at(origin_hour - back)
                }
            }
        })
        .collect()
}

impl Forecaster for FittedForecaster {
    fn load(&self, obs: &Observed<'_>, len: usize) -> Result<Vec<f64>> {
        let hour = hour_index(obs.grid.timestamp(obs.t));
        let w = window(&self.load_model, &self.load_history, obs.load, obs.t, hour);
        self.load_model.forecast(&w, hour, len)
    }

    fn day_ahead(&self, obs: &Observed<'_>, len: usize) -> Result<Vec<f64>> {
        let o = obs.last_known_price();
        // the origin may sit past the grid end when the run is about to finish
        let hour = hour_index(obs.grid.timestamp(obs.t)) + (o - obs.t) as i64;
        let w = window(&self.price_model, &self.price_history, obs.day_ahead, o, hour);
        let mut f = self.price_model.forecast(&w, hour, len + 1)?;
        f.remove(0);
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_scenario, SynthSpec};

    #[test]
    fn persistence_repeats_previous_day() {
        let s = synth_scenario(&SynthSpec::default()).unwrap();
        let t = 9; // day length 4
        let obs = Observed {
            grid: &s.grid,
            t,
            load: &s.load[..=t],
            day_ahead: &s.prices.day_ahead[..t + 3],
        };
        let f = PersistenceForecaster.load(&obs, 10).unwrap();
        assert_eq!(f[0], s.load[9]);
        for k in 1..10usize {
            let back = 4 * k.div_ceil(4);
            assert_eq!(f[k], s.load[t + k - back], "k={k}");
        }
        assert_eq!(f[1], s.load[6]);
        assert_eq!(f[3], s.load[8]);
        assert_eq!(f[4], s.load[9]);
        let p = PersistenceForecaster.day_ahead(&obs, 3).unwrap();
        assert_eq!(p, vec![s.prices.day_ahead[t + 2]; 3]);
    }
}
