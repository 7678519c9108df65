//! Cost evaluation of grid-power trajectories.

use serde::{Deserialize, Serialize};

use crate::domain::{PriceSeries, Scenario};
use crate::peak_tariff::summarize_months;
use crate::{Error, Result};

/// Slack allowed on power bounds when evaluating solver output.
pub const BOUND_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthCost {
    pub month: String,
    pub tou: f64,
    pub da: f64,
    pub peak: f64,
    pub z: f64,
    pub tier: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTotals {
    pub tou: f64,
    pub da: f64,
    pub energy: f64,
    pub peak: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Savings {
    pub nok: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub months: Vec<MonthCost>,
    pub totals: CostTotals,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<CostTotals>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub savings: Option<Savings>,
}

impl CostReport {
    /// Attaches `reference` totals and the savings relative to them.
    pub fn with_reference(mut self, reference: &CostReport) -> Self {
        let r = reference.totals;
        let nok = r.total - self.totals.total;
        self.reference = Some(r);
        self.savings = Some(Savings {
            nok,
            percent: 100.0 * nok / r.total,
        });
        self
    }

    pub fn total(&self) -> f64 {
        self.totals.total
    }
}

/// `(h Σ λ_tou p, h Σ λ_da p)`.
pub fn energy_cost(p: &[f64], prices: &PriceSeries, h: f64) -> Result<(f64, f64)> {
    if p.len() != prices.tou.len() || p.len() != prices.day_ahead.len() {
        return Err(Error::invalid(
            "accounting",
            format!(
                "power has {} periods, prices have {}/{}",
                p.len(),
                prices.tou.len(),
                prices.day_ahead.len()
            ),
        ));
    }
    let tou = h * p.iter().zip(&prices.tou).map(|(a, b)| a * b).sum::<f64>();
    let da = h * p.iter().zip(&prices.day_ahead).map(|(a, b)| a * b).sum::<f64>();
    Ok((tou, da))
}

/// Full cost report of grid power `p` under the scenario's tariff, with the
/// true `N` for peak charges.
pub fn evaluate(p: &[f64], s: &Scenario) -> Result<CostReport> {
    let n = s.periods();
    if p.len() != n {
        return Err(Error::invalid(
            "accounting",
            format!("power has {} periods, scenario has {n}", p.len()),
        ));
    }
    let p_max = s.grid_params.max_power;
    if let Some((t, v)) = p
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v >= -BOUND_TOL && v <= p_max + BOUND_TOL))
    {
        return Err(Error::invalid(
            "accounting",
            format!("grid power {v} at t={t} outside [0, {p_max}]"),
        ));
    }
    // absorb solver round-off before tier lookup
    let clamped: Vec<f64> = p.iter().map(|v| v.clamp(0.0, p_max)).collect();
    let summaries = summarize_months(&clamped, &s.grid, &s.peak)?;
    let h = s.h();
    let mut months = Vec::with_capacity(summaries.len());
    for m in summaries {
        let range = s.grid.month_periods(m.month);
        let (mut tou, mut da) = (0.0, 0.0);
        for t in range {
            tou += h * p[t] * s.prices.tou[t];
            da += h * p[t] * s.prices.day_ahead[t];
        }
        months.push(MonthCost {
            month: s.grid.months()[m.month].label.clone(),
            tou,
            da,
            peak: m.charge,
            z: m.z,
            tier: m.tier,
        });
    }
    let tou: f64 = months.iter().map(|m| m.tou).sum();
    let da: f64 = months.iter().map(|m| m.da).sum();
    let peak: f64 = months.iter().map(|m| m.peak).sum();
    Ok(CostReport {
        months,
        totals: CostTotals {
            tou,
            da,
            energy: tou + da,
            peak,
            total: tou + da + peak,
        },
        reference: None,
        savings: None,
    })
}

/// Cost without storage: `p = l`.
pub fn baseline_no_storage(s: &Scenario) -> Result<CostReport> {
    let p_max = s.grid_params.max_power;
    if let Some((t, l)) = s
        .load
        .iter()
        .enumerate()
        .find(|(_, &l)| !(0.0..=p_max).contains(&l))
    {
        return Err(Error::invalid(
            "accounting",
            format!("load {l} at t={t} outside [0, {p_max}] cannot be served without storage"),
        ));
    }
    evaluate(&s.load, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_scenario, SynthSpec};

    #[test]
    fn energy_cost_example() {
        let prices = PriceSeries {
            tou: vec![0.5, 0.5],
            day_ahead: vec![0.0, 0.5],
            announcement_hour: 13,
        };
        assert_eq!(energy_cost(&[1.0, 2.0], &prices, 1.0).unwrap(), (1.5, 1.0));
        assert_eq!(energy_cost(&[0.0, 0.0], &prices, 1.0).unwrap(), (0.0, 0.0));
        assert!(energy_cost(&[0.0], &prices, 1.0).is_err());
    }

    #[test]
    fn zero_load_costs_tier_one_only() {
        let mut s = synth_scenario(&SynthSpec::default()).unwrap();
        s.load.iter_mut().for_each(|l| *l = 0.0);
        let r = baseline_no_storage(&s).unwrap();
        assert_eq!(r.totals.energy, 0.0);
        assert_eq!(r.totals.peak, s.grid.num_months() as f64 * s.peak.costs()[0]);
    }

    #[test]
    fn baseline_matches_direct_formula() {
        for seed in 0..5 {
            let s = synth_scenario(&SynthSpec { seed, ..Default::default() }).unwrap();
            let r = baseline_no_storage(&s).unwrap();
            let mut energy = 0.0;
            for t in 0..s.periods() {
                energy += s.load[t] * (s.prices.tou[t] + s.prices.day_ahead[t]);
            }
            let mut peak = 0.0;
            for k in 0..s.grid.num_months() {
                let mut maxima: Vec<f64> = s
                    .grid
                    .month_days(k)
                    .iter()
                    .map(|d| s.load[d.periods.clone()].iter().cloned().fold(0.0, f64::max))
                    .collect();
                maxima.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let n = s.peak.n_days().min(maxima.len());
                let z = maxima[..n].iter().sum::<f64>() / n as f64;
                let tier = s.peak.thresholds().iter().position(|&t| z <= t).unwrap();
                peak += s.peak.costs()[tier];
            }
            assert!((r.totals.energy - energy).abs() < 1e-9);
            assert_eq!(r.totals.peak, peak);
            assert!((r.total() - r.months.iter().map(|m| m.tou + m.da + m.peak).sum::<f64>()).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_range_power_rejected() {
        let s = synth_scenario(&SynthSpec::default()).unwrap();
        let mut p = s.load.clone();
        p[3] = s.grid_params.max_power + 1.0;
        assert!(evaluate(&p, &s).is_err());
        let mut s2 = s.clone();
        s2.load[0] = -0.5;
        assert!(baseline_no_storage(&s2).is_err());
    }

    #[test]
    fn savings_relative_to_reference() {
        let s = synth_scenario(&SynthSpec::default()).unwrap();
        let base = baseline_no_storage(&s).unwrap();
        let half: Vec<f64> = s.load.iter().map(|l| l / 2.0).collect();
        let r = evaluate(&half, &s).unwrap().with_reference(&base);
        let sv = r.savings.unwrap();
        assert!((sv.nok - (base.total() - r.total())).abs() < 1e-12);
        assert!((sv.percent - 100.0 * sv.nok / base.total()).abs() < 1e-12);
    }
}
