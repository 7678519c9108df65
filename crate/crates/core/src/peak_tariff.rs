//! Tiered monthly peak-power charge.
//!
//! The monthly metric is `z = ψ(m, N) / N`, the mean of the `N` largest daily
//! maxima `m` of grid power in the month. The charge is piecewise constant in
//! `z`: tier `j` (1-based) applies when `T_{j-1} < z ≤ T_j`, with `T_0 = 0`
//! and the top threshold `T_L` equal to the maximum grid power.

use serde::{Deserialize, Serialize};

use crate::domain::TimeGrid;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieredPeakSchedule {
    costs: Vec<f64>,
    thresholds: Vec<f64>,
    n_days: usize,
}

impl TieredPeakSchedule {
    /// `costs` are `β_1..β_L`; `inner_thresholds` are `T_1..T_{L-1}`; the top
    /// threshold is set to `max_power`.
    pub fn new(
        costs: Vec<f64>,
        inner_thresholds: Vec<f64>,
        max_power: f64,
        n_days: usize,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::invalid("peak_tariff", msg));
        if costs.is_empty() {
            return bad("at least one tier is required".into());
        }
        if inner_thresholds.len() + 1 != costs.len() {
            return bad(format!(
                "{} costs need {} thresholds below P, got {}",
                costs.len(),
                costs.len() - 1,
                inner_thresholds.len()
            ));
        }
        if n_days == 0 {
            return bad("N must be at least 1".into());
        }
        if !(costs[0] > 0.0) || costs.windows(2).any(|w| !(w[0] < w[1])) {
            return bad(format!("costs {costs:?} must be positive and strictly increasing"));
        }
        let mut thresholds = inner_thresholds;
        thresholds.push(max_power);
        if !(thresholds[0] > 0.0) || thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return bad(format!(
                "thresholds {thresholds:?} must be positive, strictly increasing and below P"
            ));
        }
        if costs.iter().chain(&thresholds).any(|v| !v.is_finite()) {
            return bad("tariff values must be finite".into());
        }
        Ok(TieredPeakSchedule {
            costs,
            thresholds,
            n_days,
        })
    }

    /// The reference five-tier schedule with `N = 3`.
    pub fn reference(max_power: f64) -> Result<Self> {
        Self::new(
            vec![83.0, 147.0, 252.0, 371.0, 490.0],
            vec![2.0, 5.0, 10.0, 15.0],
            max_power,
            3,
        )
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    /// All thresholds `T_1..T_L`, the last being the maximum grid power.
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn levels(&self) -> usize {
        self.costs.len()
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    /// β of a 1-based tier.
    pub fn cost_of_tier(&self, tier: usize) -> f64 {
        self.costs[tier - 1]
    }

    /// T of a 1-based tier.
    pub fn threshold_of_tier(&self, tier: usize) -> f64 {
        self.thresholds[tier - 1]
    }

    pub fn with_n_days(&self, n_days: usize) -> Result<Self> {
        Self::new(
            self.costs.clone(),
            self.thresholds[..self.thresholds.len() - 1].to_vec(),
            *self.thresholds.last().expect("non-empty"),
            n_days,
        )
    }
}

/// Sum of the `n` largest entries of `u`, counted with multiplicity.
pub fn sum_largest(u: &[f64], n: usize) -> Result<f64> {
    if n == 0 || n > u.len() {
        return Err(Error::invalid(
            "peak_tariff",
            format!("sum_largest needs 1 <= N <= {}, got N={n}", u.len()),
        ));
    }
    let mut v = u.to_vec();
    v.sort_unstable_by(|a, b| b.total_cmp(a));
    Ok(v[..n].iter().sum())
}

/// Daily maxima of `p` over the days of month `k`.
pub fn daily_max_vector(p: &[f64], grid: &TimeGrid, k: usize) -> Result<Vec<f64>> {
    if k >= grid.num_months() {
        return Err(Error::invalid("peak_tariff", format!("month {k} out of range")));
    }
    let days = grid.month_days(k);
    let end = grid.month_periods(k).end;
    if days.is_empty() {
        return Err(Error::invalid("peak_tariff", format!("month {k} has no days")));
    }
    if p.len() < end {
        return Err(Error::invalid(
            "peak_tariff",
            format!("power series has {} periods, month {k} ends at {end}", p.len()),
        ));
    }
    Ok(days
        .iter()
        .map(|d| p[d.periods.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// `ψ(m, N') / N'` with `N' = min(N, len(m))`.
pub fn monthly_peak_metric(m: &[f64], n: usize) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::invalid("peak_tariff", "no daily maxima to average"));
    }
    let n = n.clamp(1, m.len());
    Ok(sum_largest(m, n)? / n as f64)
}

/// 1-based tier containing `z`. Thresholds belong to the lower tier.
pub fn tier_of(z: f64, sched: &TieredPeakSchedule) -> Result<usize> {
    let top = *sched.thresholds.last().expect("non-empty");
    if !(z >= 0.0 && z <= top) {
        return Err(Error::invalid(
            "peak_tariff",
            format!("peak metric z={z} outside [0, {top}]"),
        ));
    }
    Ok(sched.thresholds.iter().position(|&t| z <= t).expect("z <= top") + 1)
}

pub fn peak_cost(z: f64, sched: &TieredPeakSchedule) -> Result<f64> {
    Ok(sched.cost_of_tier(tier_of(z, sched)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyPeakSummary {
    pub month: usize,
    pub daily_maxima: Vec<f64>,
    pub z: f64,
    pub tier: usize,
    pub charge: f64,
}

/// Peak metric, tier and charge for every month of `grid`.
pub fn summarize_months(
    p: &[f64],
    grid: &TimeGrid,
    sched: &TieredPeakSchedule,
) -> Result<Vec<MonthlyPeakSummary>> {
    (0..grid.num_months())
        .map(|k| {
            let m = daily_max_vector(p, grid, k)?;
            let z = monthly_peak_metric(&m, sched.n_days())?;
            let tier = tier_of(z, sched)?;
            Ok(MonthlyPeakSummary {
                month: k,
                daily_maxima: m,
                z,
                tier,
                charge: sched.cost_of_tier(tier),
            })
        })
        .collect()
}
