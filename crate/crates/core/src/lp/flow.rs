//! The storage-scheduling LP for a fixed assignment of peak tiers.
//!
//! Columns: grid power `p`, charge `c`, discharge `d` per period, charge level
//! `q` at every period boundary, one daily-maximum variable `m` per day of
//! every peak-constrained month, plus the sum-largest epigraph auxiliaries.
//! The objective is the energy charge only; tier costs are constants added by
//! the caller.

use std::ops::Range;

use crate::domain::{StorageParams, TimeGrid};
use crate::lp::{encode_sum_largest_leq, solve_lp, LinearProgram, LpStatus, Sense};
use crate::peak_tariff::{sum_largest, TieredPeakSchedule};
use crate::{Error, Result};

/// Peak-tier decision for one month of a planning window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TierChoice {
    /// No peak constraint (branch-and-bound relaxation).
    Unconstrained,
    /// 1-based tier; the month's metric must not exceed its threshold.
    Tier(usize),
}

/// State entering the window, and the optional terminal charge.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Boundary {
    pub q_start: f64,
    pub q_end: Option<f64>,
    /// Daily maxima of completed days of the window's first month.
    pub realized_maxima: Vec<f64>,
    /// Running maximum of the already executed part of the window's first day.
    pub today_running_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// Thresholds below the top tier are tightened by this many kW so that
    /// solver round-off can never push a planned month into the next tier.
    pub peak_margin: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { peak_margin: 1e-7 }
    }
}

/// Everything needed to build a window LP. `load` and `price` (TOU plus
/// day-ahead, NOK/kWh) cover the window `start..start + load.len()`.
#[derive(Debug, Clone, Copy)]
pub struct FlowProblem<'a> {
    pub grid: &'a TimeGrid,
    pub start: usize,
    pub load: &'a [f64],
    pub price: &'a [f64],
    pub storage: &'a StorageParams,
    pub max_power: f64,
    pub schedule: &'a TieredPeakSchedule,
    /// `N` used for the peak metric inside the plan.
    pub n_days: usize,
    pub boundary: &'a Boundary,
}

/// A month touched by a window, with its days as window-local period ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMonth {
    pub month: usize,
    pub days: Vec<Range<usize>>,
}

/// Months and (clipped) days covered by `start..start + len`.
pub fn window_months(grid: &TimeGrid, start: usize, len: usize) -> Vec<WindowMonth> {
    let mut out: Vec<WindowMonth> = Vec::new();
    let end = start + len;
    let mut t = start;
    while t < end {
        let day = &grid.days()[grid.day_of(t)];
        let hi = day.periods.end.min(end);
        let local = t - start..hi - start;
        match out.last_mut() {
            Some(m) if m.month == day.month => m.days.push(local),
            _ => out.push(WindowMonth {
                month: day.month,
                days: vec![local],
            }),
        }
        t = hi;
    }
    out
}

/// Smallest metric the first month can end with, given realized maxima only:
/// the top `n_eff` realized values (padded with zeros) over `n_eff`.
pub fn realized_floor(boundary: &Boundary, n_eff: usize) -> f64 {
    let mut vals = boundary.realized_maxima.clone();
    vals.extend(boundary.today_running_max);
    if vals.is_empty() || n_eff == 0 {
        return 0.0;
    }
    let k = n_eff.min(vals.len());
    sum_largest(&vals, k).expect("1 <= k <= len") / n_eff as f64
}

#[derive(Debug, Clone)]
pub struct FlowLp {
    pub lp: LinearProgram,
    pub len: usize,
    pub months: Vec<WindowMonth>,
    /// Effective `N` per window month after truncation.
    pub n_eff: Vec<usize>,
    p0: usize,
    c0: usize,
    d0: usize,
    q0: usize,
}

/// Optimal flows of a window LP.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPlan {
    pub p: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    /// Charge levels at the `len + 1` period boundaries.
    pub q: Vec<f64>,
    /// Energy cost `h Σ price · p`, NOK.
    pub energy_cost: f64,
}

/// Builds the window LP for `assignment` (one entry per window month).
pub fn build_flow_lp(
    prob: &FlowProblem<'_>,
    assignment: &[TierChoice],
    options: &FlowOptions,
) -> Result<FlowLp> {
    let n = prob.load.len();
    if n == 0 || prob.price.len() != n {
        return Err(Error::invalid(
            "lp",
            format!("window has {} loads and {} prices", n, prob.price.len()),
        ));
    }
    if prob.start + n > prob.grid.periods() {
        return Err(Error::invalid("lp", "window extends past the time grid"));
    }
    let months = window_months(prob.grid, prob.start, n);
    if assignment.len() != months.len() {
        return Err(Error::invalid(
            "lp",
            format!(
                "assignment covers {} months, window touches {}",
                assignment.len(),
                months.len()
            ),
        ));
    }
    let levels = prob.schedule.levels();
    if let Some(bad) = assignment
        .iter()
        .find(|a| matches!(a, TierChoice::Tier(j) if *j == 0 || *j > levels))
    {
        return Err(Error::invalid("lp", format!("tier {bad:?} outside 1..={levels}")));
    }

    let st = prob.storage;
    let h = prob.grid.h();
    let mut lp = LinearProgram::new();
    let p0 = lp.num_vars();
    for t in 0..n {
        lp.add_var(format!("p{t}"), h * prob.price[t], 0.0, prob.max_power);
    }
    let c0 = lp.num_vars();
    for t in 0..n {
        lp.add_var(format!("c{t}"), 0.0, 0.0, st.max_charge);
    }
    let d0 = lp.num_vars();
    for t in 0..n {
        lp.add_var(format!("d{t}"), 0.0, 0.0, st.max_discharge);
    }
    let q0 = lp.num_vars();
    let b = prob.boundary;
    lp.add_var("q0", 0.0, b.q_start, b.q_start);
    for t in 1..=n {
        let (lo, hi) = match (t == n, b.q_end) {
            (true, Some(q)) => (q, q),
            _ => (0.0, st.capacity),
        };
        lp.add_var(format!("q{t}"), 0.0, lo, hi);
    }

    for t in 0..n {
        // p + d - c = l
        lp.add_constraint(
            vec![(p0 + t, 1.0), (d0 + t, 1.0), (c0 + t, -1.0)],
            Sense::Eq,
            prob.load[t],
        );
        // q+ - eta_s q - h eta_c c + (h / eta_d) d = 0
        lp.add_constraint(
            vec![
                (q0 + t + 1, 1.0),
                (q0 + t, -st.eta_storage),
                (c0 + t, -h * st.eta_charge),
                (d0 + t, h / st.eta_discharge),
            ],
            Sense::Eq,
            0.0,
        );
    }

    let mut n_eff = Vec::with_capacity(months.len());
    for (w, (month, choice)) in months.iter().zip(assignment).enumerate() {
        let realized: &[f64] = if w == 0 { &b.realized_maxima } else { &[] };
        let entries = realized.len() + month.days.len();
        let n_month = prob.n_days.min(entries).max(1);
        n_eff.push(n_month);
        let tier = match *choice {
            TierChoice::Tier(j) if j < levels => j,
            // top tier is implied by p <= P
            _ => continue,
        };
        let mut bound = prob.schedule.threshold_of_tier(tier) - options.peak_margin;
        if w == 0 {
            let floor = realized_floor(b, n_month);
            if floor <= prob.schedule.threshold_of_tier(tier) {
                bound = bound.max(floor);
            }
        }
        let mut m_vars = Vec::with_capacity(entries);
        for (i, &v) in realized.iter().enumerate() {
            m_vars.push(lp.add_var(format!("r{w}_{i}"), 0.0, v, v));
        }
        for (i, day) in month.days.iter().enumerate() {
            let lower = match (w, i, b.today_running_max) {
                (0, 0, Some(run)) => run.max(0.0),
                _ => 0.0,
            };
            let m = lp.add_var(format!("m{w}_{i}"), 0.0, lower, f64::INFINITY);
            for t in day.clone() {
                // m >= p_t
                lp.add_constraint(vec![(m, 1.0), (p0 + t, -1.0)], Sense::Ge, 0.0);
            }
            m_vars.push(m);
        }
        encode_sum_largest_leq(&mut lp, &m_vars, n_month, bound, &format!("z{w}"))?;
    }

    Ok(FlowLp {
        lp,
        len: n,
        months,
        n_eff,
        p0,
        c0,
        d0,
        q0,
    })
}

impl FlowLp {
    pub fn extract(&self, x: &[f64], objective: f64) -> FlowPlan {
        let n = self.len;
        FlowPlan {
            p: x[self.p0..self.p0 + n].to_vec(),
            c: x[self.c0..self.c0 + n].to_vec(),
            d: x[self.d0..self.d0 + n].to_vec(),
            q: x[self.q0..self.q0 + n + 1].to_vec(),
            energy_cost: objective,
        }
    }

    /// Solves the LP; `Ok(None)` when infeasible.
    pub fn solve(&self) -> Result<Option<FlowPlan>> {
        let sol = solve_lp(&self.lp);
        match sol.status {
            LpStatus::Optimal => Ok(Some(self.extract(&sol.x, sol.objective))),
            LpStatus::Infeasible => Ok(None),
            LpStatus::Unbounded => Err(Error::solver("lp", "scheduling LP reported unbounded")),
            LpStatus::Error(msg) => Err(Error::solver("lp", msg)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn grid() -> TimeGrid {
        let start = NaiveDate::from_ymd_opt(2022, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        TimeGrid::from_month_lengths(start, &[3, 2], 4, 1.0).unwrap()
    }

    #[test]
    fn window_months_clip_days() {
        let g = grid();
        let w = window_months(&g, 2, 13);
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].month, 0);
        assert_eq!(w[0].days, vec![0..2, 2..6, 6..10]);
        assert_eq!(w[1].days, vec![10..13]);
    }

    #[test]
    fn floor_pads_with_zeros() {
        let b = Boundary {
            realized_maxima: vec![4.0, 1.0],
            today_running_max: Some(2.0),
            ..Default::default()
        };
        assert_eq!(realized_floor(&b, 2), 3.0);
        assert_eq!(realized_floor(&b, 3), 7.0 / 3.0);
        assert_eq!(realized_floor(&b, 4), 7.0 / 4.0);
        assert_eq!(realized_floor(&Boundary::default(), 3), 0.0);
    }

    fn problem<'a>(
        g: &'a TimeGrid,
        load: &'a [f64],
        price: &'a [f64],
        st: &'a StorageParams,
        s: &'a TieredPeakSchedule,
        b: &'a Boundary,
    ) -> FlowProblem<'a> {
        FlowProblem {
            grid: g,
            start: 0,
            load,
            price,
            storage: st,
            max_power: 10.0,
            schedule: s,
            n_days: 2,
            boundary: b,
        }
    }

    #[test]
    fn top_tier_equals_pure_arbitrage() {
        let g = grid();
        let load: Vec<f64> = (0..20).map(|t| 1.0 + (t % 4) as f64).collect();
        let price: Vec<f64> = (0..20).map(|t| 0.5 + 0.1 * (t % 5) as f64).collect();
        let st = StorageParams {
            capacity: 4.0,
            max_charge: 2.0,
            max_discharge: 2.0,
            q_init: 2.0,
            q_final: 2.0,
            ..Default::default()
        };
        let sched = TieredPeakSchedule::new(vec![1.0, 2.0, 3.0], vec![2.0, 5.0], 10.0, 2).unwrap();
        let b = Boundary {
            q_start: 2.0,
            q_end: Some(2.0),
            ..Default::default()
        };
        let prob = problem(&g, &load, &price, &st, &sched, &b);
        let top = build_flow_lp(&prob, &[TierChoice::Tier(3), TierChoice::Tier(3)], &FlowOptions::default())
            .unwrap()
            .solve()
            .unwrap()
            .unwrap();
        let free = build_flow_lp(
            &prob,
            &[TierChoice::Unconstrained, TierChoice::Unconstrained],
            &FlowOptions::default(),
        )
        .unwrap()
        .solve()
        .unwrap()
        .unwrap();
        assert!((top.energy_cost - free.energy_cost).abs() < 1e-9);
        for t in 0..20 {
            assert!((top.p[t] + top.d[t] - load[t] - top.c[t]).abs() < 1e-7);
        }
    }

    #[test]
    fn tier_below_min_peak_is_infeasible() {
        let g = grid();
        let load = vec![3.0; 20];
        let price = vec![1.0; 20];
        let st = StorageParams {
            capacity: 2.0,
            max_charge: 1.0,
            max_discharge: 1.0,
            q_init: 1.0,
            q_final: 1.0,
            ..Default::default()
        };
        let sched = TieredPeakSchedule::new(vec![1.0, 2.0, 3.0], vec![1.0, 5.0], 10.0, 2).unwrap();
        let b = Boundary {
            q_start: 1.0,
            q_end: Some(1.0),
            ..Default::default()
        };
        let prob = problem(&g, &load, &price, &st, &sched, &b);

        // auxiliary min-max LP: minimise the largest p
        let base = build_flow_lp(
            &prob,
            &[TierChoice::Unconstrained, TierChoice::Unconstrained],
            &FlowOptions::default(),
        )
        .unwrap();
        let lp = &base.lp;
        let mut aux = LinearProgram::new();
        for j in 0..lp.num_vars() {
            let (lo, hi) = lp.bounds(j);
            aux.add_var(lp.name(j).to_string(), 0.0, lo, hi);
        }
        for r in lp.rows() {
            aux.add_constraint(r.terms.clone(), r.sense, r.rhs);
        }
        let top = aux.add_var("peak", 1.0, 0.0, f64::INFINITY);
        for t in 0..20 {
            aux.add_constraint(vec![(top, 1.0), (t, -1.0)], Sense::Ge, 0.0);
        }
        let min_peak = solve_lp(&aux).objective;
        assert!(min_peak > 2.5, "{min_peak}");

        let infeasible = build_flow_lp(&prob, &[TierChoice::Tier(1), TierChoice::Tier(3)], &FlowOptions::default())
            .unwrap()
            .solve()
            .unwrap();
        assert!(infeasible.is_none());
        let feasible = build_flow_lp(&prob, &[TierChoice::Tier(2), TierChoice::Tier(2)], &FlowOptions::default())
            .unwrap()
            .solve()
            .unwrap();
        assert!(feasible.is_some());
    }

    #[test]
    fn assignment_must_cover_window() {
        let g = grid();
        let load = vec![1.0; 20];
        let price = vec![1.0; 20];
        let st = StorageParams::none();
        let sched = TieredPeakSchedule::new(vec![1.0, 2.0], vec![2.0], 10.0, 2).unwrap();
        let b = Boundary::default();
        let prob = problem(&g, &load, &price, &st, &sched, &b);
        assert!(build_flow_lp(&prob, &[TierChoice::Tier(1)], &FlowOptions::default()).is_err());
        assert!(build_flow_lp(&prob, &[TierChoice::Tier(1), TierChoice::Tier(9)], &FlowOptions::default()).is_err());
    }

    #[test]
    fn realized_maxima_raise_the_floor() {
        // one month window starting mid-month with realized maxima above T_1
        let g = grid();
        let load = vec![0.5; 10];
        let price = vec![1.0; 10];
        let st = StorageParams::none();
        let sched = TieredPeakSchedule::new(vec![1.0, 2.0, 3.0], vec![2.0, 5.0], 10.0, 2).unwrap();
        let b = Boundary {
            q_start: 0.0,
            q_end: None,
            realized_maxima: vec![3.0, 4.0],
            today_running_max: None,
        };
        let mut prob = problem(&g, &load, &price, &st, &sched, &b);
        prob.start = 10;
        let months = window_months(&g, 10, 10);
        assert_eq!(months.len(), 2);
        let t1 = build_flow_lp(&prob, &[TierChoice::Tier(1), TierChoice::Tier(1)], &FlowOptions::default())
            .unwrap()
            .solve()
            .unwrap();
        assert!(t1.is_none());
        let t2 = build_flow_lp(&prob, &[TierChoice::Tier(2), TierChoice::Tier(1)], &FlowOptions::default())
            .unwrap()
            .solve()
            .unwrap();
        assert!(t2.is_some());
    }
}
