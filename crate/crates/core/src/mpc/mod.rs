//! Receding-horizon control.
//!
//! Each step forecasts loads and day-ahead prices over the horizon (published
//! prices are used as-is), solves one flow LP per tier assignment of the
//! months the window touches, executes the first period of the cheapest plan
//! and carries the month's realized daily maxima forward.

mod forecasters;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::accounting::{evaluate, CostReport, BOUND_TOL};
use crate::domain::{step_storage, Scenario, StorageParams, TimeGrid};
use crate::exec::Execution;
use crate::lp::{build_flow_lp, realized_floor, window_months, Boundary, FlowOptions, FlowPlan, FlowProblem, TierChoice};
use crate::peak_tariff::tier_of;
use crate::{Error, Result};

pub use forecasters::{FittedForecaster, Forecaster, Observed, OracleForecaster, PersistenceForecaster};

/// Number of periods from `t` (inclusive) whose day-ahead price is published.
///
/// Before the announcement the current day is known; from it on, the next day
/// as well. Clipped at the grid end.
pub fn known_price_horizon(t: usize, grid: &TimeGrid, announcement: usize) -> usize {
    let dl = grid.day_length();
    let hod = grid.period_of_day(t);
    let known = if hod < announcement { dl - hod } else { 2 * dl - hod };
    known.min(grid.periods() - t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcState {
    pub t: usize,
    pub q: f64,
    /// Daily maxima of the completed days of the current month.
    pub month_daily_maxima: Vec<f64>,
    /// Maximum grid power so far today, `None` at the start of a day.
    pub today_running_max: Option<f64>,
}

impl MpcState {
    pub fn initial(s: &Scenario) -> Self {
        MpcState {
            t: 0,
            q: s.storage.q_init,
            month_daily_maxima: Vec::new(),
            today_running_max: None,
        }
    }
}

/// Charge level required at the end of a plan whose window stops before the
/// data end. Windows reaching the data end always use `q_final`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalRule {
    #[default]
    Initial,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcOptions {
    pub horizon: usize,
    /// `N` used inside each plan; accounting always uses the tariff's own.
    pub surrogate_n: usize,
    pub terminal: TerminalRule,
    #[serde(skip)]
    pub flow: FlowOptions,
    pub execution: Execution,
    /// Keep per-assignment LP objectives of every step.
    pub diagnostics: bool,
}

impl Default for MpcOptions {
    fn default() -> Self {
        MpcOptions {
            horizon: 720,
            surrogate_n: 1,
            terminal: TerminalRule::Initial,
            flow: FlowOptions::default(),
            execution: Execution::Parallel,
            diagnostics: false,
        }
    }
}

impl MpcOptions {
    fn check(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("mpc", "horizon must be at least 1"));
        }
        if self.surrogate_n == 0 {
            return Err(Error::invalid("mpc", "surrogate N must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub p: f64,
    pub c: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentOutcome {
    pub tiers: Vec<usize>,
    /// Energy cost plus tier charges; `None` when infeasible.
    pub total: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: usize,
    /// Chosen tier of each month in the window, current month first.
    pub tiers: Vec<usize>,
    /// Lowest tier the current month could still reach.
    pub floor_tier: usize,
    pub lps: usize,
    pub solve_time_s: f64,
    /// Terminal constraint was dropped because no assignment satisfied it.
    pub terminal_relaxed: bool,
    pub plan_total: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outcomes: Vec<AssignmentOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw_load_forecast: Vec<f64>,
}

fn tie_tol(v: f64) -> f64 {
    1e-9 * v.abs().max(1.0)
}

/// All tier vectors with the first month at or above `floor`, in
/// lexicographic order.
fn assignments(months: usize, floor: usize, levels: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for w in 0..months {
        let lo = if w == 0 { floor } else { 1 };
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<usize>| {
                (lo..=levels).map(move |j| {
                    let mut v = prefix.clone();
                    v.push(j);
                    v
                })
            })
            .collect();
    }
    out
}

/// Plans from `state` and returns the first-period action.
pub fn mpc_step(
    state: &MpcState,
    s: &Scenario,
    forecaster: &dyn Forecaster,
    opts: &MpcOptions,
) -> Result<(Action, StepDiagnostics)> {
    opts.check()?;
    let started = Instant::now();
    let grid = &s.grid;
    let t = state.t;
    let total = grid.periods();
    if t >= total {
        return Err(Error::invalid("mpc", format!("period {t} is past the horizon end {total}")));
    }
    let len = opts.horizon.min(total - t);
    let reaches_end = t + len == total;

    let known = known_price_horizon(t, grid, s.prices.announcement_hour);
    let obs = Observed {
        grid,
        t,
        load: &s.load[..=t],
        day_ahead: &s.prices.day_ahead[..t + known],
    };

    let raw = forecaster.load(&obs, len)?;
    if raw.len() != len {
        return Err(Error::invalid("mpc", format!("load forecast has {} values, need {len}", raw.len())));
    }
    let upper = s.grid_params.max_power + s.storage.max_discharge;
    let mut load: Vec<f64> = raw.iter().map(|v| v.clamp(0.0, upper)).collect();
    load[0] = s.load[t];

    let mut da = s.prices.day_ahead[t..t + known.min(len)].to_vec();
    if len > da.len() {
        let rest = forecaster.day_ahead(&obs, len - da.len())?;
        if rest.len() != len - da.len() {
            return Err(Error::invalid("mpc", "price forecast has the wrong length"));
        }
        da.extend(rest);
    }
    if load.iter().chain(&da).any(|v| !v.is_finite()) {
        return Err(Error::invalid("mpc", format!("non-finite forecast at t={t}")));
    }
    let price: Vec<f64> = (0..len).map(|k| s.prices.tou[t + k] + da[k]).collect();

    let months = window_months(grid, t, len);
    let levels = s.peak.levels();
    let n_first = opts
        .surrogate_n
        .min(state.month_daily_maxima.len() + months[0].days.len())
        .max(1);
    let mut boundary = Boundary {
        q_start: state.q,
        q_end: if reaches_end {
            Some(s.storage.q_final)
        } else {
            match opts.terminal {
                TerminalRule::Initial => Some(s.storage.q_init),
                TerminalRule::Free => None,
            }
        },
        realized_maxima: state.month_daily_maxima.clone(),
        today_running_max: state.today_running_max,
    };
    let floor = realized_floor(&boundary, n_first);
    let floor_tier = tier_of(floor.min(s.grid_params.max_power), &s.peak)?;
    let candidates = assignments(months.len(), floor_tier, levels);

    let solve_all = |boundary: &Boundary| -> Result<Vec<Option<FlowPlan>>> {
        let prob = FlowProblem {
            grid,
            start: t,
            load: &load,
            price: &price,
            storage: &s.storage,
            max_power: s.grid_params.max_power,
            schedule: &s.peak,
            n_days: opts.surrogate_n,
            boundary,
        };
        opts.execution
            .map(&candidates, |tiers| {
                let a: Vec<TierChoice> = tiers.iter().map(|&j| TierChoice::Tier(j)).collect();
                build_flow_lp(&prob, &a, &opts.flow)?.solve()
            })
            .into_iter()
            .collect()
    };

    let mut lps = candidates.len();
    let mut plans = solve_all(&boundary)?;
    let mut terminal_relaxed = false;
    if plans.iter().all(Option::is_none) && boundary.q_end.is_some() {
        boundary.q_end = None;
        terminal_relaxed = true;
        lps += candidates.len();
        plans = solve_all(&boundary)?;
    }

    let totals: Vec<Option<f64>> = candidates
        .iter()
        .zip(&plans)
        .map(|(tiers, plan)| {
            plan.as_ref()
                .map(|p| p.energy_cost + tiers.iter().map(|&j| s.peak.cost_of_tier(j)).sum::<f64>())
        })
        .collect();
    let best_value = totals
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !best_value.is_finite() {
        return Err(Error::infeasible(
            "mpc",
            format!("no tier assignment admits a feasible plan at t={t}"),
        ));
    }
    // first in lexicographic order within tolerance of the minimum
    let best = totals
        .iter()
        .position(|v| matches!(v, Some(v) if *v <= best_value + tie_tol(best_value)))
        .expect("minimum exists");
    let plan = plans[best].as_ref().expect("feasible");

    let action = Action {
        p: plan.p[0],
        c: plan.c[0],
        d: plan.d[0],
    };
    let diag = StepDiagnostics {
        t,
        tiers: candidates[best].clone(),
        floor_tier,
        lps,
        solve_time_s: started.elapsed().as_secs_f64(),
        terminal_relaxed,
        plan_total: totals[best].expect("feasible"),
        outcomes: if opts.diagnostics {
            candidates
                .iter()
                .zip(&totals)
                .map(|(tiers, total)| AssignmentOutcome {
                    tiers: tiers.clone(),
                    total: *total,
                })
                .collect()
        } else {
            Vec::new()
        },
        raw_load_forecast: if opts.diagnostics { raw } else { Vec::new() },
    };
    Ok((action, diag))
}

/// Snaps round-off outside `[lo, hi]` back in; larger excursions are errors.
fn within(v: f64, lo: f64, hi: f64, what: &str, t: usize) -> Result<f64> {
    if v < lo - BOUND_TOL || v > hi + BOUND_TOL || !v.is_finite() {
        return Err(Error::invalid(
            "mpc",
            format!("{what} = {v} at t={t} violates [{lo}, {hi}]"),
        ));
    }
    Ok(v.clamp(lo, hi))
}

/// Executes `action` against the observed load and advances the state.
pub fn update_state(
    state: &MpcState,
    action: &Action,
    load: f64,
    grid: &TimeGrid,
    storage: &StorageParams,
    max_power: f64,
) -> Result<(MpcState, Action)> {
    let t = state.t;
    let a = Action {
        p: within(action.p, 0.0, max_power, "grid power", t)?,
        c: within(action.c, 0.0, storage.max_charge, "charge", t)?,
        d: within(action.d, 0.0, storage.max_discharge, "discharge", t)?,
    };
    let imbalance = a.p + a.d - a.c - load;
    if imbalance.abs() > BOUND_TOL {
        return Err(Error::invalid(
            "mpc",
            format!("power balance off by {imbalance} at t={t}"),
        ));
    }
    let q = step_storage(state.q, a.c, a.d, storage, grid.h());
    if q < -BOUND_TOL || q > storage.capacity + BOUND_TOL {
        return Err(Error::invalid(
            "mpc",
            format!("charge level {q} after t={t} outside [0, {}]", storage.capacity),
        ));
    }

    let mut next = MpcState {
        t: t + 1,
        q,
        month_daily_maxima: state.month_daily_maxima.clone(),
        today_running_max: Some(state.today_running_max.map_or(a.p, |m| m.max(a.p))),
    };
    let day = grid.day_of(t);
    let day_ends = t + 1 == grid.periods() || grid.day_of(t + 1) != day;
    if day_ends {
        next.month_daily_maxima.extend(next.today_running_max.take());
        if t + 1 < grid.periods() && grid.month_of(t + 1) != grid.month_of(t) {
            next.month_daily_maxima.clear();
        }
    }
    Ok((next, a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub p: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    /// Charge levels at the `T + 1` period boundaries.
    pub q: Vec<f64>,
    pub steps: Vec<StepDiagnostics>,
    pub lps: usize,
    pub wall_time_s: f64,
    pub report: CostReport,
    /// State after the last period (its `month_daily_maxima` covers the
    /// final month).
    pub final_state: MpcState,
}

impl SimulationTrace {
    /// Tier of the current and (if in the window) the next month at each step.
    pub fn tier_pairs(&self) -> impl Iterator<Item = (usize, Option<usize>)> + '_ {
        self.steps.iter().map(|d| (d.tiers[0], d.tiers.get(1).copied()))
    }
}

/// Closed-loop rollout over the whole scenario.
pub fn run_mpc(s: &Scenario, forecaster: &dyn Forecaster, opts: &MpcOptions) -> Result<SimulationTrace> {
    s.ensure_valid()?;
    opts.check()?;
    let started = Instant::now();
    let n = s.periods();
    let mut state = MpcState::initial(s);
    let mut trace = SimulationTrace {
        p: Vec::with_capacity(n),
        c: Vec::with_capacity(n),
        d: Vec::with_capacity(n),
        q: vec![state.q],
        steps: Vec::with_capacity(n),
        lps: 0,
        wall_time_s: 0.0,
        report: evaluate(&vec![0.0; n], s)?,
        final_state: state.clone(),
    };
    for t in 0..n {
        let (action, diag) = mpc_step(&state, s, forecaster, opts)?;
        let (next, done) = update_state(&state, &action, s.load[t], &s.grid, &s.storage, s.grid_params.max_power)?;
        trace.p.push(done.p);
        trace.c.push(done.c);
        trace.d.push(done.d);
        trace.q.push(next.q);
        trace.lps += diag.lps;
        trace.steps.push(diag);
        state = next;
    }
    trace.report = evaluate(&trace.p, s)?;
    trace.final_state = state;
    trace.wall_time_s = started.elapsed().as_secs_f64();
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::peak_tariff::daily_max_vector;
    use crate::prescient::{solve_prescient, PrescientOptions};
    use crate::synth::{synth_scenario, SynthSpec};
    use chrono::NaiveDate;

    fn year() -> TimeGrid {
        let start = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        TimeGrid::build(start, 8760, 1.0, 24, crate::domain::MonthPolicy::Whole).unwrap()
    }

    #[test]
    fn price_horizon_examples() {
        let g = year();
        assert_eq!(known_price_horizon(12, &g, 13), 12);
        assert_eq!(known_price_horizon(13, &g, 13), 35);
        assert_eq!(known_price_horizon(0, &g, 13), 24);
        assert_eq!(known_price_horizon(24 + 23, &g, 13), 25);
        // clipped on the last day
        assert_eq!(known_price_horizon(8760 - 11, &g, 13), 11);
    }

    #[test]
    fn assignment_enumeration_order() {
        let a = assignments(2, 2, 3);
        assert_eq!(a.len(), 6);
        assert_eq!(a[0], vec![2, 1]);
        assert_eq!(a[5], vec![3, 3]);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(assignments(1, 1, 5).len(), 5);
    }

    #[test]
    fn state_update_rolls_days_and_months() {
        let s = synth_scenario(&SynthSpec::default()).unwrap();
        let mut st = MpcState::initial(&s);
        let mut executed = Vec::new();
        for t in 0..s.periods() {
            let a = Action { p: s.load[t], c: 0.0, d: 0.0 };
            let (next, done) = update_state(&st, &a, s.load[t], &s.grid, &s.storage, s.grid_params.max_power).unwrap();
            executed.push(done.p);
            if t == 5 {
                assert_eq!(next.today_running_max, Some(s.load[4].max(s.load[5])));
                assert_eq!(next.month_daily_maxima.len(), 1);
            }
            if t == 19 {
                // first month ended
                assert!(next.month_daily_maxima.is_empty());
            }
            st = next;
        }
        let dec = daily_max_vector(&executed, &s.grid, 1).unwrap();
        assert_eq!(st.month_daily_maxima, dec);
        assert_eq!(st.today_running_max, None);
    }

    #[test]
    fn update_rejects_bad_actions() {
        let s = synth_scenario(&SynthSpec::default()).unwrap();
        let st = MpcState::initial(&s);
        let l = s.load[0];
        let bad_balance = Action { p: l + 1.0, c: 0.0, d: 0.0 };
        assert!(update_state(&st, &bad_balance, l, &s.grid, &s.storage, 10.0).is_err());
        let over = Action { p: 11.0, c: 11.0 - l, d: 0.0 };
        assert!(update_state(&st, &over, l, &s.grid, &s.storage, 10.0).is_err());
        let zero = Action { p: 0.0, c: 0.0, d: l };
        let drained = MpcState { q: 0.0, ..st };
        assert!(update_state(&drained, &zero, l, &s.grid, &s.storage, 10.0).is_err() || l == 0.0);
    }

    #[test]
    fn floor_prunes_low_tiers() {
        let s = synth_scenario(&SynthSpec::default()).unwrap();
        let st = MpcState {
            t: 2,
            q: s.storage.q_init,
            month_daily_maxima: vec![7.0],
            today_running_max: Some(1.0),
        };
        let opts = MpcOptions { horizon: 4, diagnostics: true, ..Default::default() };
        let (_, d) = mpc_step(&st, &s, &OracleForecaster::new(&s), &opts).unwrap();
        // surrogate N = 1 with a realized 7 kW day puts the month in tier 3
        assert_eq!(d.floor_tier, 3);
        assert!(d.outcomes.iter().all(|o| o.tiers[0] >= 3));
        assert_eq!(d.tiers[0], 3);
    }

    #[test]
    fn oracle_full_horizon_recovers_prescient() {
        for seed in 0..3 {
            let s = synth_scenario(&SynthSpec { seed, ..Default::default() }).unwrap();
            let pres = solve_prescient(&s, &PrescientOptions::default()).unwrap();
            let opts = MpcOptions {
                horizon: s.periods(),
                surrogate_n: s.peak.n_days(),
                ..Default::default()
            };
            let tr = run_mpc(&s, &OracleForecaster::new(&s), &opts).unwrap();
            let p_cost = evaluate(&pres.p, &s).unwrap().total();
            let rel = (tr.report.total() - p_cost).abs() / p_cost;
            assert!(rel < 1e-4, "seed {seed}: mpc {} vs prescient {p_cost}", tr.report.total());
        }
    }

    #[test]
    fn persistence_run_is_feasible_and_bounded() {
        let s = synth_scenario(&SynthSpec { seed: 11, ..Default::default() }).unwrap();
        let opts = MpcOptions { horizon: 8, ..Default::default() };
        let tr = run_mpc(&s, &PersistenceForecaster, &opts).unwrap();
        let pres = solve_prescient(&s, &PrescientOptions::default()).unwrap();
        assert!(pres.total <= tr.report.total() + 1e-6);
        for t in 0..s.periods() {
            assert!((tr.p[t] + tr.d[t] - tr.c[t] - s.load[t]).abs() <= 1e-6);
            let q = step_storage(tr.q[t], tr.c[t], tr.d[t], &s.storage, 1.0);
            assert_eq!(q, tr.q[t + 1]);
        }
        assert_eq!(tr.steps.len(), s.periods());
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let s = synth_scenario(&SynthSpec { seed: 4, ..Default::default() }).unwrap();
        let run = |execution| {
            let opts = MpcOptions { horizon: 12, execution, ..Default::default() };
            run_mpc(&s, &PersistenceForecaster, &opts).unwrap()
        };
        let a = run(Execution::Sequential);
        let b = run(Execution::Parallel);
        assert_eq!(a.p, b.p);
        assert_eq!(a.tier_pairs().collect::<Vec<_>>(), b.tier_pairs().collect::<Vec<_>>());
    }
}
