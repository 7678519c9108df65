//! Prescient (perfect-foresight) optimum over all per-month tier assignments.
//!
//! Fixing every month's tier turns the problem into an LP, so the global
//! optimum is the best "LP energy cost + Σ β" over the `L^K` assignments.
//! [`solve_prescient`] finds it by best-first branch-and-bound over months in
//! calendar order; [`enumerate_exact`] tries every assignment and serves as the
//! verification oracle.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::accounting::baseline_no_storage;
use crate::domain::{Scenario, StorageParams};
use crate::exec::Execution;
use crate::lp::{build_flow_lp, Boundary, FlowOptions, FlowPlan, FlowProblem, TierChoice};
use crate::peak_tariff::{daily_max_vector, monthly_peak_metric, tier_of};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PrescientOptions {
    pub execution: Execution,
    pub flow: FlowOptions,
    /// Stop early and return the incumbent with a gap report.
    pub time_budget: Option<Duration>,
    /// Largest `L^K` that [`enumerate_exact`] accepts.
    pub enumeration_cap: usize,
}

impl Default for PrescientOptions {
    fn default() -> Self {
        PrescientOptions {
            execution: Execution::default(),
            flow: FlowOptions::default(),
            time_budget: None,
            enumeration_cap: 10_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub nodes: usize,
    pub lps: usize,
    pub wall_time_s: f64,
    /// Lower bound of the root relaxation.
    pub root_bound: f64,
    /// Relative gap between incumbent and best open bound (0 when exact).
    pub gap: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub p: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub q: Vec<f64>,
    /// 1-based tier per month.
    pub tiers: Vec<usize>,
    pub energy_cost: f64,
    pub peak_cost: f64,
    pub total: f64,
    pub stats: SolveStats,
}

struct Solver<'a> {
    s: &'a Scenario,
    price: Vec<f64>,
    boundary: Boundary,
    opts: &'a PrescientOptions,
    months: usize,
}

#[derive(Debug, Clone)]
struct Leaf {
    total: f64,
    tiers: Vec<usize>,
    plan: FlowPlan,
}

impl<'a> Solver<'a> {
    fn new(s: &'a Scenario, opts: &'a PrescientOptions) -> Result<Self> {
        s.ensure_valid()?;
        let price = (0..s.periods()).map(|t| s.prices.total(t)).collect();
        Ok(Solver {
            s,
            price,
            boundary: Boundary {
                q_start: s.storage.q_init,
                q_end: Some(s.storage.q_final),
                ..Boundary::default()
            },
            opts,
            months: s.grid.num_months(),
        })
    }

    fn solve(&self, assignment: &[TierChoice]) -> Result<Option<FlowPlan>> {
        let prob = FlowProblem {
            grid: &self.s.grid,
            start: 0,
            load: &self.s.load,
            price: &self.price,
            storage: &self.s.storage,
            max_power: self.s.grid_params.max_power,
            schedule: &self.s.peak,
            n_days: self.s.peak.n_days(),
            boundary: &self.boundary,
        };
        build_flow_lp(&prob, assignment, &self.opts.flow)?.solve()
    }

    fn solve_prefix(&self, prefix: &[usize]) -> Result<Option<FlowPlan>> {
        let mut a: Vec<TierChoice> = prefix.iter().map(|&j| TierChoice::Tier(j)).collect();
        a.resize(self.months, TierChoice::Unconstrained);
        self.solve(&a)
    }

    fn beta_sum(&self, tiers: &[usize]) -> f64 {
        tiers.iter().map(|&j| self.s.peak.cost_of_tier(j)).sum()
    }

    /// Relaxation bound: unassigned months are charged the cheapest tier.
    fn bound(&self, plan: &FlowPlan, prefix: &[usize]) -> f64 {
        plan.energy_cost
            + self.beta_sum(prefix)
            + (self.months - prefix.len()) as f64 * self.s.peak.costs()[0]
    }

    fn month_metrics(&self, p: &[f64]) -> Result<Vec<f64>> {
        let p_max = self.s.grid_params.max_power;
        let clamped: Vec<f64> = p.iter().map(|v| v.clamp(0.0, p_max)).collect();
        (0..self.months)
            .map(|k| monthly_peak_metric(&daily_max_vector(&clamped, &self.s.grid, k)?, self.s.peak.n_days()))
            .collect()
    }

    fn result(&self, leaf: Leaf, stats: SolveStats) -> PlanResult {
        let peak_cost = self.beta_sum(&leaf.tiers);
        PlanResult {
            p: leaf.plan.p,
            c: leaf.plan.c,
            d: leaf.plan.d,
            q: leaf.plan.q,
            energy_cost: leaf.plan.energy_cost,
            peak_cost,
            total: leaf.plan.energy_cost + peak_cost,
            tiers: leaf.tiers,
            stats,
        }
    }
}

fn tie_tol(v: f64) -> f64 {
    1e-9 * v.abs().max(1.0)
}

/// Lower cost wins; within tolerance, the lexicographically smaller tier vector.
fn better(total: f64, tiers: &[usize], than: &Leaf) -> bool {
    let tol = tie_tol(than.total);
    total < than.total - tol || (total <= than.total + tol && tiers < than.tiers.as_slice())
}

struct Node {
    bound: f64,
    prefix: Vec<usize>,
    z: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // max-heap: smallest bound first, then lexicographically smallest prefix
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.prefix.cmp(&self.prefix))
    }
}

/// Globally optimal plan by best-first branch-and-bound over tier assignments.
pub fn solve_prescient(s: &Scenario, opts: &PrescientOptions) -> Result<PlanResult> {
    let started = Instant::now();
    let solver = Solver::new(s, opts)?;
    let k = solver.months;
    let levels = s.peak.levels();
    let top = s.grid_params.max_power;
    let mut stats = SolveStats::default();

    let root = solver.solve_prefix(&[])?.ok_or_else(|| {
        Error::infeasible(
            "prescient",
            "no schedule satisfies storage and terminal-charge constraints, even without peak limits",
        )
    })?;
    stats.lps += 1;
    stats.root_bound = solver.bound(&root, &[]);
    let root_z = solver.month_metrics(&root.p)?;

    // incumbent: round every month up to the tier its relaxed metric lands in
    let mut seed: Vec<usize> = root_z
        .iter()
        .map(|&z| tier_of(z.min(top), &s.peak))
        .collect::<Result<_>>()?;
    let mut incumbent = loop {
        stats.lps += 1;
        if let Some(plan) = solver.solve_prefix(&seed)? {
            break Leaf {
                total: plan.energy_cost + solver.beta_sum(&seed),
                tiers: seed,
                plan,
            };
        }
        if seed.iter().all(|&j| j == levels) {
            return Err(Error::infeasible("prescient", "top-tier assignment is infeasible"));
        }
        seed.iter_mut().for_each(|j| *j = (*j + 1).min(levels));
    };

    let prune = |bound: f64, prefix: &[usize], inc: &Leaf| {
        let tol = tie_tol(inc.total);
        bound > inc.total + tol
            || (bound >= inc.total - tol && prefix > &inc.tiers[..prefix.len()])
    };

    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: stats.root_bound,
        prefix: Vec::new(),
        z: root_z,
    });
    let mut exact = true;
    while let Some(node) = heap.pop() {
        if let Some(budget) = opts.time_budget {
            if started.elapsed() > budget {
                heap.push(node);
                exact = false;
                break;
            }
        }
        if prune(node.bound, &node.prefix, &incumbent) {
            continue;
        }
        stats.nodes += 1;
        let month = node.prefix.len();
        let relaxed_tier = tier_of(node.z[month].min(top), &s.peak)?;
        let child_prefix = |tier: usize| {
            let mut p = node.prefix.clone();
            p.push(tier);
            p
        };

        let up: Vec<usize> = (relaxed_tier..=levels).collect();
        let mut children: Vec<(usize, Option<FlowPlan>)> = opts
            .execution
            .map(&up, |&tier| solver.solve_prefix(&child_prefix(tier)).map(|p| (tier, p)))
            .into_iter()
            .collect::<Result<_>>()?;
        stats.lps += up.len();
        // lower tiers: once one is infeasible, all below it are too
        for tier in (1..relaxed_tier).rev() {
            stats.lps += 1;
            match solver.solve_prefix(&child_prefix(tier))? {
                Some(plan) => children.push((tier, Some(plan))),
                None => break,
            }
        }

        for (tier, plan) in children {
            let Some(plan) = plan else { continue };
            let prefix = child_prefix(tier);
            let bound = solver.bound(&plan, &prefix);
            if prefix.len() == k {
                if better(bound, &prefix, &incumbent) {
                    incumbent = Leaf {
                        total: bound,
                        tiers: prefix,
                        plan,
                    };
                }
            } else if !prune(bound, &prefix, &incumbent) {
                let z = solver.month_metrics(&plan.p)?;
                heap.push(Node { bound, prefix, z });
            }
        }
    }

    stats.exact = exact;
    stats.gap = if exact {
        0.0
    } else {
        let open = heap
            .iter()
            .map(|n| n.bound)
            .fold(f64::INFINITY, f64::min)
            .min(incumbent.total);
        ((incumbent.total - open) / incumbent.total.abs().max(1e-12)).max(0.0)
    };
    stats.wall_time_s = started.elapsed().as_secs_f64();
    Ok(solver.result(incumbent, stats))
}

/// Exhaustive minimum over all `L^K` tier assignments.
pub fn enumerate_exact(s: &Scenario, opts: &PrescientOptions) -> Result<PlanResult> {
    let started = Instant::now();
    let solver = Solver::new(s, opts)?;
    let k = solver.months;
    let levels = s.peak.levels();
    let count = (levels as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if count > opts.enumeration_cap as u128 {
        return Err(Error::invalid(
            "prescient",
            format!(
                "exhaustive enumeration needs {levels}^{k} LPs, cap is {}",
                opts.enumeration_cap
            ),
        ));
    }
    // lexicographic order
    let assignments: Vec<Vec<usize>> = (0..count as usize)
        .map(|mut idx| {
            let mut a = vec![1; k];
            for slot in a.iter_mut().rev() {
                *slot = idx % levels + 1;
                idx /= levels;
            }
            a
        })
        .collect();
    let plans = opts
        .execution
        .map(&assignments, |a| solver.solve_prefix(a));

    let mut best: Option<Leaf> = None;
    for (tiers, plan) in assignments.into_iter().zip(plans) {
        let Some(plan) = plan? else { continue };
        let total = plan.energy_cost + solver.beta_sum(&tiers);
        let replace = match &best {
            None => true,
            Some(b) => total < b.total - tie_tol(b.total),
        };
        if replace {
            best = Some(Leaf { total, tiers, plan });
        }
    }
    let best = best.ok_or_else(|| Error::infeasible("prescient", "every tier assignment is infeasible"))?;
    let stats = SolveStats {
        nodes: count as usize,
        lps: count as usize,
        wall_time_s: started.elapsed().as_secs_f64(),
        root_bound: f64::NAN,
        gap: 0.0,
        exact: true,
    };
    Ok(solver.result(best, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub capacity: f64,
    pub total: f64,
    pub savings_percent: f64,
}

/// How charge/discharge rates follow capacity in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateScaling {
    /// Keep the scenario's `C` and `D`.
    #[default]
    Hold,
    /// `C = D = capacity · factor` (e.g. 0.5 for a two-hour battery).
    Proportional(f64),
}

/// Prescient total and savings versus no storage for each capacity, with
/// `q_init = q_final = Q / 2`.
pub fn sweep_capacity(
    s: &Scenario,
    capacities: &[f64],
    rates: RateScaling,
    opts: &PrescientOptions,
) -> Result<Vec<SweepPoint>> {
    if let Some(q) = capacities.iter().find(|q| !(**q >= 0.0 && q.is_finite())) {
        return Err(Error::invalid("prescient", format!("capacity {q} must be >= 0")));
    }
    let baseline = baseline_no_storage(s)?.total();
    let runs = opts.execution.map(capacities, |&q| {
        let (c, d) = match rates {
            RateScaling::Hold => (s.storage.max_charge, s.storage.max_discharge),
            RateScaling::Proportional(f) => (q * f, q * f),
        };
        let storage = StorageParams {
            capacity: q,
            max_charge: c,
            max_discharge: d,
            q_init: q / 2.0,
            q_final: q / 2.0,
            ..s.storage
        };
        solve_prescient(&s.with_storage(storage), opts).map(|r| SweepPoint {
            capacity: q,
            total: r.total,
            savings_percent: 100.0 * (baseline - r.total) / baseline,
        })
    });
    runs.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accounting::evaluate;
    use crate::peak_tariff::TieredPeakSchedule;
    use crate::synth::{synth_scenario, SynthSpec};

    fn small(seed: u64) -> Scenario {
        synth_scenario(&SynthSpec { seed, ..Default::default() }).unwrap()
    }

    #[test]
    fn matches_enumeration_on_small_instances() {
        for seed in 0..6 {
            let s = small(seed);
            let opts = PrescientOptions::default();
            let bb = solve_prescient(&s, &opts).unwrap();
            let ex = enumerate_exact(&s, &opts).unwrap();
            assert!((bb.total - ex.total).abs() < 1e-6, "seed {seed}: {} vs {}", bb.total, ex.total);
            assert!(bb.stats.root_bound <= bb.total + 1e-9);
            assert!(bb.stats.exact);
        }
    }

    #[test]
    fn plan_is_consistent() {
        let s = small(3);
        let r = solve_prescient(&s, &PrescientOptions::default()).unwrap();
        assert!((r.total - r.energy_cost - r.peak_cost).abs() < 1e-9);
        let report = evaluate(&r.p, &s).unwrap();
        for (m, &assigned) in report.months.iter().zip(&r.tiers) {
            assert!(m.tier <= assigned);
        }
        assert!((r.q[0] - s.storage.q_init).abs() < 1e-9);
        assert!((r.q[s.periods()] - s.storage.q_final).abs() < 1e-7);
    }

    #[test]
    fn useless_storage_and_free_energy() {
        let mut s = small(1);
        s.prices.tou.iter_mut().for_each(|v| *v = 0.0);
        s.prices.day_ahead.iter_mut().for_each(|v| *v = 0.0);
        s.storage = StorageParams::none();
        let r = solve_prescient(&s, &PrescientOptions::default()).unwrap();
        let base = baseline_no_storage(&s).unwrap();
        assert!((r.total - base.totals.peak).abs() < 1e-9);
        for t in 0..s.periods() {
            assert!((r.p[t] - s.load[t]).abs() < 1e-7);
        }
    }

    #[test]
    fn single_tier_single_month() {
        let mut s = synth_scenario(&SynthSpec { months: 1, levels: 1, ..Default::default() }).unwrap();
        s.peak = TieredPeakSchedule::new(vec![5.0], vec![], 10.0, 2).unwrap();
        let bb = solve_prescient(&s, &PrescientOptions::default()).unwrap();
        let ex = enumerate_exact(&s, &PrescientOptions::default()).unwrap();
        assert_eq!(bb.tiers, vec![1]);
        assert!((bb.total - ex.total).abs() < 1e-9);
    }

    #[test]
    fn enumeration_cap() {
        let s = small(0);
        let opts = PrescientOptions {
            enumeration_cap: 8,
            ..Default::default()
        };
        assert!(enumerate_exact(&s, &opts).is_err());
    }

    #[test]
    fn monotone_in_schedule() {
        let s = small(4);
        let opts = PrescientOptions::default();
        let base = solve_prescient(&s, &opts).unwrap().total;
        let costs = s.peak.costs().to_vec();
        let th = s.peak.thresholds().to_vec();
        // higher threshold -> not more expensive
        let mut looser = s.clone();
        looser.peak = TieredPeakSchedule::new(costs.clone(), vec![th[0] + 0.5, th[1]], 10.0, 2).unwrap();
        assert!(solve_prescient(&looser, &opts).unwrap().total <= base + 1e-9);
        // higher beta -> not cheaper
        let mut dearer = s.clone();
        dearer.peak = TieredPeakSchedule::new(vec![costs[0] + 1.0, costs[1], costs[2]], th[..2].to_vec(), 10.0, 2).unwrap();
        assert!(solve_prescient(&dearer, &opts).unwrap().total >= base - 1e-9);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let s = small(9);
        let seq = solve_prescient(&s, &PrescientOptions { execution: Execution::Sequential, ..Default::default() }).unwrap();
        let par = solve_prescient(&s, &PrescientOptions { execution: Execution::Parallel, ..Default::default() }).unwrap();
        assert_eq!(seq.tiers, par.tiers);
        assert_eq!(seq.total, par.total);
    }

    #[test]
    fn sweep_starts_at_baseline() {
        let s = small(2);
        let pts = sweep_capacity(&s, &[0.0, 3.0, 6.0], RateScaling::Hold, &PrescientOptions::default()).unwrap();
        assert!(pts[0].savings_percent.abs() < 1e-6, "{:?}", pts[0]);
        assert!(pts[1].total <= pts[0].total + 1e-9);
        assert!(pts[2].total <= pts[1].total + 1e-9);
        assert!(sweep_capacity(&s, &[-1.0], RateScaling::Hold, &PrescientOptions::default()).is_err());
    }

    #[test]
    fn infeasible_scenario_reports_error() {
        let mut s = small(0);
        // terminal charge unreachable: full battery at the end with no charging
        s.storage.max_charge = 0.0;
        s.storage.q_final = s.storage.capacity;
        let err = solve_prescient(&s, &PrescientOptions::default()).unwrap_err();
        assert!(err.is_infeasible(), "{err}");
    }

    #[test]
    fn time_budget_returns_incumbent() {
        let s = small(5);
        let opts = PrescientOptions {
            time_budget: Some(Duration::ZERO),
            ..Default::default()
        };
        let r = solve_prescient(&s, &opts).unwrap();
        assert!(!r.stats.exact);
        assert!(r.stats.gap >= 0.0);
        let exact = solve_prescient(&s, &PrescientOptions::default()).unwrap();
        assert!(r.total >= exact.total - 1e-9);
    }
}
