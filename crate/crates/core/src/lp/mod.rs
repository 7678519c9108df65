//! Sparse linear programs and the storage-scheduling LP.
//!
//! [`LinearProgram`] is a plain minimization problem with variable bounds and
//! sparse rows. [`solve_lp`] hands it to a revised simplex solver and certifies
//! the returned point against the original data before reporting it optimal.
//! [`flow`] assembles the scheduling LP for a fixed tier assignment.

pub mod flow;

use std::collections::HashSet;
use std::fmt::Write as _;

use microlp::{ComparisonOp, OptimizationDirection, Problem};

use crate::{Error, Result};

pub use flow::{
    build_flow_lp, realized_floor, window_months, Boundary, FlowLp, FlowOptions, FlowPlan, FlowProblem,
    TierChoice, WindowMonth,
};

/// Primal feasibility tolerance, scaled by `1 + ‖b‖∞`.
pub const PRIMAL_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `minimize cᵀx` subject to sparse rows and `lower ≤ x ≤ upper`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    names: Vec<String>,
    rows: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a column and returns its index. Infinite bounds are allowed.
    pub fn add_var(&mut self, name: impl Into<String>, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.names.push(name.into());
        self.objective.len() - 1
    }

    pub fn add_constraint(&mut self, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.rows.push(Constraint { terms, sense, rhs });
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    pub fn rows(&self) -> &[Constraint] {
        &self.rows
    }

    pub fn name(&self, j: usize) -> &str {
        &self.names[j]
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    /// Checks dimensions, finiteness and that names identify columns uniquely.
    pub fn check(&self) -> Result<()> {
        let n = self.num_vars();
        let mut seen = HashSet::with_capacity(n);
        for j in 0..n {
            if !self.objective[j].is_finite() {
                return Err(Error::invalid("lp", format!("objective of {} is not finite", self.names[j])));
            }
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] == f64::INFINITY
                || self.upper[j] == f64::NEG_INFINITY
            {
                return Err(Error::invalid("lp", format!("bad bounds on {}", self.names[j])));
            }
            if !seen.insert(self.names[j].as_str()) {
                return Err(Error::invalid("lp", format!("duplicate column name {}", self.names[j])));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::invalid("lp", format!("row {i} has non-finite rhs")));
            }
            for &(j, a) in &row.terms {
                if j >= n || !a.is_finite() {
                    return Err(Error::invalid("lp", format!("row {i} has a bad term ({j}, {a})")));
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for ((&lo, &hi), &v) in self.lower.iter().zip(&self.upper).zip(x) {
            worst = worst.max(lo - v).max(v - hi);
        }
        for row in &self.rows {
            let lhs: f64 = row.terms.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match row.sense {
                Sense::Eq => (lhs - row.rhs).abs(),
                Sense::Le => lhs - row.rhs,
                Sense::Ge => row.rhs - lhs,
            };
            worst = worst.max(v);
        }
        worst
    }

    fn rhs_norm(&self) -> f64 {
        let rows = self.rows.iter().map(|r| r.rhs.abs());
        let bounds = self
            .lower
            .iter()
            .chain(&self.upper)
            .filter(|b| b.is_finite())
            .map(|b| b.abs());
        rows.chain(bounds).fold(0.0, f64::max)
    }

    /// Writes the problem in CPLEX LP text format for cross-checking with
    /// external solvers.
    pub fn to_lp_format(&self) -> String {
        let mut s = String::from("\\ generated by hems-core\nMinimize\n obj:");
        let mut any = false;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                any = true;
                let _ = write!(s, " {} {} {}", sign(c), c.abs(), self.names[j]);
            }
        }
        if !any {
            let _ = write!(s, " 0 {}", self.names.first().map(String::as_str).unwrap_or("x"));
        }
        s.push_str("\nSubject To\n");
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(s, " r{i}:");
            for &(j, a) in &row.terms {
                let _ = write!(s, " {} {} {}", sign(a), a.abs(), self.names[j]);
            }
            let op = match row.sense {
                Sense::Eq => "=",
                Sense::Le => "<=",
                Sense::Ge => ">=",
            };
            let _ = writeln!(s, " {op} {}", row.rhs);
        }
        s.push_str("Bounds\n");
        for j in 0..self.num_vars() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            let name = &self.names[j];
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) if lo == hi => {
                    let _ = writeln!(s, " {name} = {lo}");
                }
                (true, true) => {
                    let _ = writeln!(s, " {lo} <= {name} <= {hi}");
                }
                (true, false) => {
                    let _ = writeln!(s, " {name} >= {lo}");
                }
                (false, true) => {
                    let _ = writeln!(s, " -inf <= {name} <= {hi}");
                }
                (false, false) => {
                    let _ = writeln!(s, " {name} free");
                }
            }
        }
        s.push_str("End\n");
        s
    }
}

fn sign(v: f64) -> char {
    if v < 0.0 {
        '-'
    } else {
        '+'
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Error(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Largest row or bound violation of `x`, recomputed from the LP data.
    pub primal_residual: f64,
    /// Relative optimality gap reported by the solver (0 at a simplex optimum).
    pub optimality_gap: f64,
}

impl LpSolution {
    fn failed(status: LpStatus) -> Self {
        LpSolution {
            status,
            x: Vec::new(),
            objective: f64::NAN,
            primal_residual: f64::NAN,
            optimality_gap: f64::NAN,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Solves `lp` with a sparse bounded revised simplex.
///
/// An optimal status is only reported when the recomputed primal residual is
/// within `PRIMAL_TOL · (1 + ‖b‖∞)`; anything else is `LpStatus::Error`.
pub fn solve_lp(lp: &LinearProgram) -> LpSolution {
    if let Err(e) = lp.check() {
        return LpSolution::failed(LpStatus::Error(e.to_string()));
    }
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..lp.num_vars())
        .map(|j| problem.add_var(lp.objective[j], (lp.lower[j], lp.upper[j])))
        .collect();
    for row in &lp.rows {
        let op = match row.sense {
            Sense::Eq => ComparisonOp::Eq,
            Sense::Le => ComparisonOp::Le,
            Sense::Ge => ComparisonOp::Ge,
        };
        let terms: Vec<_> = row.terms.iter().map(|&(j, a)| (vars[j], a)).collect();
        problem.add_constraint(terms.as_slice(), op, row.rhs);
    }
    let outcome = match problem.solve() {
        Ok(o) => o,
        Err(microlp::Error::Infeasible) => return LpSolution::failed(LpStatus::Infeasible),
        Err(microlp::Error::Unbounded) => return LpSolution::failed(LpStatus::Unbounded),
        Err(e) => return LpSolution::failed(LpStatus::Error(format!("simplex: {e}"))),
    };
    if !outcome.is_optimal() {
        return LpSolution::failed(LpStatus::Error(format!(
            "simplex stopped early: {:?}",
            outcome.termination_reason()
        )));
    }
    let Some(sol) = outcome.solution() else {
        return LpSolution::failed(LpStatus::Error("simplex stopped without a solution".into()));
    };
    let x: Vec<f64> = vars.iter().map(|&v| sol.var_value(v)).collect();
    let primal_residual = lp.max_violation(&x);
    let tol = PRIMAL_TOL * (1.0 + lp.rhs_norm());
    let objective = lp.objective_value(&x);
    let gap = sol.gap().unwrap_or(f64::NAN);
    if !(primal_residual <= tol) || !objective.is_finite() {
        return LpSolution {
            status: LpStatus::Error(format!(
                "primal residual {primal_residual:.3e} exceeds tolerance {tol:.3e}"
            )),
            x,
            objective,
            primal_residual,
            optimality_gap: gap,
        };
    }
    LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        primal_residual,
        optimality_gap: gap,
    }
}

/// Adds the epigraph constraints for `ψ(m, N) ≤ N · bound`:
/// a free scalar `t` and `v ≥ 0` with `v_i ≥ m_i − t` and `N t + Σ v ≤ N bound`.
pub fn encode_sum_largest_leq(
    lp: &mut LinearProgram,
    m_vars: &[usize],
    n: usize,
    bound: f64,
    tag: &str,
) -> Result<()> {
    if n == 0 || n > m_vars.len() {
        return Err(Error::invalid(
            "lp",
            format!("sum-largest epigraph needs 1 <= N <= {}, got {n}", m_vars.len()),
        ));
    }
    let t = lp.add_var(format!("{tag}_t"), 0.0, f64::NEG_INFINITY, f64::INFINITY);
    let mut top = Vec::with_capacity(m_vars.len() + 1);
    top.push((t, n as f64));
    for (i, &m) in m_vars.iter().enumerate() {
        let v = lp.add_var(format!("{tag}_v{i}"), 0.0, 0.0, f64::INFINITY);
        // v - m + t >= 0
        lp.add_constraint(vec![(v, 1.0), (m, -1.0), (t, 1.0)], Sense::Ge, 0.0);
        top.push((v, 1.0));
    }
    lp.add_constraint(top, Sense::Le, n as f64 * bound);
    Ok(())
}
