//! Home energy management with dynamic tariffs and tiered monthly peak-power
//! charges.
//!
//! The crate plans battery charge/discharge for a home with a (net) load, a
//! storage device and a grid connection. Three policies are provided:
//!
//! * [`prescient`]: the exact optimum with perfect foresight, found by
//!   branch-and-bound over per-month tier assignments. This is a bound on what
//!   any implementable policy can achieve.
//! * [`mpc`]: a receding-horizon controller that only uses information
//!   available at each hour, planning with tier-enumerated LPs.
//! * the no-storage baseline in [`accounting`].
//!
//! The [`forecast`] module supplies the baseline-residual forecasts the
//! controller consumes, and [`io`] wires data files and configuration into
//! [`domain::Scenario`]s.
//!
//! Data-parallel inner loops (tier enumeration, branch-and-bound children,
//! capacity sweeps, AR row fits) run on rayon when the `parallel` feature is
//! enabled (the default); see [`exec::Execution`].

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accounting;
pub mod domain;
pub mod error;
pub mod exec;
pub mod forecast;
pub mod io;
pub mod lp;
pub mod mpc;
pub mod peak_tariff;
pub mod prescient;
pub mod synth;

pub use error::{Error, Result};
