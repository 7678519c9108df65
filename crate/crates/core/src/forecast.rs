//! Baseline-residual forecasting.
//!
//! A forecast is `x̂_{τ|t} = b_τ + r̂_{τ|t}`: a multi-sine baseline `b` that
//! depends only on the absolute hour `τ`, plus an autoregressive prediction
//! of the next `L_out` residuals from the last `M_in` ones. Both parts are
//! fitted by pinball (quantile) regression with ridge penalties; each fit is a
//! convex QP (pinball epigraph + diagonal quadratic) solved by an interior
//! point method.
//!
//! Hour indices are absolute: hours since 1970-01-01T00:00 (naive local time),
//! see [`hour_index`]. This keeps yearly and weekly phases consistent between
//! training and use.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus,
};
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::{Error, Result};

/// Serialization format version of [`ForecastModel`] documents.
pub const MODEL_VERSION: u32 = 1;

/// Hours since 1970-01-01T00:00.
pub fn hour_index(ts: NaiveDateTime) -> i64 {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time");
    (ts - epoch).num_hours()
}

/// Pinball loss `max(η u, (η − 1) u)` of a residual `u = actual − predicted`:
/// nonnegative, zero at 0, minimized in expectation by the η-quantile.
pub fn pinball_loss(u: f64, eta: f64) -> f64 {
    (eta * u).max((eta - 1.0) * u)
}

/// Periods (hours) of the default baseline: 4 harmonics each of the daily,
/// weekly and yearly cycle.
pub fn default_periods() -> Vec<f64> {
    [24.0, 168.0, 8760.0]
        .iter()
        .flat_map(|&base| (1..=4).map(move |k| base / k as f64))
        .collect()
}

/// Ridge weights: the square of the harmonic number within each cycle.
pub fn default_weights() -> Vec<f64> {
    (0..3).flat_map(|_| (1..=4).map(|k| (k * k) as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub periods: Vec<f64>,
    pub weights: Vec<f64>,
    pub quantile: f64,
    pub ridge: f64,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        BaselineSpec {
            periods: default_periods(),
            weights: default_weights(),
            quantile: 0.5,
            ridge: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub intercept: f64,
    pub periods: Vec<f64>,
    pub sin: Vec<f64>,
    pub cos: Vec<f64>,
    pub weights: Vec<f64>,
    pub quantile: f64,
    pub ridge: f64,
}

impl BaselineModel {
    pub fn intercept_only(value: f64) -> Self {
        BaselineModel {
            intercept: value,
            periods: Vec::new(),
            sin: Vec::new(),
            cos: Vec::new(),
            weights: Vec::new(),
            quantile: 0.5,
            ridge: 0.0,
        }
    }

    pub fn value_at(&self, hour: i64) -> f64 {
        let t = hour as f64;
        let mut v = self.intercept;
        for k in 0..self.periods.len() {
            let w = 2.0 * PI * t / self.periods[k];
            v += self.sin[k] * w.sin() + self.cos[k] * w.cos();
        }
        v
    }

    /// Ridge-penalized pinball objective of this model on a series.
    pub fn objective(&self, first_hour: i64, history: &[f64]) -> f64 {
        let fit: f64 = history
            .iter()
            .enumerate()
            .map(|(i, &x)| pinball_loss(x - self.value_at(first_hour + i as i64), self.quantile))
            .sum();
        let pen: f64 = (0..self.periods.len())
            .map(|k| self.weights[k] * (self.sin[k].powi(2) + self.cos[k].powi(2)))
            .sum();
        fit + self.ridge * pen
    }
}

/// Baseline values at the given absolute hours.
pub fn predict_baseline(model: &BaselineModel, hours: impl IntoIterator<Item = i64>) -> Vec<f64> {
    hours.into_iter().map(|h| model.value_at(h)).collect()
}

/// Minimizes `Σ_i pinball(y_i − row_i · w) + Σ_j penalty_j w_j²`, the usual quantile
/// regression orientation: `η = 0.9` puts 90% of the samples below the fit.
///
/// `rows` is dense `n × p`. Returns the `p` coefficients.
pub(crate) fn quantile_ridge(
    rows: &[Vec<f64>],
    y: &[f64],
    eta: f64,
    penalty: &[f64],
) -> Result<Vec<f64>> {
    let n = rows.len();
    let p = penalty.len();
    if y.len() != n || rows.iter().any(|r| r.len() != p) {
        return Err(Error::invalid("forecast", "design matrix shape mismatch"));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid("forecast", format!("quantile {eta} outside [0, 1]")));
    }
    // variables: [w (p), s (n)]; minimize Σ s + wᵀ diag(penalty) w
    // s_i ≥ η (y_i − r_i·w),  s_i ≥ (η − 1)(y_i − r_i·w)
    let nv = p + n;
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for (j, &pen) in penalty.iter().enumerate() {
        if pen > 0.0 {
            pi.push(j);
            pj.push(j);
            pv.push(2.0 * pen);
        }
    }
    let pmat = CscMatrix::new_from_triplets(nv, nv, pi, pj, pv);
    let mut q = vec![0.0; p];
    q.extend(std::iter::repeat_n(1.0, n));

    let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::with_capacity(2 * n);
    for (i, (row, &yi)) in rows.iter().zip(y).enumerate() {
        for (k, coef) in [eta, eta - 1.0].into_iter().enumerate() {
            let r = 2 * i + k;
            for (j, &x) in row.iter().enumerate() {
                if x != 0.0 && coef != 0.0 {
                    ai.push(r);
                    aj.push(j);
                    av.push(-coef * x);
                }
            }
            ai.push(r);
            aj.push(p + i);
            av.push(-1.0);
            b.push(-coef * yi);
        }
    }
    let amat = CscMatrix::new_from_triplets(2 * n, nv, ai, aj, av);
    let cones = [NonnegativeConeT(2 * n)];
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-9)
        .tol_gap_rel(1e-9)
        .tol_feas(1e-9)
        .max_iter(500)
        .build()
        .map_err(|e| Error::solver("forecast", format!("QP settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(&pmat, &q, &amat, &b, &cones, settings)
        .map_err(|e| Error::solver("forecast", format!("QP setup: {e:?}")))?;
    solver.solve();
    match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            Ok(solver.solution.x[..p].to_vec())
        }
        other => Err(Error::solver("forecast", format!("pinball QP ended with {other:?}"))),
    }
}

/// Fits intercept and sin/cos pairs to `history`, whose first sample is at
/// absolute hour `first_hour`. The intercept is not penalized.
pub fn fit_baseline(first_hour: i64, history: &[f64], spec: &BaselineSpec) -> Result<BaselineModel> {
    let k = spec.periods.len();
    if spec.weights.len() != k {
        return Err(Error::invalid(
            "forecast",
            format!("{} periods but {} harmonic weights", k, spec.weights.len()),
        ));
    }
    if spec.weights.iter().any(|&w| !(w > 0.0)) || spec.periods.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::invalid("forecast", "periods and weights must be positive"));
    }
    if !(spec.ridge > 0.0) {
        return Err(Error::invalid("forecast", "ridge weight must be positive"));
    }
    if history.len() < 2 * (2 * k + 1) {
        return Err(Error::invalid(
            "forecast",
            format!("baseline fit needs at least {} samples, got {}", 2 * (2 * k + 1), history.len()),
        ));
    }
    if history.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("forecast", "history contains non-finite values"));
    }
    let rows: Vec<Vec<f64>> = (0..history.len())
        .map(|i| {
            let t = (first_hour + i as i64) as f64;
            let mut r = Vec::with_capacity(2 * k + 1);
            r.push(1.0);
            for &per in &spec.periods {
                let w = 2.0 * PI * t / per;
                r.push(w.sin());
                r.push(w.cos());
            }
            r
        })
        .collect();
    let mut penalty = vec![0.0];
    for &w in &spec.weights {
        penalty.push(spec.ridge * w);
        penalty.push(spec.ridge * w);
    }
    let coef = quantile_ridge(&rows, history, spec.quantile, &penalty)?;
    Ok(BaselineModel {
        intercept: coef[0],
        sin: (0..k).map(|i| coef[1 + 2 * i]).collect(),
        cos: (0..k).map(|i| coef[2 + 2 * i]).collect(),
        periods: spec.periods.clone(),
        weights: spec.weights.clone(),
        quantile: spec.quantile,
        ridge: spec.ridge,
    })
}

/// `Γ` maps the last `m_in` residuals (oldest first) to the next `l_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArResidualModel {
    pub m_in: usize,
    pub l_out: usize,
    /// `l_out` rows of `m_in` coefficients.
    pub gamma: Vec<Vec<f64>>,
    pub quantile: f64,
    pub ridge: f64,
}

impl ArResidualModel {
    pub fn zero(m_in: usize, l_out: usize) -> Self {
        ArResidualModel {
            m_in,
            l_out,
            gamma: vec![vec![0.0; m_in]; l_out],
            quantile: 0.5,
            ridge: 0.0,
        }
    }

    /// `Γ r` for a window of the last `m_in` residuals.
    pub fn predict(&self, recent: &[f64]) -> Vec<f64> {
        self.gamma
            .iter()
            .map(|row| row.iter().zip(recent).map(|(g, r)| g * r).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArSpec {
    pub m_in: usize,
    pub l_out: usize,
    pub quantile: f64,
    pub ridge: f64,
}

impl Default for ArSpec {
    fn default() -> Self {
        ArSpec {
            m_in: 24,
            l_out: 23,
            quantile: 0.5,
            ridge: 1.0,
        }
    }
}

/// Fits each output row of `Γ` as an independent quantile ridge regression.
pub fn fit_ar_residual(residuals: &[f64], spec: &ArSpec, execution: Execution) -> Result<ArResidualModel> {
    let (m, l) = (spec.m_in, spec.l_out);
    if m == 0 || l == 0 {
        return Err(Error::invalid("forecast", "AR dimensions must be positive"));
    }
    if residuals.len() <= m + l {
        return Err(Error::invalid(
            "forecast",
            format!(
                "AR fit needs more than {} residuals, got {}",
                m + l,
                residuals.len()
            ),
        ));
    }
    if !(spec.ridge > 0.0) {
        return Err(Error::invalid("forecast", "ridge weight must be positive"));
    }
    // origins t with a full input window and all l targets available
    let origins: Vec<usize> = (m - 1..residuals.len() - l).collect();
    let rows: Vec<Vec<f64>> = origins
        .iter()
        .map(|&t| residuals[t + 1 - m..=t].to_vec())
        .collect();
    let penalty = vec![spec.ridge; m];
    let horizons: Vec<usize> = (1..=l).collect();
    let gamma = execution
        .map(&horizons, |&k| {
            let y: Vec<f64> = origins.iter().map(|&t| residuals[t + k]).collect();
            quantile_ridge(&rows, &y, spec.quantile, &penalty)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ArResidualModel {
        m_in: m,
        l_out: l,
        gamma,
        quantile: spec.quantile,
        ridge: spec.ridge,
    })
}

/// Forecast of length `h` made at absolute hour `t_hour`.
///
/// `window` holds the last `m_in` observations ending with `x_t`. The first
/// value is `x_t` itself; the next `l_out` are baseline plus the AR residual
/// prediction; later values are baseline only.
pub fn forecast(
    baseline: &BaselineModel,
    ar: &ArResidualModel,
    window: &[f64],
    t_hour: i64,
    h: usize,
) -> Result<Vec<f64>> {
    if window.len() != ar.m_in {
        return Err(Error::invalid(
            "forecast",
            format!("history window has {} values, model needs {}", window.len(), ar.m_in),
        ));
    }
    if h == 0 {
        return Ok(Vec::new());
    }
    let m = ar.m_in as i64;
    let residuals: Vec<f64> = window
        .iter()
        .enumerate()
        .map(|(i, &x)| x - baseline.value_at(t_hour - m + 1 + i as i64))
        .collect();
    let ahead = ar.predict(&residuals);
    let mut out = Vec::with_capacity(h);
    out.push(*window.last().expect("non-empty window"));
    for k in 1..h {
        let tau = t_hour + k as i64;
        let r = ahead.get(k - 1).copied().unwrap_or(0.0);
        out.push(baseline.value_at(tau) + r);
    }
    Ok(out)
}

/// A fitted baseline-residual model for one target series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub version: u32,
    pub target: String,
    pub baseline: BaselineModel,
    pub ar: ArResidualModel,
}

impl ForecastModel {
    /// Fits baseline then AR residuals on an hourly history.
    pub fn fit(
        target: &str,
        first_hour: i64,
        history: &[f64],
        baseline: &BaselineSpec,
        ar: &ArSpec,
        execution: Execution,
    ) -> Result<Self> {
        let base = fit_baseline(first_hour, history, baseline)?;
        let residuals: Vec<f64> = history
            .iter()
            .enumerate()
            .map(|(i, &x)| x - base.value_at(first_hour + i as i64))
            .collect();
        let ar = fit_ar_residual(&residuals, ar, execution)?;
        Ok(ForecastModel {
            version: MODEL_VERSION,
            target: target.to_string(),
            baseline: base,
            ar,
        })
    }

    pub fn forecast(&self, window: &[f64], t_hour: i64, h: usize) -> Result<Vec<f64>> {
        forecast(&self.baseline, &self.ar, window, t_hour, h)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let model: ForecastModel = serde_json::from_str(&text).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        if model.version != MODEL_VERSION {
            return Err(Error::invalid(
                "forecast",
                format!("model version {} unsupported (expected {MODEL_VERSION})", model.version),
            ));
        }
        Ok(model)
    }
}

/// Mean pinball loss of `predicted` against `actual`.
pub fn mean_pinball(predicted: &[f64], actual: &[f64], eta: f64) -> f64 {
    let n = predicted.len().min(actual.len()).max(1);
    predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| pinball_loss(a - p, eta))
        .sum::<f64>()
        / n as f64
}

/// Picks the baseline ridge weight with the lowest held-out pinball loss.
/// The last `holdout` samples of `history` are used for validation.
pub fn select_baseline_ridge(
    first_hour: i64,
    history: &[f64],
    holdout: usize,
    spec: &BaselineSpec,
    candidates: &[f64],
) -> Result<(f64, f64)> {
    if holdout == 0 || holdout >= history.len() || candidates.is_empty() {
        return Err(Error::invalid("forecast", "bad holdout split or empty candidate list"));
    }
    let split = history.len() - holdout;
    let mut best = (f64::NAN, f64::INFINITY);
    for &ridge in candidates {
        let model = fit_baseline(
            first_hour,
            &history[..split],
            &BaselineSpec {
                ridge,
                ..spec.clone()
            },
        )?;
        let pred = predict_baseline(&model, (split..history.len()).map(|i| first_hour + i as i64));
        let loss = mean_pinball(&pred, &history[split..], spec.quantile);
        if loss < best.1 {
            best = (ridge, loss);
        }
    }
    Ok(best)
}
