//! Problem-instance types: calendar, storage and grid parameters, prices and
//! the [`Scenario`] that bundles them.

use std::fmt;
use std::ops::Range;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::peak_tariff::TieredPeakSchedule;
use crate::{Error, Result};

/// Whether a [`TimeGrid`] must cover whole calendar months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MonthPolicy {
    /// Production mode: the horizon starts on the first of a month and ends on
    /// a month boundary.
    #[default]
    Whole,
    /// Test mode: partial months (and a partial final day) are accepted.
    Relaxed,
}

/// One day of the grid: a contiguous run of periods inside one month.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Day {
    pub periods: Range<usize>,
    pub month: usize,
    pub date: NaiveDate,
}

/// One billing month: a contiguous run of whole days.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Month {
    pub days: Range<usize>,
    pub label: String,
}

/// Hourly (or `h`-hourly) calendar with day and month attribution for every
/// period. Months and days are zero-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    start: NaiveDateTime,
    h: f64,
    day_length: usize,
    day_of: Vec<usize>,
    days: Vec<Day>,
    months: Vec<Month>,
}

impl TimeGrid {
    /// Builds a calendar grid: consecutive blocks of `day_length` periods are
    /// consecutive calendar days starting at `start`, and days are grouped by
    /// calendar month.
    pub fn build(
        start: NaiveDateTime,
        periods: usize,
        h: f64,
        day_length: usize,
        policy: MonthPolicy,
    ) -> Result<Self> {
        check_shape(periods, h, day_length)?;
        if !periods.is_multiple_of(day_length) && policy == MonthPolicy::Whole {
            return Err(Error::invalid(
                "domain",
                format!("{periods} periods is not a whole number of {day_length}-period days"),
            ));
        }
        let n_days = periods.div_ceil(day_length);
        let dates: Vec<NaiveDate> = (0..n_days)
            .map(|i| start.date() + Duration::days(i as i64))
            .collect();

        if policy == MonthPolicy::Whole {
            if start.time().num_seconds_from_midnight() != 0 {
                return Err(Error::invalid(
                    "domain",
                    format!("grid start {start} is not at midnight"),
                ));
            }
            let first = dates[0];
            let last = dates[n_days - 1];
            let after_last = last + Duration::days(1);
            if first.day() != 1 || after_last.day() != 1 {
                return Err(Error::invalid(
                    "domain",
                    format!(
                        "horizon {first}..={last} does not span whole months \
                         (use relaxed months for partial horizons)"
                    ),
                ));
            }
        }

        let mut month_lengths: Vec<(usize, String)> = Vec::new();
        let mut prev: Option<(i32, u32)> = None;
        for d in &dates {
            let key = (d.year(), d.month());
            if prev == Some(key) {
                month_lengths.last_mut().expect("month started").0 += 1;
            } else {
                month_lengths.push((1, format!("{:04}-{:02}", key.0, key.1)));
                prev = Some(key);
            }
        }
        Ok(Self::assemble(start, periods, h, day_length, &month_lengths, dates))
    }

    /// Builds a synthetic grid from explicit month lengths (in days). Used for
    /// desk-scale instances where "days" have only a few periods.
    pub fn from_month_lengths(
        start: NaiveDateTime,
        month_days: &[usize],
        day_length: usize,
        h: f64,
    ) -> Result<Self> {
        if month_days.is_empty() || month_days.contains(&0) {
            return Err(Error::invalid(
                "domain",
                "every synthetic month needs at least one day",
            ));
        }
        let n_days: usize = month_days.iter().sum();
        let periods = n_days * day_length;
        check_shape(periods, h, day_length)?;
        let dates = (0..n_days)
            .map(|i| start.date() + Duration::days(i as i64))
            .collect();
        let lengths: Vec<(usize, String)> = month_days
            .iter()
            .enumerate()
            .map(|(k, &n)| (n, format!("M{}", k + 1)))
            .collect();
        Ok(Self::assemble(start, periods, h, day_length, &lengths, dates))
    }

    fn assemble(
        start: NaiveDateTime,
        periods: usize,
        h: f64,
        day_length: usize,
        month_lengths: &[(usize, String)],
        dates: Vec<NaiveDate>,
    ) -> Self {
        let mut days = Vec::with_capacity(dates.len());
        let mut months = Vec::with_capacity(month_lengths.len());
        let mut day_of = Vec::with_capacity(periods);
        let mut d = 0;
        for (k, (len, label)) in month_lengths.iter().enumerate() {
            months.push(Month {
                days: d..d + len,
                label: label.clone(),
            });
            for _ in 0..*len {
                let lo = d * day_length;
                let hi = ((d + 1) * day_length).min(periods);
                day_of.extend(std::iter::repeat_n(d, hi - lo));
                days.push(Day {
                    periods: lo..hi,
                    month: k,
                    date: dates[d],
                });
                d += 1;
            }
        }
        TimeGrid {
            start,
            h,
            day_length,
            day_of,
            days,
            months,
        }
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn periods(&self) -> usize {
        self.day_of.len()
    }

    /// Period length in hours.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn day_length(&self) -> usize {
        self.day_length
    }

    pub fn num_months(&self) -> usize {
        self.months.len()
    }

    pub fn days(&self) -> &[Day] {
        &self.days
    }

    pub fn months(&self) -> &[Month] {
        &self.months
    }

    pub fn day_of(&self, t: usize) -> usize {
        self.day_of[t]
    }

    pub fn month_of(&self, t: usize) -> usize {
        self.days[self.day_of[t]].month
    }

    /// Index of `t` within its day (the hour of day for hourly grids).
    pub fn period_of_day(&self, t: usize) -> usize {
        t - self.days[self.day_of[t]].periods.start
    }

    /// Periods covered by month `k`.
    pub fn month_periods(&self, k: usize) -> Range<usize> {
        let m = &self.months[k];
        self.days[m.days.start].periods.start..self.days[m.days.end - 1].periods.end
    }

    pub fn month_days(&self, k: usize) -> &[Day] {
        &self.days[self.months[k].days.clone()]
    }

    pub fn timestamp(&self, t: usize) -> NaiveDateTime {
        self.start + Duration::seconds((t as f64 * self.h * 3600.0).round() as i64)
    }
}

fn check_shape(periods: usize, h: f64, day_length: usize) -> Result<()> {
    if periods == 0 {
        return Err(Error::invalid("domain", "time grid needs at least one period"));
    }
    if day_length == 0 {
        return Err(Error::invalid("domain", "day_length must be positive"));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid("domain", format!("period length h={h} must be positive")));
    }
    Ok(())
}

/// Battery parameters. Rates in kW, energies in kWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageParams {
    pub capacity: f64,
    pub max_charge: f64,
    pub max_discharge: f64,
    pub eta_storage: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    pub q_init: f64,
    pub q_final: f64,
}

impl StorageParams {
    /// Device of the given capacity with the reference rates and
    /// efficiencies, starting and ending half full.
    pub fn with_capacity(capacity: f64) -> Self {
        StorageParams {
            capacity,
            q_init: capacity / 2.0,
            q_final: capacity / 2.0,
            ..Self::default()
        }
    }

    /// A storage device with zero capacity and zero rates.
    pub fn none() -> Self {
        StorageParams {
            capacity: 0.0,
            max_charge: 0.0,
            max_discharge: 0.0,
            q_init: 0.0,
            q_final: 0.0,
            ..Self::default()
        }
    }
}

impl Default for StorageParams {
    fn default() -> Self {
        StorageParams {
            capacity: 40.0,
            max_charge: 20.0,
            max_discharge: 20.0,
            eta_storage: 0.99998,
            eta_charge: 0.95,
            eta_discharge: 0.95,
            q_init: 20.0,
            q_final: 20.0,
        }
    }
}

/// Next charge level: `q⁺ = η_s q + h (η_c c − d / η_d)`.
///
/// No clipping; keeping `q⁺` inside `[0, Q]` is the job of the planner.
pub fn step_storage(q: f64, charge: f64, discharge: f64, storage: &StorageParams, h: f64) -> f64 {
    storage.eta_storage * q
        + h * (storage.eta_charge * charge - discharge / storage.eta_discharge)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    /// Maximum grid import, kW.
    pub max_power: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams { max_power: 20.0 }
    }
}

/// Per-period energy prices in NOK/kWh.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub tou: Vec<f64>,
    pub day_ahead: Vec<f64>,
    /// Period-of-day at which the next day's day-ahead prices are published.
    pub announcement_hour: usize,
}

impl PriceSeries {
    pub fn total(&self, t: usize) -> f64 {
        self.tou[t] + self.day_ahead[t]
    }
}

/// A rate applying to a range of months and a range of hours.
///
/// `months` is an inclusive 1-based range; `hours` is `[start, end)` and may
/// wrap past midnight (e.g. `[22, 6]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TouWindow {
    pub months: [u32; 2],
    pub hours: [u32; 2],
    pub rate: f64,
}

impl TouWindow {
    fn covers(&self, month: u32, hour: u32) -> bool {
        let [m0, m1] = self.months;
        let in_months = if m0 <= m1 {
            (m0..=m1).contains(&month)
        } else {
            month >= m0 || month <= m1
        };
        let [h0, h1] = self.hours;
        let in_hours = if h0 < h1 {
            (h0..h1).contains(&hour)
        } else {
            hour >= h0 || hour < h1
        };
        in_months && in_hours
    }
}

/// Seasonal day/night time-of-use tariff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TouSchedule {
    pub windows: Vec<TouWindow>,
}

impl TouSchedule {
    /// Checks that the windows partition every (month, hour) cell exactly once.
    pub fn validate(&self) -> Result<()> {
        for w in &self.windows {
            let ok = w.months.iter().all(|m| (1..=12).contains(m))
                && w.hours.iter().all(|h| *h < 24)
                && w.hours[0] != w.hours[1]
                && w.rate.is_finite();
            if !ok {
                return Err(Error::invalid("domain", format!("malformed TOU window {w:?}")));
            }
        }
        for month in 1..=12 {
            for hour in 0..24 {
                let n = self.windows.iter().filter(|w| w.covers(month, hour)).count();
                if n != 1 {
                    return Err(Error::invalid(
                        "domain",
                        format!(
                            "TOU windows cover month {month} hour {hour} {n} times (need exactly 1)"
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn rate_at(&self, ts: NaiveDateTime) -> Option<f64> {
        self.windows
            .iter()
            .find(|w| w.covers(ts.month(), ts.hour()))
            .map(|w| w.rate)
    }

    /// TOU price for every period of `grid`, by the period's timestamp.
    pub fn series(&self, grid: &TimeGrid) -> Result<Vec<f64>> {
        self.validate()?;
        Ok((0..grid.periods())
            .map(|t| self.rate_at(grid.timestamp(t)).expect("validated partition"))
            .collect())
    }
}

/// An immutable problem instance.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: TimeGrid,
    /// Net load per period, kW. May be negative (local generation).
    pub load: Vec<f64>,
    pub prices: PriceSeries,
    pub storage: StorageParams,
    pub grid_params: GridParams,
    pub peak: TieredPeakSchedule,
}

/// One failed check from [`validate_scenario`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub period: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.period {
            Some(t) => write!(f, "t={t}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Scans every invariant of `s` and reports all violations; never stops early.
pub fn validate_scenario(s: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut global = |message: String| {
        out.push(Violation {
            period: None,
            message,
        })
    };
    let st = &s.storage;
    for (name, eta) in [
        ("eta_storage", st.eta_storage),
        ("eta_charge", st.eta_charge),
        ("eta_discharge", st.eta_discharge),
    ] {
        if !(eta > 0.0 && eta <= 1.0) {
            global(format!("{name}={eta} outside (0, 1]"));
        }
    }
    if !(st.capacity >= 0.0 && st.capacity.is_finite()) {
        global(format!("capacity Q={} must be finite and >= 0", st.capacity));
    }
    if !(st.max_charge >= 0.0 && st.max_charge.is_finite()) {
        global(format!("max charge C={} must be finite and >= 0", st.max_charge));
    }
    if !(st.max_discharge >= 0.0 && st.max_discharge.is_finite()) {
        global(format!("max discharge D={} must be finite and >= 0", st.max_discharge));
    }
    for (name, q) in [("q_init", st.q_init), ("q_final", st.q_final)] {
        if !(q >= 0.0 && q <= st.capacity) {
            global(format!("{name}={q} outside [0, Q={}]", st.capacity));
        }
    }
    let p_max = s.grid_params.max_power;
    if !(p_max > 0.0 && p_max.is_finite()) {
        global(format!("max grid power P={p_max} must be positive"));
    }
    let top = *s.peak.thresholds().last().expect("schedule has a tier");
    if top != p_max {
        global(format!("top tier threshold {top} must equal max grid power P={p_max}"));
    }
    let n = s.grid.periods();
    for (name, len) in [
        ("load", s.load.len()),
        ("tou prices", s.prices.tou.len()),
        ("day-ahead prices", s.prices.day_ahead.len()),
    ] {
        if len != n {
            global(format!("{name} has {len} entries, grid has {n} periods"));
        }
    }
    if s.prices.announcement_hour >= s.grid.day_length() {
        global(format!(
            "announcement hour {} outside the {}-period day",
            s.prices.announcement_hour,
            s.grid.day_length()
        ));
    }
    for t in 0..n {
        let mut at = |message: String| {
            out.push(Violation {
                period: Some(t),
                message,
            })
        };
        if let Some(&l) = s.load.get(t) {
            if !l.is_finite() {
                at(format!("load {l} is not finite"));
            } else if l < -st.max_charge {
                at(format!("load {l} below -C={}", -st.max_charge));
            } else if l > p_max + st.max_discharge {
                at(format!("load {l} above P + D={}", p_max + st.max_discharge));
            }
        }
        for (name, v) in [
            ("tou price", s.prices.tou.get(t)),
            ("day-ahead price", s.prices.day_ahead.get(t)),
        ] {
            if let Some(v) = v {
                if !v.is_finite() {
                    at(format!("{name} {v} is not finite"));
                }
            }
        }
    }
    out
}

impl Scenario {
    /// Returns an error listing every violation, if any.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = validate_scenario(self);
        if v.is_empty() {
            return Ok(());
        }
        let shown: Vec<String> = v.iter().take(10).map(ToString::to_string).collect();
        let more = if v.len() > 10 {
            format!(" (+{} more)", v.len() - 10)
        } else {
            String::new()
        };
        Err(Error::invalid(
            "domain",
            format!("scenario has {} violation(s): {}{more}", v.len(), shown.join("; ")),
        ))
    }

    pub fn h(&self) -> f64 {
        self.grid.h()
    }

    pub fn periods(&self) -> usize {
        self.grid.periods()
    }

    /// Same scenario with a different storage device.
    pub fn with_storage(&self, storage: StorageParams) -> Scenario {
        Scenario {
            storage,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn midnight(y: i32, m: u32, d: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
    }

    #[test]
    fn year_2022_grid() {
        let g = TimeGrid::build(midnight(2022, 1, 1), 8760, 1.0, 24, MonthPolicy::Whole).unwrap();
        assert_eq!(g.num_months(), 12);
        assert_eq!(g.days().len(), 365);
        assert_eq!(g.month_days(1).len(), 28);
        assert_eq!(g.months()[11].label, "2022-12");
        assert_eq!(g.month_of(8759), 11);
        let total: usize = (0..12).map(|k| g.month_days(k).len() * 24).sum();
        assert_eq!(total, g.periods());
    }

    #[test]
    fn single_day_needs_relaxed_mode() {
        let err = TimeGrid::build(midnight(2022, 1, 1), 24, 1.0, 24, MonthPolicy::Whole);
        assert!(err.is_err());
        let g = TimeGrid::build(midnight(2022, 1, 1), 24, 1.0, 24, MonthPolicy::Relaxed).unwrap();
        assert_eq!(g.num_months(), 1);
        assert_eq!(g.days().len(), 1);
    }

    #[test]
    fn mid_month_start_rejected() {
        assert!(TimeGrid::build(midnight(2022, 1, 2), 30 * 24, 1.0, 24, MonthPolicy::Whole).is_err());
    }

    #[test]
    fn synthetic_grid() {
        let g = TimeGrid::from_month_lengths(midnight(2022, 1, 1), &[5, 5], 4, 1.0).unwrap();
        assert_eq!(g.num_months(), 2);
        assert_eq!(g.days().len(), 10);
        assert_eq!(g.periods(), 40);
        assert_eq!(g.month_periods(1), 20..40);
        assert_eq!(g.period_of_day(23), 3);
        assert_eq!(g.day_of(23), 5);
    }

    #[test]
    fn storage_step_examples() {
        let st = StorageParams::default();
        assert!((step_storage(20.0, 10.0, 0.0, &st, 1.0) - 29.4996).abs() < 1e-12);
        assert_eq!(step_storage(0.0, 0.0, 0.0, &st, 1.0), 0.0);
        assert!((step_storage(10.0, 0.0, 9.5, &st, 1.0) + 0.0002).abs() < 1e-12);
    }

    #[test]
    fn storage_step_is_affine() {
        let st = StorageParams::default();
        let f = |q, c, d| step_storage(q, c, d, &st, 1.0);
        let (a, b) = ((3.0, 1.5, 0.25), (7.0, 0.5, 2.0));
        let sum = f(a.0 + b.0, a.1 + b.1, a.2 + b.2);
        assert!((sum - (f(a.0, a.1, a.2) + f(b.0, b.1, b.2))).abs() < 1e-12);
        assert!((f(2.0 * a.0, 2.0 * a.1, 2.0 * a.2) - 2.0 * f(a.0, a.1, a.2)).abs() < 1e-12);
    }

    fn tou() -> TouSchedule {
        TouSchedule {
            windows: vec![
                TouWindow { months: [1, 3], hours: [6, 22], rate: 0.5 },
                TouWindow { months: [1, 3], hours: [22, 6], rate: 0.4 },
                TouWindow { months: [4, 12], hours: [6, 22], rate: 0.45 },
                TouWindow { months: [4, 12], hours: [22, 6], rate: 0.38 },
            ],
        }
    }

    #[test]
    fn tou_partition_and_series() {
        let s = tou();
        s.validate().unwrap();
        let g = TimeGrid::build(midnight(2022, 3, 1), 31 * 24 + 30 * 24, 1.0, 24, MonthPolicy::Whole)
            .unwrap();
        let series = s.series(&g).unwrap();
        assert_eq!(series[0], 0.4);
        assert_eq!(series[6], 0.5);
        assert_eq!(series[21], 0.5);
        assert_eq!(series[22], 0.4);
        assert_eq!(series[31 * 24 + 12], 0.45);
        assert_eq!(series[31 * 24 + 23], 0.38);

        let mut gap = tou();
        gap.windows.pop();
        assert!(gap.validate().is_err());
        let mut overlap = tou();
        overlap.windows.push(TouWindow { months: [5, 5], hours: [0, 1], rate: 1.0 });
        assert!(overlap.validate().is_err());
    }
}
