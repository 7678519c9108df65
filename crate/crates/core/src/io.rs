//! Series CSVs, run configuration, traces and reports.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::domain::{GridParams, MonthPolicy, PriceSeries, Scenario, StorageParams, TimeGrid, TouSchedule};
use crate::exec::Execution;
use crate::forecast::{hour_index, ArSpec, BaselineSpec, ForecastModel};
use crate::mpc::{FittedForecaster, MpcOptions};
use crate::peak_tariff::TieredPeakSchedule;
use crate::synth::{synth_scenario, SynthSpec};
use crate::{Error, Result};

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn format_timestamp(ts: NaiveDateTime) -> String {
    ts.format(TS_FORMAT).to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesKind {
    Load,
    Price,
}

impl SeriesKind {
    fn name(self) -> &'static str {
        match self {
            SeriesKind::Load => "load",
            SeriesKind::Price => "price",
        }
    }
}

/// A gap-free hourly series.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub start: NaiveDateTime,
    pub values: Vec<f64>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> NaiveDateTime {
        self.start + Duration::hours(i as i64)
    }

    pub fn last_timestamp(&self) -> Option<NaiveDateTime> {
        self.len().checked_sub(1).map(|i| self.timestamp(i))
    }

    /// Index of `ts` in the series, if it lies on the grid.
    pub fn index_of(&self, ts: NaiveDateTime) -> Option<usize> {
        let d = ts - self.start;
        if d.num_seconds() % 3600 != 0 || d.num_seconds() < 0 {
            return None;
        }
        let i = d.num_hours() as usize;
        (i < self.len()).then_some(i)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    timestamp: String,
    value: String,
}

/// Reads a `timestamp,value` CSV. Rows must be strictly hourly and gap-free;
/// every offending row is reported.
pub fn load_csv(path: &Path, kind: SeriesKind) -> Result<Series> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let headers = reader.headers().map_err(csv_err(path))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["timestamp", "value"] {
        return Err(Error::invalid(
            "io",
            format!("{}: header must be `timestamp,value`, found `{}`", path.display(), headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut problems = Vec::new();
    let mut start = None;
    let mut prev: Option<NaiveDateTime> = None;
    let mut values = Vec::new();
    for (i, rec) in reader.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row: Row = rec.map_err(csv_err(path))?;
        let Some(ts) = parse_timestamp(&row.timestamp) else {
            problems.push(format!("line {line}: bad timestamp `{}`", row.timestamp));
            continue;
        };
        match row.value.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            _ => {
                problems.push(format!("line {line}: bad {} value `{}`", kind.name(), row.value));
                values.push(f64::NAN);
            }
        }
        if let Some(p) = prev {
            let step = (ts - p).num_seconds();
            if step == 0 {
                problems.push(format!("line {line}: duplicated hour {ts}"));
            } else if step > 3600 && step % 3600 == 0 {
                problems.push(format!(
                    "line {line}: {} missing hour(s) before {ts}",
                    step / 3600 - 1
                ));
            } else if step != 3600 {
                problems.push(format!("line {line}: non-hourly step from {p} to {ts}"));
            }
        } else {
            start = Some(ts);
        }
        prev = Some(ts);
    }
    if !problems.is_empty() {
        let shown = problems.iter().take(20).cloned().collect::<Vec<_>>().join("; ");
        let more = if problems.len() > 20 {
            format!(" (+{} more)", problems.len() - 20)
        } else {
            String::new()
        };
        return Err(Error::invalid("io", format!("{}: {shown}{more}", path.display())));
    }
    let start = start.ok_or_else(|| Error::invalid("io", format!("{}: no data rows", path.display())))?;
    Ok(Series { start, values })
}

pub fn write_series_csv(path: &Path, series: &Series) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["timestamp", "value"]).map_err(csv_err(path))?;
    for (i, v) in series.values.iter().enumerate() {
        w.write_record([format_timestamp(series.timestamp(i)), v.to_string()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalendarConfig {
    pub day_length: usize,
    pub h: f64,
    pub relaxed_months: bool,
    /// Synthetic month lengths in days; replaces the civil calendar.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub month_days: Option<Vec<usize>>,
}

impl Default for CalendarConfig {
    fn default() -> Self {
        CalendarConfig {
            day_length: 24,
            h: 1.0,
            relaxed_months: false,
            month_days: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageConfig {
    pub capacity: f64,
    pub max_charge: f64,
    pub max_discharge: f64,
    pub eta_storage: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    /// Defaults to half the capacity.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_init: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_final: Option<f64>,
}

impl Default for StorageConfig {
    fn default() -> Self {
        let d = StorageParams::default();
        StorageConfig {
            capacity: d.capacity,
            max_charge: d.max_charge,
            max_discharge: d.max_discharge,
            eta_storage: d.eta_storage,
            eta_charge: d.eta_charge,
            eta_discharge: d.eta_discharge,
            q_init: None,
            q_final: None,
        }
    }
}

impl StorageConfig {
    pub fn params(&self) -> StorageParams {
        StorageParams {
            capacity: self.capacity,
            max_charge: self.max_charge,
            max_discharge: self.max_discharge,
            eta_storage: self.eta_storage,
            eta_charge: self.eta_charge,
            eta_discharge: self.eta_discharge,
            q_init: self.q_init.unwrap_or(self.capacity / 2.0),
            q_final: self.q_final.unwrap_or(self.capacity / 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TariffConfig {
    /// Monthly charge of each tier, NOK.
    pub costs: Vec<f64>,
    /// Upper bounds of all tiers but the last (which ends at the grid limit), kW.
    pub thresholds: Vec<f64>,
    pub n_days: usize,
}

impl Default for TariffConfig {
    fn default() -> Self {
        TariffConfig {
            costs: vec![83.0, 147.0, 252.0, 371.0, 490.0],
            thresholds: vec![2.0, 5.0, 10.0, 15.0],
            n_days: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    /// Pre-fitted models; fitted on the data before `start` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub load_model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub price_model: Option<PathBuf>,
    pub quantile: f64,
    pub baseline_ridge: f64,
    pub ar_ridge: f64,
    pub m_in: usize,
    pub l_out: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            load_model: None,
            price_model: None,
            quantile: 0.5,
            baseline_ridge: 1.0,
            ar_ridge: 1.0,
            m_in: 24,
            l_out: 23,
        }
    }
}

impl ForecastConfig {
    pub fn baseline_spec(&self) -> BaselineSpec {
        BaselineSpec {
            quantile: self.quantile,
            ridge: self.baseline_ridge,
            ..BaselineSpec::default()
        }
    }

    pub fn ar_spec(&self) -> ArSpec {
        ArSpec {
            m_in: self.m_in,
            l_out: self.l_out,
            quantile: self.quantile,
            ridge: self.ar_ridge,
        }
    }
}

/// A run description. Relative paths are resolved against the directory of
/// the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub load_csv: PathBuf,
    pub price_csv: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tou_schedule: Option<TouSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tou_csv: Option<PathBuf>,
    /// First evaluated period.
    pub start: NaiveDateTime,
    /// End of the evaluation window (exclusive); defaults to the data end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<NaiveDateTime>,
    #[serde(default)]
    pub calendar: CalendarConfig,
    #[serde(default)]
    pub grid: GridParams,
    #[serde(default)]
    pub storage: StorageConfig,
    #[serde(default)]
    pub tariff: TariffConfig,
    #[serde(default = "default_announcement")]
    pub announcement_hour: usize,
    #[serde(default)]
    pub mpc: MpcOptions,
    #[serde(default)]
    pub forecast: ForecastConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub seed: u64,
}

fn default_announcement() -> usize {
    13
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// A scenario plus the observations preceding it.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub scenario: Scenario,
    pub load_history: Vec<f64>,
    pub price_history: Vec<f64>,
    /// Timestamp of the first history value.
    pub history_start: NaiveDateTime,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.load_csv);
        fix(&mut cfg.price_csv);
        if let Some(p) = cfg.tou_csv.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.forecast.load_model.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.forecast.price_model.as_mut() {
            fix(p);
        }
        fix(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<TieredPeakSchedule> {
        TieredPeakSchedule::new(
            self.tariff.costs.clone(),
            self.tariff.thresholds.clone(),
            self.grid.max_power,
            self.tariff.n_days,
        )
    }

    /// Reads the data files and assembles the evaluation scenario.
    pub fn load(&self) -> Result<LoadedRun> {
        let load = load_csv(&self.load_csv, SeriesKind::Load)?;
        let price = load_csv(&self.price_csv, SeriesKind::Price)?;
        if load.start != price.start {
            return Err(Error::invalid(
                "io",
                format!("load starts at {} but prices start at {}", load.start, price.start),
            ));
        }
        let offset = load.index_of(self.start).ok_or_else(|| {
            Error::invalid("io", format!("start {} is not covered by {}", self.start, self.load_csv.display()))
        })?;
        let cal = &self.calendar;
        let (grid, periods) = match &cal.month_days {
            Some(days) => {
                let g = TimeGrid::from_month_lengths(self.start, days, cal.day_length, cal.h)?;
                let n = g.periods();
                (g, n)
            }
            None => {
                let avail = load.len().min(price.len()) - offset;
                let n = match self.end {
                    Some(end) => {
                        let hours = (end - self.start).num_hours();
                        if hours <= 0 {
                            return Err(Error::invalid("io", format!("end {end} is not after start {}", self.start)));
                        }
                        (hours as f64 / cal.h).round() as usize
                    }
                    None => avail,
                };
                let policy = if cal.relaxed_months {
                    MonthPolicy::Relaxed
                } else {
                    MonthPolicy::Whole
                };
                (TimeGrid::build(self.start, n, cal.h, cal.day_length, policy)?, n)
            }
        };
        for (series, what) in [(&load, &self.load_csv), (&price, &self.price_csv)] {
            if offset + periods > series.len() {
                return Err(Error::invalid(
                    "io",
                    format!(
                        "{} has {} rows after {}, the window needs {periods}",
                        what.display(),
                        series.len() - offset,
                        self.start
                    ),
                ));
            }
        }
        let tou = match (&self.tou_schedule, &self.tou_csv) {
            (Some(s), None) => s.series(&grid)?,
            (None, Some(p)) => {
                let t = load_csv(p, SeriesKind::Price)?;
                let i = t.index_of(self.start).ok_or_else(|| {
                    Error::invalid("io", format!("start {} is not covered by {}", self.start, p.display()))
                })?;
                if i + periods > t.len() {
                    return Err(Error::invalid("io", format!("{} is too short for the window", p.display())));
                }
                t.values[i..i + periods].to_vec()
            }
            _ => {
                return Err(Error::invalid(
                    "io",
                    "config needs exactly one of `tou_schedule` and `tou_csv`",
                ))
            }
        };
        let scenario = Scenario {
            load: load.values[offset..offset + periods].to_vec(),
            prices: PriceSeries {
                tou,
                day_ahead: price.values[offset..offset + periods].to_vec(),
                announcement_hour: self.announcement_hour,
            },
            storage: self.storage.params(),
            grid_params: self.grid,
            peak: self.schedule()?,
            grid,
        };
        scenario.ensure_valid()?;
        Ok(LoadedRun {
            scenario,
            load_history: load.values[..offset].to_vec(),
            price_history: price.values[..offset].to_vec(),
            history_start: load.start,
        })
    }

    /// Loads the configured models, or fits them on the history before
    /// `start`.
    pub fn fitted_forecaster(&self, run: &LoadedRun) -> Result<FittedForecaster> {
        let fc = &self.forecast;
        let first = hour_index(run.history_start);
        let get = |path: &Option<PathBuf>, target: &str, hist: &[f64]| -> Result<ForecastModel> {
            match path {
                Some(p) => ForecastModel::load(p),
                None => ForecastModel::fit(target, first, hist, &fc.baseline_spec(), &fc.ar_spec(), self.execution),
            }
        };
        Ok(FittedForecaster {
            load_model: get(&fc.load_model, "load", &run.load_history)?,
            price_model: get(&fc.price_model, "price", &run.price_history)?,
            load_history: run.load_history.clone(),
            price_history: run.price_history.clone(),
        })
    }
}

/// One trace row per executed period.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub timestamps: Vec<NaiveDateTime>,
    pub p: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    /// Charge level at the end of each period.
    pub q: Vec<f64>,
    pub tou: Vec<f64>,
    pub da: Vec<f64>,
    pub tiers: Vec<Option<(usize, Option<usize>)>>,
}

impl Trace {
    /// `q_levels` has one more entry than the flows (the initial charge).
    pub fn new(
        s: &Scenario,
        p: &[f64],
        c: &[f64],
        d: &[f64],
        q_levels: &[f64],
        tiers: Option<Vec<(usize, Option<usize>)>>,
    ) -> Self {
        let n = p.len();
        Trace {
            timestamps: (0..n).map(|t| s.grid.timestamp(t)).collect(),
            p: p.to_vec(),
            c: c.to_vec(),
            d: d.to_vec(),
            q: q_levels[1..=n].to_vec(),
            tou: s.prices.tou[..n].to_vec(),
            da: s.prices.day_ahead[..n].to_vec(),
            tiers: match tiers {
                Some(t) => t.into_iter().map(Some).collect(),
                None => vec![None; n],
            },
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
        w.write_record([
            "timestamp",
            "p_kw",
            "c_kw",
            "d_kw",
            "q_kwh",
            "tou_nok_kwh",
            "da_nok_kwh",
            "tier_cur",
            "tier_next",
        ])
        .map_err(csv_err(path))?;
        for t in 0..self.p.len() {
            let (cur, next) = match self.tiers[t] {
                Some((a, b)) => (a.to_string(), b.map(|v| v.to_string()).unwrap_or_default()),
                None => (String::new(), String::new()),
            };
            // `{}` on f64 prints the shortest round-tripping form
            w.write_record([
                format_timestamp(self.timestamps[t]),
                self.p[t].to_string(),
                self.c[t].to_string(),
                self.d[t].to_string(),
                self.q[t].to_string(),
                self.tou[t].to_string(),
                self.da[t].to_string(),
                cur,
                next,
            ])
            .map_err(csv_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let mut tr = Trace {
            timestamps: Vec::new(),
            p: Vec::new(),
            c: Vec::new(),
            d: Vec::new(),
            q: Vec::new(),
            tou: Vec::new(),
            da: Vec::new(),
            tiers: Vec::new(),
        };
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err(path))?;
            let bad = |col: usize| Error::invalid("io", format!("{}: line {}: bad column {}", path.display(), i + 2, col + 1));
            if rec.len() != 9 {
                return Err(bad(rec.len().min(8)));
            }
            let num = |col: usize| rec[col].parse::<f64>().map_err(|_| bad(col));
            tr.timestamps.push(parse_timestamp(&rec[0]).ok_or_else(|| bad(0))?);
            tr.p.push(num(1)?);
            tr.c.push(num(2)?);
            tr.d.push(num(3)?);
            tr.q.push(num(4)?);
            tr.tou.push(num(5)?);
            tr.da.push(num(6)?);
            tr.tiers.push(if rec[7].is_empty() {
                None
            } else {
                let cur = rec[7].parse().map_err(|_| bad(7))?;
                let next = if rec[8].is_empty() {
                    None
                } else {
                    Some(rec[8].parse().map_err(|_| bad(8))?)
                };
                Some((cur, next))
            });
        }
        Ok(tr)
    }
}

/// Writes a synthetic scenario as `load.csv`, `price.csv`, `tou.csv` and a
/// `config.json` that reproduces it. Returns the config path.
pub fn write_synthetic(dir: &Path, spec: &SynthSpec) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let s = synth_scenario(spec)?;
    let start = s.grid.start();
    let series = |values: &[f64]| Series {
        start,
        values: values.to_vec(),
    };
    write_series_csv(&dir.join("load.csv"), &series(&s.load))?;
    write_series_csv(&dir.join("price.csv"), &series(&s.prices.day_ahead))?;
    write_series_csv(&dir.join("tou.csv"), &series(&s.prices.tou))?;
    let st = s.storage;
    let cfg = RunConfig {
        load_csv: "load.csv".into(),
        price_csv: "price.csv".into(),
        tou_schedule: None,
        tou_csv: Some("tou.csv".into()),
        start,
        end: None,
        calendar: CalendarConfig {
            day_length: spec.day_length,
            h: 1.0,
            relaxed_months: false,
            month_days: Some(vec![spec.days; spec.months]),
        },
        grid: s.grid_params,
        storage: StorageConfig {
            capacity: st.capacity,
            max_charge: st.max_charge,
            max_discharge: st.max_discharge,
            eta_storage: st.eta_storage,
            eta_charge: st.eta_charge,
            eta_discharge: st.eta_discharge,
            q_init: Some(st.q_init),
            q_final: Some(st.q_final),
        },
        tariff: TariffConfig {
            costs: s.peak.costs().to_vec(),
            thresholds: s.peak.thresholds()[..s.peak.levels() - 1].to_vec(),
            n_days: s.peak.n_days(),
        },
        announcement_hour: s.prices.announcement_hour,
        mpc: MpcOptions {
            horizon: 2 * spec.day_length,
            ..MpcOptions::default()
        },
        forecast: ForecastConfig::default(),
        output_dir: "out".into(),
        execution: Execution::default(),
        seed: spec.seed,
    };
    let path = dir.join("config.json");
    write_json(&path, &cfg)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_years_hourly_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let end = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let n = (end - start).num_hours() as usize;
        let s = Series { start, values: (0..n).map(|i| (i % 7) as f64).collect() };
        let p = dir.path().join("load.csv");
        write_series_csv(&p, &s).unwrap();
        let back = load_csv(&p, SeriesKind::Load).unwrap();
        assert_eq!(back.len(), 26_304);
        assert_eq!(back, s);
        assert_eq!(back.last_timestamp(), Some(end - Duration::hours(1)));
    }

    #[test]
    fn gaps_and_duplicates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let dup = write(
            dir.path(),
            "dup.csv",
            "timestamp,value\n2022-01-01T00:00:00,1\n2022-01-01T01:00:00,1\n2022-01-01T01:00:00,2\n",
        );
        let e = load_csv(&dup, SeriesKind::Load).unwrap_err();
        assert!(e.is_validation());
        assert!(e.to_string().contains("line 4"), "{e}");
        let gap = write(
            dir.path(),
            "gap.csv",
            "timestamp,value\n2022-01-01T00:00:00,1\n2022-01-01T03:00:00,1\n",
        );
        let e = load_csv(&gap, SeriesKind::Price).unwrap_err();
        assert!(e.to_string().contains("2 missing"), "{e}");
        let half = write(
            dir.path(),
            "half.csv",
            "timestamp,value\n2022-01-01T00:00:00,1\n2022-01-01T00:30:00,1\n",
        );
        assert!(load_csv(&half, SeriesKind::Price).is_err());
        let header = write(dir.path(), "h.csv", "time,val\n2022-01-01T00:00:00,1\n");
        assert!(load_csv(&header, SeriesKind::Load).unwrap_err().is_validation());
    }

    #[test]
    fn defaults_match_reference_parameters() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"load_csv": "l.csv", "price_csv": "p.csv", "start": "2022-01-01T00:00:00"}"#,
        )
        .unwrap();
        let st = cfg.storage.params();
        assert_eq!(st, StorageParams::default());
        assert_eq!(cfg.grid.max_power, 20.0);
        let sched = cfg.schedule().unwrap();
        assert_eq!(sched, TieredPeakSchedule::reference(20.0).unwrap());
        assert_eq!(cfg.announcement_hour, 13);
        assert_eq!(cfg.mpc.horizon, 720);
        assert_eq!(cfg.mpc.surrogate_n, 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        let r: std::result::Result<RunConfig, _> = serde_json::from_str(
            r#"{"load_csv": "l.csv", "price_csv": "p.csv", "start": "2022-01-01T00:00:00", "bogus": 1}"#,
        );
        assert!(r.is_err());
        let r: std::result::Result<RunConfig, _> = serde_json::from_str(
            r#"{"load_csv": "l.csv", "price_csv": "p.csv", "start": "2022-01-01T00:00:00", "storage": {"cap": 3}}"#,
        );
        assert!(r.is_err());
    }

    #[test]
    fn synthetic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { seed: 5, ..Default::default() };
        let cfg_path = write_synthetic(dir.path(), &spec).unwrap();
        let cfg = RunConfig::from_path(&cfg_path).unwrap();
        let run = cfg.load().unwrap();
        let s = synth_scenario(&spec).unwrap();
        assert_eq!(run.scenario.load, s.load);
        assert_eq!(run.scenario.prices, s.prices);
        assert_eq!(run.scenario.storage, s.storage);
        assert_eq!(run.scenario.peak, s.peak);
        assert_eq!(run.scenario.grid, s.grid);
        assert!(run.load_history.is_empty());
    }

    #[test]
    fn trace_round_trip_is_exact() {
        let s = synth_scenario(&SynthSpec::default()).unwrap();
        let n = s.periods();
        let p: Vec<f64> = s.load.iter().map(|l| l * 0.9 + 1e-13).collect();
        let c = vec![0.1 / 3.0; n];
        let d = vec![0.0; n];
        let q: Vec<f64> = (0..=n).map(|i| i as f64 / 7.0).collect();
        let tiers = Some((0..n).map(|t| (1 + t % 3, (t % 2 == 0).then_some(2))).collect());
        let tr = Trace::new(&s, &p, &c, &d, &q, tiers);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        tr.write_csv(&path).unwrap();
        assert_eq!(Trace::read_csv(&path).unwrap(), tr);
        let plain = Trace::new(&s, &p, &c, &d, &q, None);
        plain.write_csv(&path).unwrap();
        assert_eq!(Trace::read_csv(&path).unwrap(), plain);
    }
}
