//! Irradiance records: loading, validation, windowing and resampling into
//! per-period observation sequences. Irradiance is in μW/cm² throughout.

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, NaiveDateTime, TimeZone, Timelike, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

use crate::solar_hmm::HmmParams;

pub const CSV_HEADER: &str = "timestamp,irradiance_uw_cm2";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Unreadable { path: String, source: std::io::Error },
    #[error("row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error("row {row}: timestamp does not increase")]
    NonMonotone { row: usize },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("period of {period_s} s is shorter than the native sampling period of {native_s} s")]
    IncompatibleWindow { period_s: u32, native_s: i64 },
    #[error("series does not cover a full active window")]
    InsufficientCoverage,
    #[error("write failed: {0}")]
    Write(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IngestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    /// Header `timestamp,irradiance_uw_cm2`, ISO-8601 timestamps.
    Csv,
    /// Two headerless columns: ISO-8601 or Unix-epoch seconds, then irradiance.
    Legacy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LoadOptions {
    /// Replace negative readings by 0 instead of dropping the row.
    pub clamp_negative: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_rejected: usize,
    pub rows_clamped: usize,
    pub gaps_detected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrradianceSeries {
    pub samples: Vec<(DateTime<Utc>, f64)>,
    /// Most common spacing between samples, seconds; 0 for a single sample.
    pub native_period: i64,
}

impl IrradianceSeries {
    /// Validates ordering and sign, and infers the native period.
    pub fn new(samples: Vec<(DateTime<Utc>, f64)>) -> Result<Self> {
        for (k, w) in samples.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(IngestError::NonMonotone { row: k + 2 });
            }
        }
        if let Some(k) = samples.iter().position(|s| !(s.1 >= 0.0) || !s.1.is_finite()) {
            return Err(IngestError::Malformed {
                row: k + 1,
                reason: "irradiance must be finite and non-negative".into(),
            });
        }
        let native_period = mode_spacing(&samples);
        Ok(IrradianceSeries { samples, native_period })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn gaps(&self) -> usize {
        if self.native_period <= 0 {
            return 0;
        }
        self.samples.windows(2).filter(|w| (w[1].0 - w[0].0).num_seconds() > self.native_period).count()
    }

    /// Header CSV, timestamps in UTC with second precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 36);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for (t, x) in &self.samples {
            out.push_str(&format!("{},{}\n", t.format("%Y-%m-%dT%H:%M:%SZ"), x));
        }
        out
    }
}

fn mode_spacing(samples: &[(DateTime<Utc>, f64)]) -> i64 {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for w in samples.windows(2) {
        *counts.entry((w[1].0 - w[0].0).num_seconds()).or_default() += 1;
    }
    let mut best = (0, 0);
    for (&d, &c) in &counts {
        if c > best.1 {
            best = (d, c);
        }
    }
    best.0
}

fn parse_timestamp(s: &str, allow_epoch: bool) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f%:z", "%Y-%m-%d %H:%M:%S%.f%:z", "%Y-%m-%d %H:%M:%S%#z"] {
        if let Ok(t) = DateTime::parse_from_str(s, fmt) {
            return Some(t.with_timezone(&Utc));
        }
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Utc.from_utc_datetime(&t));
        }
    }
    if allow_epoch {
        if let Ok(secs) = s.parse::<i64>() {
            return DateTime::from_timestamp(secs, 0);
        }
    }
    None
}

/// Parses irradiance records from text.
pub fn parse_irradiance(text: &str, format: SourceFormat, opts: LoadOptions) -> Result<(IrradianceSeries, LoadReport)> {
    let mut report = LoadReport::default();
    let mut samples: Vec<(DateTime<Utc>, f64)> = Vec::new();
    let mut header_seen = format == SourceFormat::Legacy;
    for (idx, line) in text.lines().enumerate() {
        let row = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            let norm: String = line.chars().filter(|c| !c.is_whitespace()).collect();
            if norm != CSV_HEADER {
                return Err(IngestError::Malformed { row, reason: format!("expected header {CSV_HEADER:?}") });
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = match format {
            SourceFormat::Csv => line.split(',').collect(),
            SourceFormat::Legacy => {
                if line.contains(',') {
                    line.split(',').collect()
                } else {
                    line.split_whitespace().collect()
                }
            }
        };
        if fields.len() != 2 {
            return Err(IngestError::Malformed { row, reason: format!("expected 2 fields, found {}", fields.len()) });
        }
        report.rows_read += 1;
        let t = parse_timestamp(fields[0], format == SourceFormat::Legacy)
            .ok_or_else(|| IngestError::Malformed { row, reason: format!("bad timestamp {:?}", fields[0]) })?;
        let mut x: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| IngestError::Malformed { row, reason: format!("bad irradiance {:?}", fields[1]) })?;
        if !x.is_finite() {
            return Err(IngestError::Malformed { row, reason: "irradiance is not finite".into() });
        }
        if let Some(last) = samples.last() {
            if t <= last.0 {
                return Err(IngestError::NonMonotone { row });
            }
        }
        if x < 0.0 {
            if opts.clamp_negative {
                x = 0.0;
                report.rows_clamped += 1;
            } else {
                report.rows_rejected += 1;
                continue;
            }
        }
        samples.push((t, x));
    }
    if !header_seen {
        return Err(IngestError::Malformed { row: 1, reason: "missing header".into() });
    }
    let series = IrradianceSeries::new(samples)?;
    report.gaps_detected = series.gaps();
    Ok((series, report))
}

pub fn load_irradiance(path: &Path, format: SourceFormat, opts: LoadOptions) -> Result<(IrradianceSeries, LoadReport)> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| IngestError::Unreadable { path: path.display().to_string(), source })?;
    parse_irradiance(&text, format, opts)
}

pub fn save_irradiance(series: &IrradianceSeries, path: &Path) -> Result<()> {
    std::fs::write(path, series.to_csv())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Local hour at which the active window opens.
    pub active_start: f64,
    /// Local hour at which it closes.
    pub active_end: f64,
    /// Management period T_L, seconds.
    pub period_s: u32,
    /// Fixed local offset from UTC, minutes.
    #[serde(default)]
    pub utc_offset_minutes: i32,
}

impl WindowConfig {
    /// Parses `"HH:MM-HH:MM"`.
    pub fn parse(spec: &str, period_s: u32, utc_offset_minutes: i32) -> Result<Self> {
        let (a, b) = spec
            .split_once('-')
            .ok_or_else(|| IngestError::InvalidWindow(format!("expected HH:MM-HH:MM, got {spec:?}")))?;
        let hour = |s: &str| -> Result<f64> {
            let (h, m) = s.trim().split_once(':').unwrap_or((s.trim(), "0"));
            let h: u32 = h.parse().map_err(|_| IngestError::InvalidWindow(format!("bad hour {s:?}")))?;
            let m: u32 = m.parse().map_err(|_| IngestError::InvalidWindow(format!("bad minute {s:?}")))?;
            if m >= 60 {
                return Err(IngestError::InvalidWindow(format!("bad minute {s:?}")));
            }
            Ok(h as f64 + m as f64 / 60.0)
        };
        let w = WindowConfig { active_start: hour(a)?, active_end: hour(b)?, period_s, utc_offset_minutes };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.active_start && self.active_start < self.active_end && self.active_end <= 24.0) {
            return Err(IngestError::InvalidWindow("need 0 <= start < end <= 24".into()));
        }
        if self.period_s == 0 {
            return Err(IngestError::InvalidWindow("period_s must be positive".into()));
        }
        let len = self.window_seconds();
        if len % self.period_s as i64 != 0 {
            return Err(IngestError::InvalidWindow(format!(
                "window of {len} s is not a whole number of {} s periods",
                self.period_s
            )));
        }
        Ok(())
    }

    fn start_seconds(&self) -> i64 {
        (self.active_start * 3600.0).round() as i64
    }

    pub fn window_seconds(&self) -> i64 {
        ((self.active_end - self.active_start) * 3600.0).round() as i64
    }

    pub fn periods_per_day(&self) -> usize {
        (self.window_seconds() / self.period_s as i64) as usize
    }

    fn offset(&self) -> FixedOffset {
        FixedOffset::east_opt(self.utc_offset_minutes * 60).expect("offset within a day")
    }
}

/// A run of consecutive periods on one local day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSequence {
    pub date: NaiveDate,
    /// Index of the first period within the day's window.
    pub first_period: usize,
    /// Mean irradiance per period.
    pub values: Vec<f64>,
    /// Native samples averaged into each value.
    pub counts: Vec<usize>,
}

pub fn resample(series: &IrradianceSeries, window: &WindowConfig) -> Result<Vec<ObservationSequence>> {
    window.validate()?;
    if series.native_period > window.period_s as i64 {
        return Err(IngestError::IncompatibleWindow { period_s: window.period_s, native_s: series.native_period });
    }
    let offset = window.offset();
    let start = window.start_seconds();
    let len = window.window_seconds();
    let per_day = window.periods_per_day();
    let mut days: BTreeMap<NaiveDate, Vec<(f64, usize)>> = BTreeMap::new();
    for &(t, x) in &series.samples {
        let local = t.with_timezone(&offset);
        let sec = local.num_seconds_from_midnight() as i64;
        if sec < start || sec >= start + len {
            continue;
        }
        let k = ((sec - start) / window.period_s as i64) as usize;
        let slots = days.entry(local.date_naive()).or_insert_with(|| vec![(0.0, 0); per_day]);
        slots[k].0 += x;
        slots[k].1 += 1;
    }
    if !days.values().any(|slots| slots.iter().all(|s| s.1 > 0)) {
        return Err(IngestError::InsufficientCoverage);
    }
    let mut out = Vec::new();
    for (date, slots) in days {
        let mut cur: Option<ObservationSequence> = None;
        for (k, &(sum, count)) in slots.iter().enumerate() {
            if count == 0 {
                if let Some(seq) = cur.take() {
                    out.push(seq);
                }
                continue;
            }
            let seq = cur.get_or_insert_with(|| ObservationSequence {
                date,
                first_period: k,
                values: Vec::new(),
                counts: Vec::new(),
            });
            seq.values.push(sum / count as f64);
            seq.counts.push(count);
        }
        if let Some(seq) = cur {
            out.push(seq);
        }
    }
    Ok(out)
}

/// Synthetic record sampled from `hmm` at `native_period_s` spacing inside
/// the active window of `days` consecutive days. Each day starts from the
/// model's stationary law; samples are clamped at 0.
pub fn synthesize_series<R: Rng + ?Sized>(
    hmm: &HmmParams,
    days: usize,
    native_period_s: u32,
    window: &WindowConfig,
    first_day: NaiveDate,
    rng: &mut R,
) -> Result<IrradianceSeries> {
    window.validate()?;
    let per_day = (window.window_seconds() / native_period_s as i64) as usize;
    let offset = window.offset();
    let mut samples = Vec::with_capacity(days * per_day);
    for d in 0..days {
        let date = first_day + Duration::days(d as i64);
        let midnight = offset
            .from_local_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight"))
            .single()
            .expect("fixed offset is unambiguous")
            .with_timezone(&Utc);
        let (_, obs) = hmm.sample(per_day, &hmm.stationary, rng);
        for (k, x) in obs.into_iter().enumerate() {
            let t = midnight + Duration::seconds(window.start_seconds() + k as i64 * native_period_s as i64);
            samples.push((t, x.max(0.0)));
        }
    }
    IrradianceSeries::new(samples)
}
