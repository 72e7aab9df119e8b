//! In-memory time-series store with line-protocol export.
//!
//! Points are grouped into series by measurement and tag set. Export emits
//! one line per point:
//!
//! ```text
//! measurement,tag1=v1,tag2=v2 field1=f1,field2=f2 <ns-timestamp>
//! ```
//!
//! with tags and fields sorted by key, floats rounded to 9 significant
//! digits, and lines ordered by timestamp then series key.

use std::collections::BTreeMap;
use std::ops::{Bound, RangeBounds};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NANOS_PER_TICK: i64 = 1_000_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub measurement: String,
    pub tags: BTreeMap<String, String>,
    pub fields: BTreeMap<String, f64>,
    /// Nanoseconds since the Unix epoch.
    pub timestamp: i64,
}

impl MetricPoint {
    pub fn new(measurement: impl Into<String>, timestamp: i64) -> Self {
        MetricPoint {
            measurement: measurement.into(),
            tags: BTreeMap::new(),
            fields: BTreeMap::new(),
            timestamp,
        }
    }

    pub fn tag(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.tags.insert(key.into(), value.into());
        self
    }

    pub fn field(mut self, key: impl Into<String>, value: f64) -> Self {
        self.fields.insert(key.into(), value);
        self
    }

    pub fn series_key(&self) -> SeriesKey {
        SeriesKey {
            measurement: self.measurement.clone(),
            tags: self.tags.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }

    fn validate(&self) -> Result<(), MetricsError> {
        if self.measurement.is_empty() {
            return Err(MetricsError::Invalid("empty measurement".into()));
        }
        if self.fields.is_empty() {
            return Err(MetricsError::Invalid(format!("{} has no fields", self.measurement)));
        }
        let empty_tag = self.tags.iter().any(|(k, v)| k.is_empty() || v.is_empty());
        if empty_tag || self.fields.keys().any(String::is_empty) {
            return Err(MetricsError::Invalid(format!("{} has an empty key or tag value", self.measurement)));
        }
        if let Some((k, v)) = self.fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(MetricsError::Invalid(format!("field {k} is not finite: {v}")));
        }
        Ok(())
    }
}

/// Measurement plus sorted tag pairs. Orders lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesKey {
    pub measurement: String,
    pub tags: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("invalid point: {0}")]
    Invalid(String),
    #[error("out-of-order timestamp {timestamp} for series {series}; last was {last}")]
    OutOfOrder {
        series: String,
        timestamp: i64,
        last: i64,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Clone, Debug, Default)]
pub struct MetricStore {
    epoch_ns: i64,
    retention_ticks: Option<u64>,
    series: BTreeMap<SeriesKey, Vec<MetricPoint>>,
    latest: Option<i64>,
}

impl MetricStore {
    pub fn new() -> Self {
        MetricStore::default()
    }

    /// Store whose tick 0 maps to `epoch_ns`.
    pub fn with_epoch(epoch_ns: i64) -> Self {
        MetricStore {
            epoch_ns,
            ..MetricStore::default()
        }
    }

    /// Keep only the most recent `ticks` ticks of data.
    pub fn with_retention(mut self, ticks: u64) -> Self {
        self.retention_ticks = Some(ticks);
        self
    }

    pub fn epoch_ns(&self) -> i64 {
        self.epoch_ns
    }

    pub fn timestamp_for(&self, tick: u64) -> i64 {
        self.epoch_ns + tick as i64 * NANOS_PER_TICK
    }

    pub fn tick_for(&self, timestamp: i64) -> u64 {
        ((timestamp - self.epoch_ns) / NANOS_PER_TICK).max(0) as u64
    }

    pub fn record(&mut self, point: MetricPoint) -> Result<(), MetricsError> {
        point.validate()?;
        let key = point.series_key();
        let series = self.series.entry(key).or_default();
        if let Some(last) = series.last() {
            if point.timestamp <= last.timestamp {
                return Err(MetricsError::OutOfOrder {
                    series: render_series(&point),
                    timestamp: point.timestamp,
                    last: last.timestamp,
                });
            }
        }
        self.latest = Some(self.latest.map_or(point.timestamp, |l| l.max(point.timestamp)));
        series.push(point);
        self.enforce_retention();
        Ok(())
    }

    fn enforce_retention(&mut self) {
        let (Some(keep), Some(latest)) = (self.retention_ticks, self.latest) else {
            return;
        };
        let cutoff = latest - keep as i64 * NANOS_PER_TICK;
        let mut emptied = Vec::new();
        for (key, points) in self.series.iter_mut() {
            let first_kept = points.partition_point(|p| p.timestamp <= cutoff);
            if first_kept > 0 {
                points.drain(..first_kept);
                if points.is_empty() {
                    emptied.push(key.clone());
                }
            }
        }
        for key in emptied {
            self.series.remove(&key);
        }
    }

    pub fn series_count(&self) -> usize {
        self.series.len()
    }

    pub fn len(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn series(&self, key: &SeriesKey) -> Option<&[MetricPoint]> {
        self.series.get(key).map(Vec::as_slice)
    }

    fn timestamp_bounds(&self, ticks: &impl RangeBounds<u64>) -> (i64, i64) {
        let lo = match ticks.start_bound() {
            Bound::Included(t) => self.timestamp_for(*t),
            Bound::Excluded(t) => self.timestamp_for(*t + 1),
            Bound::Unbounded => i64::MIN,
        };
        let hi = match ticks.end_bound() {
            Bound::Included(t) => self.timestamp_for(*t),
            Bound::Excluded(t) if *t == 0 => i64::MIN,
            Bound::Excluded(t) => self.timestamp_for(*t - 1),
            Bound::Unbounded => i64::MAX,
        };
        (lo, hi)
    }

    fn collect<'a>(
        &'a self,
        ticks: &impl RangeBounds<u64>,
        mut keep: impl FnMut(&SeriesKey) -> bool,
    ) -> Vec<&'a MetricPoint> {
        let (lo, hi) = self.timestamp_bounds(ticks);
        let mut out: Vec<(&SeriesKey, &MetricPoint)> = Vec::new();
        for (key, points) in &self.series {
            if !keep(key) {
                continue;
            }
            let start = points.partition_point(|p| p.timestamp < lo);
            out.extend(
                points[start..]
                    .iter()
                    .take_while(|p| p.timestamp <= hi)
                    .map(|p| (key, p)),
            );
        }
        // series keys are visited in order, so a stable sort on time keeps
        // key order within a timestamp
        out.sort_by_key(|(_, p)| p.timestamp);
        out.into_iter().map(|(_, p)| p).collect()
    }

    /// Points of `measurement` whose tags contain every `(key, value)` in
    /// `filter`, within the tick range, in timestamp then series order.
    pub fn query(
        &self,
        measurement: &str,
        filter: &[(&str, &str)],
        ticks: impl RangeBounds<u64>,
    ) -> Vec<MetricPoint> {
        self.collect(&ticks, |key| {
            key.measurement == measurement
                && filter
                    .iter()
                    .all(|(k, v)| key.tags.iter().any(|(tk, tv)| tk == k && tv == v))
        })
        .into_iter()
        .cloned()
        .collect()
    }

    pub fn export_line_protocol(&self, ticks: impl RangeBounds<u64>) -> String {
        let mut out = String::new();
        for p in self.collect(&ticks, |_| true) {
            out.push_str(&render_line(p));
            out.push('\n');
        }
        out
    }
}

fn escape(s: &str, specials: &[char]) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if c == '\\' || specials.contains(&c) {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

fn escape_measurement(s: &str) -> String {
    escape(s, &[',', ' '])
}

fn escape_key(s: &str) -> String {
    escape(s, &[',', '=', ' '])
}

/// Rounds to 9 significant digits and always keeps a decimal point.
pub fn format_float(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    let mut s = format!("{rounded}");
    if !s.contains('.') {
        s.push_str(".0");
    }
    s
}

fn render_series(p: &MetricPoint) -> String {
    let mut s = escape_measurement(&p.measurement);
    for (k, v) in &p.tags {
        s.push(',');
        s.push_str(&escape_key(k));
        s.push('=');
        s.push_str(&escape_key(v));
    }
    s
}

pub fn render_line(p: &MetricPoint) -> String {
    let mut s = render_series(p);
    s.push(' ');
    let fields: Vec<String> = p
        .fields
        .iter()
        .map(|(k, v)| format!("{}={}", escape_key(k), format_float(*v)))
        .collect();
    s.push_str(&fields.join(","));
    s.push(' ');
    s.push_str(&p.timestamp.to_string());
    s
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(n) = chars.next() {
                out.push(n);
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Raw (still escaped) split used for the top-level sections so that
/// escaped separators survive into the second pass.
fn split_raw(s: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut start = 0;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == sep {
            parts.push(&s[start..i]);
            start = i + c.len_utf8();
        }
    }
    parts.push(&s[start..]);
    parts
}

fn parse_pair(raw: &str) -> Option<(String, String)> {
    let kv = split_raw(raw, '=');
    if kv.len() != 2 {
        return None;
    }
    let k = unescape(kv[0]);
    let v = unescape(kv[1]);
    (!k.is_empty() && !v.is_empty()).then_some((k, v))
}

/// Parses text produced by [`MetricStore::export_line_protocol`].
pub fn parse_line_protocol(text: &str) -> Result<Vec<MetricPoint>, MetricsError> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let err = |reason: &str| MetricsError::Parse {
            line: line_no,
            reason: reason.to_string(),
        };
        let sections = split_raw(line, ' ');
        if sections.len() != 3 {
            return Err(err("expected series, fields and timestamp"));
        }
        let series = split_raw(sections[0], ',');
        let measurement = unescape(series[0]);
        if measurement.is_empty() {
            return Err(err("empty measurement"));
        }
        let mut point = MetricPoint::new(measurement, 0);
        for raw in &series[1..] {
            let (k, v) = parse_pair(raw).ok_or_else(|| err("malformed tag"))?;
            point.tags.insert(k, v);
        }
        for raw in split_raw(sections[1], ',') {
            let (k, v) = parse_pair(raw).ok_or_else(|| err("malformed field"))?;
            let value: f64 = v.parse().map_err(|_| err("field value is not a float"))?;
            point.fields.insert(k, value);
        }
        if point.fields.is_empty() {
            return Err(err("no fields"));
        }
        point.timestamp = sections[2]
            .parse()
            .map_err(|_| err("timestamp is not an integer"))?;
        points.push(point);
    }
    Ok(points)
}
