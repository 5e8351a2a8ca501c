//! Criteo conversion-log ingestion: parsing, feature hashing and day windows.
//!
//! Default line layout (tab-separated): click timestamp (seconds), conversion
//! timestamp (seconds, empty when the click never converted), 8 integer
//! fields, 9 categorical fields. Empty fields are missing values.
//!
//! Hashing: every present field becomes the token `(position, value)` and is
//! mapped to `xxh64(position as u32 LE ++ value bytes, seed = HASH_SEED) mod
//! 2^24`. Integer values above 2 are bucketized to `floor(ln(v)^2)` first.
//! The bias occupies index `2^24`.

use std::io::{BufRead, Write};

use twox_hash::XxHash64;

use crate::data::{ClickEvent, FeatureVector, Label, Snapshot, SnapshotConfig};
use crate::error::{DflError, Result};
use crate::eventlog::EventWriter;

pub const HASH_BITS: u32 = 24;
pub const HASH_SPACE: usize = 1 << HASH_BITS;
/// Hashed indices plus the bias coordinate.
pub const DIMENSION: usize = HASH_SPACE + 1;
pub const HASH_SEED: u64 = 0x00C0_FFEE_D1A6_0001;
pub const SECONDS_PER_HOUR: f64 = 3600.0;
pub const TRAIN_WINDOW_DAYS: i64 = 21;
pub const DEFAULT_TAU: f64 = 168.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schema {
    pub integer_fields: usize,
    pub categorical_fields: usize,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            integer_fields: 8,
            categorical_fields: 9,
        }
    }
}

impl Schema {
    pub fn columns(&self) -> usize {
        2 + self.integer_fields + self.categorical_fields
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawCriteoRow {
    pub click_ts: i64,
    pub conversion_ts: Option<i64>,
    pub integer_fields: Vec<Option<i64>>,
    pub categorical_fields: Vec<Option<String>>,
}

impl RawCriteoRow {
    /// Conversion delay in hours.
    pub fn delay_hours(&self) -> Option<f64> {
        self.conversion_ts
            .map(|c| (c - self.click_ts) as f64 / SECONDS_PER_HOUR)
    }
}

fn opt<'a>(s: &'a str) -> Option<&'a str> {
    if s.is_empty() {
        None
    } else {
        Some(s)
    }
}

pub fn parse_line(line: &str, schema: &Schema) -> Result<RawCriteoRow> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != schema.columns() {
        return Err(DflError::InvalidEvent(format!(
            "expected {} columns, found {}",
            schema.columns(),
            cols.len()
        )));
    }
    let ts = |s: &str, what: &str| -> Result<i64> {
        s.trim()
            .parse::<i64>()
            .map_err(|_| DflError::InvalidEvent(format!("bad {what} timestamp {s:?}")))
    };
    let click_ts = ts(cols[0], "click")?;
    let conversion_ts = opt(cols[1]).map(|s| ts(s, "conversion")).transpose()?;
    if let Some(c) = conversion_ts {
        if c < click_ts {
            return Err(DflError::InvalidEvent(format!("conversion at {c} before click at {click_ts}")));
        }
    }
    let ints_end = 2 + schema.integer_fields;
    let integer_fields = cols[2..ints_end]
        .iter()
        .map(|s| {
            opt(s)
                .map(|v| {
                    v.trim()
                        .parse::<i64>()
                        .map_err(|_| DflError::InvalidEvent(format!("bad integer field {v:?}")))
                })
                .transpose()
        })
        .collect::<Result<_>>()?;
    let categorical_fields = cols[ints_end..].iter().map(|s| opt(s).map(str::to_string)).collect();
    Ok(RawCriteoRow {
        click_ts,
        conversion_ts,
        integer_fields,
        categorical_fields,
    })
}

pub fn serialize_row(row: &RawCriteoRow) -> String {
    let mut cols = Vec::with_capacity(2 + row.integer_fields.len() + row.categorical_fields.len());
    cols.push(row.click_ts.to_string());
    cols.push(row.conversion_ts.map(|c| c.to_string()).unwrap_or_default());
    cols.extend(row.integer_fields.iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default()));
    cols.extend(row.categorical_fields.iter().map(|v| v.clone().unwrap_or_default()));
    cols.join("\t")
}

/// `v` for `v <= 2`, else `floor(ln(v)^2)`.
pub fn bucketize(v: i64) -> i64 {
    if v <= 2 {
        v
    } else {
        let l = (v as f64).ln();
        (l * l).floor() as i64
    }
}

pub fn hash_token(position: u32, value: &[u8]) -> u32 {
    let mut h = XxHash64::with_seed(HASH_SEED);
    std::hash::Hasher::write(&mut h, &position.to_le_bytes());
    std::hash::Hasher::write(&mut h, value);
    (std::hash::Hasher::finish(&h) % HASH_SPACE as u64) as u32
}

/// Sorted, de-duplicated hashed indices of the present fields.
pub fn hashed_indices(row: &RawCriteoRow) -> Vec<u32> {
    let mut idx = Vec::with_capacity(row.integer_fields.len() + row.categorical_fields.len());
    for (k, v) in row.integer_fields.iter().enumerate() {
        if let Some(v) = v {
            idx.push(hash_token(k as u32, bucketize(*v).to_string().as_bytes()));
        }
    }
    let offset = row.integer_fields.len();
    for (k, v) in row.categorical_fields.iter().enumerate() {
        if let Some(v) = v {
            idx.push(hash_token((offset + k) as u32, v.as_bytes()));
        }
    }
    idx.sort_unstable();
    idx.dedup();
    idx
}

/// Click event with hashed features; times are hours on the log's clock.
pub fn hash_features(row: &RawCriteoRow) -> Result<ClickEvent> {
    let features = FeatureVector::new(hashed_indices(row), DIMENSION)?;
    let delay = row.delay_hours();
    let converted = Label::from_bool(delay.is_some());
    ClickEvent::new(features, row.click_ts as f64 / SECONDS_PER_HOUR, converted, delay)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrepStats {
    pub lines: usize,
    pub written: usize,
    pub quarantined: usize,
    pub conversions: usize,
    pub nonzeros: usize,
    pub distinct_indices: usize,
    pub min_click_ts: Option<i64>,
    pub max_click_ts: Option<i64>,
}

impl PrepStats {
    pub fn to_text(&self) -> String {
        let ts = |t: Option<i64>| t.map(|t| t.to_string()).unwrap_or_else(|| "NA".into());
        format!(
            "lines = {}\nwritten = {}\nquarantined = {}\nconversions = {}\nnonzeros = {}\ndistinct_indices = {}\nmin_click_ts = {}\nmax_click_ts = {}\nhash = xxh64 seed {:#x} mod 2^{}\n",
            self.lines,
            self.written,
            self.quarantined,
            self.conversions,
            self.nonzeros,
            self.distinct_indices,
            ts(self.min_click_ts),
            ts(self.max_click_ts),
            HASH_SEED,
            HASH_BITS
        )
    }
}

/// Streams raw lines into the event-log format. Malformed rows are counted
/// and skipped. Memory use is a fixed `2^24`-bit occupancy map.
pub fn prepare<R: BufRead, W: Write>(input: R, out: W, schema: &Schema) -> Result<PrepStats> {
    let mut writer = EventWriter::new(out, DIMENSION)?;
    let mut seen = vec![0u64; HASH_SPACE / 64];
    let mut stats = PrepStats::default();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        let event = match parse_line(&line, schema).and_then(|row| Ok((hash_features(&row)?, row.click_ts))) {
            Ok(e) => e,
            Err(DflError::InvalidEvent(_)) => {
                stats.quarantined += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let (event, ts) = event;
        for &i in event.features.active() {
            let (w, b) = (i as usize / 64, i % 64);
            if seen[w] & (1 << b) == 0 {
                seen[w] |= 1 << b;
                stats.distinct_indices += 1;
            }
        }
        stats.nonzeros += event.features.active().len();
        stats.conversions += event.converted.is_positive() as usize;
        stats.min_click_ts = Some(stats.min_click_ts.map_or(ts, |m| m.min(ts)));
        stats.max_click_ts = Some(stats.max_click_ts.map_or(ts, |m| m.max(ts)));
        writer.write(&event)?;
        stats.written += 1;
    }
    writer.finish()?;
    Ok(stats)
}

/// Half-open day windows on a log whose clock is in hours: test clicks fall
/// in `[test_day, test_day + 1)`, train clicks in the 21 days before.
pub fn window_split(events: &[ClickEvent], test_day: i64) -> Result<(Vec<ClickEvent>, Vec<ClickEvent>)> {
    let day = |d: i64| d as f64 * 24.0;
    let (test_start, test_end) = (day(test_day), day(test_day + 1));
    let train_start = day(test_day - TRAIN_WINDOW_DAYS);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for e in events {
        if e.arrival >= test_start && e.arrival < test_end {
            test.push(e.clone());
        } else if e.arrival >= train_start && e.arrival < test_start {
            train.push(e.clone());
        }
    }
    if train.is_empty() {
        return Err(DflError::EmptyDataset("no training clicks before the test day"));
    }
    if test.is_empty() {
        return Err(DflError::EmptyDataset("no clicks on the test day"));
    }
    Ok((train, test))
}

/// Training views for one test day. Train clicks are re-timed so the window
/// starts at 0 and labelled at the test-day boundary; test rows keep their
/// full-log conversion flag as the ground truth. `max_train_rows` keeps only
/// the most recent clicks, for smoke runs.
pub fn day_snapshot(
    events: &[ClickEvent],
    test_day: i64,
    tau: f64,
    max_train_rows: Option<usize>,
) -> Result<(Snapshot, Vec<ClickEvent>)> {
    let (mut train, test) = window_split(events, test_day)?;
    if let Some(n) = max_train_rows {
        if train.len() > n {
            train.sort_by(|a, b| a.arrival.total_cmp(&b.arrival));
            train.drain(..train.len() - n);
        }
    }
    let origin = (test_day - TRAIN_WINDOW_DAYS) as f64 * 24.0;
    for e in &mut train {
        e.arrival -= origin;
    }
    let cfg = SnapshotConfig::new(TRAIN_WINDOW_DAYS as f64 * 24.0, tau)?;
    Ok((Snapshot::build(&train, cfg)?, test))
}
