//! Plain-text event log.
//!
//! ```text
//! #dimension<TAB>28
//! <arrival_hours><TAB><converted 0|1><TAB><delay_hours or empty><TAB><space-separated indices>
//! ```
//!
//! Feature indices exclude the bias coordinate, which is implied. Floats are
//! rendered in shortest round-trip decimal form, so reading and re-writing a
//! file produces the same bytes.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::data::{ClickEvent, FeatureVector, Label};
use crate::error::{DflError, Result};

const HEADER_KEY: &str = "#dimension";

pub fn format_event(event: &ClickEvent) -> String {
    let mut line = String::new();
    let converted = u8::from(event.converted.is_positive());
    let _ = write!(line, "{}\t{}\t", event.arrival, converted);
    if let Some(d) = event.delay {
        let _ = write!(line, "{d}");
    }
    line.push('\t');
    for (k, idx) in event.features.active().iter().enumerate() {
        if k > 0 {
            line.push(' ');
        }
        let _ = write!(line, "{idx}");
    }
    line
}

pub fn parse_event(line: &str, dimension: usize, line_no: usize) -> Result<ClickEvent> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(DflError::parse(
            line_no,
            format!("expected 4 tab-separated fields, found {}", fields.len()),
        ));
    }
    let arrival: f64 = fields[0]
        .parse()
        .map_err(|_| DflError::parse(line_no, format!("bad arrival {:?}", fields[0])))?;
    let converted = match fields[1] {
        "0" => Label::Negative,
        "1" => Label::Positive,
        other => return Err(DflError::parse(line_no, format!("bad converted flag {other:?}"))),
    };
    let delay = if fields[2].is_empty() {
        None
    } else {
        Some(
            fields[2]
                .parse::<f64>()
                .map_err(|_| DflError::parse(line_no, format!("bad delay {:?}", fields[2])))?,
        )
    };
    let active = fields[3]
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u32>()
                .map_err(|_| DflError::parse(line_no, format!("bad feature index {s:?}")))
        })
        .collect::<Result<Vec<u32>>>()?;
    if active.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DflError::parse(line_no, "feature indices must be strictly increasing"));
    }
    let features =
        FeatureVector::new(active, dimension).map_err(|e| DflError::parse(line_no, e.to_string()))?;
    ClickEvent::new(features, arrival, converted, delay).map_err(|e| DflError::parse(line_no, e.to_string()))
}

pub struct EventWriter<W: Write> {
    out: W,
}

impl<W: Write> EventWriter<W> {
    pub fn new(mut out: W, dimension: usize) -> Result<Self> {
        writeln!(out, "{HEADER_KEY}\t{dimension}")?;
        Ok(EventWriter { out })
    }

    pub fn write(&mut self, event: &ClickEvent) -> Result<()> {
        writeln!(self.out, "{}", format_event(event))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_events<W: Write>(out: W, dimension: usize, events: &[ClickEvent]) -> Result<()> {
    let mut w = EventWriter::new(out, dimension)?;
    for e in events {
        w.write(e)?;
    }
    w.finish()?;
    Ok(())
}

/// Streaming reader; yields events one line at a time.
pub struct EventReader<R: BufRead> {
    lines: std::io::Lines<R>,
    dimension: usize,
    line_no: usize,
}

impl<R: BufRead> EventReader<R> {
    pub fn new(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| DflError::parse(1, "missing #dimension header"))??;
        let dimension = header
            .strip_prefix(HEADER_KEY)
            .and_then(|rest| rest.strip_prefix('\t'))
            .and_then(|d| d.parse::<usize>().ok())
            .ok_or_else(|| DflError::parse(1, format!("bad header {header:?}")))?;
        Ok(EventReader {
            lines,
            dimension,
            line_no: 1,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<ClickEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.is_empty() {
                continue;
            }
            return Some(parse_event(&line, self.dimension, self.line_no));
        }
    }
}

pub fn read_events<R: BufRead>(input: R) -> Result<(usize, Vec<ClickEvent>)> {
    let reader = EventReader::new(input)?;
    let dim = reader.dimension();
    let events = reader.collect::<Result<Vec<_>>>()?;
    Ok((dim, events))
}

pub fn read_events_file(path: &std::path::Path) -> Result<(usize, Vec<ClickEvent>)> {
    let f = std::fs::File::open(path)?;
    read_events(std::io::BufReader::new(f))
}

pub fn write_events_file(path: &std::path::Path, dimension: usize, events: &[ClickEvent]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_events(std::io::BufWriter::new(f), dimension, events)
}
