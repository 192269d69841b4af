//! Labelled speech timelines and their RTTM representation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub label: String,
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn new(label: impl Into<String>, start: f64, end: f64) -> Self {
        Self {
            label: label.into(),
            start,
            end,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Timeline {
    pub recording_id: String,
    pub entries: Vec<Segment>,
}

impl Timeline {
    pub fn new(recording_id: impl Into<String>) -> Self {
        Self {
            recording_id: recording_id.into(),
            entries: Vec::new(),
        }
    }

    pub fn with_entries(recording_id: impl Into<String>, entries: Vec<Segment>) -> Self {
        Self {
            recording_id: recording_id.into(),
            entries,
        }
    }

    pub fn push(&mut self, label: impl Into<String>, start: f64, end: f64) {
        self.entries.push(Segment::new(label, start, end));
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct labels, sorted.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.entries.iter().map(|s| s.label.clone()).collect();
        labels.sort();
        labels.dedup();
        labels
    }

    pub fn end_time(&self) -> f64 {
        self.entries.iter().map(|s| s.end).fold(0.0, f64::max)
    }

    /// Checks `end > start` and that no label overlaps itself.
    pub fn validate(&self) -> Result<()> {
        let mut by_label: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for s in &self.entries {
            if !(s.end > s.start) || !s.start.is_finite() || !s.end.is_finite() {
                return Err(Error::OutOfRange(format!(
                    "segment {} [{}, {}] in {}",
                    s.label, s.start, s.end, self.recording_id
                )));
            }
            by_label.entry(&s.label).or_default().push((s.start, s.end));
        }
        for (label, mut spans) in by_label {
            spans.sort_by(|a, b| a.0.total_cmp(&b.0));
            if spans.windows(2).any(|w| w[1].0 < w[0].1 - 1e-9) {
                return Err(Error::OutOfRange(format!(
                    "label {label} overlaps itself in {}",
                    self.recording_id
                )));
            }
        }
        Ok(())
    }

    /// Union of all entries as sorted, disjoint `(start, end)` regions.
    pub fn speech_regions(&self) -> Vec<(f64, f64)> {
        let mut spans: Vec<(f64, f64)> = self.entries.iter().map(|s| (s.start, s.end)).collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (s, e) in spans {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        merged
    }

    /// Entries clipped to `[start, end)`, shifted so `start` maps to zero
    /// when `rebase` is set.
    pub fn clip(&self, start: f64, end: f64, rebase: bool) -> Timeline {
        let offset = if rebase { start } else { 0.0 };
        let entries = self
            .entries
            .iter()
            .filter_map(|s| {
                let a = s.start.max(start);
                let b = s.end.min(end);
                (b > a).then(|| Segment::new(s.label.clone(), a - offset, b - offset))
            })
            .collect();
        Timeline::with_entries(self.recording_id.clone(), entries)
    }

    /// Adjacent or overlapping entries with the same label merged.
    pub fn merged(&self) -> Timeline {
        let mut entries = self.entries.clone();
        entries.sort_by(|a, b| a.label.cmp(&b.label).then(a.start.total_cmp(&b.start)));
        let mut out: Vec<Segment> = Vec::new();
        for s in entries {
            match out.last_mut() {
                Some(last) if last.label == s.label && s.start <= last.end + 1e-9 => {
                    last.end = last.end.max(s.end)
                }
                _ => out.push(s),
            }
        }
        out.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.label.cmp(&b.label)));
        Timeline::with_entries(self.recording_id.clone(), out)
    }

    pub fn to_rttm(&self) -> String {
        let mut out = String::new();
        for s in &self.entries {
            let _ = writeln!(
                out,
                "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
                self.recording_id,
                s.start,
                s.duration(),
                s.label
            );
        }
        out
    }
}

/// Parses RTTM text into one timeline per recording, in order of first
/// appearance. Non-`SPEAKER` lines and comments are skipped.
pub fn parse_rttm(text: &str, path: &Path) -> Result<Vec<Timeline>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_rec: BTreeMap<String, Timeline> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] != "SPEAKER" {
            continue;
        }
        let err = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.to_string(),
        };
        if fields.len() < 8 {
            return Err(err("expected at least 8 fields"));
        }
        let start: f64 = fields[3].parse().map_err(|_| err("bad onset"))?;
        let dur: f64 = fields[4].parse().map_err(|_| err("bad duration"))?;
        if !(dur > 0.0) || !start.is_finite() {
            return Err(err("non-positive duration"));
        }
        let rec = fields[1].to_string();
        let tl = by_rec.entry(rec.clone()).or_insert_with(|| {
            order.push(rec.clone());
            Timeline::new(rec.clone())
        });
        tl.push(fields[7], start, start + dur);
    }
    Ok(order
        .into_iter()
        .map(|r| by_rec.remove(&r).expect("recorded id"))
        .collect())
}

pub fn read_rttm(path: &Path) -> Result<Vec<Timeline>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rttm(&text, path)
}

pub fn write_rttm(path: &Path, timelines: &[Timeline]) -> Result<()> {
    let text: String = timelines.iter().map(Timeline::to_rttm).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rttm_round_trip() {
        let mut tl = Timeline::new("rec1");
        tl.push("A", 0.0, 1.25);
        tl.push("B", 1.5, 3.0);
        let text = tl.to_rttm();
        assert_eq!(
            text.lines().next().unwrap(),
            "SPEAKER rec1 1 0.000 1.250 <NA> <NA> A <NA> <NA>"
        );
        let back = parse_rttm(&text, Path::new("x.rttm")).unwrap();
        assert_eq!(back, vec![tl]);
    }

    #[test]
    fn rttm_multiple_recordings_and_errors() {
        let text = "SPEAKER b 1 0 1 <NA> <NA> x <NA> <NA>\n# c\nSPEAKER a 1 2 1 <NA> <NA> y <NA> <NA>\n";
        let tls = parse_rttm(text, Path::new("m")).unwrap();
        assert_eq!(tls.len(), 2);
        assert_eq!(tls[0].recording_id, "b");
        let bad = "SPEAKER a 1 zero 1 <NA> <NA> y <NA> <NA>";
        assert!(matches!(
            parse_rttm(bad, Path::new("m")),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn regions_and_validation() {
        let mut tl = Timeline::new("r");
        tl.push("A", 0.0, 2.0);
        tl.push("B", 1.0, 3.0);
        tl.push("A", 5.0, 6.0);
        assert_eq!(tl.speech_regions(), vec![(0.0, 3.0), (5.0, 6.0)]);
        assert!(tl.validate().is_ok());
        tl.push("A", 1.5, 2.5);
        assert!(tl.validate().is_err());
        let clipped = tl.clip(1.0, 5.5, true);
        assert!(clipped.entries.iter().all(|s| s.start >= 0.0 && s.end <= 4.5));
    }

    #[test]
    fn merge_adjacent() {
        let mut tl = Timeline::new("r");
        tl.push("A", 0.0, 1.0);
        tl.push("A", 1.0, 2.0);
        tl.push("B", 2.0, 3.0);
        let m = tl.merged();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0], Segment::new("A", 0.0, 2.0));
    }
}
