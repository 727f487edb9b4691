//! Dataset files.
//!
//! A quantile table is CSV with header `subject,t_index,q_1,...,q_m` and
//! one row per subject and frame, optionally preceded by a schema line
//!
//! ```text
//! # wcca-quantile-table v1 support=0,1 time=0,1
//! ```
//!
//! A sample-lists file is JSON lines, one object per subject and frame:
//! `{"subject": "s01", "t_index": 0, "values": [0.31, 0.12, ...]}`.
//! Ingestion turns each value list into empirical quantiles on the grid.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::estimation::Sample;
use crate::format::fmt_float;
use crate::grid::GridConfig;
use crate::tensor::DistributionCurve;
use crate::wasserstein::{from_samples_clipped, Distribution};

pub const QUANTILE_TABLE_SCHEMA: &str = "wcca-quantile-table v1";

/// Support and time domain of a table without a schema line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableMeta {
    pub support: (f64, f64),
    pub time_domain: (f64, f64),
}

impl Default for TableMeta {
    fn default() -> Self {
        Self { support: (0.0, 1.0), time_domain: (0.0, 1.0) }
    }
}

/// Named subjects with one distribution curve each.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub subjects: Vec<String>,
    pub sample: Sample,
}

impl Dataset {
    pub fn new(subjects: Vec<String>, sample: Sample) -> Result<Self> {
        if subjects.len() != sample.len() {
            return Err(Error::SampleMismatch { left: subjects.len(), right: sample.len() });
        }
        Ok(Self { subjects, sample })
    }

    /// Subjects named `s0001`, `s0002`, ...
    pub fn numbered(sample: Sample) -> Self {
        let subjects = (1..=sample.len()).map(|i| format!("s{i:04}")).collect();
        Self { subjects, sample }
    }
}

fn parse_pair(s: &str, line: usize) -> Result<(f64, f64)> {
    let bad = || Error::ParseError { line, message: format!("expected `a,b`, got `{s}`") };
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn parse_schema_line(text: &str, line: usize, meta: &mut TableMeta) -> Result<()> {
    let body = text.trim_start_matches('#').trim();
    let Some(rest) = body.strip_prefix(QUANTILE_TABLE_SCHEMA) else {
        return Ok(());
    };
    for token in rest.split_whitespace() {
        match token.split_once('=') {
            Some(("support", v)) => meta.support = parse_pair(v, line)?,
            Some(("time", v)) => meta.time_domain = parse_pair(v, line)?,
            _ => return Err(Error::ParseError { line, message: format!("unknown schema field `{token}`") }),
        }
    }
    Ok(())
}

/// Reads a quantile table. A schema line overrides `defaults`.
///
/// Subjects keep the order of their first row; frames may come in any
/// order, but every subject must supply each `t_index` in `0..T` exactly once.
pub fn read_quantile_table<R: Read>(mut input: R, defaults: TableMeta) -> Result<Dataset> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut meta = defaults;
    let mut header_line = 1;
    for (i, line) in text.lines().enumerate() {
        header_line = i + 1;
        if line.starts_with('#') {
            parse_schema_line(line, i + 1, &mut meta)?;
        } else if !line.trim().is_empty() {
            break;
        }
    }

    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.len() < 3 || &header[0] != "subject" || &header[1] != "t_index" {
        return Err(Error::ParseError { line: header_line, message: "header must be `subject,t_index,q_1,...,q_m`".into() });
    }
    let m = header.len() - 2;

    let mut order: Vec<String> = Vec::new();
    let mut frames: HashMap<String, Vec<(usize, Vec<f64>, usize)>> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != m + 2 {
            return Err(Error::ParseError { line, message: format!("expected {} fields, found {}", m + 2, record.len()) });
        }
        let subject = record[0].to_string();
        let t: usize = record[1]
            .parse()
            .map_err(|_| Error::ParseError { line, message: format!("bad t_index `{}`", &record[1]) })?;
        let q = record
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>().map_err(|_| Error::ParseError { line, message: format!("bad number `{s}`") }))
            .collect::<Result<Vec<f64>>>()?;
        if !frames.contains_key(&subject) {
            order.push(subject.clone());
        }
        frames.entry(subject).or_default().push((t, q, line));
    }
    if order.is_empty() {
        return Err(Error::EmptyInput("quantile table has no rows".into()));
    }

    let t_points = frames.values().flat_map(|f| f.iter().map(|(t, _, _)| t + 1)).max().unwrap_or(0);
    let grid = GridConfig::with_time_domain(m, t_points, meta.support, meta.time_domain)?;
    let mut curves = Vec::with_capacity(order.len());
    for subject in &order {
        let mut rows = frames.remove(subject).expect("subject was recorded");
        rows.sort_by_key(|r| r.0);
        let mut surface = Vec::with_capacity(grid.surface_len());
        for (expected, (t, q, line)) in rows.into_iter().enumerate() {
            if t != expected {
                let message = if t < expected {
                    format!("subject `{subject}` repeats frame {t}")
                } else {
                    format!("subject `{subject}` lacks frame {expected}")
                };
                return Err(Error::ParseError { line, message });
            }
            let d = Distribution::new(q, grid).map_err(|e| Error::ParseError { line, message: e.to_string() })?;
            surface.extend(d.into_quantiles());
        }
        if surface.len() != grid.surface_len() {
            return Err(Error::EmptyInput(format!("subject `{subject}` lacks frame {}", surface.len() / m)));
        }
        curves.push(DistributionCurve::from_surface(surface, grid)?);
    }
    Dataset::new(order, Sample::new(curves)?)
}

/// Writes a quantile table with its schema line.
pub fn write_quantile_table<W: Write>(mut out: W, data: &Dataset) -> Result<()> {
    let grid = data.sample.grid();
    let (a, b) = grid.support();
    let (t0, t1) = grid.time_domain();
    writeln!(out, "# {QUANTILE_TABLE_SCHEMA} support={},{} time={},{}", fmt_float(a), fmt_float(b), fmt_float(t0), fmt_float(t1))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["subject".to_string(), "t_index".to_string()];
    header.extend((1..=grid.m_levels()).map(|j| format!("q_{j}")));
    w.write_record(&header)?;
    for (subject, curve) in data.subjects.iter().zip(data.sample.curves()) {
        for t in 0..grid.t_points() {
            let mut row = vec![subject.clone(), t.to_string()];
            row.extend(curve.frame_quantiles(t).iter().map(|&q| fmt_float(q)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn subject_id<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Text(String),
        Int(i64),
    }
    Ok(match Id::deserialize(d)? {
        Id::Text(s) => s,
        Id::Int(i) => i.to_string(),
    })
}

/// One line of a sample-lists file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleList {
    #[serde(deserialize_with = "subject_id")]
    pub subject: String,
    pub t_index: usize,
    pub values: Vec<f64>,
}

/// Reads JSON lines, skipping blank lines.
pub fn read_sample_lists<R: BufRead>(input: R) -> Result<Vec<SampleList>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleList =
            serde_json::from_str(&line).map_err(|e| Error::ParseError { line: i + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_sample_lists<W: Write>(mut out: W, lists: &[SampleList]) -> Result<()> {
    for l in lists {
        serde_json::to_writer(&mut out, l)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Sample count and clipping for one ingested frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameStats {
    pub subject: String,
    pub t_index: usize,
    pub count: usize,
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub subjects: usize,
    pub frames_per_subject: usize,
    pub total_samples: usize,
    pub total_clipped: usize,
    pub frames: Vec<FrameStats>,
}

/// Empirical quantiles of every frame on `m` levels. Values outside the
/// support are clipped to it and counted.
pub fn ingest_sample_lists(lists: &[SampleList], m: usize, meta: TableMeta) -> Result<(Dataset, IngestReport)> {
    if lists.is_empty() {
        return Err(Error::EmptyInput("sample-lists file has no records".into()));
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_subject: HashMap<&str, Vec<&SampleList>> = HashMap::new();
    for l in lists {
        if !by_subject.contains_key(l.subject.as_str()) {
            order.push(l.subject.clone());
        }
        by_subject.entry(&l.subject).or_default().push(l);
    }
    let t_points = lists.iter().map(|l| l.t_index + 1).max().unwrap_or(0);
    let grid = GridConfig::with_time_domain(m, t_points, meta.support, meta.time_domain)?;

    let mut curves = Vec::with_capacity(order.len());
    let mut stats = Vec::with_capacity(lists.len());
    for subject in &order {
        let mut frames = by_subject.remove(subject.as_str()).expect("subject was recorded");
        frames.sort_by_key(|l| l.t_index);
        let mut surface = Vec::with_capacity(grid.surface_len());
        for (expected, l) in frames.iter().enumerate() {
            if l.t_index != expected {
                let what = if l.t_index < expected { "repeats" } else { "lacks" };
                let t = if l.t_index < expected { l.t_index } else { expected };
                return Err(Error::EmptyInput(format!("subject `{subject}` {what} frame {t}")));
            }
            if l.values.is_empty() {
                return Err(Error::EmptyInput(format!("subject `{subject}` frame {} has no samples", l.t_index)));
            }
            let (d, clipped) = from_samples_clipped(&l.values, &grid)?;
            surface.extend(d.into_quantiles());
            stats.push(FrameStats { subject: subject.clone(), t_index: l.t_index, count: l.values.len(), clipped });
        }
        if frames.len() != t_points {
            return Err(Error::EmptyInput(format!("subject `{subject}` lacks frame {}", frames.len())));
        }
        curves.push(DistributionCurve::from_surface(surface, grid)?);
    }
    let report = IngestReport {
        subjects: order.len(),
        frames_per_subject: t_points,
        total_samples: stats.iter().map(|s| s.count).sum(),
        total_clipped: stats.iter().map(|s| s.clipped).sum(),
        frames: stats,
    };
    Ok((Dataset::new(order, Sample::new(curves)?)?, report))
}

/// Pairs two datasets by subject, in the order of `x`.
pub fn align_subjects(x: &Dataset, y: &Dataset) -> Result<(Sample, Sample, Vec<String>)> {
    if x.subjects.len() != y.subjects.len() {
        return Err(Error::SampleMismatch { left: x.subjects.len(), right: y.subjects.len() });
    }
    let position: HashMap<&str, usize> = y.subjects.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut picked = Vec::with_capacity(x.subjects.len());
    for s in &x.subjects {
        match position.get(s.as_str()) {
            Some(&i) => picked.push(i),
            None => return Err(Error::SubjectMismatch(format!("`{s}` appears only in X"))),
        }
    }
    Ok((x.sample.clone(), y.sample.subset(&picked)?, x.subjects.clone()))
}
