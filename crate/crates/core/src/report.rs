//! CSV tables and the JSON experiment report.
//!
//! Tables carry their metadata in leading `# key,value` comment lines so a
//! single file is self-describing and parses back to the same values.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

use crate::ccs::{ControllerTrace, Mechanism, SampleBatch};
use crate::error::{LabError, Result};
use crate::experiments::{CompareDiagnostics, CompareFailure, CompareReport, CompareRow, LinearityPoint, LinearityReport, LinearityTarget};
use crate::metrics::LineFit;

pub const LINEARITY_COLUMNS: [&str; 7] = [
    "target_id",
    "c0",
    "sin_c0",
    "mean_residual_norm",
    "normalized_residual",
    "n",
    "seed",
];

pub const COMPARE_COLUMNS: [&str; 8] = [
    "target_id",
    "mechanism",
    "final_scale",
    "achieved_rmse",
    "psnr_mean_db",
    "sample_sd",
    "iterations",
    "converged",
];

pub const BATCH_COLUMNS: [&str; 5] = ["draw_index", "scale", "residual_norm", "per_coord_rmse", "seed"];

fn writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::WriterBuilder::new().has_headers(false).from_writer(buf)
}

fn finish(buf: Vec<u8>) -> Result<String> {
    String::from_utf8(buf).map_err(|e| LabError::Protocol(e.to_string()))
}

/// Splits leading `#` lines into key/value metadata and the table body.
fn split_header(text: &str) -> (Vec<Vec<String>>, String) {
    let mut meta = Vec::new();
    let mut body = String::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            meta.push(rest.trim().split(',').map(str::to_string).collect());
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    (meta, body)
}

fn check_columns(reader: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<()> {
    let headers = reader.headers()?;
    if headers.iter().ne(expected.iter().copied()) {
        return Err(LabError::Protocol(format!(
            "unexpected columns {:?}, expected {expected:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T> {
    field
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| LabError::Protocol(format!("bad or missing {what}")))
}

pub fn linearity_to_csv(report: &LinearityReport) -> Result<String> {
    let mut buf = Vec::new();
    writeln!(buf, "# pooled_r2,{}", report.pooled_r2)?;
    for t in &report.per_target {
        writeln!(buf, "# fit,{},{},{}", t.target_id, t.fit.slope, t.fit.bias)?;
    }
    {
        let mut w = writer(&mut buf);
        w.write_record(LINEARITY_COLUMNS)?;
        for t in &report.per_target {
            for p in &t.points {
                w.write_record([
                    t.target_id.clone(),
                    p.c0.to_string(),
                    p.sin_c0.to_string(),
                    p.mean_residual_norm.to_string(),
                    p.normalized_residual.to_string(),
                    p.n.to_string(),
                    p.seed.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    finish(buf)
}

pub fn linearity_from_csv(text: &str) -> Result<LinearityReport> {
    let (meta, body) = split_header(text);
    let mut pooled_r2 = None;
    let mut fits: Vec<(String, LineFit)> = Vec::new();
    for m in &meta {
        match m.first().map(String::as_str) {
            Some("pooled_r2") => pooled_r2 = Some(parse(m.get(1).map(String::as_str), "pooled_r2")?),
            Some("fit") => fits.push((
                m.get(1).cloned().unwrap_or_default(),
                LineFit {
                    slope: parse(m.get(2).map(String::as_str), "slope")?,
                    bias: parse(m.get(3).map(String::as_str), "bias")?,
                },
            )),
            _ => {}
        }
    }
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    check_columns(&mut reader, &LINEARITY_COLUMNS)?;
    let mut points: BTreeMap<String, Vec<LinearityPoint>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        points.entry(rec[0].to_string()).or_default().push(LinearityPoint {
            c0: parse(rec.get(1), "c0")?,
            sin_c0: parse(rec.get(2), "sin_c0")?,
            mean_residual_norm: parse(rec.get(3), "mean_residual_norm")?,
            normalized_residual: parse(rec.get(4), "normalized_residual")?,
            n: parse(rec.get(5), "n")?,
            seed: parse(rec.get(6), "seed")?,
        });
    }
    let per_target = fits
        .into_iter()
        .map(|(target_id, fit)| LinearityTarget {
            points: points.remove(&target_id).unwrap_or_default(),
            target_id,
            fit,
        })
        .collect();
    Ok(LinearityReport {
        per_target,
        pooled_r2: pooled_r2.ok_or_else(|| LabError::Protocol("missing pooled_r2".into()))?,
    })
}

pub fn compare_to_csv(rows: &[CompareRow]) -> Result<String> {
    let mut buf = Vec::new();
    {
        let mut w = writer(&mut buf);
        w.write_record(COMPARE_COLUMNS)?;
        for r in rows {
            w.write_record([
                r.target_id.clone(),
                r.mechanism.to_string(),
                r.final_scale.to_string(),
                r.achieved_rmse.to_string(),
                r.psnr_mean_db.to_string(),
                r.sample_sd.to_string(),
                r.iterations.to_string(),
                r.converged.to_string(),
            ])?;
        }
        w.flush()?;
    }
    finish(buf)
}

pub fn compare_from_csv(text: &str) -> Result<Vec<CompareRow>> {
    let (_, body) = split_header(text);
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    check_columns(&mut reader, &COMPARE_COLUMNS)?;
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            Ok(CompareRow {
                target_id: rec[0].to_string(),
                mechanism: parse::<Mechanism>(rec.get(1), "mechanism")?,
                final_scale: parse(rec.get(2), "final_scale")?,
                achieved_rmse: parse(rec.get(3), "achieved_rmse")?,
                psnr_mean_db: parse(rec.get(4), "psnr_mean_db")?,
                sample_sd: parse(rec.get(5), "sample_sd")?,
                iterations: parse(rec.get(6), "iterations")?,
                converged: parse(rec.get(7), "converged")?,
            })
        })
        .collect()
}

/// The per-draw view of a [`SampleBatch`] that goes to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchTable {
    pub target_id: String,
    pub mechanism: Mechanism,
    pub scale: f64,
    pub t0: Option<usize>,
    pub seed: u64,
    pub rows: Vec<BatchRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub draw_index: usize,
    pub scale: f64,
    pub residual_norm: f64,
    pub per_coord_rmse: f64,
    pub seed: u64,
}

impl From<&SampleBatch> for BatchTable {
    fn from(b: &SampleBatch) -> Self {
        BatchTable {
            target_id: b.target_id.clone(),
            mechanism: b.mechanism,
            scale: b.scale,
            t0: b.t0,
            seed: b.seed,
            rows: b
                .draws
                .iter()
                .map(|d| BatchRow {
                    draw_index: d.index,
                    scale: b.scale,
                    residual_norm: d.residual_norm,
                    per_coord_rmse: d.rmse,
                    seed: d.seed,
                })
                .collect(),
        }
    }
}

pub fn batch_to_csv(table: &BatchTable) -> Result<String> {
    let mut buf = Vec::new();
    writeln!(buf, "# target_id,{}", table.target_id)?;
    writeln!(buf, "# mechanism,{}", table.mechanism)?;
    writeln!(buf, "# scale,{}", table.scale)?;
    if let Some(t0) = table.t0 {
        writeln!(buf, "# t0,{t0}")?;
    }
    writeln!(buf, "# seed,{}", table.seed)?;
    {
        let mut w = writer(&mut buf);
        w.write_record(BATCH_COLUMNS)?;
        for r in &table.rows {
            w.write_record([
                r.draw_index.to_string(),
                r.scale.to_string(),
                r.residual_norm.to_string(),
                r.per_coord_rmse.to_string(),
                r.seed.to_string(),
            ])?;
        }
        w.flush()?;
    }
    finish(buf)
}

pub fn batch_from_csv(text: &str) -> Result<BatchTable> {
    let (meta, body) = split_header(text);
    let get = |key: &str| meta.iter().find(|m| m[0] == key).and_then(|m| m.get(1)).map(String::as_str);
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    check_columns(&mut reader, &BATCH_COLUMNS)?;
    let rows = reader
        .records()
        .map(|rec| {
            let rec = rec?;
            Ok(BatchRow {
                draw_index: parse(rec.get(0), "draw_index")?,
                scale: parse(rec.get(1), "scale")?,
                residual_norm: parse(rec.get(2), "residual_norm")?,
                per_coord_rmse: parse(rec.get(3), "per_coord_rmse")?,
                seed: parse(rec.get(4), "seed")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchTable {
        target_id: get("target_id").unwrap_or_default().to_string(),
        mechanism: parse(get("mechanism"), "mechanism")?,
        scale: parse(get("scale"), "scale")?,
        t0: get("t0").map(|v| parse(Some(v), "t0")).transpose()?,
        seed: parse(get("seed"), "seed")?,
        rows,
    })
}

/// Everything a run produced, with enough context to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub wall_clock_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linearity: Option<LinearityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<Vec<CompareRow>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<CompareDiagnostics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<CompareFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<BatchTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerTrace>,
}

impl ExperimentReport {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        ExperimentReport {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
            wall_clock_seconds: 0.0,
            linearity: None,
            compare: None,
            diagnostics: Vec::new(),
            failures: Vec::new(),
            batch: None,
            controller: None,
        }
    }

    pub fn with_compare(mut self, report: CompareReport) -> Self {
        self.compare = Some(report.rows);
        self.diagnostics = report.diagnostics;
        self.failures = report.failures;
        self
    }

    /// Same run, ignoring wall-clock time.
    pub fn same_results(&self, other: &ExperimentReport) -> bool {
        let mut a = self.clone();
        a.wall_clock_seconds = other.wall_clock_seconds;
        a == *other
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
