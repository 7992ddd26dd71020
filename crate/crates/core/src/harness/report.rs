//! CSV output for traces and metric summaries.
//!
//! Floats use Rust's shortest round-trip formatting, booleans are `0`/`1`,
//! missing values are empty fields and lines end with `\n`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, Terminator, WriterBuilder};

use super::metrics::{MetricsMeans, MetricsRow};
use crate::attacks::TraceRecord;
use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 5] = ["query", "best_l2", "best_linf", "clean_query", "detected"];

fn float(v: f64) -> String {
    format!("{v:?}")
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_rows(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_rows_to(file, rows).map_err(|e| csv_err(path, e))
}

fn write_rows_to(out: impl Write, rows: &[Vec<String>]) -> std::result::Result<(), csv::Error> {
    let mut w = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(out);
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn trace_rows(records: &[TraceRecord]) -> Vec<Vec<String>> {
    let mut rows = vec![TRACE_HEADER.iter().map(|s| s.to_string()).collect()];
    for r in records {
        rows.push(vec![
            r.query.to_string(),
            float(r.best_l2),
            r.best_linf.map(float).unwrap_or_default(),
            flag(r.clean_query).into(),
            flag(r.detected).into(),
        ]);
    }
    rows
}

pub fn trace_csv_string(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_rows_to(&mut buf, &trace_rows(records)).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is UTF-8")
}

pub fn write_trace(path: impl AsRef<Path>, records: &[TraceRecord]) -> Result<()> {
    write_rows(path.as_ref(), &trace_rows(records))
}

fn parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Format(format!("bad {what} field {field:?}")))
}

fn parse_flag(field: &str) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::Format(format!("bad flag {field:?}"))),
    }
}

pub fn parse_trace(input: impl Read) -> Result<Vec<TraceRecord>> {
    let mut r = ReaderBuilder::new().from_reader(input);
    let header = r.headers().map_err(|e| Error::Format(e.to_string()))?;
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::Format(format!("unexpected trace header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        if rec.len() != TRACE_HEADER.len() {
            return Err(Error::Format("trace row has the wrong width".into()));
        }
        out.push(TraceRecord {
            query: parse(&rec[0], "query")?,
            best_l2: parse(&rec[1], "best_l2")?,
            best_linf: if rec[2].is_empty() { None } else { Some(parse(&rec[2], "best_linf")?) },
            clean_query: parse_flag(&rec[3])?,
            detected: parse_flag(&rec[4])?,
        });
    }
    Ok(out)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace(file)
}

/// Header of a summary file: `image,attack,norm@B…,queries_to@τ…,detections`.
pub fn summary_header(budgets: &[usize], thresholds: &[f64]) -> Vec<String> {
    let mut h = vec!["image".to_string(), "attack".to_string()];
    h.extend(budgets.iter().map(|b| format!("norm@{b}")));
    h.extend(thresholds.iter().map(|t| format!("queries_to@{t}")));
    h.push("detections".into());
    h
}

pub fn summary_row(row: &MetricsRow) -> Vec<String> {
    let mut r = vec![row.image.clone(), row.attack.clone()];
    r.extend(row.norms.iter().map(|&v| float(v)));
    r.extend(row.queries_to.iter().map(|q| q.to_string()));
    r.push(row.detections.to_string());
    r
}

pub fn summary_line(row: &MetricsRow) -> String {
    summary_row(row).join(",")
}

pub fn write_summary(path: impl AsRef<Path>, budgets: &[usize], thresholds: &[f64], rows: &[MetricsRow]) -> Result<()> {
    let mut all = vec![summary_header(budgets, thresholds)];
    all.extend(rows.iter().map(summary_row));
    write_rows(path.as_ref(), &all)
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = ReaderBuilder::new().from_reader(file);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let n_budgets = header.iter().filter(|h| h.starts_with("norm@")).count();
    let n_thresholds = header.iter().filter(|h| h.starts_with("queries_to@")).count();
    if header.len() != 3 + n_budgets + n_thresholds {
        return Err(Error::Format(format!("unexpected summary header in {}", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let norms = (0..n_budgets).map(|j| parse(&rec[2 + j], "norm")).collect::<Result<_>>()?;
        let queries_to = (0..n_thresholds)
            .map(|j| parse(&rec[2 + n_budgets + j], "queries_to"))
            .collect::<Result<_>>()?;
        rows.push(MetricsRow {
            image: rec[0].to_string(),
            attack: rec[1].to_string(),
            norms,
            queries_to,
            detections: parse(&rec[rec.len() - 1], "detections")?,
        });
    }
    Ok(rows)
}

/// One line per attack with column means.
pub fn write_means(path: impl AsRef<Path>, budgets: &[usize], thresholds: &[f64], means: &[MetricsMeans]) -> Result<()> {
    let mut header = summary_header(budgets, thresholds);
    header[0] = "images".into();
    header.swap(0, 1);
    let mut rows = vec![header];
    for m in means {
        let mut r = vec![m.attack.clone(), m.images.to_string()];
        r.extend(m.norms.iter().map(|&v| float(v)));
        r.extend(m.queries_to.iter().map(|&v| float(v)));
        r.push(float(m.detections));
        rows.push(r);
    }
    write_rows(path.as_ref(), &rows)
}
