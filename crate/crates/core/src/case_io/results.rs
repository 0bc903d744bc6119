//! CSV and Markdown result tables.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COLUMNS: [&str; 9] = [
    "case",
    "relaxation",
    "periods",
    "dual_bound",
    "primal_bound",
    "gap_pct",
    "time_s",
    "infeasibility",
    "seed",
];

/// One result line. Missing values (failed solve, undefined gap) are empty
/// cells in CSV and `n/a` in Markdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub case: String,
    pub relaxation: String,
    pub periods: usize,
    pub dual_bound: Option<f64>,
    pub primal_bound: Option<f64>,
    pub gap_pct: Option<f64>,
    pub time_s: f64,
    pub infeasibility: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "md" | "markdown" => Ok(Format::Markdown),
            other => Err(Error::Config(format!("unknown output format {other:?} (expected csv or md)"))),
        }
    }
}

pub fn to_csv_string(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn cell(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) => format!("{x:.digits$}"),
        None => "n/a".into(),
    }
}

pub fn to_markdown_string(rows: &[ResultRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| {} |", COLUMNS.join(" | "));
    let _ = writeln!(s, "|{}", "---|".repeat(COLUMNS.len()));
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {:.2} | {} | {} |",
            r.case,
            r.relaxation,
            r.periods,
            cell(r.dual_bound, 4),
            cell(r.primal_bound, 4),
            cell(r.gap_pct, 2),
            r.time_s,
            r.infeasibility.map_or("n/a".into(), |v| format!("{v:.2e}")),
            r.seed
        );
    }
    s
}

pub fn write_results(rows: &[ResultRow], path: &Path, format: Format) -> Result<()> {
    let text = match format {
        Format::Csv => to_csv_string(rows)?,
        Format::Markdown => to_markdown_string(rows),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> ResultRow {
        ResultRow {
            case: "A_gen".into(),
            relaxation: "lr".into(),
            periods: 4,
            dual_bound: Some(100.0),
            primal_bound: Some(102.0),
            gap_pct: Some(2.0),
            time_s: 0.5,
            infeasibility: None,
            seed: 7,
        }
    }

    #[test]
    fn empty_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_results(&[], &p, Format::Csv).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().trim_end(), COLUMNS.join(","));
        assert!(read_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn one_row_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_results(&[row()], &p, Format::Csv).unwrap();
        assert_eq!(read_csv(&p).unwrap(), vec![row()]);
    }

    #[test]
    fn markdown_has_all_columns() {
        let md = to_markdown_string(&[row()]);
        let lines: Vec<_> = md.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2].matches('|').count(), 10);
        assert!(lines[2].contains("n/a"));
    }
}
