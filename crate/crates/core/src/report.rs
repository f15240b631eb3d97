//! Rendering result rows as CSV, JSON or a pass/fail summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{ResultRow, Threshold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
    Summary,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "summary" => Ok(Format::Summary),
            _ => Err(Error::config("format", format!("expected csv, json or summary, got `{s}`"))),
        }
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "experiment",
    "n",
    "stat",
    "value",
    "err",
    "pvalue",
    "seed",
    "runtime_ms",
    "config_hash",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_csv<W: std::io::Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.n.to_string(),
            r.stat.clone(),
            r.value.to_string(),
            opt(r.err),
            opt(r.pvalue),
            r.seed.to_string(),
            r.runtime_ms.to_string(),
            r.config_hash.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let parse_f = |s: &str, what: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|_| Error::config(what.to_string(), format!("bad number `{s}`")))
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::config("csv", format!("expected {} columns, got {}", CSV_HEADER.len(), rec.len())));
        }
        let optional = |i: usize| -> Result<Option<f64>> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                parse_f(&rec[i], CSV_HEADER[i]).map(Some)
            }
        };
        rows.push(ResultRow {
            experiment: rec[0].to_string(),
            n: rec[1].parse().map_err(|_| Error::config("n", format!("bad integer `{}`", &rec[1])))?,
            stat: rec[2].to_string(),
            value: parse_f(&rec[3], "value")?,
            err: optional(4)?,
            pvalue: optional(5)?,
            seed: rec[6].parse().map_err(|_| Error::config("seed", format!("bad integer `{}`", &rec[6])))?,
            runtime_ms: rec[7]
                .parse()
                .map_err(|_| Error::config("runtime_ms", format!("bad integer `{}`", &rec[7])))?,
            config_hash: rec[8].to_string(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryLine {
    pub row: ResultRow,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub lines: Vec<SummaryLine>,
}

impl Summary {
    pub fn all_pass(&self) -> bool {
        self.lines.iter().all(|l| l.pass)
    }
}

/// Checks every row whose statistic has a threshold.
pub fn summarize(rows: &[ResultRow], thresholds: &BTreeMap<String, Threshold>) -> Summary {
    let lines = rows
        .iter()
        .filter_map(|r| {
            thresholds.get(&r.stat).map(|t| SummaryLine {
                row: r.clone(),
                pass: t.check(r),
            })
        })
        .collect();
    Summary { lines }
}

fn render_summary(rows: &[ResultRow], thresholds: &BTreeMap<String, Threshold>) -> String {
    let summary = summarize(rows, thresholds);
    let mut s = String::new();
    for r in rows {
        let verdict = summary
            .lines
            .iter()
            .find(|l| l.row.n == r.n && l.row.stat == r.stat && l.row.experiment == r.experiment)
            .map(|l| if l.pass { "PASS" } else { "FAIL" })
            .unwrap_or("-");
        let _ = write!(s, "{:<4} {} n={} {} = {}", verdict, r.experiment, r.n, r.stat, r.value);
        if let Some(e) = r.err {
            let _ = write!(s, " ± {e:.3e}");
        }
        if let Some(p) = r.pvalue {
            let _ = write!(s, " (p = {p:.4})");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "{}", if summary.all_pass() { "overall: PASS" } else { "overall: FAIL" });
    s
}

/// Renders rows in the requested format. Thresholds are used only for the
/// summary.
pub fn emit_report(rows: &[ResultRow], format: Format, thresholds: &BTreeMap<String, Threshold>) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyResult);
    }
    Ok(match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_csv(rows, &mut buf)?;
            String::from_utf8(buf).expect("csv output is utf-8")
        }
        Format::Json => {
            let mut s = serde_json::to_string_pretty(rows)?;
            s.push('\n');
            s
        }
        Format::Summary => render_summary(rows, thresholds),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(stat: &str, value: f64, pvalue: Option<f64>) -> ResultRow {
        ResultRow {
            experiment: "point_process".into(),
            n: 400,
            stat: stat.into(),
            value,
            err: Some(value / 7.0),
            pvalue,
            seed: 11,
            runtime_ms: 5,
            config_hash: "abc".into(),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![
            row("a", 0.1 + 0.2, Some(1.0 / 3.0)),
            row("b", 1e-300, None),
            row("c", -123456.789e10, Some(0.0)),
        ];
        let text = emit_report(&rows, Format::Csv, &BTreeMap::new()).unwrap();
        assert!(text.starts_with("experiment,n,stat,value,err,pvalue,seed,runtime_ms,config_hash\n"));
        let back = read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn json_round_trip() {
        let rows = vec![row("a", 0.3, None)];
        let text = emit_report(&rows, Format::Json, &BTreeMap::new()).unwrap();
        let back: Vec<ResultRow> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn empty_rows_rejected() {
        assert!(matches!(emit_report(&[], Format::Csv, &BTreeMap::new()), Err(Error::EmptyResult)));
    }

    #[test]
    fn low_pvalue_fails_summary() {
        let mut t = BTreeMap::new();
        t.insert(
            "ks".to_string(),
            Threshold {
                pvalue_min: Some(0.01),
                ..Default::default()
            },
        );
        let rows = vec![row("ks", 0.1, Some(0.003)), row("other", 1.0, None)];
        let s = summarize(&rows, &t);
        assert_eq!(s.lines.len(), 1);
        assert!(!s.all_pass());
        let text = emit_report(&rows, Format::Summary, &t).unwrap();
        assert!(text.contains("FAIL point_process n=400 ks"));
        assert!(text.trim_end().ends_with("overall: FAIL"));
        let ok = vec![row("ks", 0.1, Some(0.5))];
        assert!(summarize(&ok, &t).all_pass());
    }

    #[test]
    fn format_parsing() {
        assert_eq!("json".parse::<Format>().unwrap(), Format::Json);
        assert!("xml".parse::<Format>().is_err());
    }
}
