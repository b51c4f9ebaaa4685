//! Flat `key=value` report files, one entry per line.

use std::fmt::Write as _;

use super::{EvalReport, SplitReport, StageMetrics};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportFile {
    pub entries: Vec<(String, f64)>,
}

impl ReportFile {
    pub fn push(&mut self, key: impl Into<String>, value: f64) {
        self.entries.push((key.into(), value));
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn add_eval(&mut self, r: &EvalReport) {
        for k in &r.ks {
            self.push(format!("R@{k}"), r.recall[k]);
        }
        for k in &r.ks {
            self.push(format!("mR@{k}"), r.mean_recall[k]);
        }
        for (name, by_k) in &r.per_predicate {
            for (k, v) in by_k {
                self.push(format!("predicate/{name}/R@{k}"), *v);
            }
        }
    }

    pub fn add_stages(&mut self, s: &StageMetrics) {
        for (n, v) in s.as_array().into_iter().enumerate() {
            self.push(format!("stage{}/R@20", n + 1), v);
        }
    }

    pub fn add_splits(&mut self, s: &SplitReport) {
        for (key, v) in s.entries() {
            if let Some(v) = v {
                self.push(format!("split/{key}"), v);
            }
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

pub fn write_report(path: &std::path::Path, report: &ReportFile) -> std::io::Result<()> {
    std::fs::write(path, report.render())
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("report line {line}: {message}")]
pub struct ReportParseError {
    pub line: usize,
    pub message: String,
}

pub fn parse_report(text: &str) -> Result<ReportFile, ReportParseError> {
    let mut report = ReportFile::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) =
            line.rsplit_once('=').ok_or_else(|| ReportParseError { line: i + 1, message: "missing '='".into() })?;
        let v: f64 =
            v.trim().parse().map_err(|e| ReportParseError { line: i + 1, message: format!("bad value: {e}") })?;
        report.push(k.to_string(), v);
    }
    Ok(report)
}
