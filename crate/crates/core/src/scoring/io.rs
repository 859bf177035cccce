use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of a trial list: `label enroll_id test_id`, label 1 (target) or 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trial {
    pub target: bool,
    pub enroll: String,
    pub test: String,
}

pub fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [label, enroll, test] => {
                let target = match *label {
                    "1" => true,
                    "0" => false,
                    other => return Err(Error::format(path, format!("line {}: label `{other}` is not 0 or 1", n + 1))),
                };
                out.push(Trial {
                    target,
                    enroll: enroll.to_string(),
                    test: test.to_string(),
                });
            }
            _ => return Err(Error::format(path, format!("line {}: expected `label enroll test`", n + 1))),
        }
    }
    Ok(out)
}

/// One line of a score file: `enroll_id test_id raw normalized` (`-` when not normalized).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreLine {
    pub enroll: String,
    pub test: String,
    pub raw: f64,
    pub norm: Option<f64>,
}

pub fn write_scores(path: &Path, scores: &[ScoreLine]) -> Result<()> {
    let mut s = String::new();
    for l in scores {
        let norm = l.norm.map_or_else(|| "-".to_string(), |v| format!("{v:.10}"));
        writeln!(s, "{} {} {:.10} {norm}", l.enroll, l.test, l.raw).expect("writing to a String");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreLine>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let num = |s: &str, n: usize| {
        s.parse::<f64>()
            .map_err(|_| Error::format(path, format!("line {}: `{s}` is not a number", n + 1)))
    };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            [] => continue,
            [e, t, raw, norm] => out.push(ScoreLine {
                enroll: e.to_string(),
                test: t.to_string(),
                raw: num(raw, n)?,
                norm: if *norm == "-" { None } else { Some(num(norm, n)?) },
            }),
            _ => return Err(Error::format(path, format!("line {}: expected `enroll test raw norm`", n + 1))),
        }
    }
    Ok(out)
}

/// Metrics for one score column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub system: String,
    pub eer_percent: f64,
    pub min_dcf: f64,
    pub eer_threshold: f64,
    pub dcf_threshold: f64,
    pub p_target: f64,
    pub targets: usize,
    pub nontargets: usize,
}
