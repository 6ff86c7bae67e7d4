//! Score dumps (`sample_id,true_label,score_0,..`) and per-epoch metric logs.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::train::{EpochLog, ScoreRow};

use super::container::parse_field;

pub const METRIC_HEADER: &str = "epoch,lr,relevancy,compression,redundancy,total,train_accuracy";

pub fn write_scores(rows: &[ScoreRow]) -> String {
    let k = rows.first().map_or(0, |r| r.scores.len());
    let mut s = String::from("sample_id,true_label");
    for c in 0..k {
        let _ = write!(s, ",score_{c}");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{}", r.sample_id, r.label);
        for v in &r.scores {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn read_scores(text: &str) -> Result<Vec<ScoreRow>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("score file is empty".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "sample_id" || cols[1] != "true_label" {
        return Err(Error::parse_line(
            1,
            "expected header `sample_id,true_label,score_0,...`",
        ));
    }
    let k = cols.len() - 2;
    lines
        .map(|(idx, line)| {
            let no = idx + 1;
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != k + 2 {
                return Err(Error::parse_line(
                    no,
                    format!("{} fields, expected {}", f.len(), k + 2),
                ));
            }
            let scores = f[2..]
                .iter()
                .map(|v| parse_field::<f64>(no, "score", v))
                .collect::<Result<Vec<_>>>()?;
            if scores.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::parse_line(
                    no,
                    "scores must be finite and nonnegative",
                ));
            }
            Ok(ScoreRow {
                sample_id: f[0].to_string(),
                label: parse_field(no, "label", f[1])?,
                scores,
            })
        })
        .collect()
}

pub fn write_metric_log(log: &[EpochLog]) -> String {
    let mut s = format!("{METRIC_HEADER}\n");
    for e in log {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            e.epoch, e.lr, e.relevancy, e.compression, e.redundancy, e.total, e.train_accuracy
        );
    }
    s
}

pub fn read_metric_log(text: &str) -> Result<Vec<EpochLog>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRIC_HEADER => {}
        _ => {
            return Err(Error::parse_line(
                1,
                format!("expected header `{METRIC_HEADER}`"),
            ))
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(idx, line)| {
            let no = idx + 1;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::parse_line(
                    no,
                    format!("{} fields, expected 7", f.len()),
                ));
            }
            let num = |k: usize, what: &str| parse_field::<f64>(no, what, f[k].trim());
            Ok(EpochLog {
                epoch: parse_field(no, "epoch", f[0].trim())?,
                lr: num(1, "lr")?,
                relevancy: num(2, "relevancy")?,
                compression: num(3, "compression")?,
                redundancy: num(4, "redundancy")?,
                total: num(5, "total")?,
                train_accuracy: num(6, "accuracy")?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_round_trip() {
        let rows = vec![
            ScoreRow {
                sample_id: "a".into(),
                label: 1,
                scores: vec![0.25, 0.75],
            },
            ScoreRow {
                sample_id: "b".into(),
                label: 0,
                scores: vec![0.1 + 0.2, 0.7],
            },
        ];
        let text = write_scores(&rows);
        assert!(text.starts_with("sample_id,true_label,score_0,score_1\n"));
        assert_eq!(read_scores(&text).unwrap(), rows);
        assert!(read_scores("sample_id,true_label,score_0\nx,0\n").is_err());
        assert!(read_scores("").is_err());
    }

    #[test]
    fn metric_log_round_trips() {
        let log = vec![EpochLog {
            epoch: 3,
            lr: 0.05,
            relevancy: 1.25,
            compression: 0.5,
            redundancy: 0.0,
            total: 1.255,
            train_accuracy: 0.5,
        }];
        assert_eq!(read_metric_log(&write_metric_log(&log)).unwrap(), log);
    }
}
