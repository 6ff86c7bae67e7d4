//! Weighted fusion of per-stream class scores.

use crate::error::{Error, Result};
use crate::kinematics::StreamKind;
use crate::objectives::argmax;

/// Class scores of one sample from one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub sample_id: String,
    pub label: usize,
    pub scores: Vec<f64>,
}

impl ScoreRow {
    pub fn predicted(&self) -> usize {
        argmax(&self.scores)
    }
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(rows: &[ScoreRow]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::invalid("accuracy of an empty score list"));
    }
    let hits = rows.iter().filter(|r| r.predicted() == r.label).count();
    Ok(hits as f64 / rows.len() as f64)
}

/// Streams and their fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub members: Vec<(StreamKind, f64)>,
}

impl EnsembleSpec {
    pub fn uniform(streams: &[StreamKind]) -> Self {
        Self {
            members: streams.iter().map(|&s| (s, 1.0)).collect(),
        }
    }

    /// Joint, bone and their velocities.
    pub fn four_streams() -> Self {
        Self::uniform(&StreamKind::ALL[..4])
    }

    /// All six streams, including both angular accelerations.
    pub fn six_streams() -> Self {
        Self::uniform(&StreamKind::ALL)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.1).collect()
    }

    pub fn validate(&self) -> Result<()> {
        validate_weights(&self.weights())
    }
}

fn validate_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid(
            "ensemble weights must be finite and nonnegative",
        ));
    }
    if !weights.iter().any(|&w| w > 0.0) {
        return Err(Error::invalid(
            "ensemble needs at least one positive weight",
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub rows: Vec<ScoreRow>,
    pub accuracy: f64,
}

/// Weighted sum of per-stream score rows, renormalized to sum to one. All
/// inputs must list the same samples in the same order.
pub fn ensemble(streams: &[&[ScoreRow]], weights: &[f64]) -> Result<EnsembleResult> {
    if streams.is_empty() || streams.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} score lists but {} weights",
            streams.len(),
            weights.len()
        )));
    }
    validate_weights(weights)?;
    let first = streams[0];
    for (s, rows) in streams.iter().enumerate().skip(1) {
        if rows.len() != first.len() {
            return Err(Error::invalid(format!(
                "stream {s} has {} samples, stream 0 has {}",
                rows.len(),
                first.len()
            )));
        }
    }
    let mut fused = Vec::with_capacity(first.len());
    for (i, head) in first.iter().enumerate() {
        let k = head.scores.len();
        let mut acc = vec![0.0; k];
        for (s, (rows, &w)) in streams.iter().zip(weights).enumerate() {
            let row = &rows[i];
            if row.sample_id != head.sample_id || row.label != head.label {
                return Err(Error::invalid(format!(
                    "stream {s} row {i} is sample {} (label {}), expected {} (label {})",
                    row.sample_id, row.label, head.sample_id, head.label
                )));
            }
            if row.scores.len() != k {
                return Err(Error::invalid(format!(
                    "stream {s} row {i} has {} classes, expected {k}",
                    row.scores.len()
                )));
            }
            for (a, &v) in acc.iter_mut().zip(&row.scores) {
                *a += w * v;
            }
        }
        let total: f64 = acc.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::invalid(format!(
                "fused scores of sample {} do not normalize",
                head.sample_id
            )));
        }
        acc.iter_mut().for_each(|a| *a /= total);
        fused.push(ScoreRow {
            sample_id: head.sample_id.clone(),
            label: head.label,
            scores: acc,
        });
    }
    let accuracy = accuracy(&fused)?;
    Ok(EnsembleResult {
        rows: fused,
        accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, label: usize, scores: &[f64]) -> ScoreRow {
        ScoreRow {
            sample_id: id.into(),
            label,
            scores: scores.to_vec(),
        }
    }

    #[test]
    fn two_stream_hand_case() {
        let a = [row("s0", 0, &[0.6, 0.4]), row("s1", 1, &[0.7, 0.3])];
        let b = [row("s0", 0, &[0.2, 0.8]), row("s1", 1, &[0.1, 0.9])];
        let r = ensemble(&[&a, &b], &[1.0, 3.0]).unwrap();
        // s0: (0.6 + 0.6, 0.4 + 2.4) / 4 = (0.3, 0.7)
        assert!((r.rows[0].scores[0] - 0.3).abs() < 1e-15);
        assert!((r.rows[0].scores[1] - 0.7).abs() < 1e-15);
        // s1: (0.7 + 0.3, 0.3 + 2.7) / 4 = (0.25, 0.75)
        assert!((r.rows[1].scores[1] - 0.75).abs() < 1e-15);
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn single_weight_selects_stream() {
        let a = [row("s0", 0, &[0.6, 0.4])];
        let b = [row("s0", 0, &[0.2, 0.8])];
        let r = ensemble(&[&a, &b], &[0.0, 1.0]).unwrap();
        assert_eq!(r.rows[0].scores, b[0].scores);
    }

    #[test]
    fn mismatches_are_errors() {
        let a = [row("s0", 0, &[0.6, 0.4])];
        let b = [row("s9", 0, &[0.2, 0.8])];
        assert!(ensemble(&[&a, &b], &[1.0, 1.0]).is_err());
        assert!(ensemble(&[&a], &[0.0]).is_err());
        assert!(ensemble(&[&a], &[1.0, 1.0]).is_err());
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn presets() {
        assert_eq!(EnsembleSpec::four_streams().members.len(), 4);
        let six = EnsembleSpec::six_streams();
        assert_eq!(six.members[5].0, StreamKind::BoneAngularAcceleration);
        six.validate().unwrap();
    }
}
