//! Training losses: cross-entropy and the information-bottleneck objective
//! built from a Gaussian bottleneck code.
//!
//! Both objectives classify a sampled code `z`, so a run with zero
//! bottleneck weights follows exactly the same arithmetic as plain
//! cross-entropy.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Real, Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.01;
pub const DEFAULT_LAMBDA: f64 = 1.0;

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    check_finite("logits", logits)?;
    if target >= logits.len() {
        return Err(Error::invalid(format!(
            "target class {target} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(-log_softmax(logits)[target])
}

/// `KL(N(mu, diag(exp(log_var))) || N(0, I))`.
pub fn gaussian_kl(mu: &[f64], log_var: &[f64]) -> Result<f64> {
    if mu.len() != log_var.len() {
        return Err(Error::shape(format!(
            "mu has {} dims, log_var {}",
            mu.len(),
            log_var.len()
        )));
    }
    check_finite("mu", mu)?;
    check_finite("log_var", log_var)?;
    Ok(mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum())
}

/// `KL(softmax(p) || softmax(q))`, clamped at zero against rounding.
pub fn categorical_kl(p_logits: &[f64], q_logits: &[f64]) -> Result<f64> {
    if p_logits.len() != q_logits.len() {
        return Err(Error::shape(
            "categorical_kl: logit vectors differ in length",
        ));
    }
    check_finite("logits", p_logits)?;
    check_finite("logits", q_logits)?;
    let (lp, lq) = (log_softmax(p_logits), log_softmax(q_logits));
    let kl: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub relevancy: f64,
    pub compression: f64,
    pub redundancy: f64,
    pub total: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(relevancy: f64, compression: f64, redundancy: f64, beta: f64, lambda: f64) -> Self {
        Self {
            relevancy,
            compression,
            redundancy,
            total: combine(relevancy, compression, redundancy, beta, lambda),
            beta,
            lambda,
        }
    }
}

// zero weights drop their term entirely, keeping the result bit-identical to
// the unweighted relevancy
fn combine(relevancy: f64, compression: f64, redundancy: f64, beta: f64, lambda: f64) -> f64 {
    let mut total = relevancy;
    if beta != 0.0 {
        total += beta * compression;
    }
    if lambda != 0.0 {
        total += lambda * redundancy;
    }
    total
}

/// Loss on plain values. `logits_z` classifies the sampled code, `logits_mu`
/// the mean code; the redundancy term pulls the two predictions together.
pub fn ib_loss(
    logits_z: &[f64],
    logits_mu: &[f64],
    mu: &[f64],
    log_var: &[f64],
    target: usize,
    beta: f64,
    lambda: f64,
) -> Result<LossBreakdown> {
    let relevancy = cross_entropy(logits_z, target)?;
    let compression = gaussian_kl(mu, log_var)?;
    let redundancy = categorical_kl(logits_mu, logits_z)?;
    Ok(LossBreakdown::new(
        relevancy,
        compression,
        redundancy,
        beta,
        lambda,
    ))
}

/// Which loss drives training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    CrossEntropy,
    InformationBottleneck { beta: f64, lambda: f64 },
}

impl Objective {
    pub fn ib_default() -> Self {
        Objective::InformationBottleneck {
            beta: DEFAULT_BETA,
            lambda: DEFAULT_LAMBDA,
        }
    }

    /// `(beta, lambda)`; both zero for cross-entropy.
    pub fn weights(self) -> (f64, f64) {
        match self {
            Objective::CrossEntropy => (0.0, 0.0),
            Objective::InformationBottleneck { beta, lambda } => (beta, lambda),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::CrossEntropy => f.write_str("ce"),
            Objective::InformationBottleneck { .. } => f.write_str("ib"),
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    /// `ce` or `ib` (default weights).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(Objective::CrossEntropy),
            "ib" => Ok(Objective::ib_default()),
            other => Err(Error::invalid(format!(
                "unknown objective `{other}` (expected ce or ib)"
            ))),
        }
    }
}

/// The loss terms as tape vars. All three terms are recorded; only the
/// weighted ones feed `total`.
#[derive(Debug, Clone, Copy)]
pub struct TapeLoss {
    pub total: Var,
    pub relevancy: Var,
    pub compression: Var,
    pub redundancy: Var,
}

pub fn record_loss<T: Real>(
    tape: &mut Tape<T>,
    logits_z: Var,
    logits_mu: Var,
    mu: Var,
    log_var: Var,
    target: usize,
    objective: Objective,
) -> Result<TapeLoss> {
    let (beta, lambda) = objective.weights();
    let relevancy = tape.softmax_cross_entropy(logits_z, target)?;
    let compression = tape.gaussian_kl(mu, log_var)?;
    let redundancy = tape.categorical_kl(logits_mu, logits_z)?;
    let mut total = relevancy;
    if beta != 0.0 {
        let t = tape.scale(compression, T::lit(beta));
        total = tape.add(total, t)?;
    }
    if lambda != 0.0 {
        let t = tape.scale(redundancy, T::lit(lambda));
        total = tape.add(total, t)?;
    }
    Ok(TapeLoss {
        total,
        relevancy,
        compression,
        redundancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_kl_closed_forms() {
        assert_eq!(gaussian_kl(&[0.0], &[0.0]).unwrap(), 0.0);
        assert!((gaussian_kl(&[1.0], &[0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(gaussian_kl(&[f64::NAN], &[0.0]).is_err());
        assert!(gaussian_kl(&[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn zero_weights_reduce_to_cross_entropy() {
        let lz = [0.3, -1.2, 2.0];
        let lm = [0.1, 0.4, 1.0];
        let b = ib_loss(&lz, &lm, &[0.5, -0.2], &[-1.0, 0.3], 2, 0.0, 0.0).unwrap();
        assert_eq!(b.total, cross_entropy(&lz, 2).unwrap());
        assert!(b.compression > 0.0 && b.redundancy > 0.0);
    }

    #[test]
    fn identical_logits_have_no_redundancy() {
        let l = [1.0, 2.0, -3.0];
        assert_eq!(categorical_kl(&l, &l).unwrap(), 0.0);
    }

    #[test]
    fn two_class_breakdown_by_hand() {
        // z logits (0, ln 3): p(z) = (1/4, 3/4); mu logits (0, 0): p(mu) = (1/2, 1/2)
        let lz = [0.0, 3f64.ln()];
        let lm = [0.0, 0.0];
        let b = ib_loss(&lz, &lm, &[1.0], &[0.0], 0, 0.5, 2.0).unwrap();
        let rel = 4f64.ln();
        let red = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((b.relevancy - rel).abs() < 1e-14);
        assert!((b.compression - 0.5).abs() < 1e-15);
        assert!((b.redundancy - red).abs() < 1e-14);
        assert!((b.total - (rel + 0.25 + 2.0 * red)).abs() < 1e-14);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[1.0, 2.0, 3.0]);
        let b = softmax(&[101.0, 102.0, 103.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-13);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(argmax(&a), 2);
    }

    #[test]
    fn objective_names() {
        assert_eq!("ce".parse::<Objective>().unwrap(), Objective::CrossEntropy);
        assert_eq!(
            "ib".parse::<Objective>().unwrap().weights(),
            (DEFAULT_BETA, DEFAULT_LAMBDA)
        );
        assert!("mine".parse::<Objective>().is_err());
    }
}
