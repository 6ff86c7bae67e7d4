use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    /// `(input index, coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    pub coords_checked: usize,
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.numel() != 1 {
        return Err(Error::shape("grad_check needs a scalar-valued function"));
    }
    let v = value.item();
    if !v.is_finite() {
        return Err(Error::NonFinite("grad_check function output".into()));
    }
    Ok(v)
}

/// Compares reverse-mode gradients of the scalar function `f` against
/// central differences `(f(x + εe) - f(x - εe)) / 2ε` on every coordinate of
/// every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let coords: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.numel()).collect()).collect();
    check_coords(&f, inputs, eps, &coords)
}

/// Like [`grad_check`] but checks at most `per_input` randomly chosen
/// coordinates of each input.
pub fn grad_check_sampled<F>(
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    per_input: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            let n = t.numel();
            let mut idx = sample(&mut rng, n, per_input.min(n)).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect();
    check_coords(&f, inputs, eps, &coords)
}

fn check_coords<F>(
    f: &F,
    inputs: &[Tensor<f64>],
    eps: f64,
    coords: &[Vec<usize>],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).item().is_finite() {
        return Err(Error::NonFinite("grad_check function output".into()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();
    if analytic.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("analytic gradient".into()));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coords_checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (input, idxs) in coords.iter().enumerate() {
        for &k in idxs {
            let orig = probe[input].data()[k];
            probe[input].data_mut()[k] = orig + eps;
            let plus = eval(f, &probe)?;
            probe[input].data_mut()[k] = orig - eps;
            let minus = eval(f, &probe)?;
            probe[input].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[input][k];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (input, k);
            }
            report.coords_checked += 1;
        }
    }
    Ok(report)
}
