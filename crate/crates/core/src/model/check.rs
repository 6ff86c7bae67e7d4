use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{filter_var, reparameterize, NetworkConfig, StreamGcn};
use crate::autodiff::{grad_check, GradCheckReport, Tensor};
use crate::error::{Error, Result};
use crate::graph::{GraphFilter, SkeletonTopology};
use crate::objectives::{record_loss, Objective};

/// Finite-difference check of the full training loss (forward, sampled
/// code, classifier and objective) with respect to every parameter and
/// every input coordinate, in f64 on a chain skeleton.
///
/// Parameters, the input and the bottleneck noise are drawn from `seed`.
/// Zero-initialized tensors are jittered so that no bias sits exactly on a
/// kink of the ReLU.
pub fn network_grad_check(
    config: &NetworkConfig,
    frames: usize,
    objective: Objective,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if frames == 0 {
        return Err(Error::invalid("frames must be positive"));
    }
    let net = StreamGcn::new(config.clone())?;
    let filter = GraphFilter::from_topology(&SkeletonTopology::chain(config.num_joints)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs: Vec<Tensor<f64>> = net.init_params::<f64>(&mut rng).tensors().to_vec();
    for t in &mut inputs {
        for v in t.data_mut() {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let shape = vec![config.in_channels, frames, config.num_joints];
    let x: Vec<f64> = (0..shape.iter().product::<usize>())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    inputs.push(Tensor::new(shape, x)?);
    let noise: Vec<f64> = (0..config.feature_dim())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let label = rng.random_range(0..config.num_classes);
    let p = inputs.len() - 1;
    grad_check(
        |tape, vars| {
            let filter = filter_var(tape, &filter);
            let out = net.forward(tape, &vars[..p], filter, vars[p])?;
            let z = reparameterize(tape, out.mu, out.log_var, &noise)?;
            let logits_z = net.classify(tape, &vars[..p], z)?;
            Ok(record_loss(
                tape,
                logits_z,
                out.logits_mu,
                out.mu,
                out.log_var,
                label,
                objective,
            )?
            .total)
        },
        &inputs,
        eps,
    )
}
