use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            nesterov: true,
            weight_decay: 4e-4,
        }
    }
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: OptimizerConfig,
    pub velocity: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: OptimizerConfig, params: &[Tensor<T>]) -> Self {
        Self {
            config,
            velocity: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }
}

/// One SGD step. With `g' = g + wd * p` and `v <- mu * v + g'`, the
/// Nesterov update is `p <- p - lr * (g' + mu * v)`; the plain momentum
/// update is `p <- p - lr * v`.
pub fn sgd_nesterov_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Vec<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::shape(format!(
            "{} parameters, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.numel() != g.len() || state.velocity[k].len() != g.len() {
            return Err(Error::shape(format!(
                "gradient {k} does not match its parameter"
            )));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of parameter tensor {k}, element {i} ({})",
                g[i]
            )));
        }
    }
    let mu = T::lit(state.config.momentum);
    let wd = T::lit(state.config.weight_decay);
    let lr = T::lit(lr);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
            let g2 = gv + wd * *pv;
            *vv = mu * *vv + g2;
            let step = if state.config.nesterov {
                g2 + mu * *vv
            } else {
                *vv
            };
            *pv = *pv - lr * step;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_setup(p: f64, wd: f64) -> (Vec<Tensor<f64>>, OptimizerState<f64>) {
        let params = vec![Tensor::scalar(p)];
        let cfg = OptimizerConfig {
            weight_decay: wd,
            ..Default::default()
        };
        let state = OptimizerState::new(cfg, &params);
        (params, state)
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let (mut p, mut s) = scalar_setup(1.5, 0.0);
        sgd_nesterov_step(&mut p, &[vec![0.0]], &mut s, 0.1).unwrap();
        assert_eq!(p[0].item(), 1.5);
    }

    #[test]
    fn two_steps_by_hand() {
        let (mut p, mut s) = scalar_setup(1.0, 0.0);
        sgd_nesterov_step(&mut p, &[vec![1.0]], &mut s, 0.1).unwrap();
        assert_eq!(s.velocity[0][0], 1.0);
        assert!((p[0].item() - 0.81).abs() < 1e-15);
        // v = 0.9 + 0.5 = 1.4; p = 0.81 - 0.1 * (0.5 + 1.26) = 0.634
        sgd_nesterov_step(&mut p, &[vec![0.5]], &mut s, 0.1).unwrap();
        assert!((s.velocity[0][0] - 1.4).abs() < 1e-15);
        assert!((p[0].item() - 0.634).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_folds_into_gradient() {
        let (mut p, mut s) = scalar_setup(2.0, 0.5);
        sgd_nesterov_step(&mut p, &[vec![0.0]], &mut s, 0.1).unwrap();
        // g' = 1, v = 1, p = 2 - 0.1 * 1.9
        assert!((p[0].item() - 1.81).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let (mut p, mut s) = scalar_setup(1.0, 0.0);
        let err = sgd_nesterov_step(&mut p, &[vec![f64::NAN]], &mut s, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(p[0].item(), 1.0);
    }
}
