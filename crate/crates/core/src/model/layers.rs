//! Building blocks recorded on a [`Tape`]. Tensors are channels-first:
//! `[channels, frames, joints]`.

use crate::autodiff::{Activation, PoolAxis, PoolKind, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::GraphFilter;

use super::config::{AttentionConfig, TEMPORAL_BRANCHES};

/// Puts `Âᵀ` on the tape so that `x · Âᵀ` mixes joints as `Â x` per frame.
pub fn filter_var<T: Real>(tape: &mut Tape<T>, filter: &GraphFilter) -> Var {
    let n = filter.num_joints();
    let mut t = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = T::lit(filter.at(i, j));
        }
    }
    tape.constant(Tensor::new(vec![n, n], t).expect("square filter"))
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    /// 1x1 transform `L` applied before pooling, `[c, c]` and `[c]`.
    pub transform_w: Var,
    pub transform_b: Var,
    /// Channel convolution `F`, `[k]` and `[1]`.
    pub conv_w: Var,
    pub conv_b: Var,
}

/// Channel gate in `(0, 1)` (for a sigmoid activation), shape `[c]`.
///
/// The transformed input is averaged over frames, then each channel is
/// summarized by the mean absolute difference over all joint pairs. With a
/// single joint that summary is zero.
pub fn channel_attention<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    vars: &AttentionVars,
    activation: Activation,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::shape(format!(
            "attention input must be [c, m, n], got {shape:?}"
        )));
    }
    let (c, n) = (shape[0], shape[2]);
    let lx = tape.matmul(vars.transform_w, x)?;
    let lx = tape.add_bias(lx, vars.transform_b)?;
    let pooled = tape.pool(lx, PoolAxis::Frames, PoolKind::Mean)?;
    let phi = if n >= 2 {
        tape.pool(pooled, PoolAxis::Pairs, PoolKind::Mean)?
    } else {
        tape.constant(Tensor::zeros(&[c]))
    };
    let f = tape.channel_conv(phi, vars.conv_w, vars.conv_b)?;
    Ok(tape.activate(f, activation))
}

#[derive(Debug, Clone, Copy)]
pub enum Residual {
    None,
    Identity,
    /// 1x1 projection with the given temporal stride.
    Projection {
        w: Var,
        b: Var,
    },
}

impl Residual {
    fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Var, stride: usize) -> Result<Option<Var>> {
        Ok(match *self {
            Residual::None => None,
            Residual::Identity if stride == 1 => Some(x),
            Residual::Identity => {
                return Err(Error::invalid(
                    "identity residual cannot change the frame count",
                ))
            }
            Residual::Projection { w, b } => Some(pointwise(tape, x, w, b, stride)?),
        })
    }
}

/// 1x1 convolution `w[c_out, c_in]` (or `[c_out, c_in, 1]`) plus bias, with
/// an optional temporal stride.
pub fn pointwise<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    b: Var,
    stride: usize,
) -> Result<Var> {
    let y = match (tape.shape(w).len(), stride) {
        (2, 1) => tape.matmul(w, x)?,
        (3, _) => tape.conv_temporal(x, w, 1, stride)?,
        _ => {
            return Err(Error::shape(
                "strided pointwise weights must be [c_out, c_in, 1]",
            ))
        }
    };
    tape.add_bias(y, b)
}

#[derive(Debug, Clone, Copy)]
pub struct SpatialVars {
    pub attention: Option<AttentionVars>,
    /// Channel mixing `M`, `[c_out, c_in]`, and its bias.
    pub mix_w: Var,
    pub mix_b: Option<Var>,
    pub residual: Residual,
}

pub struct SpatialOutput {
    pub out: Var,
    pub attention: Option<Var>,
}

/// Gate channels, mix joints with `Â`, mix channels with `M`, add the
/// residual and apply `activation` (none when `None`).
pub fn spatial_layer<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    vars: &SpatialVars,
    filter: Var,
    attention: &AttentionConfig,
    activation: Option<Activation>,
) -> Result<SpatialOutput> {
    let (gated, weights) = match (&vars.attention, attention.enabled) {
        (Some(av), true) => {
            let w = channel_attention(tape, x, av, attention.activation)?;
            (tape.scale_channels(x, w)?, Some(w))
        }
        _ => (x, None),
    };
    let joints = tape.matmul(gated, filter)?;
    let mut h = tape.matmul(vars.mix_w, joints)?;
    if let Some(b) = vars.mix_b {
        h = tape.add_bias(h, b)?;
    }
    if let Some(r) = vars.residual.apply(tape, x, 1)? {
        h = tape.add(h, r)?;
    }
    let out = match activation {
        Some(a) => tape.activate(h, a),
        None => h,
    };
    Ok(SpatialOutput {
        out,
        attention: weights,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct BranchVars {
    /// 1x1 reduction to `c / 6` channels.
    pub reduce_w: Var,
    pub reduce_b: Var,
    /// 3x1 dilated convolution, present on the first four branches.
    pub conv: Option<(Var, Var)>,
}

#[derive(Debug, Clone)]
pub struct TemporalVars {
    pub branches: Vec<BranchVars>,
    pub residual: Residual,
}

/// Six parallel branches concatenated back to `c` channels: four dilated
/// 3x1 convolutions, a 3x1 max-pool and a strided 1x1 pass-through. All
/// branches share the temporal stride.
pub fn temporal_block<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    vars: &TemporalVars,
    dilations: &[usize; 4],
    stride: usize,
) -> Result<Var> {
    if vars.branches.len() != TEMPORAL_BRANCHES {
        return Err(Error::invalid(format!(
            "temporal block needs {TEMPORAL_BRANCHES} branches, got {}",
            vars.branches.len()
        )));
    }
    let mut parts = Vec::with_capacity(TEMPORAL_BRANCHES);
    for (k, br) in vars.branches.iter().enumerate() {
        let part = match k {
            0..=3 => {
                let r = pointwise(tape, x, br.reduce_w, br.reduce_b, 1)?;
                let r = tape.relu(r);
                let (w, b) = br
                    .conv
                    .ok_or_else(|| Error::invalid(format!("branch {k} lacks its 3x1 kernel")))?;
                let y = tape.conv_temporal(r, w, dilations[k], stride)?;
                tape.add_bias(y, b)?
            }
            4 => {
                let r = pointwise(tape, x, br.reduce_w, br.reduce_b, 1)?;
                let r = tape.relu(r);
                tape.max_pool_temporal(r, 3, stride)?
            }
            _ => pointwise(tape, x, br.reduce_w, br.reduce_b, stride)?,
        };
        parts.push(part);
    }
    let mut y = tape.concat(&parts)?;
    if let Some(r) = vars.residual.apply(tape, x, stride)? {
        y = tape.add(y, r)?;
    }
    Ok(tape.relu(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SkeletonTopology;

    fn leaf(tape: &mut Tape<f64>, shape: &[usize], data: Vec<f64>) -> Var {
        tape.leaf(Tensor::new(shape.to_vec(), data).unwrap())
    }

    #[test]
    fn identity_spatial_layer_on_single_joint() {
        let mut tape = Tape::<f64>::new();
        let filter = filter_var(
            &mut tape,
            &GraphFilter::from_topology(&SkeletonTopology::chain(1).unwrap()).unwrap(),
        );
        let data: Vec<f64> = (0..3 * 4).map(|v| v as f64 - 5.0).collect();
        let x = leaf(&mut tape, &[3, 4, 1], data.clone());
        let eye = leaf(&mut tape, &[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let vars = SpatialVars {
            attention: None,
            mix_w: eye,
            mix_b: None,
            residual: Residual::None,
        };
        let cfg = AttentionConfig {
            enabled: false,
            ..Default::default()
        };
        let out = spatial_layer(&mut tape, x, &vars, filter, &cfg, None).unwrap();
        assert_eq!(tape.value(out.out).data(), &data[..]);
        assert!(out.attention.is_none());
    }

    #[test]
    fn attention_of_identical_joints_is_bias_only() {
        // every joint carries the same signal, so all pairwise differences vanish
        let mut tape = Tape::<f64>::new();
        let x = leaf(
            &mut tape,
            &[2, 3, 4],
            (0..24).map(|v| ((v / 4) as f64).sin()).collect(),
        );
        let vars = AttentionVars {
            transform_w: leaf(&mut tape, &[2, 2], vec![0.3, -0.2, 0.5, 0.9]),
            transform_b: leaf(&mut tape, &[2], vec![0.1, 0.2]),
            conv_w: leaf(&mut tape, &[3], vec![1.0, 2.0, 3.0]),
            conv_b: leaf(&mut tape, &[1], vec![0.7]),
        };
        let w = channel_attention(&mut tape, x, &vars, Activation::Sigmoid).unwrap();
        let expect = 1.0 / (1.0 + (-0.7f64).exp());
        for &v in tape.value(w).data() {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_matches_hand_computation() {
        // two joints, two frames, one channel, identity transform
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[1, 2, 2], vec![1.0, 4.0, 3.0, 2.0]);
        let vars = AttentionVars {
            transform_w: leaf(&mut tape, &[1, 1], vec![1.0]),
            transform_b: leaf(&mut tape, &[1], vec![0.0]),
            conv_w: leaf(&mut tape, &[1], vec![2.0]),
            conv_b: leaf(&mut tape, &[1], vec![-1.0]),
        };
        let w = channel_attention(&mut tape, x, &vars, Activation::Sigmoid).unwrap();
        // frame means: joint0 = 2, joint1 = 3; |2 - 3| = 1; F = 2*1 - 1 = 1
        let expect = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((tape.value(w).data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn temporal_block_shapes() {
        let mut tape = Tape::<f64>::new();
        let (c, m, n) = (12, 9, 3);
        let x = leaf(
            &mut tape,
            &[c, m, n],
            (0..c * m * n).map(|v| (v as f64 * 0.37).cos()).collect(),
        );
        let bc = c / 6;
        let mut branches = Vec::new();
        for k in 0..6 {
            let reduce_w = if k == 5 {
                leaf(&mut tape, &[bc, c, 1], vec![0.1; bc * c])
            } else {
                leaf(&mut tape, &[bc, c], vec![0.1; bc * c])
            };
            let reduce_b = leaf(&mut tape, &[bc], vec![0.0; bc]);
            let conv = (k < 4).then(|| {
                (
                    leaf(&mut tape, &[bc, bc, 3], vec![0.2; bc * bc * 3]),
                    leaf(&mut tape, &[bc], vec![0.0; bc]),
                )
            });
            branches.push(BranchVars {
                reduce_w,
                reduce_b,
                conv,
            });
        }
        let vars = TemporalVars {
            branches: branches.clone(),
            residual: Residual::Identity,
        };
        let y = temporal_block(&mut tape, x, &vars, &[1, 2, 3, 4], 1).unwrap();
        assert_eq!(tape.shape(y), &[c, m, n]);

        let proj = Residual::Projection {
            w: leaf(&mut tape, &[c, c, 1], vec![0.05; c * c]),
            b: leaf(&mut tape, &[c], vec![0.0; c]),
        };
        let vars = TemporalVars {
            branches,
            residual: proj,
        };
        let y = temporal_block(&mut tape, x, &vars, &[1, 2, 3, 4], 2).unwrap();
        assert_eq!(tape.shape(y), &[c, 5, n]);
        assert!(tape.value(y).data().iter().all(|&v| v >= 0.0));
    }
}
