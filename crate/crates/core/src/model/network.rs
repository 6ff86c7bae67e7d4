use rand::Rng;

use crate::autodiff::{PoolAxis, PoolKind, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

use super::config::{NetworkConfig, TEMPORAL_BRANCHES};
use super::layers::{
    spatial_layer, temporal_block, AttentionVars, BranchVars, Residual, SpatialVars, TemporalVars,
};
use super::params::{Init, ParamSet, ParamSpec};

/// Initial value of the log-variance bias, so the sampled code starts close
/// to its mean.
pub const LOG_VAR_INIT: f64 = -4.0;
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

#[derive(Debug, Clone)]
struct BlockLayout {
    attention: Option<[usize; 4]>,
    mix: (usize, usize),
    spatial_residual: Option<(usize, usize)>,
    branches: Vec<(usize, usize, Option<(usize, usize)>)>,
    temporal_residual: Option<(usize, usize)>,
    in_channels: usize,
    stride: usize,
}

#[derive(Debug, Clone)]
struct HeadLayout {
    mu: (usize, usize),
    log_var: (usize, usize),
    classifier: (usize, usize),
}

/// Vars produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Globally pooled feature, `[d]`.
    pub features: Var,
    pub mu: Var,
    /// Clamped to `[LOG_VAR_MIN, LOG_VAR_MAX]`.
    pub log_var: Var,
    /// Classifier applied to `mu`.
    pub logits_mu: Var,
    /// Channel gate of each block, when attention is enabled.
    pub attention: Vec<Var>,
}

/// Parameter layout plus forward pass of the spatio-temporal network.
#[derive(Debug, Clone)]
pub struct StreamGcn {
    config: NetworkConfig,
    specs: Vec<ParamSpec>,
    blocks: Vec<BlockLayout>,
    head: HeadLayout,
}

struct Declarer(Vec<ParamSpec>);

impl Declarer {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        self.0.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
        self.0.len() - 1
    }

    fn he(&mut self, name: String, shape: &[usize], fan_in: usize, gain: f64) -> usize {
        self.add(name, shape, Init::Normal(gain / (fan_in as f64).sqrt()))
    }
}

impl StreamGcn {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut d = Declarer(Vec::new());
        let mut blocks = Vec::with_capacity(config.blocks.len());
        let mut c_in = config.in_channels;
        for (b, block) in config.blocks.iter().enumerate() {
            let c = block.channels;
            let p = format!("block{b}");
            let attention = config.attention.enabled.then(|| {
                let k = config.attention.kernel_size;
                [
                    d.he(
                        format!("{p}.attention.transform.weight"),
                        &[c_in, c_in],
                        c_in,
                        1.0,
                    ),
                    d.add(
                        format!("{p}.attention.transform.bias"),
                        &[c_in],
                        Init::Zeros,
                    ),
                    d.he(format!("{p}.attention.conv.weight"), &[k], k, 1.0),
                    d.add(format!("{p}.attention.conv.bias"), &[1], Init::Zeros),
                ]
            });
            let mix = (
                d.he(format!("{p}.spatial.weight"), &[c, c_in], c_in, 2f64.sqrt()),
                d.add(format!("{p}.spatial.bias"), &[c], Init::Zeros),
            );
            let spatial_residual = (c != c_in).then(|| {
                (
                    d.he(
                        format!("{p}.spatial.residual.weight"),
                        &[c, c_in],
                        c_in,
                        1.0,
                    ),
                    d.add(format!("{p}.spatial.residual.bias"), &[c], Init::Zeros),
                )
            });
            let bc = c / TEMPORAL_BRANCHES;
            let branches = (0..TEMPORAL_BRANCHES)
                .map(|k| {
                    let q = format!("{p}.temporal.branch{k}");
                    // the pass-through branch carries the stride, so its weights are 3D
                    let shape: &[usize] = if k == TEMPORAL_BRANCHES - 1 {
                        &[bc, c, 1]
                    } else {
                        &[bc, c]
                    };
                    let reduce = d.he(format!("{q}.reduce.weight"), shape, c, 2f64.sqrt());
                    let reduce_b = d.add(format!("{q}.reduce.bias"), &[bc], Init::Zeros);
                    let conv = (k < 4).then(|| {
                        (
                            d.he(format!("{q}.conv.weight"), &[bc, bc, 3], 3 * bc, 1.0),
                            d.add(format!("{q}.conv.bias"), &[bc], Init::Zeros),
                        )
                    });
                    (reduce, reduce_b, conv)
                })
                .collect();
            let temporal_residual = (block.stride != 1).then(|| {
                (
                    d.he(format!("{p}.temporal.residual.weight"), &[c, c, 1], c, 1.0),
                    d.add(format!("{p}.temporal.residual.bias"), &[c], Init::Zeros),
                )
            });
            blocks.push(BlockLayout {
                attention,
                mix,
                spatial_residual,
                branches,
                temporal_residual,
                in_channels: c_in,
                stride: block.stride,
            });
            c_in = c;
        }
        let f = config.feature_dim();
        let k = config.num_classes;
        let head = HeadLayout {
            mu: (
                d.he("head.mu.weight".into(), &[f, f], f, 1.0),
                d.add("head.mu.bias".into(), &[f], Init::Zeros),
            ),
            log_var: (
                d.add("head.log_var.weight".into(), &[f, f], Init::Zeros),
                d.add(
                    "head.log_var.bias".into(),
                    &[f],
                    Init::Constant(LOG_VAR_INIT),
                ),
            ),
            classifier: (
                d.he("head.classifier.weight".into(), &[k, f], f, 1.0),
                d.add("head.classifier.bias".into(), &[k], Init::Zeros),
            ),
        };
        Ok(Self {
            config,
            specs: d.0,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Parameter declarations, in the order they are stored.
    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn init_params<T: Real>(&self, rng: &mut impl Rng) -> ParamSet<T> {
        ParamSet::init(&self.specs, rng)
    }

    /// Checks names and shapes of a parameter set against the layout.
    pub fn check_params<T: Real>(&self, params: &ParamSet<T>) -> Result<()> {
        if params.len() != self.specs.len() {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, got {}",
                self.specs.len(),
                params.len()
            )));
        }
        for ((spec, name), t) in self.specs.iter().zip(params.names()).zip(params.tensors()) {
            if &spec.name != name || spec.shape != t.shape() {
                return Err(Error::shape(format!(
                    "parameter {name} {:?} does not match layout {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    /// Index of the classifier weight in the parameter list.
    pub fn classifier_index(&self) -> (usize, usize) {
        self.head.classifier
    }

    /// Runs all blocks, pools globally and evaluates the bottleneck head.
    /// `params` must come from registering a matching [`ParamSet`]; `filter`
    /// from [`super::filter_var`]; `input` is `[c, m, n]`.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        filter: Var,
        input: Var,
    ) -> Result<ForwardOutput> {
        if params.len() != self.specs.len() {
            return Err(Error::shape(format!(
                "expected {} parameter vars, got {}",
                self.specs.len(),
                params.len()
            )));
        }
        let shape = tape.shape(input);
        let n = self.config.num_joints;
        if shape.len() != 3 || shape[0] != self.config.in_channels || shape[2] != n {
            return Err(Error::shape(format!(
                "input {shape:?} does not match [{}, frames, {n}]",
                self.config.in_channels
            )));
        }
        if tape.shape(filter) != [n, n] {
            return Err(Error::shape(format!(
                "graph filter {:?} does not match {n} joints",
                tape.shape(filter)
            )));
        }
        let v = |k: usize| params[k];
        let mut x = input;
        let mut attention = Vec::new();
        for block in &self.blocks {
            let spatial = SpatialVars {
                attention: block.attention.map(|[a, b, c, d]| AttentionVars {
                    transform_w: v(a),
                    transform_b: v(b),
                    conv_w: v(c),
                    conv_b: v(d),
                }),
                mix_w: v(block.mix.0),
                mix_b: Some(v(block.mix.1)),
                residual: match block.spatial_residual {
                    Some((w, b)) => Residual::Projection { w: v(w), b: v(b) },
                    None => Residual::Identity,
                },
            };
            debug_assert_eq!(tape.shape(x)[0], block.in_channels);
            let out = spatial_layer(
                tape,
                x,
                &spatial,
                filter,
                &self.config.attention,
                Some(crate::autodiff::Activation::Relu),
            )?;
            attention.extend(out.attention);
            let temporal = TemporalVars {
                branches: block
                    .branches
                    .iter()
                    .map(|&(w, b, conv)| BranchVars {
                        reduce_w: v(w),
                        reduce_b: v(b),
                        conv: conv.map(|(cw, cb)| (v(cw), v(cb))),
                    })
                    .collect(),
                residual: match block.temporal_residual {
                    Some((w, b)) => Residual::Projection { w: v(w), b: v(b) },
                    None => Residual::Identity,
                },
            };
            x = temporal_block(
                tape,
                out.out,
                &temporal,
                &self.config.dilations,
                block.stride,
            )?;
        }
        let features = tape.pool(x, PoolAxis::Global, PoolKind::Mean)?;
        let mu = self.linear(tape, params, self.head.mu, features)?;
        let log_var = self.linear(tape, params, self.head.log_var, features)?;
        let log_var = tape.clamp(log_var, T::lit(LOG_VAR_MIN), T::lit(LOG_VAR_MAX));
        let logits_mu = self.classify(tape, params, mu)?;
        Ok(ForwardOutput {
            features,
            mu,
            log_var,
            logits_mu,
            attention,
        })
    }

    /// Class logits for a code vector `z`.
    pub fn classify<T: Real>(&self, tape: &mut Tape<T>, params: &[Var], z: Var) -> Result<Var> {
        self.linear(tape, params, self.head.classifier, z)
    }

    fn linear<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        (w, b): (usize, usize),
        x: Var,
    ) -> Result<Var> {
        let y = tape.matmul(params[w], x)?;
        tape.add_bias(y, params[b])
    }
}

/// `z = mu + exp(log_var / 2) ⊙ noise`.
pub fn reparameterize<T: Real>(
    tape: &mut Tape<T>,
    mu: Var,
    log_var: Var,
    noise: &[T],
) -> Result<Var> {
    let shape = tape.shape(mu).to_vec();
    let eta = tape.constant(Tensor::new(shape, noise.to_vec())?);
    let half = tape.scale(log_var, T::lit(0.5));
    let sigma = tape.exp(half);
    let spread = tape.mul(sigma, eta)?;
    tape.add(mu, spread)
}
