//! The spatio-temporal graph network: configuration, parameter layout,
//! layers, inference wrapper and checkpoints.

mod check;
mod checkpoint;
mod config;
mod layers;
mod network;
mod params;

pub use check::network_grad_check;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{AttentionConfig, BlockConfig, NetworkConfig, TEMPORAL_BRANCHES};
pub use layers::{
    channel_attention, filter_var, pointwise, spatial_layer, temporal_block, AttentionVars,
    BranchVars, Residual, SpatialOutput, SpatialVars, TemporalVars,
};
pub use network::{
    reparameterize, ForwardOutput, StreamGcn, LOG_VAR_INIT, LOG_VAR_MAX, LOG_VAR_MIN,
};
pub use params::{Init, ParamSet, ParamSpec};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{GraphFilter, SkeletonTopology};
use crate::kinematics::{StreamKind, VectorSeries};
use crate::objectives::softmax;

/// Per-channel standardization fitted on training inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Fits mean and standard deviation per channel over every frame and
    /// joint of the given channels-first inputs. Channels with (near) zero
    /// spread keep a unit scale.
    pub fn fit<'a>(channels: usize, inputs: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        let mut count = 0usize;
        for x in inputs {
            if x.is_empty() || x.len() % channels != 0 {
                return Err(Error::shape(format!(
                    "input of {} values is not split into {channels} channels",
                    x.len()
                )));
            }
            let inner = x.len() / channels;
            for (c, chunk) in x.chunks_exact(inner).enumerate() {
                sum[c] += chunk.iter().sum::<f64>();
                sq[c] += chunk.iter().map(|v| v * v).sum::<f64>();
            }
            count += inner;
        }
        if count == 0 {
            return Err(Error::invalid("cannot fit normalization on no data"));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var.sqrt() < 1e-8 {
                    1.0
                } else {
                    var.sqrt()
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &mut [f64]) {
        let inner = x.len() / self.mean.len();
        for (c, chunk) in x.chunks_exact_mut(inner).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
    }
}

/// Class scores and attention for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// Channel gate of each block.
    pub attention: Vec<Vec<f64>>,
}

impl Prediction {
    pub fn argmax(&self) -> usize {
        crate::objectives::argmax(&self.probs)
    }
}

/// A trained single-stream classifier.
#[derive(Debug, Clone)]
pub struct Model {
    pub network: StreamGcn,
    pub params: ParamSet<f32>,
    pub topology: SkeletonTopology,
    pub stream: StreamKind,
    pub norm: InputNorm,
    filter: GraphFilter,
}

impl Model {
    pub fn new(
        network: StreamGcn,
        params: ParamSet<f32>,
        topology: SkeletonTopology,
        stream: StreamKind,
        norm: InputNorm,
    ) -> Result<Self> {
        network.check_params(&params)?;
        let cfg = network.config();
        if topology.num_joints() != cfg.num_joints {
            return Err(Error::shape(format!(
                "topology has {} joints, network expects {}",
                topology.num_joints(),
                cfg.num_joints
            )));
        }
        if norm.mean.len() != cfg.in_channels || norm.std.len() != cfg.in_channels {
            return Err(Error::shape("normalization does not match input channels"));
        }
        let filter = GraphFilter::from_topology(&topology)?;
        Ok(Self {
            network,
            params,
            topology,
            stream,
            norm,
            filter,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.network.config().num_classes
    }

    pub fn filter(&self) -> &GraphFilter {
        &self.filter
    }

    /// Standardized channels-first input for a stream series.
    pub fn prepare(&self, series: &VectorSeries) -> Result<Vec<f64>> {
        if series.joints() != self.network.config().num_joints {
            return Err(Error::shape(format!(
                "series has {} joints, model expects {}",
                series.joints(),
                self.network.config().num_joints
            )));
        }
        let mut x = series.to_channels_first();
        self.norm.apply(&mut x);
        Ok(x)
    }

    /// Deterministic prediction using the mean code.
    pub fn predict(&self, series: &VectorSeries) -> Result<Prediction> {
        let x = self.prepare(series)?;
        self.predict_prepared(&x, series.frames())
    }

    pub fn predict_prepared(&self, x: &[f64], frames: usize) -> Result<Prediction> {
        let cfg = self.network.config();
        let mut tape = Tape::<f32>::new();
        let params = self.params.register_frozen(&mut tape);
        let filter = filter_var(&mut tape, &self.filter);
        let input = tape.constant(Tensor::from_f64(
            vec![cfg.in_channels, frames, cfg.num_joints],
            x,
        )?);
        let out = self.network.forward(&mut tape, &params, filter, input)?;
        let logits = tape.value(out.logits_mu).to_f64_vec();
        Ok(Prediction {
            probs: softmax(&logits),
            logits,
            attention: out
                .attention
                .iter()
                .map(|&a| tape.value(a).to_f64_vec())
                .collect(),
        })
    }
}
