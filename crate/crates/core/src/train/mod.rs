//! Per-stream training, evaluation and score fusion.

pub mod ensemble;
mod optim;
mod schedule;

pub use ensemble::{accuracy, ensemble, EnsembleResult, EnsembleSpec, ScoreRow};
pub use optim::{sgd_nesterov_step, OptimizerConfig, OptimizerState};
pub use schedule::{lr_at_epoch, Schedule};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{GraphFilter, SkeletonTopology};
use crate::kinematics::{StreamKind, StreamSet};
use crate::model::{
    filter_var, reparameterize, InputNorm, Model, NetworkConfig, ParamSet, StreamGcn,
};
use crate::objectives::{argmax, record_loss, Objective};

/// One stream of one sequence, channels-first `[3, frames, joints]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub frames: usize,
    pub data: Vec<f64>,
}

/// Labeled samples of a single stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamDataset {
    pub stream: StreamKind,
    pub joints: usize,
    pub num_classes: usize,
    pub samples: Vec<Sample>,
}

impl StreamDataset {
    pub fn new(
        stream: StreamKind,
        joints: usize,
        num_classes: usize,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        for s in &samples {
            if s.label >= num_classes {
                return Err(Error::invalid(format!(
                    "sample {} has label {} but there are {num_classes} classes",
                    s.id, s.label
                )));
            }
            if s.frames == 0 || s.data.len() != 3 * s.frames * joints {
                return Err(Error::shape(format!(
                    "sample {} holds {} values, expected 3 x {} x {joints}",
                    s.id,
                    s.data.len(),
                    s.frames
                )));
            }
            if s.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("sample {}", s.id)));
            }
        }
        Ok(Self {
            stream,
            joints,
            num_classes,
            samples,
        })
    }

    /// Picks `stream` out of each `(id, label, streams)` entry.
    pub fn from_stream_sets<'a>(
        stream: StreamKind,
        num_classes: usize,
        items: impl IntoIterator<Item = (String, usize, &'a StreamSet)>,
    ) -> Result<Self> {
        let mut joints = None;
        let mut samples = Vec::new();
        for (id, label, set) in items {
            if *joints.get_or_insert(set.joints()) != set.joints() {
                return Err(Error::shape(format!(
                    "sample {id} has {} joints",
                    set.joints()
                )));
            }
            let series = set.get(stream);
            samples.push(Sample {
                id,
                label,
                frames: series.frames(),
                data: series.to_channels_first(),
            });
        }
        let joints = joints.ok_or_else(|| Error::invalid("dataset has no samples"))?;
        Self::new(stream, joints, num_classes, samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub optimizer: OptimizerConfig,
    pub objective: Objective,
    pub seed: u64,
    /// Worker threads for per-sample passes; 1 runs everything inline.
    /// Results do not depend on this value.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::desk(),
            optimizer: OptimizerConfig::default(),
            objective: Objective::CrossEntropy,
            seed: 0,
            threads: 1,
        }
    }
}

/// Mean loss terms over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub relevancy: f64,
    pub compression: f64,
    pub redundancy: f64,
    pub total: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

struct SampleResult {
    terms: [f64; 4],
    grads: Vec<Vec<f32>>,
    correct: bool,
}

struct StepContext<'a> {
    net: &'a StreamGcn,
    filter: &'a GraphFilter,
    objective: Objective,
}

impl StepContext<'_> {
    fn run(
        &self,
        params: &ParamSet<f32>,
        input: &Tensor<f32>,
        label: usize,
        noise: &[f32],
    ) -> Result<SampleResult> {
        let mut tape = Tape::<f32>::new();
        let vars = params.register(&mut tape);
        let filter = filter_var(&mut tape, self.filter);
        let x = tape.constant(input.clone());
        let out = self.net.forward(&mut tape, &vars, filter, x)?;
        let z = reparameterize(&mut tape, out.mu, out.log_var, noise)?;
        let logits_z = self.net.classify(&mut tape, &vars, z)?;
        let loss = record_loss(
            &mut tape,
            logits_z,
            out.logits_mu,
            out.mu,
            out.log_var,
            label,
            self.objective,
        )?;
        let value = |v| tape.value(v).item() as f64;
        let terms = [
            value(loss.relevancy),
            value(loss.compression),
            value(loss.redundancy),
            value(loss.total),
        ];
        let correct = argmax(&tape.value(logits_z).to_f64_vec()) == label;
        let g = tape.backward(loss.total)?;
        let grads = vars.iter().map(|&v| g.get_or_zeros(&tape, v)).collect();
        Ok(SampleResult {
            terms,
            grads,
            correct,
        })
    }
}

fn thread_pool(threads: usize) -> Result<Option<rayon::ThreadPool>> {
    if threads <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))
}

/// Trains one stream network. Every random draw (initialization, shuffling,
/// bottleneck noise) comes from a single generator seeded by `cfg.seed`, in
/// a fixed order, and gradients are summed in sample order, so runs are
/// reproducible bit for bit regardless of `cfg.threads`.
pub fn train(
    data: &StreamDataset,
    topology: &SkeletonTopology,
    net_config: NetworkConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    cfg.schedule.validate()?;
    if net_config.num_joints != data.joints || topology.num_joints() != data.joints {
        return Err(Error::shape(format!(
            "dataset has {} joints, network {}, topology {}",
            data.joints,
            net_config.num_joints,
            topology.num_joints()
        )));
    }
    if net_config.num_classes != data.num_classes {
        return Err(Error::shape(format!(
            "dataset has {} classes, network {}",
            data.num_classes, net_config.num_classes
        )));
    }
    let net = StreamGcn::new(net_config)?;
    let filter = GraphFilter::from_topology(topology)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params: ParamSet<f32> = net.init_params(&mut rng);
    let mut state = OptimizerState::new(cfg.optimizer, params.tensors());

    let norm = InputNorm::fit(3, data.samples.iter().map(|s| s.data.as_slice()))?;
    let inputs = data
        .samples
        .iter()
        .map(|s| {
            let mut x = s.data.clone();
            norm.apply(&mut x);
            Tensor::from_f64(vec![3, s.frames, data.joints], &x)
        })
        .collect::<Result<Vec<Tensor<f32>>>>()?;

    let ctx = StepContext {
        net: &net,
        filter: &filter,
        objective: cfg.objective,
    };
    let pool = thread_pool(cfg.threads)?;
    let dim = net.config().feature_dim();
    let sched = cfg.schedule;
    let iters = data.len().div_ceil(sched.batch_size);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(sched.total_epochs);

    for epoch in 0..sched.total_epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut correct = 0usize;
        for (it, batch) in order.chunks(sched.batch_size).enumerate() {
            let noise: Vec<Vec<f32>> = batch
                .iter()
                .map(|_| {
                    (0..dim)
                        .map(|_| rng.sample::<f32, _>(StandardNormal))
                        .collect()
                })
                .collect();
            let work = |(&i, eta): (&usize, &Vec<f32>)| {
                ctx.run(&params, &inputs[i], data.samples[i].label, eta)
            };
            let results: Vec<Result<SampleResult>> = match &pool {
                Some(p) => p.install(|| batch.par_iter().zip(noise.par_iter()).map(work).collect()),
                None => batch.iter().zip(&noise).map(work).collect(),
            };
            let mut grads: Vec<Vec<f32>> = params
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.numel()])
                .collect();
            for (&i, r) in batch.iter().zip(results) {
                let r = r?;
                if !r.terms[3].is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        message: format!("non-finite loss on sample {}", data.samples[i].id),
                    });
                }
                for (s, t) in sums.iter_mut().zip(r.terms) {
                    *s += t;
                }
                correct += usize::from(r.correct);
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    for (a, &v) in acc.iter_mut().zip(g) {
                        *a += v;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f32;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            let lr = sched.lr_at(epoch as f64 + (it + 1) as f64 / iters as f64);
            sgd_nesterov_step(params.tensors_mut(), &grads, &mut state, lr).map_err(
                |e| match e {
                    Error::NonFinite(m) => Error::Divergence { epoch, message: m },
                    other => other,
                },
            )?;
        }
        let n = data.len() as f64;
        log.push(EpochLog {
            epoch,
            lr: sched.lr_at(epoch as f64),
            relevancy: sums[0] / n,
            compression: sums[1] / n,
            redundancy: sums[2] / n,
            total: sums[3] / n,
            train_accuracy: correct as f64 / n,
        });
    }
    let model = Model::new(net, params, topology.clone(), data.stream, norm)?;
    Ok(TrainOutcome { model, log })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub scores: Vec<ScoreRow>,
}

pub fn confusion_matrix(rows: &[ScoreRow], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut m = vec![vec![0; num_classes]; num_classes];
    for r in rows {
        let p = r.predicted();
        if r.label >= num_classes || p >= num_classes {
            return Err(Error::invalid(format!(
                "sample {} falls outside {num_classes} classes",
                r.sample_id
            )));
        }
        m[r.label][p] += 1;
    }
    Ok(m)
}

/// Top-1 accuracy with the deterministic (mean-code) prediction.
pub fn evaluate(model: &Model, data: &StreamDataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    if data.stream != model.stream {
        return Err(Error::invalid(format!(
            "model was trained on the {} stream, data holds {}",
            model.stream, data.stream
        )));
    }
    let scores = data
        .samples
        .iter()
        .map(|s| {
            let mut x = s.data.clone();
            model.norm.apply(&mut x);
            let p = model.predict_prepared(&x, s.frames)?;
            Ok(ScoreRow {
                sample_id: s.id.clone(),
                label: s.label,
                scores: p.probs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        accuracy: accuracy(&scores)?,
        confusion: confusion_matrix(&scores, model.num_classes())?,
        scores,
    })
}
