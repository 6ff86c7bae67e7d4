//! Fixtures shared by the criterion benchmarks in `benches/`.

use streamgcn_core::autodiff::{Tape, Tensor};
use streamgcn_core::kinematics::{Vec3, VectorSeries};
use streamgcn_core::model::{filter_var, NetworkConfig, ParamSet, StreamGcn};
use streamgcn_core::{GraphFilter, MotionSequence, SkeletonTopology};

/// A smooth deterministic motion over `topology`.
pub fn wave_sequence(topology: &SkeletonTopology, frames: usize) -> MotionSequence {
    let n = topology.num_joints();
    let data = (0..frames * n)
        .map(|i| {
            let (t, j) = ((i / n) as f64, (i % n) as f64);
            Vec3::new(
                (0.1 * t + j).sin(),
                (0.07 * t - j).cos(),
                0.05 * t + 0.1 * j,
            )
        })
        .collect();
    MotionSequence::new(VectorSeries::from_vec(frames, n, data).unwrap(), None).unwrap()
}

/// Everything needed to run the network on one sample.
pub struct NetworkFixture {
    pub network: StreamGcn,
    pub params: ParamSet<f32>,
    pub filter: GraphFilter,
    pub input: Tensor<f32>,
}

impl NetworkFixture {
    pub fn new(config: NetworkConfig, topology: &SkeletonTopology, frames: usize) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let network = StreamGcn::new(config).unwrap();
        let params = network.init_params(&mut rng);
        let filter = GraphFilter::from_topology(topology).unwrap();
        let n = 3 * frames * topology.num_joints();
        let input = Tensor::new(
            vec![3, frames, topology.num_joints()],
            (0..n).map(|v| (v as f32 * 0.1).sin()).collect(),
        )
        .unwrap();
        NetworkFixture {
            network,
            params,
            filter,
            input,
        }
    }

    /// Forward pass to the cross-entropy loss, with the backward pass if asked.
    pub fn step(&self, backward: bool) -> f32 {
        let mut tape = Tape::<f32>::new();
        let vars = self.params.register(&mut tape);
        let f = filter_var(&mut tape, &self.filter);
        let x = tape.constant(self.input.clone());
        let out = self.network.forward(&mut tape, &vars, f, x).unwrap();
        let loss = tape.softmax_cross_entropy(out.logits_mu, 0).unwrap();
        if backward {
            tape.backward(loss).unwrap();
        }
        tape.value(loss).data()[0]
    }
}
