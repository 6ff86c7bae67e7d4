//! Synthetic articulated chains whose classes differ only in how the bone
//! rotation speed changes over time.
//!
//! Every bone of a planar chain turns with a per-frame angular speed drawn
//! from a shared band; the class decides the speed profile around that
//! value. The chain is then placed with a random rotation and translation
//! and jittered with Gaussian noise, so raw coordinates of different classes
//! overlap heavily while the angular-acceleration signatures differ.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;
use crate::kinematics::{MotionSequence, VectorSeries};

use super::{LabeledSequence, SequenceDataset};

/// Speed profile families, in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthClass {
    /// Constant angular speed: zero angular acceleration.
    ConstantVelocity,
    /// Speed ramps linearly through its mean: constant angular acceleration.
    ConstantAcceleration,
    /// Speed oscillates around its mean: sinusoidal acceleration.
    SinusoidalJerk,
    /// Acceleration flips sign halfway: V-shaped speed.
    Reversing,
}

impl SynthClass {
    pub const ALL: [SynthClass; 4] = [
        SynthClass::ConstantVelocity,
        SynthClass::ConstantAcceleration,
        SynthClass::SinusoidalJerk,
        SynthClass::Reversing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthClass::ConstantVelocity => "constant_velocity",
            SynthClass::ConstantAcceleration => "constant_acceleration",
            SynthClass::SinusoidalJerk => "sinusoidal_jerk",
            SynthClass::Reversing => "reversing",
        }
    }
}

impl fmt::Display for SynthClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown synthetic class `{s}`")))
    }
}

/// A closed interval to sample uniformly from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub joints: usize,
    pub frames: usize,
    /// Standard deviation of the per-coordinate Gaussian jitter.
    pub noise: f64,
    pub bone_length: Band,
    /// Mean angular speed per frame (radians); the sign is random.
    pub speed: Band,
    /// Magnitude of the constant and reversing accelerations, per frame².
    pub acceleration: Band,
    /// Amplitude of the speed oscillation, per frame.
    pub oscillation: Band,
    /// Oscillation period in frames.
    pub period: Band,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 3,
            per_class: 200,
            joints: 5,
            frames: 64,
            noise: 0.0,
            bone_length: Band::new(0.8, 1.2),
            speed: Band::new(0.03, 0.08),
            acceleration: Band::new(0.006, 0.012),
            oscillation: Band::new(0.03, 0.05),
            period: Band::new(12.0, 20.0),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=SynthClass::ALL.len()).contains(&self.num_classes) {
            return Err(Error::invalid(format!(
                "synthetic data supports 2 to {} classes, got {}",
                SynthClass::ALL.len(),
                self.num_classes
            )));
        }
        if self.per_class == 0 || self.joints < 2 || self.frames < 4 {
            return Err(Error::invalid(
                "need at least one sequence per class, two joints and four frames",
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise must be finite and nonnegative"));
        }
        let bands = [
            self.bone_length,
            self.speed,
            self.acceleration,
            self.oscillation,
            self.period,
        ];
        if bands.iter().any(|b| !b.is_valid())
            || self.bone_length.lo <= 0.0
            || self.period.lo <= 0.0
        {
            return Err(Error::invalid(
                "synthetic bands must be ordered, finite and positive",
            ));
        }
        Ok(())
    }

    pub fn classes(&self) -> &'static [SynthClass] {
        &SynthClass::ALL[..self.num_classes]
    }
}

fn random_sign(rng: &mut impl Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Per-frame angular speed of one bone.
fn speed_profile(class: SynthClass, spec: &SynthSpec, rng: &mut impl Rng) -> Vec<f64> {
    let m = spec.frames;
    let mid = (m - 1) as f64 / 2.0;
    let s = random_sign(rng) * spec.speed.sample(rng);
    match class {
        SynthClass::ConstantVelocity => vec![s; m],
        SynthClass::ConstantAcceleration => {
            let a = random_sign(rng) * spec.acceleration.sample(rng);
            (0..m).map(|t| s + a * (t as f64 - mid)).collect()
        }
        SynthClass::SinusoidalJerk => {
            let amp = spec.oscillation.sample(rng);
            let period = spec.period.sample(rng);
            let phase = rng.random_range(0.0..2.0 * PI);
            (0..m)
                .map(|t| s + amp * (2.0 * PI * t as f64 / period + phase).sin())
                .collect()
        }
        SynthClass::Reversing => {
            let a = random_sign(rng) * spec.acceleration.sample(rng);
            // zero-mean V shape: |t - mid| averages to about m / 4
            (0..m)
                .map(|t| s + a * ((t as f64 - mid).abs() - m as f64 / 4.0))
                .collect()
        }
    }
}

fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let mut q = [0.0; 4];
    q.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}

fn generate_one(class: SynthClass, spec: &SynthSpec, rng: &mut impl Rng) -> Result<VectorSeries> {
    let (m, n) = (spec.frames, spec.joints);
    let lengths: Vec<f64> = (1..n).map(|_| spec.bone_length.sample(rng)).collect();
    let mut angles: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let speed = speed_profile(class, spec, rng);
        let mut phi = rng.random_range(0.0..2.0 * PI);
        let mut track = Vec::with_capacity(m);
        for w in speed {
            track.push(phi);
            phi += w;
        }
        angles.push(track);
    }
    let rotation = random_rotation(rng);
    let shift = Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0));
    let jitter = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid noise");
    let mut out = VectorSeries::zeros(m, n);
    for t in 0..m {
        let mut p = Vector3::zeros();
        for i in 0..n {
            if i > 0 {
                let phi = angles[i - 1][t];
                p += lengths[i - 1] * Vector3::new(phi.cos(), phi.sin(), 0.0);
            }
            let mut v = rotation * p + shift;
            if spec.noise > 0.0 {
                v += Vector3::from_fn(|_, _| jitter.sample(rng));
            }
            out.set(t, i, v);
        }
    }
    Ok(out)
}

/// Deterministic per seed. Sequences are interleaved by class
/// (`0, 1, .., k-1, 0, 1, ..`) with ids `synth-<index>`.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SequenceDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = spec.classes();
    let mut items = Vec::with_capacity(classes.len() * spec.per_class);
    for k in 0..spec.per_class * classes.len() {
        let label = k % classes.len();
        let coords = generate_one(classes[label], spec, &mut rng)?;
        items.push(LabeledSequence {
            id: format!("synth-{k:05}"),
            sequence: MotionSequence::new(coords, Some(label))?,
        });
    }
    SequenceDataset::new(
        SkeletonTopology::chain(spec.joints)?,
        classes.iter().map(|c| c.name().to_string()).collect(),
        items,
    )
}
