//! Motion streams derived from raw joint coordinates.
//!
//! Bones are parent-relative vectors. The relative angle of a bone between
//! consecutive frames is the arccos of the normalized dot product; its
//! angular velocity is that angle along the axis `δ^p × δ^{p+1}`. Velocities
//! and accelerations accumulate root-to-leaf along the kinematic chain, and
//! the acceleration carries the coupling term `ω_parent × ω_joint`.
//!
//! Time is measured in frames. Forward differences leave the trailing
//! frame(s) without a successor; those are zero-padded so every series keeps
//! `m` frames.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;

pub type Vec3 = Vector3<f64>;

/// Bones shorter than this, or rotation axes with a cross-product norm below
/// it, are treated as degenerate (zero angle, zero axis).
pub const DEGENERATE_NORM: f64 = 1e-8;

/// A per-frame, per-joint series of 3-vectors, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSeries {
    frames: usize,
    joints: usize,
    data: Vec<Vec3>,
}

impl VectorSeries {
    pub fn zeros(frames: usize, joints: usize) -> Self {
        Self {
            frames,
            joints,
            data: vec![Vec3::zeros(); frames * joints],
        }
    }

    pub fn from_vec(frames: usize, joints: usize, data: Vec<Vec3>) -> Result<Self> {
        if data.len() != frames * joints {
            return Err(Error::shape(format!(
                "series of {frames} frames x {joints} joints needs {} vectors, got {}",
                frames * joints,
                data.len()
            )));
        }
        Ok(Self {
            frames,
            joints,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn get(&self, frame: usize, joint: usize) -> Vec3 {
        self.data[frame * self.joints + joint]
    }

    pub fn set(&mut self, frame: usize, joint: usize, v: Vec3) {
        self.data[frame * self.joints + joint] = v;
    }

    pub fn as_slice(&self) -> &[Vec3] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Channels-first layout `[3, frames, joints]`.
    pub fn to_channels_first(&self) -> Vec<f64> {
        let plane = self.frames * self.joints;
        let mut out = vec![0.0; 3 * plane];
        for (k, v) in self.data.iter().enumerate() {
            for c in 0..3 {
                out[c * plane + k] = v[c];
            }
        }
        out
    }

    pub fn from_channels_first(frames: usize, joints: usize, data: &[f64]) -> Result<Self> {
        let plane = frames * joints;
        if data.len() != 3 * plane {
            return Err(Error::shape(format!(
                "expected {} values for [3, {frames}, {joints}], got {}",
                3 * plane,
                data.len()
            )));
        }
        let data = (0..plane)
            .map(|k| Vec3::new(data[k], data[plane + k], data[2 * plane + k]))
            .collect();
        Ok(Self {
            frames,
            joints,
            data,
        })
    }
}

/// A per-frame, per-joint scalar series, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSeries {
    frames: usize,
    joints: usize,
    data: Vec<f64>,
}

impl ScalarSeries {
    pub fn zeros(frames: usize, joints: usize) -> Self {
        Self {
            frames,
            joints,
            data: vec![0.0; frames * joints],
        }
    }

    pub fn get(&self, frame: usize, joint: usize) -> f64 {
        self.data[frame * self.joints + joint]
    }

    pub fn set(&mut self, frame: usize, joint: usize, v: f64) {
        self.data[frame * self.joints + joint] = v;
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Raw 3D joint coordinates of one motion sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    coords: VectorSeries,
    label: Option<usize>,
}

impl MotionSequence {
    pub fn new(coords: VectorSeries, label: Option<usize>) -> Result<Self> {
        if coords.frames() < 2 {
            return Err(Error::invalid(format!(
                "a motion sequence needs at least 2 frames, got {}",
                coords.frames()
            )));
        }
        if coords.joints() == 0 {
            return Err(Error::invalid("a motion sequence needs at least one joint"));
        }
        if !coords.is_finite() {
            return Err(Error::NonFinite("joint coordinates".into()));
        }
        Ok(Self { coords, label })
    }

    pub fn coords(&self) -> &VectorSeries {
        &self.coords
    }

    pub fn frames(&self) -> usize {
        self.coords.frames()
    }

    pub fn joints(&self) -> usize {
        self.coords.joints()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }
}

/// Parent-relative bone vectors; the root's entry is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneVectors {
    pub delta: VectorSeries,
}

/// The angle, angular-velocity and angular-acceleration series of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularSeries {
    pub rel_angle: ScalarSeries,
    pub abs_angle: ScalarSeries,
    pub ang_vel: VectorSeries,
    pub ang_acc: VectorSeries,
}

fn check_joints(series: &VectorSeries, topo: &SkeletonTopology) -> Result<()> {
    if series.joints() != topo.num_joints() {
        return Err(Error::shape(format!(
            "sequence has {} joints, topology has {}",
            series.joints(),
            topo.num_joints()
        )));
    }
    Ok(())
}

pub fn bone_vectors(seq: &MotionSequence, topo: &SkeletonTopology) -> Result<BoneVectors> {
    bones_of(seq.coords(), topo).map(|delta| BoneVectors { delta })
}

fn bones_of(points: &VectorSeries, topo: &SkeletonTopology) -> Result<VectorSeries> {
    check_joints(points, topo)?;
    let mut out = VectorSeries::zeros(points.frames(), points.joints());
    for p in 0..points.frames() {
        for i in 0..points.joints() {
            if let Some(parent) = topo.parent(i) {
                out.set(p, i, points.get(p, i) - points.get(p, parent));
            }
        }
    }
    Ok(out)
}

/// `out[p] = in[p+1] - in[p]`, last frame zero.
pub fn finite_difference(series: &VectorSeries) -> Result<VectorSeries> {
    let m = series.frames();
    if m < 2 {
        return Err(Error::invalid(format!(
            "finite difference needs at least 2 frames, got {m}"
        )));
    }
    let mut out = VectorSeries::zeros(m, series.joints());
    for p in 0..m - 1 {
        for i in 0..series.joints() {
            out.set(p, i, series.get(p + 1, i) - series.get(p, i));
        }
    }
    Ok(out)
}

fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0).acos()
}

/// Rotation angle of each bone between frame `p` and `p+1`, in `[0, π]`.
pub fn relative_angles(bones: &BoneVectors) -> ScalarSeries {
    let d = &bones.delta;
    let mut out = ScalarSeries::zeros(d.frames(), d.joints());
    for p in 0..d.frames().saturating_sub(1) {
        for i in 0..d.joints() {
            out.set(p, i, angle_between(&d.get(p + 1, i), &d.get(p, i)));
        }
    }
    out
}

/// Accumulates relative angles root-to-leaf: `θ_i = θ_parent + θ̃_i`, root 0.
pub fn absolute_angles(rel: &ScalarSeries, topo: &SkeletonTopology) -> Result<ScalarSeries> {
    if rel.joints() != topo.num_joints() {
        return Err(Error::shape(
            "angle series and topology disagree on joint count",
        ));
    }
    let mut out = ScalarSeries::zeros(rel.frames(), rel.joints());
    for p in 0..rel.frames() {
        for &i in &topo.chain_order()[1..] {
            let parent = topo.parent(i).expect("non-root joints have parents");
            out.set(p, i, out.get(p, parent) + rel.get(p, i));
        }
    }
    Ok(out)
}

/// Per-bone angular velocity `ω̃ = θ̃ · normalize(δ^p × δ^{p+1})`, before
/// chain accumulation.
pub fn relative_angular_velocity(bones: &BoneVectors) -> VectorSeries {
    let d = &bones.delta;
    let mut out = VectorSeries::zeros(d.frames(), d.joints());
    for p in 0..d.frames().saturating_sub(1) {
        for i in 0..d.joints() {
            let (a, b) = (d.get(p, i), d.get(p + 1, i));
            let axis = a.cross(&b);
            let norm = axis.norm();
            if norm < DEGENERATE_NORM {
                continue;
            }
            out.set(p, i, axis * (angle_between(&b, &a) / norm));
        }
    }
    out
}

/// `ω_i = ω_parent + ω̃_i`, root zero.
pub fn angular_velocity(bones: &BoneVectors, topo: &SkeletonTopology) -> Result<VectorSeries> {
    check_joints(&bones.delta, topo)?;
    let rel = relative_angular_velocity(bones);
    let mut out = VectorSeries::zeros(rel.frames(), rel.joints());
    for p in 0..rel.frames() {
        for &i in &topo.chain_order()[1..] {
            let parent = topo.parent(i).expect("non-root joints have parents");
            out.set(p, i, out.get(p, parent) + rel.get(p, i));
        }
    }
    Ok(out)
}

/// `ε_i = ε_parent + ε̃_i + ω_parent × ω_i` with `ε̃_i` the forward difference
/// of `ω̃_i = ω_i − ω_parent`. Root zero.
///
/// `ω` is only defined up to frame `m-2`, so `ε` is defined up to `m-3`; the
/// last two frames are zero.
pub fn angular_acceleration(omega: &VectorSeries, topo: &SkeletonTopology) -> Result<VectorSeries> {
    check_joints(omega, topo)?;
    let (m, n) = (omega.frames(), omega.joints());
    let mut out = VectorSeries::zeros(m, n);
    let rel = |p: usize, i: usize| match topo.parent(i) {
        Some(parent) => omega.get(p, i) - omega.get(p, parent),
        None => Vec3::zeros(),
    };
    for p in 0..m.saturating_sub(2) {
        for &i in &topo.chain_order()[1..] {
            let parent = topo.parent(i).expect("non-root joints have parents");
            let rel_acc = rel(p + 1, i) - rel(p, i);
            let coupling = omega.get(p, parent).cross(&omega.get(p, i));
            out.set(p, i, out.get(p, parent) + rel_acc + coupling);
        }
    }
    Ok(out)
}

/// Full angular pipeline for the bones of `points`.
pub fn angular_series(bones: &BoneVectors, topo: &SkeletonTopology) -> Result<AngularSeries> {
    let rel_angle = relative_angles(bones);
    let abs_angle = absolute_angles(&rel_angle, topo)?;
    let ang_vel = angular_velocity(bones, topo)?;
    let ang_acc = angular_acceleration(&ang_vel, topo)?;
    Ok(AngularSeries {
        rel_angle,
        abs_angle,
        ang_vel,
        ang_acc,
    })
}

fn acceleration_of(points: &VectorSeries, topo: &SkeletonTopology) -> Result<VectorSeries> {
    let bones = BoneVectors {
        delta: bones_of(points, topo)?,
    };
    angular_acceleration(&angular_velocity(&bones, topo)?, topo)
}

/// The six input representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StreamKind {
    Joint,
    Bone,
    JointVelocity,
    BoneVelocity,
    JointAngularAcceleration,
    BoneAngularAcceleration,
}

impl StreamKind {
    pub const ALL: [StreamKind; 6] = [
        StreamKind::Joint,
        StreamKind::Bone,
        StreamKind::JointVelocity,
        StreamKind::BoneVelocity,
        StreamKind::JointAngularAcceleration,
        StreamKind::BoneAngularAcceleration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Joint => "joint",
            StreamKind::Bone => "bone",
            StreamKind::JointVelocity => "joint_velocity",
            StreamKind::BoneVelocity => "bone_velocity",
            StreamKind::JointAngularAcceleration => "joint_angular_acceleration",
            StreamKind::BoneAngularAcceleration => "bone_angular_acceleration",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for StreamKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StreamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StreamKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stream '{s}'")))
    }
}

/// All six streams of one sequence, each `[3, frames, joints]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSet {
    streams: [VectorSeries; 6],
}

impl StreamSet {
    pub fn new(streams: [VectorSeries; 6]) -> Result<Self> {
        let (m, n) = (streams[0].frames(), streams[0].joints());
        for (k, s) in StreamKind::ALL.iter().zip(&streams) {
            if s.frames() != m || s.joints() != n {
                return Err(Error::shape(format!(
                    "stream {k} is {}x{}, expected {m}x{n}",
                    s.frames(),
                    s.joints()
                )));
            }
            if !s.is_finite() {
                return Err(Error::NonFinite(format!("stream {k}")));
            }
        }
        Ok(Self { streams })
    }

    pub fn get(&self, kind: StreamKind) -> &VectorSeries {
        &self.streams[kind.index()]
    }

    pub fn frames(&self) -> usize {
        self.streams[0].frames()
    }

    pub fn joints(&self) -> usize {
        self.streams[0].joints()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StreamKind, &VectorSeries)> {
        StreamKind::ALL.into_iter().zip(self.streams.iter())
    }
}

/// Builds the joint, bone, joint/bone velocity and joint/bone angular
/// acceleration streams. The bone acceleration stream runs the same angular
/// pipeline with the bone vectors in place of joint positions.
pub fn build_stream_set(seq: &MotionSequence, topo: &SkeletonTopology) -> Result<StreamSet> {
    check_joints(seq.coords(), topo)?;
    let joint = seq.coords().clone();
    let bone = bones_of(&joint, topo)?;
    let joint_velocity = finite_difference(&joint)?;
    let bone_velocity = finite_difference(&bone)?;
    let joint_acc = acceleration_of(&joint, topo)?;
    let bone_acc = acceleration_of(&bone, topo)?;
    StreamSet::new([
        joint,
        bone,
        joint_velocity,
        bone_velocity,
        joint_acc,
        bone_acc,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_from(frames: usize, joints: usize, f: impl Fn(usize, usize) -> Vec3) -> MotionSequence {
        let data = (0..frames)
            .flat_map(|p| (0..joints).map(move |i| (p, i)))
            .map(|(p, i)| f(p, i))
            .collect();
        MotionSequence::new(VectorSeries::from_vec(frames, joints, data).unwrap(), None).unwrap()
    }

    #[test]
    fn bones_of_origin_are_zero() {
        let topo = SkeletonTopology::chain(3).unwrap();
        let seq = seq_from(4, 3, |_, _| Vec3::zeros());
        let b = bone_vectors(&seq, &topo).unwrap();
        assert!(b.delta.as_slice().iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn unit_offset_bone() {
        let topo = SkeletonTopology::chain(2).unwrap();
        let seq = seq_from(5, 2, |p, i| Vec3::new(p as f64 + i as f64, 2.0, -1.0));
        let b = bone_vectors(&seq, &topo).unwrap();
        for p in 0..5 {
            assert_eq!(b.delta.get(p, 0), Vec3::zeros());
            assert_eq!(b.delta.get(p, 1), Vec3::new(1.0, 0.0, 0.0));
        }
    }

    #[test]
    fn joint_count_mismatch() {
        let topo = SkeletonTopology::chain(3).unwrap();
        let seq = seq_from(4, 2, |_, _| Vec3::zeros());
        assert!(matches!(bone_vectors(&seq, &topo), Err(Error::Shape(_))));
        assert!(build_stream_set(&seq, &topo).is_err());
    }

    #[test]
    fn sequence_needs_two_finite_frames() {
        let one = VectorSeries::zeros(1, 2);
        assert!(MotionSequence::new(one, None).is_err());
        let mut bad = VectorSeries::zeros(3, 2);
        bad.set(1, 1, Vec3::new(f64::NAN, 0.0, 0.0));
        assert!(matches!(
            MotionSequence::new(bad, None),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn difference_of_linear_and_quadratic() {
        let lin = VectorSeries::from_vec(
            6,
            1,
            (0..6)
                .map(|p| Vec3::new(1.0, 2.0, 3.0) * p as f64)
                .collect(),
        )
        .unwrap();
        let d = finite_difference(&lin).unwrap();
        for p in 0..5 {
            assert_eq!(d.get(p, 0), Vec3::new(1.0, 2.0, 3.0));
        }
        assert_eq!(d.get(5, 0), Vec3::zeros());

        let quad = VectorSeries::from_vec(
            7,
            1,
            (0..7)
                .map(|p| Vec3::new(1.0, 0.5, -2.0) * (p * p) as f64)
                .collect(),
        )
        .unwrap();
        let dd = finite_difference(&finite_difference(&quad).unwrap()).unwrap();
        // frames 0..5 only see real data; frame 5 of the first difference is padding
        for p in 0..5 {
            assert_eq!(dd.get(p, 0), Vec3::new(2.0, 1.0, -4.0));
        }
        assert_eq!(dd.get(6, 0), Vec3::zeros());
        assert!(finite_difference(&VectorSeries::zeros(1, 1)).is_err());
    }

    #[test]
    fn antiparallel_flip_is_pi() {
        let topo = SkeletonTopology::chain(2).unwrap();
        let seq = seq_from(3, 2, |p, i| {
            let s = if p % 2 == 0 { 1.0 } else { -1.0 };
            Vec3::new(s * i as f64, 0.0, 0.0)
        });
        let rel = relative_angles(&bone_vectors(&seq, &topo).unwrap());
        assert!((rel.get(0, 1) - std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(rel.get(2, 1), 0.0);
    }

    #[test]
    fn chain_sum_of_angles() {
        let topo = SkeletonTopology::chain(4).unwrap();
        let mut rel = ScalarSeries::zeros(2, 4);
        for i in 1..4 {
            rel.set(0, i, 0.1);
        }
        let abs = absolute_angles(&rel, &topo).unwrap();
        assert!((abs.get(0, 3) - 0.3).abs() < 1e-15);
        assert_eq!(abs.get(0, 0), 0.0);
    }

    #[test]
    fn stream_names_round_trip() {
        for k in StreamKind::ALL {
            assert_eq!(k.name().parse::<StreamKind>().unwrap(), k);
        }
        assert!("jerk".parse::<StreamKind>().is_err());
    }

    #[test]
    fn static_sequence_streams() {
        let topo = SkeletonTopology::chain(3).unwrap();
        let seq = seq_from(5, 3, |_, i| Vec3::new(i as f64, 0.5 * i as f64, 1.0));
        let s = build_stream_set(&seq, &topo).unwrap();
        assert_eq!(s.get(StreamKind::Joint), seq.coords());
        for k in [
            StreamKind::JointVelocity,
            StreamKind::BoneVelocity,
            StreamKind::JointAngularAcceleration,
            StreamKind::BoneAngularAcceleration,
        ] {
            assert!(
                s.get(k).as_slice().iter().all(|v| *v == Vec3::zeros()),
                "{k}"
            );
        }
        for (_, t) in s.iter() {
            assert_eq!((t.frames(), t.joints()), (5, 3));
        }
    }

    #[test]
    fn channels_first_round_trip() {
        let s = VectorSeries::from_vec(
            2,
            2,
            vec![
                Vec3::new(1.0, 2.0, 3.0),
                Vec3::new(4.0, 5.0, 6.0),
                Vec3::new(7.0, 8.0, 9.0),
                Vec3::new(10.0, 11.0, 12.0),
            ],
        )
        .unwrap();
        let cf = s.to_channels_first();
        assert_eq!(&cf[..4], &[1.0, 4.0, 7.0, 10.0]);
        assert_eq!(VectorSeries::from_channels_first(2, 2, &cf).unwrap(), s);
    }
}
