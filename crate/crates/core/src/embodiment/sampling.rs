use std::f64::consts::TAU;

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{EmbodimentSpec, JointKind};
use super::Pose;

/// Haar-uniform rotation from three uniform variates (subgroup algorithm).
pub fn haar_quaternion<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    UnitQuaternion::new_normalize(Quaternion::new(
        b * (TAU * u3).cos(),
        a * (TAU * u2).sin(),
        a * (TAU * u2).cos(),
        b * (TAU * u3).sin(),
    ))
}

/// Uniform joint-space sample drawn from a caller-owned stream.
pub fn sample_random_pose_with<R: Rng + ?Sized>(spec: &EmbodimentSpec, rng: &mut R) -> Pose {
    let mut values = vec![0.0; spec.pose_dim];
    for i in spec.movable_joints() {
        let o = spec.dof_offset(i).unwrap();
        let j = &spec.joints[i];
        match j.kind {
            JointKind::Revolute => {
                let (lo, hi) = j.limits.expect("revolute joints carry limits");
                let u: f64 = rng.random();
                values[o] = (lo + (hi - lo) * u).min(hi);
            }
            JointKind::Quaternion => {
                let q = haar_quaternion(rng);
                let q = q.quaternion();
                values[o..o + 4].copy_from_slice(&[q.w, q.i, q.j, q.k]);
            }
            JointKind::Fixed => {}
        }
    }
    Pose::new(spec, values)
}

/// Uniform joint-space sample, deterministic in `seed`.
pub fn sample_random_pose(spec: &EmbodimentSpec, seed: u64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_random_pose_with(spec, &mut rng)
}
