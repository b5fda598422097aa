//! Pose similarity used to supervise the latent space, and the retargeting
//! and goal-reaching metrics (RS, NDS, NVS, DTG).

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embodiment::{
    ee_position_normalized, forward_kinematics, segment_rotations, EmbodimentError, EmbodimentSpec,
    Motion, Pose, Segment,
};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("joint count mismatch: {0} vs {1}")]
    JointCountMismatch(usize, usize),
    #[error("motion length mismatch: {0} vs {1} frames")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("fps mismatch: {0} vs {1}")]
    FpsMismatch(f64, f64),
    #[error("omega must be non-negative, got {0}")]
    InvalidOmega(f64),
    #[error(transparent)]
    Embodiment(#[from] EmbodimentError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Weight of the end-effector term for arm segments.
    pub omega: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { omega: 1.0 }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.omega >= 0.0 && self.omega.is_finite() {
            Ok(())
        } else {
            Err(MetricsError::InvalidOmega(self.omega))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentSimilarity {
    pub segment: Segment,
    pub value: f64,
}

/// `sum_j (1 - <q_a, q_b>^2)`, in `[0, J]`.
pub fn rotation_distance(a: &[UnitQuaternion<f64>], b: &[UnitQuaternion<f64>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MetricsError::JointCountMismatch(a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(qa, qb)| {
            let d = qa.coords.dot(&qb.coords);
            (1.0 - d * d).max(0.0)
        })
        .sum())
}

pub fn ee_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a - b).norm()
}

/// Raw-pose quantities the similarity needs for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeatures {
    pub rotations: Vec<UnitQuaternion<f64>>,
    /// Normalized end-effector position (arms only).
    pub ee: Option<Vector3<f64>>,
}

impl SegmentFeatures {
    pub fn compute(spec: &EmbodimentSpec, values: &[f64], seg: Segment) -> Result<Self> {
        let rotations = segment_rotations(spec, values, seg)?;
        let ee = if seg.is_arm() {
            let fk = crate::embodiment::fk_values(spec, values);
            Some(ee_position_normalized(spec, &fk, seg)?)
        } else {
            None
        };
        Ok(SegmentFeatures { rotations, ee })
    }

    /// `D_R + omega * D_ee` for arms, `D_R` otherwise.
    pub fn similarity(&self, other: &SegmentFeatures, omega: f64) -> Result<f64> {
        let rot = rotation_distance(&self.rotations, &other.rotations)?;
        Ok(match (self.ee, other.ee) {
            (Some(a), Some(b)) => rot + omega * ee_distance(&a, &b),
            _ => rot,
        })
    }
}

pub fn segment_similarity(
    spec_a: &EmbodimentSpec,
    pose_a: &Pose,
    spec_b: &EmbodimentSpec,
    pose_b: &Pose,
    seg: Segment,
    cfg: &MetricConfig,
) -> Result<SegmentSimilarity> {
    cfg.validate()?;
    pose_a.validate(spec_a)?;
    pose_b.validate(spec_b)?;
    let fa = SegmentFeatures::compute(spec_a, &pose_a.values, seg)?;
    let fb = SegmentFeatures::compute(spec_b, &pose_b.values, seg)?;
    Ok(SegmentSimilarity {
        segment: seg,
        value: fa.similarity(&fb, cfg.omega)?,
    })
}

/// Angle in radians whose half-angle sine squared is `1 - <q_a, q_b>^2`.
pub fn rotation_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let d = a.coords.dot(&b.coords);
    2.0 * (1.0 - d * d).clamp(0.0, 1.0).sqrt().asin()
}

fn check_lengths(src: &Motion, tgt: &Motion) -> Result<()> {
    if src.len() != tgt.len() {
        return Err(MetricsError::LengthMismatch(src.len(), tgt.len()));
    }
    Ok(())
}

/// Mean per-limb angular deviation in degrees, averaged over frames.
pub fn eval_rs(
    src_spec: &EmbodimentSpec,
    src: &Motion,
    tgt_spec: &EmbodimentSpec,
    tgt: &Motion,
    seg: Segment,
) -> Result<f64> {
    check_lengths(src, tgt)?;
    if src.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (a, b) in src.frames.iter().zip(&tgt.frames) {
        let qa = segment_rotations(src_spec, &a.values, seg)?;
        let qb = segment_rotations(tgt_spec, &b.values, seg)?;
        if qa.len() != qb.len() {
            return Err(MetricsError::JointCountMismatch(qa.len(), qb.len()));
        }
        let mean: f64 = qa.iter().zip(&qb).map(|(x, y)| rotation_angle(x, y)).sum::<f64>() / qa.len() as f64;
        total += mean.to_degrees();
    }
    Ok(total / src.len() as f64)
}

fn normalized_track(spec: &EmbodimentSpec, motion: &Motion, seg: Segment) -> Result<Vec<Vector3<f64>>> {
    motion
        .frames
        .iter()
        .map(|f| {
            let fk = forward_kinematics(spec, f)?;
            Ok(ee_position_normalized(spec, &fk, seg)?)
        })
        .collect()
}

/// Mean normalized end-effector distance over frames.
pub fn eval_nds(
    src_spec: &EmbodimentSpec,
    src: &Motion,
    tgt_spec: &EmbodimentSpec,
    tgt: &Motion,
    seg: Segment,
) -> Result<f64> {
    check_lengths(src, tgt)?;
    if src.is_empty() {
        return Ok(0.0);
    }
    let a = normalized_track(src_spec, src, seg)?;
    let b = normalized_track(tgt_spec, tgt, seg)?;
    Ok(a.iter().zip(&b).map(|(x, y)| ee_distance(x, y)).sum::<f64>() / a.len() as f64)
}

/// Mean distance between normalized end-effector velocities (units of arm
/// lengths per second) over consecutive frame pairs.
pub fn eval_nvs(
    src_spec: &EmbodimentSpec,
    src: &Motion,
    tgt_spec: &EmbodimentSpec,
    tgt: &Motion,
    seg: Segment,
) -> Result<f64> {
    check_lengths(src, tgt)?;
    if src.len() < 2 {
        return Err(MetricsError::TooFewFrames(src.len()));
    }
    if src.fps != tgt.fps {
        return Err(MetricsError::FpsMismatch(src.fps, tgt.fps));
    }
    let a = normalized_track(src_spec, src, seg)?;
    let b = normalized_track(tgt_spec, tgt, seg)?;
    let fps = src.fps;
    let total: f64 = (1..a.len())
        .map(|t| {
            let va = (a[t] - a[t - 1]) * fps;
            let vb = (b[t] - b[t - 1]) * fps;
            (va - vb).norm()
        })
        .sum();
    Ok(total / (a.len() - 1) as f64)
}

/// Metric-space distance between the final end-effector and the goal.
pub fn eval_dtg(spec: &EmbodimentSpec, final_pose: &Pose, goal: &Vector3<f64>, seg: Segment) -> Result<f64> {
    let fk = forward_kinematics(spec, final_pose)?;
    Ok((fk.ee_position(spec, seg)? - goal).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embodiment::{fixture, sample_random_pose};
    use approx::assert_abs_diff_eq;
    use nalgebra::{Quaternion, Unit};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn rot_x(angle: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), angle)
    }

    #[test]
    fn rotation_distance_cases() {
        let id = UnitQuaternion::identity();
        let q = rot_x(0.7);
        assert_eq!(rotation_distance(&[q, id], &[q, id]).unwrap(), 0.0);
        let neg = Unit::new_unchecked(-q.into_inner());
        assert_abs_diff_eq!(rotation_distance(&[q], &[neg]).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rotation_distance(&[id], &[rot_x(FRAC_PI_2)]).unwrap(), 0.5, epsilon = 1e-12);
        assert!(matches!(
            rotation_distance(&[id], &[id, id]),
            Err(MetricsError::JointCountMismatch(1, 2))
        ));
    }

    #[test]
    fn ee_distance_cases() {
        let x = Vector3::x();
        assert_eq!(ee_distance(&x, &x), 0.0);
        assert_eq!(ee_distance(&x, &Vector3::zeros()), 1.0);
        assert_abs_diff_eq!(ee_distance(&x, &Vector3::y()), std::f64::consts::SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn similarity_weighting() {
        let id = UnitQuaternion::identity();
        // D_R = 0.5 from a 90 degree offset, D_ee = 0.2.
        let a = SegmentFeatures { rotations: vec![id], ee: Some(Vector3::zeros()) };
        let b = SegmentFeatures { rotations: vec![rot_x(FRAC_PI_2)], ee: Some(Vector3::new(0.2, 0.0, 0.0)) };
        assert_abs_diff_eq!(a.similarity(&b, 1.0).unwrap(), 0.7, epsilon = 1e-12);
        let a = SegmentFeatures { rotations: vec![id], ee: None };
        let b = SegmentFeatures { rotations: vec![rot_x(FRAC_PI_2)], ee: None };
        assert_abs_diff_eq!(a.similarity(&b, 1.0).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn segment_similarity_between_embodiments() {
        let human = fixture("human").unwrap();
        let tiago = fixture("tiago").unwrap();
        let cfg = MetricConfig::default();
        let hp = Pose::identity(&human);
        let rp = Pose::identity(&tiago);
        // Both stand in a T-pose: identical limb rotations and normalized hands.
        for seg in Segment::ARMS {
            let s = segment_similarity(&human, &hp, &tiago, &rp, seg, &cfg).unwrap();
            assert_abs_diff_eq!(s.value, 0.0, epsilon = 1e-12);
        }
        assert!(segment_similarity(&human, &hp, &tiago, &rp, Segment::TK, &cfg).is_err());
        let tk = segment_similarity(&human, &hp, &human, &hp, Segment::TK, &cfg).unwrap();
        assert_eq!(tk.value, 0.0);
        assert!(MetricConfig { omega: -1.0 }.validate().is_err());
    }

    #[test]
    fn omega_zero_reduces_to_rotation_distance() {
        let tiago = fixture("tiago").unwrap();
        let h1 = fixture("h1").unwrap();
        for seed in 0..20 {
            let a = sample_random_pose(&tiago, seed);
            let b = sample_random_pose(&h1, seed + 100);
            let s = segment_similarity(&tiago, &a, &h1, &b, Segment::RA, &MetricConfig { omega: 0.0 }).unwrap();
            let d = rotation_distance(
                &segment_rotations(&tiago, &a.values, Segment::RA).unwrap(),
                &segment_rotations(&h1, &b.values, Segment::RA).unwrap(),
            )
            .unwrap();
            assert_eq!(s.value, d);
        }
    }

    fn one_joint_motion(angles_deg: &[f64]) -> (EmbodimentSpec, Motion) {
        let spec = fixture("planar2").unwrap();
        let frames = angles_deg
            .iter()
            .map(|a| Pose::new(&spec, vec![a.to_radians(), 0.0]))
            .collect();
        (spec, Motion::new("planar2", 10.0, frames))
    }

    #[test]
    fn rs_inverts_to_degrees() {
        let (spec, zero) = one_joint_motion(&[0.0]);
        let (_, ten) = one_joint_motion(&[10.0]);
        // Two limbs per frame, only the first differs: mean is half of 10 degrees.
        assert_abs_diff_eq!(eval_rs(&spec, &zero, &spec, &ten, Segment::RA).unwrap(), 5.0, epsilon = 1e-6);
        assert_eq!(eval_rs(&spec, &ten, &spec, &ten, Segment::RA).unwrap(), 0.0);

        let a = UnitQuaternion::identity();
        let b = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 10f64.to_radians());
        assert_abs_diff_eq!(rotation_angle(&a, &b).to_degrees(), 10.0, epsilon = 1e-6);
        let b = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 90f64.to_radians());
        assert_abs_diff_eq!(rotation_angle(&a, &b).to_degrees(), 90.0, epsilon = 1e-6);

        let human = fixture("human").unwrap();
        let id = Pose::identity(&human);
        let mut bent = id.clone();
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        let q = q.quaternion();
        let off = human.dof_offset(human.joint_index("r_shoulder").unwrap()).unwrap();
        let elbow = human.dof_offset(human.joint_index("r_elbow").unwrap()).unwrap();
        for o in [off, elbow] {
            bent.values[o..o + 4].copy_from_slice(&[q.w, q.i, q.j, q.k]);
        }
        let m0 = Motion::new("human", 20.0, vec![id.clone(); 3]);
        let m1 = Motion::new("human", 20.0, vec![bent; 3]);
        assert_abs_diff_eq!(eval_rs(&human, &m0, &human, &m1, Segment::RA).unwrap(), 90.0, epsilon = 1e-9);
    }

    #[test]
    fn nds_cases() {
        let (spec, a) = one_joint_motion(&[0.0, 30.0, 60.0]);
        assert_eq!(eval_nds(&spec, &a, &spec, &a, Segment::RA).unwrap(), 0.0);
        // Fully folded arm sits on the shoulder: unit offset from the stretched arm.
        let folded = Motion::new(
            "planar2",
            10.0,
            vec![Pose::new(&spec, vec![0.0, std::f64::consts::PI]); 3],
        );
        let stretched = Motion::new("planar2", 10.0, vec![Pose::new(&spec, vec![0.0, 0.0]); 3]);
        assert_abs_diff_eq!(eval_nds(&spec, &folded, &spec, &stretched, Segment::RA).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn nds_matches_direct_loop() {
        let tiago = fixture("tiago").unwrap();
        let h1 = fixture("h1").unwrap();
        let a: Vec<Pose> = (0..8).map(|s| sample_random_pose(&tiago, s)).collect();
        let b: Vec<Pose> = (0..8).map(|s| sample_random_pose(&h1, 50 + s)).collect();
        let mut direct = 0.0;
        for (x, y) in a.iter().zip(&b) {
            let fx = forward_kinematics(&tiago, x).unwrap();
            let fy = forward_kinematics(&h1, y).unwrap();
            let px = (fx.ee_position(&tiago, Segment::LA).unwrap() - fx.joint_positions[tiago.shoulder_index(Segment::LA).unwrap()])
                / tiago.arm_length[&Segment::LA];
            let py = (fy.ee_position(&h1, Segment::LA).unwrap() - fy.joint_positions[h1.shoulder_index(Segment::LA).unwrap()])
                / h1.arm_length[&Segment::LA];
            direct += (px - py).norm();
        }
        let ma = Motion::new("tiago", 20.0, a);
        let mb = Motion::new("h1", 20.0, b);
        assert_abs_diff_eq!(eval_nds(&tiago, &ma, &h1, &mb, Segment::LA).unwrap(), direct / 8.0, epsilon = 1e-12);
    }

    #[test]
    fn nvs_cases() {
        let (spec, a) = one_joint_motion(&[0.0, 10.0, 25.0]);
        assert_eq!(eval_nvs(&spec, &a, &spec, &a, Segment::RA).unwrap(), 0.0);
        let (_, s1) = one_joint_motion(&[5.0, 5.0, 5.0]);
        let (_, s2) = one_joint_motion(&[40.0, 40.0, 40.0]);
        assert_abs_diff_eq!(eval_nvs(&spec, &s1, &spec, &s2, Segment::RA).unwrap(), 0.0, epsilon = 1e-12);
        let (_, short) = one_joint_motion(&[0.0]);
        assert!(matches!(eval_nvs(&spec, &short, &spec, &short, Segment::RA), Err(MetricsError::TooFewFrames(1))));
        let (_, b) = one_joint_motion(&[0.0, 1.0]);
        assert!(matches!(eval_nvs(&spec, &a, &spec, &b, Segment::RA), Err(MetricsError::LengthMismatch(3, 2))));
    }

    #[test]
    fn nvs_linear_ramps() {
        // With j1 = -j2/2 the planar2 hand stays on the x axis at normalized
        // x = cos(j2/2), so a linear ramp in x is reachable.
        let spec = fixture("planar2").unwrap();
        let fps = 10.0;
        let ramp = |slope: f64| {
            let frames = (0..5)
                .map(|t| {
                    let x: f64 = 0.2 + slope * t as f64 / fps;
                    let j2 = 2.0 * x.acos();
                    Pose::new(&spec, vec![-j2 / 2.0, j2])
                })
                .collect();
            Motion::new("planar2", fps, frames)
        };
        let a = ramp(0.5);
        let b = ramp(0.4);
        assert_abs_diff_eq!(eval_nvs(&spec, &a, &spec, &b, Segment::RA).unwrap(), 0.1, epsilon = 1e-9);
    }

    #[test]
    fn dtg_cases() {
        let spec = fixture("planar2").unwrap();
        let pose = Pose::new(&spec, vec![0.0, 0.0]);
        assert_eq!(eval_dtg(&spec, &pose, &Vector3::new(2.0, 0.0, 0.0), Segment::RA).unwrap(), 0.0);
        assert_abs_diff_eq!(
            eval_dtg(&spec, &pose, &Vector3::new(2.0, 0.0, 0.05), Segment::RA).unwrap(),
            0.05,
            epsilon = 1e-12
        );
    }

    #[test]
    fn concatenation_is_frame_weighted() {
        let tiago = fixture("tiago").unwrap();
        let h1 = fixture("h1").unwrap();
        let mk = |spec: &EmbodimentSpec, name: &str, seeds: std::ops::Range<u64>| {
            Motion::new(name, 20.0, seeds.map(|s| sample_random_pose(spec, s)).collect())
        };
        let (a1, a2) = (mk(&tiago, "tiago", 0..3), mk(&tiago, "tiago", 3..10));
        let (b1, b2) = (mk(&h1, "h1", 20..23), mk(&h1, "h1", 23..30));
        let cat = |x: &Motion, y: &Motion| {
            Motion::new(x.embodiment.clone(), x.fps, x.frames.iter().chain(&y.frames).cloned().collect())
        };
        for seg in Segment::ARMS {
            for f in [eval_rs, eval_nds] {
                let whole = f(&tiago, &cat(&a1, &a2), &h1, &cat(&b1, &b2), seg).unwrap();
                let parts = (3.0 * f(&tiago, &a1, &h1, &b1, seg).unwrap() + 7.0 * f(&tiago, &a2, &h1, &b2, seg).unwrap()) / 10.0;
                assert_abs_diff_eq!(whole, parts, epsilon = 1e-12);
            }
        }
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion<f64>> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z)))
    }

    proptest! {
        #[test]
        fn rotation_distance_axioms(a in prop::collection::vec(arb_quat(), 3), b in prop::collection::vec(arb_quat(), 3), flips in prop::collection::vec(any::<bool>(), 3)) {
            let d = rotation_distance(&a, &b).unwrap();
            prop_assert!((0.0..=3.0 + 1e-12).contains(&d));
            prop_assert!((d - rotation_distance(&b, &a).unwrap()).abs() < 1e-12);
            let flipped: Vec<_> = a.iter().zip(&flips)
                .map(|(q, &f)| if f { Unit::new_unchecked(-q.into_inner()) } else { *q })
                .collect();
            prop_assert!((d - rotation_distance(&flipped, &b).unwrap()).abs() < 1e-12);
            prop_assert!(rotation_distance(&a, &flipped).unwrap() < 1e-9);
        }
    }
}
