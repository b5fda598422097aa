use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};

use super::spec::{EmbodimentSpec, JointKind, Segment};
use super::{EmbodimentError, Pose, Result};

/// Link frames of one evaluated pose, indexed like [`EmbodimentSpec::links`].
#[derive(Debug, Clone, PartialEq)]
pub struct FkResult {
    pub link_positions: Vec<Vector3<f64>>,
    pub link_orientations: Vec<UnitQuaternion<f64>>,
    /// World orientation of each joint after its own rotation.
    pub joint_world_quats: Vec<UnitQuaternion<f64>>,
    /// World position of each joint origin.
    pub joint_positions: Vec<Vector3<f64>>,
    /// World rotation axis of each joint.
    pub joint_axes: Vec<Vector3<f64>>,
}

impl FkResult {
    pub fn link_position(&self, spec: &EmbodimentSpec, link: &str) -> Option<Vector3<f64>> {
        spec.link_index(link).map(|i| self.link_positions[i])
    }

    pub fn ee_position(&self, spec: &EmbodimentSpec, seg: Segment) -> Result<Vector3<f64>> {
        let i = spec
            .ee_link_index(seg)
            .ok_or_else(|| EmbodimentError::SegmentUnavailable(seg, spec.name.clone()))?;
        Ok(self.link_positions[i])
    }
}

fn check_pose(spec: &EmbodimentSpec, pose: &Pose) -> Result<()> {
    if pose.embodiment != spec.name {
        return Err(EmbodimentError::WrongEmbodiment {
            spec: spec.name.clone(),
            pose: pose.embodiment.clone(),
        });
    }
    if pose.values.len() != spec.pose_dim {
        return Err(EmbodimentError::DimensionMismatch {
            expected: spec.pose_dim,
            actual: pose.values.len(),
        });
    }
    Ok(())
}

fn joint_rotation(spec: &EmbodimentSpec, joint: usize, values: &[f64]) -> UnitQuaternion<f64> {
    let j = &spec.joints[joint];
    match (j.kind, spec.dof_offset(joint)) {
        (JointKind::Revolute, Some(o)) => {
            UnitQuaternion::from_axis_angle(&Unit::new_unchecked(j.axis), values[o])
        }
        (JointKind::Quaternion, Some(o)) => UnitQuaternion::new_normalize(Quaternion::new(
            values[o],
            values[o + 1],
            values[o + 2],
            values[o + 3],
        )),
        _ => UnitQuaternion::identity(),
    }
}

/// Forward kinematics on a raw value slice; does not check limits, so it also
/// serves decoded (unclamped) network outputs.
pub fn fk_values(spec: &EmbodimentSpec, values: &[f64]) -> FkResult {
    let n = spec.joints.len();
    let mut pos = Vec::with_capacity(n + 1);
    let mut rot = Vec::with_capacity(n + 1);
    pos.push(Vector3::zeros());
    rot.push(UnitQuaternion::identity());
    let mut joint_world_quats = Vec::with_capacity(n);
    let mut joint_positions = Vec::with_capacity(n);
    let mut joint_axes = Vec::with_capacity(n);
    for (i, j) in spec.joints.iter().enumerate() {
        let p = spec.parent_link_index(i);
        let origin_pos = pos[p] + rot[p] * j.origin_translation;
        let origin_rot = rot[p] * j.origin_rotation;
        let child_rot = origin_rot * joint_rotation(spec, i, values);
        joint_positions.push(origin_pos);
        joint_axes.push(origin_rot * j.axis);
        joint_world_quats.push(child_rot);
        pos.push(origin_pos);
        rot.push(child_rot);
    }
    FkResult {
        link_positions: pos,
        link_orientations: rot,
        joint_world_quats,
        joint_positions,
        joint_axes,
    }
}

/// Composes joint transforms from the base link to every leaf.
pub fn forward_kinematics(spec: &EmbodimentSpec, pose: &Pose) -> Result<FkResult> {
    check_pose(spec, pose)?;
    Ok(fk_values(spec, &pose.values))
}

/// End-effector position relative to the shoulder, expressed in the frame of
/// the link carrying the shoulder joint (torso or base) and divided by the
/// arm length.
pub fn ee_position_normalized(spec: &EmbodimentSpec, fk: &FkResult, seg: Segment) -> Result<Vector3<f64>> {
    let (ee, sh) = arm_indices(spec, seg)?;
    let torso = spec.parent_link_index(sh);
    let rel = fk.link_positions[ee] - fk.joint_positions[sh];
    Ok(fk.link_orientations[torso].inverse_transform_vector(&rel) / spec.arm_length[&seg])
}

/// Expresses a world point in the normalized frame of the `seg` arm.
pub fn normalize_point(spec: &EmbodimentSpec, fk: &FkResult, seg: Segment, world: &Vector3<f64>) -> Result<Vector3<f64>> {
    let (_, sh) = arm_indices(spec, seg)?;
    let torso = spec.parent_link_index(sh);
    Ok(fk.link_orientations[torso].inverse_transform_vector(&(world - fk.joint_positions[sh])) / spec.arm_length[&seg])
}

/// Inverse of [`normalize_point`].
pub fn denormalize_point(spec: &EmbodimentSpec, fk: &FkResult, seg: Segment, normalized: &Vector3<f64>) -> Result<Vector3<f64>> {
    let (_, sh) = arm_indices(spec, seg)?;
    let torso = spec.parent_link_index(sh);
    Ok(fk.joint_positions[sh] + fk.link_orientations[torso].transform_vector(&(normalized * spec.arm_length[&seg])))
}

fn arm_indices(spec: &EmbodimentSpec, seg: Segment) -> Result<(usize, usize)> {
    spec.require_segment(seg)?;
    match (spec.ee_link_index(seg), spec.shoulder_index(seg)) {
        (Some(ee), Some(sh)) => Ok((ee, sh)),
        _ => Err(EmbodimentError::SegmentUnavailable(seg, spec.name.clone())),
    }
}

/// Normalized end-effector position with its derivative with respect to
/// every revolute dof on the shoulder-to-end-effector chain.
#[derive(Debug, Clone)]
pub struct EeJacobian {
    pub position: Vector3<f64>,
    /// `(pose index, d position / d value)`.
    pub columns: Vec<(usize, Vector3<f64>)>,
}

/// Joints above the shoulder move the torso frame together with the arm, so
/// they do not change the normalized position and carry no column.
pub fn normalized_ee_jacobian(spec: &EmbodimentSpec, fk: &FkResult, seg: Segment) -> Result<EeJacobian> {
    let (ee, sh) = arm_indices(spec, seg)?;
    let torso = fk.link_orientations[spec.parent_link_index(sh)];
    let scale = 1.0 / spec.arm_length[&seg];
    let p_ee = fk.link_positions[ee];
    let position = torso.inverse_transform_vector(&(p_ee - fk.joint_positions[sh])) * scale;
    let chain = spec.arm_chain(seg).expect("available arm has a chain");
    let mut columns = Vec::new();
    for &j in chain {
        if spec.joints[j].kind != JointKind::Revolute {
            continue;
        }
        let off = spec.dof_offset(j).expect("revolute joints own a dof");
        let d_world = fk.joint_axes[j].cross(&(p_ee - fk.joint_positions[j]));
        columns.push((off, torso.inverse_transform_vector(&d_world) * scale));
    }
    Ok(EeJacobian { position, columns })
}

/// One unit quaternion per movable joint, in pose order.
pub fn local_joint_quaternions(spec: &EmbodimentSpec, pose: &Pose) -> Result<Vec<UnitQuaternion<f64>>> {
    check_pose(spec, pose)?;
    Ok(spec.movable_joints().map(|i| joint_rotation(spec, i, &pose.values)).collect())
}

/// Limb rotations of a segment: the product of local joint rotations inside
/// each rotation group, in chain order.
pub fn segment_rotations(spec: &EmbodimentSpec, values: &[f64], seg: Segment) -> Result<Vec<UnitQuaternion<f64>>> {
    spec.require_segment(seg)?;
    if values.len() != spec.pose_dim {
        return Err(EmbodimentError::DimensionMismatch {
            expected: spec.pose_dim,
            actual: values.len(),
        });
    }
    Ok(spec
        .rotation_groups(seg)
        .iter()
        .map(|group| {
            group
                .iter()
                .fold(UnitQuaternion::identity(), |acc, &j| acc * joint_rotation(spec, j, values))
        })
        .collect())
}
