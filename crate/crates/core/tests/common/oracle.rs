//! Brute-force forward kinematics with 4x4 homogeneous matrices. Each link
//! transform is rebuilt from scratch by walking up to the base by name.

use nalgebra::{Matrix3, Matrix4, Vector3};
use unilatent::embodiment::{EmbodimentSpec, JointKind};

fn skew(k: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0)
}

/// Rodrigues: `I + sin(t) K + (1 - cos(t)) K^2` for unit axis `k`.
pub fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = skew(&axis.normalize());
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Rotation matrix of a (possibly unnormalized) wxyz quaternion.
pub fn quat_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

fn homogeneous(r: Matrix3<f64>, t: Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    m
}

fn local(spec: &EmbodimentSpec, joint: usize, values: &[f64]) -> Matrix4<f64> {
    let j = &spec.joints[joint];
    let q = j.origin_rotation.into_inner();
    let origin = homogeneous(quat_matrix([q.w, q.i, q.j, q.k]), j.origin_translation);
    let motion = match j.kind {
        JointKind::Revolute => rodrigues(&j.axis, values[spec.dof_offset(joint).unwrap()]),
        JointKind::Quaternion => {
            let o = spec.dof_offset(joint).unwrap();
            quat_matrix([values[o], values[o + 1], values[o + 2], values[o + 3]])
        }
        JointKind::Fixed => Matrix3::identity(),
    };
    origin * homogeneous(motion, Vector3::zeros())
}

/// World transform of the named link.
pub fn link_transform(spec: &EmbodimentSpec, link: &str, values: &[f64]) -> Matrix4<f64> {
    if link == spec.base_link {
        return Matrix4::identity();
    }
    let (i, j) = spec
        .joints
        .iter()
        .enumerate()
        .find(|(_, j)| j.child_link == link)
        .expect("every non-base link has a parent joint");
    link_transform(spec, &j.parent_link, values) * local(spec, i, values)
}
