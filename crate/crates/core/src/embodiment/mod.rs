//! Embodiment descriptions, poses and kinematics.

mod fixtures;
mod kinematics;
mod pose;
mod sampling;
mod spec;
mod urdf;

pub use fixtures::{fixture, fixture_names, FIXTURE_NAMES};
pub use kinematics::{
    ee_position_normalized, fk_values, forward_kinematics, denormalize_point, local_joint_quaternions, normalize_point, normalized_ee_jacobian,
    segment_rotations, EeJacobian, FkResult,
};
pub use pose::{Motion, Pose};
pub use sampling::{haar_quaternion, sample_random_pose, sample_random_pose_with};
pub use spec::{
    parse_embodiment, EmbodimentDoc, EmbodimentSpec, JointDoc, JointKind, JointSpec, OriginDoc,
    Representation, Segment,
};
pub use urdf::import_urdf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbodimentError {
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("dangling link reference at {path}: link '{link}' is not defined")]
    DanglingLink { path: String, link: String },
    #[error("duplicate joint name at {path}: '{name}'")]
    DuplicateJoint { path: String, name: String },
    #[error("pose for '{pose}' used with embodiment '{spec}'")]
    WrongEmbodiment { spec: String, pose: String },
    #[error("dimension mismatch: expected {expected} values, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("segment {0} is not available on embodiment '{1}'")]
    SegmentUnavailable(Segment, String),
    #[error("unknown fixture '{0}'")]
    UnknownFixture(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, EmbodimentError>;

pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> EmbodimentError {
    EmbodimentError::Schema {
        path: path.into(),
        message: message.into(),
    }
}
