use std::path::Path;

use serde::{Deserialize, Serialize};

use super::spec::{EmbodimentSpec, JointKind};
use super::{EmbodimentError, Result};

const QUAT_NORM_TOL: f64 = 1e-6;
const LIMIT_TOL: f64 = 1e-12;

/// Joint configuration of one embodiment: scalar angles for robots, wxyz
/// quaternion blocks for humans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub embodiment: String,
    pub values: Vec<f64>,
}

impl Pose {
    pub fn new(spec: &EmbodimentSpec, values: Vec<f64>) -> Self {
        Pose {
            embodiment: spec.name.clone(),
            values,
        }
    }

    /// Zero angles for robots, identity quaternions for humans.
    pub fn identity(spec: &EmbodimentSpec) -> Self {
        let mut values = vec![0.0; spec.pose_dim];
        for i in spec.movable_joints() {
            if spec.joints[i].kind == JointKind::Quaternion {
                values[spec.dof_offset(i).unwrap()] = 1.0;
            }
        }
        Pose::new(spec, values)
    }

    /// Checks dimension, joint limits and quaternion norms.
    pub fn validate(&self, spec: &EmbodimentSpec) -> Result<()> {
        if self.embodiment != spec.name {
            return Err(EmbodimentError::WrongEmbodiment {
                spec: spec.name.clone(),
                pose: self.embodiment.clone(),
            });
        }
        if self.values.len() != spec.pose_dim {
            return Err(EmbodimentError::DimensionMismatch {
                expected: spec.pose_dim,
                actual: self.values.len(),
            });
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(EmbodimentError::InvalidPose(format!("non-finite value {v}")));
        }
        for i in spec.movable_joints() {
            let j = &spec.joints[i];
            let o = spec.dof_offset(i).unwrap();
            match j.kind {
                JointKind::Revolute => {
                    let (lo, hi) = j.limits.expect("revolute joints carry limits");
                    let v = self.values[o];
                    if v < lo - LIMIT_TOL || v > hi + LIMIT_TOL {
                        return Err(EmbodimentError::InvalidPose(format!(
                            "joint '{}' value {v} outside [{lo}, {hi}]",
                            j.name
                        )));
                    }
                }
                JointKind::Quaternion => {
                    let n = self.values[o..o + 4].iter().map(|x| x * x).sum::<f64>().sqrt();
                    if (n - 1.0).abs() > QUAT_NORM_TOL {
                        return Err(EmbodimentError::InvalidPose(format!(
                            "joint '{}' quaternion norm {n}",
                            j.name
                        )));
                    }
                }
                JointKind::Fixed => {}
            }
        }
        Ok(())
    }
}

/// A timed pose sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    pub embodiment: String,
    pub fps: f64,
    pub frames: Vec<Pose>,
}

#[derive(Serialize, Deserialize)]
struct MotionFile {
    embodiment: String,
    fps: f64,
    frames: Vec<Vec<f64>>,
}

impl Motion {
    pub fn new(embodiment: impl Into<String>, fps: f64, frames: Vec<Pose>) -> Self {
        Motion {
            embodiment: embodiment.into(),
            fps,
            frames,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self, spec: &EmbodimentSpec) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(EmbodimentError::InvalidPose(format!("fps must be positive, got {}", self.fps)));
        }
        if self.embodiment != spec.name {
            return Err(EmbodimentError::WrongEmbodiment {
                spec: spec.name.clone(),
                pose: self.embodiment.clone(),
            });
        }
        for (t, f) in self.frames.iter().enumerate() {
            f.validate(spec)
                .map_err(|e| EmbodimentError::InvalidPose(format!("frame {t}: {e}")))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = MotionFile {
            embodiment: self.embodiment.clone(),
            fps: self.fps,
            frames: self.frames.iter().map(|f| f.values.clone()).collect(),
        };
        serde_json::to_string(&file).expect("motions always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: MotionFile = serde_path_to_error::deserialize(de).map_err(|e| {
            super::schema(e.path().to_string(), e.inner().to_string())
        })?;
        if !(file.fps > 0.0) {
            return Err(super::schema("fps", "fps must be positive"));
        }
        if let Some(first) = file.frames.first() {
            if let Some(t) = file.frames.iter().position(|f| f.len() != first.len()) {
                return Err(super::schema(format!("frames[{t}]"), "frame dimension differs from frame 0"));
            }
        }
        let frames = file
            .frames
            .into_iter()
            .map(|values| Pose {
                embodiment: file.embodiment.clone(),
                values,
            })
            .collect();
        Ok(Motion {
            embodiment: file.embodiment,
            fps: file.fps,
            frames,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EmbodimentError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| EmbodimentError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}
