//! Smooth sinusoidal motions for any embodiment.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, ToolkitError};
use crate::embodiment::{EmbodimentSpec, JointKind, Motion, Pose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticMotionParams {
    pub count: usize,
    pub frames: usize,
    pub fps: f64,
    /// Sinusoid amplitude as a fraction of each component's half range.
    pub amplitude: [f64; 2],
    /// Hz.
    pub frequency: [f64; 2],
    /// Radians.
    pub phase: [f64; 2],
    /// Rotation-vector component ranges for quaternion joints, by joint
    /// name. Quaternion joints without an entry stay at identity.
    pub quaternion_ranges: BTreeMap<String, [[f64; 2]; 3]>,
    pub seed: u64,
}

impl Default for SyntheticMotionParams {
    fn default() -> Self {
        SyntheticMotionParams {
            count: 200,
            frames: 120,
            fps: 20.0,
            amplitude: [0.2, 1.0],
            frequency: [0.2, 1.0],
            phase: [0.0, TAU],
            quaternion_ranges: human_quaternion_ranges(),
            seed: 0,
        }
    }
}

/// Joint ranges for the bundled human fixture.
pub fn human_quaternion_ranges() -> BTreeMap<String, [[f64; 2]; 3]> {
    let mut r = BTreeMap::new();
    r.insert("spine".into(), [[-0.2, 0.2], [-0.3, 0.3], [-0.3, 0.3]]);
    r.insert("chest".into(), [[-0.2, 0.2], [-0.3, 0.3], [-0.3, 0.3]]);
    for side in ["l", "r"] {
        r.insert(format!("{side}_shoulder"), [[-1.3, 1.3], [-1.3, 1.3], [-1.3, 1.3]]);
        r.insert(format!("{side}_hip"), [[-0.3, 0.3], [-1.0, 0.4], [-0.3, 0.3]]);
        r.insert(format!("{side}_knee"), [[0.0, 0.0], [0.0, 1.5], [0.0, 0.0]]);
    }
    r.insert("l_elbow".into(), [[0.0, 0.0], [0.0, 0.0], [-2.2, 0.0]]);
    r.insert("r_elbow".into(), [[0.0, 0.0], [0.0, 0.0], [0.0, 2.2]]);
    r
}

impl SyntheticMotionParams {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0] <= r[1] && r.iter().all(|v| v.is_finite());
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(ToolkitError::InvalidParams(format!("fps must be positive, got {}", self.fps)));
        }
        if !ordered(self.amplitude) || self.amplitude[0] < 0.0 {
            return Err(ToolkitError::InvalidParams("amplitude range must be ordered and non-negative".into()));
        }
        if self.amplitude[1] > 1.0 {
            return Err(ToolkitError::InvalidParams(format!(
                "amplitude fraction {} exceeds the joint range",
                self.amplitude[1]
            )));
        }
        if !ordered(self.frequency) || self.frequency[0] < 0.0 || !ordered(self.phase) {
            return Err(ToolkitError::InvalidParams("frequency and phase ranges must be ordered".into()));
        }
        for (name, comps) in &self.quaternion_ranges {
            if comps.iter().any(|c| !ordered(*c)) {
                return Err(ToolkitError::InvalidParams(format!("range of '{name}' is not ordered")));
            }
        }
        Ok(())
    }
}

/// One sinusoid per driven component.
#[derive(Debug, Clone, Copy)]
struct Wave {
    center: f64,
    amplitude: f64,
    omega: f64,
    phase: f64,
}

impl Wave {
    fn draw<R: Rng>(lo: f64, hi: f64, p: &SyntheticMotionParams, rng: &mut R) -> Self {
        let half = 0.5 * (hi - lo);
        let frac = uniform(rng, p.amplitude);
        let amplitude = frac * half;
        let center = uniform(rng, [lo + amplitude, hi - amplitude]);
        Wave {
            center,
            amplitude,
            omega: TAU * uniform(rng, p.frequency),
            phase: uniform(rng, p.phase),
        }
    }

    fn at(&self, seconds: f64) -> f64 {
        self.center + self.amplitude * (self.omega * seconds + self.phase).sin()
    }
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.random::<f64>()
}

enum Driver {
    Scalar(usize, Wave),
    Rotation(usize, [Wave; 3]),
}

/// Generates `params.count` motions, deterministic in `params.seed`.
pub fn generate_synthetic_motions(spec: &EmbodimentSpec, params: &SyntheticMotionParams) -> Result<Vec<Motion>> {
    params.validate()?;
    for name in params.quaternion_ranges.keys() {
        let known = spec
            .joint_index(name)
            .map(|i| spec.joints[i].kind == JointKind::Quaternion)
            .unwrap_or(false);
        if !known && spec.is_human() {
            return Err(ToolkitError::InvalidParams(format!(
                "'{name}' is not a quaternion joint of '{}'",
                spec.name
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let base = Pose::identity(spec);
    let mut out = Vec::with_capacity(params.count);
    for _ in 0..params.count {
        let mut drivers = Vec::new();
        for i in spec.movable_joints() {
            let j = &spec.joints[i];
            let o = spec.dof_offset(i).unwrap();
            match j.kind {
                JointKind::Revolute => {
                    let (lo, hi) = j.limits.expect("revolute joints carry limits");
                    drivers.push(Driver::Scalar(o, Wave::draw(lo, hi, params, &mut rng)));
                }
                JointKind::Quaternion => {
                    if let Some(r) = params.quaternion_ranges.get(&j.name) {
                        let waves = r.map(|c| Wave::draw(c[0], c[1], params, &mut rng));
                        drivers.push(Driver::Rotation(o, waves));
                    }
                }
                JointKind::Fixed => {}
            }
        }
        let frames = (0..params.frames)
            .map(|t| {
                let sec = t as f64 / params.fps;
                let mut values = base.values.clone();
                for d in &drivers {
                    match d {
                        Driver::Scalar(o, w) => values[*o] = w.at(sec),
                        Driver::Rotation(o, w) => {
                            let rv = Vector3::new(w[0].at(sec), w[1].at(sec), w[2].at(sec));
                            let q = UnitQuaternion::from_scaled_axis(rv);
                            let q = q.quaternion();
                            values[*o..*o + 4].copy_from_slice(&[q.w, q.i, q.j, q.k]);
                        }
                    }
                }
                Pose::new(spec, values)
            })
            .collect();
        let motion = Motion::new(spec.name.clone(), params.fps, frames);
        motion.validate(spec)?;
        out.push(motion);
    }
    Ok(out)
}
