//! The shared latent model: a human encoder, a cross-embodiment encoder and
//! decoder, and one embedding pair per registered robot.
//!
//! The latent vector is 80 wide and split into five 16-wide subspaces in
//! [`Segment::ALL`] order. The cross-embodiment decoder is one branch per
//! subspace; each branch writes its own slice of the shared embedding, and a
//! robot's output layer maps each slice only onto that segment's joints. A
//! segment's joints therefore depend on nothing but its own subspace.

use std::collections::BTreeMap;

use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embodiment::{EmbodimentError, EmbodimentSpec, JointKind, Motion, Pose, Segment};
use crate::nn::{join, Activation, Linear, Mlp, MlpCache, Parameters};

pub const SUBSPACE_DIM: usize = 16;
pub const LATENT_DIM: usize = SUBSPACE_DIM * 5;

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("robot '{0}' is not registered")]
    UnregisteredRobot(String),
    #[error("robot '{0}' is already registered")]
    DuplicateRobot(String),
    #[error("'{0}' is not the human embodiment of this model")]
    NotHuman(String),
    #[error("spec for '{0}' does not match the one the model was built with")]
    SpecMismatch(String),
    #[error("segment {0} is not available in its source latent")]
    SegmentUnavailable(Segment),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embodiment(#[from] EmbodimentError),
}

pub type Result<T> = std::result::Result<T, LatentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Affine layers per network.
    pub layers: usize,
    pub width: usize,
    /// Width of the shared embedding between robot layers and the shared nets.
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 8,
            width: 256,
            embed_dim: 1024,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.width == 0 {
            return Err(LatentError::InvalidConfig("layers and width must be positive".into()));
        }
        if self.embed_dim < 5 {
            return Err(LatentError::InvalidConfig("embed_dim must be at least 5".into()));
        }
        Ok(())
    }

    /// Slice of the shared embedding owned by a segment.
    pub fn chunk(&self, seg: Segment) -> std::ops::Range<usize> {
        let k = seg.index();
        (k * self.embed_dim / 5)..((k + 1) * self.embed_dim / 5)
    }
}

/// Five bounded subspace vectors with an availability mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPose {
    pub subspaces: [[f64; SUBSPACE_DIM]; 5],
    pub available: [bool; 5],
}

impl LatentPose {
    pub fn zeros() -> Self {
        LatentPose {
            subspaces: [[0.0; SUBSPACE_DIM]; 5],
            available: [false; 5],
        }
    }

    pub fn from_flat(values: &[f64], available: [bool; 5]) -> Self {
        assert_eq!(values.len(), LATENT_DIM);
        let mut out = LatentPose::zeros();
        for (k, sub) in out.subspaces.iter_mut().enumerate() {
            if available[k] {
                sub.copy_from_slice(&values[k * SUBSPACE_DIM..(k + 1) * SUBSPACE_DIM]);
            }
        }
        out.available = available;
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.subspaces.iter().flatten().copied().collect()
    }

    pub fn get(&self, seg: Segment) -> &[f64; SUBSPACE_DIM] {
        &self.subspaces[seg.index()]
    }

    pub fn set(&mut self, seg: Segment, values: [f64; SUBSPACE_DIM]) {
        self.subspaces[seg.index()] = values;
        self.available[seg.index()] = true;
    }

    pub fn is_available(&self, seg: Segment) -> bool {
        self.available[seg.index()]
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        Segment::ALL.into_iter().filter(|s| self.is_available(*s))
    }
}

/// Builds a latent from per-segment sources.
pub fn compose_latents(parts: &BTreeMap<Segment, &LatentPose>) -> Result<LatentPose> {
    let mut out = LatentPose::zeros();
    for (&seg, src) in parts {
        if !src.is_available(seg) {
            return Err(LatentError::SegmentUnavailable(seg));
        }
        out.set(seg, *src.get(seg));
    }
    Ok(out)
}

/// Per-robot input and output layers.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotEmbedding {
    /// pose_dim -> embed_dim.
    pub encoder: Linear,
    /// One block per available segment: chunk width -> segment dofs.
    pub decoder: BTreeMap<Segment, Linear>,
}

impl RobotEmbedding {
    fn new(spec: &EmbodimentSpec, config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Linear::new(spec.pose_dim, config.embed_dim, &mut rng);
        let decoder = spec
            .segment_available
            .iter()
            .map(|&seg| (seg, Linear::new(config.chunk(seg).len(), spec.segment_dofs(seg).len(), &mut rng)))
            .collect();
        RobotEmbedding { encoder, decoder }
    }

    fn zeros_like(&self) -> Self {
        RobotEmbedding {
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.iter().map(|(s, l)| (*s, l.zeros_like())).collect(),
        }
    }
}

impl Parameters for RobotEmbedding {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        for (seg, l) in &self.decoder {
            l.visit(&join(prefix, &format!("decoder.{seg}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        for (seg, l) in &mut self.decoder {
            l.visit_mut(&join(prefix, &format!("decoder.{seg}")), f);
        }
    }
}

/// All trainable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentParams {
    pub human_encoder: Mlp,
    pub cross_encoder: Mlp,
    /// One branch per segment in [`Segment::ALL`] order.
    pub cross_decoder: Vec<Mlp>,
    pub robots: BTreeMap<String, RobotEmbedding>,
}

impl LatentParams {
    pub fn zeros_like(&self) -> Self {
        LatentParams {
            human_encoder: self.human_encoder.zeros_like(),
            cross_encoder: self.cross_encoder.zeros_like(),
            cross_decoder: self.cross_decoder.iter().map(Mlp::zeros_like).collect(),
            robots: self.robots.iter().map(|(k, v)| (k.clone(), v.zeros_like())).collect(),
        }
    }
}

impl Parameters for LatentParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.human_encoder.visit(&join(prefix, "human_encoder"), f);
        self.cross_encoder.visit(&join(prefix, "cross_encoder"), f);
        for (seg, m) in Segment::ALL.iter().zip(&self.cross_decoder) {
            m.visit(&join(prefix, &format!("cross_decoder.{seg}")), f);
        }
        for (name, r) in &self.robots {
            r.visit(&join(prefix, &format!("robots.{name}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.human_encoder.visit_mut(&join(prefix, "human_encoder"), f);
        self.cross_encoder.visit_mut(&join(prefix, "cross_encoder"), f);
        for (seg, m) in Segment::ALL.iter().zip(&mut self.cross_decoder) {
            m.visit_mut(&join(prefix, &format!("cross_decoder.{seg}")), f);
        }
        for (name, r) in &mut self.robots {
            r.visit_mut(&join(prefix, &format!("robots.{name}")), f);
        }
    }
}

/// Name prefix of a robot's embedding tensors.
pub fn robot_param_prefix(name: &str) -> String {
    format!("robots.{name}.")
}

pub fn is_shared_param(name: &str) -> bool {
    !name.starts_with("robots.")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    pub config: ModelConfig,
    pub human: EmbodimentSpec,
    pub robots: BTreeMap<String, EmbodimentSpec>,
    pub params: LatentParams,
}

/// Forward state of a robot encoding pass.
#[derive(Debug, Clone)]
pub struct RobotEncodeCache {
    input: Array2<f64>,
    mlp: MlpCache,
    mask: [bool; 5],
    output: Array2<f64>,
}

impl RobotEncodeCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Forward state of a decoding pass; `output` holds raw joint values.
#[derive(Debug, Clone)]
pub struct DecodeCache {
    branches: Vec<(Segment, Array2<f64>, MlpCache)>,
    output: Array2<f64>,
}

impl DecodeCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

fn subspace_cols(seg: Segment) -> std::ops::Range<usize> {
    seg.index() * SUBSPACE_DIM..(seg.index() + 1) * SUBSPACE_DIM
}

fn availability(spec: &EmbodimentSpec) -> [bool; 5] {
    Segment::ALL.map(|s| spec.has_segment(s))
}

impl LatentModel {
    /// A model with no registered robots.
    pub fn new(config: ModelConfig, human: EmbodimentSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        if !human.is_human() {
            return Err(LatentError::NotHuman(human.name.clone()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ModelConfig { layers, width, embed_dim } = config;
        let human_encoder = Mlp::uniform(human.pose_dim, width, LATENT_DIM, layers, Activation::Elu, Activation::Tanh, &mut rng);
        let cross_encoder = Mlp::uniform(embed_dim, width, LATENT_DIM, layers, Activation::Elu, Activation::Tanh, &mut rng);
        let cross_decoder = Segment::ALL
            .iter()
            .map(|&s| {
                Mlp::uniform(SUBSPACE_DIM, width, config.chunk(s).len(), layers, Activation::Elu, Activation::Identity, &mut rng)
            })
            .collect();
        Ok(LatentModel {
            config,
            human,
            robots: BTreeMap::new(),
            params: LatentParams {
                human_encoder,
                cross_encoder,
                cross_decoder,
                robots: BTreeMap::new(),
            },
        })
    }

    /// Allocates a fresh embedding pair for `spec`; shared tensors are untouched.
    pub fn register_robot(&mut self, spec: &EmbodimentSpec, seed: u64) -> Result<()> {
        if self.robots.contains_key(&spec.name) || spec.name == self.human.name {
            return Err(LatentError::DuplicateRobot(spec.name.clone()));
        }
        if spec.is_human() {
            return Err(LatentError::InvalidConfig(format!("'{}' uses quaternion joints", spec.name)));
        }
        self.params
            .robots
            .insert(spec.name.clone(), RobotEmbedding::new(spec, &self.config, seed));
        self.robots.insert(spec.name.clone(), spec.clone());
        Ok(())
    }

    pub fn robot_names(&self) -> impl Iterator<Item = &str> {
        self.robots.keys().map(String::as_str)
    }

    pub fn robot(&self, name: &str) -> Result<&EmbodimentSpec> {
        self.robots
            .get(name)
            .ok_or_else(|| LatentError::UnregisteredRobot(name.to_string()))
    }

    fn check_robot(&self, spec: &EmbodimentSpec) -> Result<&RobotEmbedding> {
        let known = self.robot(&spec.name)?;
        if known != spec {
            return Err(LatentError::SpecMismatch(spec.name.clone()));
        }
        Ok(&self.params.robots[&spec.name])
    }

    /// Human network input for a pose: quaternion blocks with `w >= 0`.
    pub fn human_input_row(&self, values: &[f64]) -> Vec<f64> {
        let mut row = values.to_vec();
        for i in self.human.movable_joints() {
            if self.human.joints[i].kind == JointKind::Quaternion {
                let o = self.human.dof_offset(i).unwrap();
                if row[o] < 0.0 {
                    row[o..o + 4].iter_mut().for_each(|v| *v = -*v);
                }
            }
        }
        row
    }

    pub fn human_input(&self, poses: &[&[f64]]) -> Array2<f64> {
        let mut x = Array2::zeros((poses.len(), self.human.pose_dim));
        for (mut r, p) in x.rows_mut().into_iter().zip(poses) {
            r.assign(&ndarray::ArrayView1::from(&self.human_input_row(p)));
        }
        x
    }

    pub fn encode_human_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        self.params.human_encoder.forward(x)
    }

    pub fn encode_human_cached(&self, x: &Array2<f64>) -> MlpCache {
        self.params.human_encoder.forward_cached(x)
    }

    pub fn encode_human_backward(&self, cache: &MlpCache, grad_z: &Array2<f64>, grads: &mut LatentParams) {
        self.params
            .human_encoder
            .backward(cache, grad_z, &mut grads.human_encoder);
    }

    pub fn encode_robot_cached(&self, spec: &EmbodimentSpec, x: &Array2<f64>) -> Result<RobotEncodeCache> {
        let emb = self.check_robot(spec)?;
        let e = emb.encoder.forward(x);
        let mlp = self.params.cross_encoder.forward_cached(&e);
        let mask = availability(spec);
        let mut output = mlp.output().clone();
        for seg in Segment::ALL {
            if !mask[seg.index()] {
                output.slice_mut(s![.., subspace_cols(seg)]).fill(0.0);
            }
        }
        Ok(RobotEncodeCache {
            input: x.clone(),
            mlp,
            mask,
            output,
        })
    }

    /// Returns the gradient with respect to the raw pose input.
    pub fn encode_robot_backward(
        &self,
        spec: &EmbodimentSpec,
        cache: &RobotEncodeCache,
        grad_z: &Array2<f64>,
        grads: &mut LatentParams,
    ) -> Array2<f64> {
        let mut g = grad_z.clone();
        for seg in Segment::ALL {
            if !cache.mask[seg.index()] {
                g.slice_mut(s![.., subspace_cols(seg)]).fill(0.0);
            }
        }
        let ge = self
            .params
            .cross_encoder
            .backward(&cache.mlp, &g, &mut grads.cross_encoder);
        let emb = &self.params.robots[&spec.name];
        let grad_emb = grads.robots.get_mut(&spec.name).expect("gradient has robot");
        emb.encoder.backward(&cache.input, &ge, &mut grad_emb.encoder)
    }

    pub fn encode_robot_batch(&self, spec: &EmbodimentSpec, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.encode_robot_cached(spec, x)?.output)
    }

    /// Decodes latent rows into raw (unclamped) joint values.
    pub fn decode_cached(&self, spec: &EmbodimentSpec, z: ArrayView2<f64>) -> Result<DecodeCache> {
        let emb = self.check_robot(spec)?;
        let mut output = Array2::zeros((z.nrows(), spec.pose_dim));
        let mut branches = Vec::new();
        for (&seg, block) in &emb.decoder {
            let zin = z.slice(s![.., subspace_cols(seg)]).to_owned();
            let cache = self.params.cross_decoder[seg.index()].forward_cached(&zin);
            let y = block.forward(cache.output());
            for (c, &dof) in spec.segment_dofs(seg).iter().enumerate() {
                output.column_mut(dof).assign(&y.column(c));
            }
            branches.push((seg, zin, cache));
        }
        Ok(DecodeCache { branches, output })
    }

    /// Returns the gradient with respect to the latent rows.
    pub fn decode_backward(
        &self,
        spec: &EmbodimentSpec,
        cache: &DecodeCache,
        grad_out: &Array2<f64>,
        grads: &mut LatentParams,
    ) -> Array2<f64> {
        let emb = &self.params.robots[&spec.name];
        let mut gz = Array2::zeros((grad_out.nrows(), LATENT_DIM));
        for (seg, _, mlp_cache) in &cache.branches {
            let dofs = spec.segment_dofs(*seg);
            let mut gy = Array2::zeros((grad_out.nrows(), dofs.len()));
            for (c, &dof) in dofs.iter().enumerate() {
                gy.column_mut(c).assign(&grad_out.column(dof));
            }
            let block = &emb.decoder[seg];
            let gblock = grads
                .robots
                .get_mut(&spec.name)
                .expect("gradient has robot")
                .decoder
                .get_mut(seg)
                .expect("gradient has block");
            let gh = block.backward(mlp_cache.output(), &gy, gblock);
            let gzs = self.params.cross_decoder[seg.index()].backward(
                mlp_cache,
                &gh,
                &mut grads.cross_decoder[seg.index()],
            );
            gz.slice_mut(s![.., subspace_cols(*seg)]).assign(&gzs);
        }
        gz
    }

    pub fn decode_batch(&self, spec: &EmbodimentSpec, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.decode_cached(spec, z)?.output)
    }

    pub fn encode_human(&self, pose: &Pose) -> Result<LatentPose> {
        if pose.embodiment != self.human.name {
            return Err(LatentError::NotHuman(pose.embodiment.clone()));
        }
        pose.validate(&self.human)?;
        let z = self.encode_human_batch(&self.human_input(&[&pose.values]));
        Ok(LatentPose::from_flat(z.row(0).as_slice().unwrap(), [true; 5]))
    }

    pub fn encode_robot(&self, spec: &EmbodimentSpec, pose: &Pose) -> Result<LatentPose> {
        Ok(self.encode_robot_frames(spec, std::slice::from_ref(pose))?.remove(0))
    }

    fn encode_robot_frames(&self, spec: &EmbodimentSpec, poses: &[Pose]) -> Result<Vec<LatentPose>> {
        self.check_robot(spec)?;
        let mut x = Array2::zeros((poses.len(), spec.pose_dim));
        for (mut row, p) in x.rows_mut().into_iter().zip(poses) {
            p.validate(spec)?;
            row.assign(&ndarray::ArrayView1::from(&p.values));
        }
        let z = self.encode_robot_batch(spec, &x)?;
        let avail = availability(spec);
        Ok(z.rows()
            .into_iter()
            .map(|r| LatentPose::from_flat(r.as_slice().unwrap(), avail))
            .collect())
    }

    /// Encodes a human or registered robot pose.
    pub fn encode(&self, spec: &EmbodimentSpec, pose: &Pose) -> Result<LatentPose> {
        Ok(self.encode_frames(spec, std::slice::from_ref(pose))?.remove(0))
    }

    pub fn encode_frames(&self, spec: &EmbodimentSpec, poses: &[Pose]) -> Result<Vec<LatentPose>> {
        if spec.name == self.human.name {
            if spec != &self.human {
                return Err(LatentError::SpecMismatch(spec.name.clone()));
            }
            let rows: Vec<&[f64]> = poses
                .iter()
                .map(|p| {
                    if p.embodiment != self.human.name {
                        return Err(LatentError::NotHuman(p.embodiment.clone()));
                    }
                    p.validate(&self.human)?;
                    Ok(p.values.as_slice())
                })
                .collect::<Result<_>>()?;
            let z = self.encode_human_batch(&self.human_input(&rows));
            Ok(z.rows()
                .into_iter()
                .map(|r| LatentPose::from_flat(r.as_slice().unwrap(), [true; 5]))
                .collect())
        } else {
            self.encode_robot_frames(spec, poses)
        }
    }

    /// Raw decoder output for each latent; segments the latent lacks decode
    /// from the zero vector.
    pub fn decode_raw(&self, spec: &EmbodimentSpec, latents: &[LatentPose]) -> Result<Array2<f64>> {
        let mut z = Array2::zeros((latents.len(), LATENT_DIM));
        for (mut row, l) in z.rows_mut().into_iter().zip(latents) {
            row.assign(&ndarray::ArrayView1::from(&l.to_flat()));
        }
        self.decode_batch(spec, z.view())
    }

    pub fn decode_to_robot(&self, spec: &EmbodimentSpec, latent: &LatentPose) -> Result<Pose> {
        Ok(self.decode_frames(spec, std::slice::from_ref(latent))?.remove(0))
    }

    /// Decodes and clamps every joint to its limits.
    pub fn decode_frames(&self, spec: &EmbodimentSpec, latents: &[LatentPose]) -> Result<Vec<Pose>> {
        let raw = self.decode_raw(spec, latents)?;
        let bounds = spec.dof_bounds();
        Ok(raw
            .rows()
            .into_iter()
            .map(|r| {
                let values = r.iter().zip(&bounds).map(|(v, (lo, hi))| v.clamp(*lo, *hi)).collect();
                Pose::new(spec, values)
            })
            .collect())
    }

    pub fn retarget_pose(&self, src: &EmbodimentSpec, pose: &Pose, tgt: &EmbodimentSpec) -> Result<Pose> {
        let z = self.encode(src, pose)?;
        self.decode_to_robot(tgt, &z)
    }

    /// Frame-wise retargeting; the result keeps the source fps.
    pub fn retarget_motion(&self, src: &EmbodimentSpec, motion: &Motion, tgt: &EmbodimentSpec) -> Result<Motion> {
        let z = self.encode_frames(src, &motion.frames)?;
        Ok(Motion::new(tgt.name.clone(), motion.fps, self.decode_frames(tgt, &z)?))
    }

    /// Digest of every shared tensor, for freeze checks.
    pub fn shared_digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        self.params.visit("", &mut |name, _, d| {
            if is_shared_param(name) {
                h.update(name.as_bytes());
                for v in d {
                    h.update(v.to_le_bytes());
                }
            }
        });
        hex::encode(h.finalize())
    }
}
