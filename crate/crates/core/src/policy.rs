//! Goal-conditioned c-VAE over latent displacements of one subspace,
//! trained on human motion and rolled out on any registered robot.

use std::io::Write;
use std::time::Instant;

use nalgebra::Vector3;
use ndarray::{concatenate, s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embodiment::{
    ee_position_normalized, fk_values, normalize_point, EmbodimentError, EmbodimentSpec, Motion, Pose, Segment,
};
use crate::latent::{LatentError, LatentModel, SUBSPACE_DIM};
use crate::nn::{join, Activation, Adam, AdamConfig, Mlp, Parameters};

/// Width of the Gaussian latent; the encoder emits means then log-variances.
pub const NOISE_DIM: usize = 16;
const COND_DIM: usize = SUBSPACE_DIM + 3;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("empty dataset: {0}")]
    Empty(String),
    #[error("frame indices t={t}, goal={goal} invalid for a motion of {len} frames")]
    IndexOutOfRange { t: usize, goal: usize, len: usize },
    #[error("goal is out of reach (normalized distance {0:.4} > 1)")]
    Unreachable(f64),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("motions mix frame rates {0} and {1}")]
    MixedFps(f64, f64),
    #[error("non-finite policy loss at step {0}")]
    NonFinite(usize),
    #[error("log output failed: {0}")]
    Log(String),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Embodiment(#[from] EmbodimentError),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub layers: usize,
    pub width: usize,
    /// Controlled subspace.
    pub segment: Segment,
    pub lambda_kl: f64,
    /// Largest goal offset in frames when sampling training goals.
    pub horizon_max: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            layers: 8,
            width: 256,
            segment: Segment::RA,
            lambda_kl: 1e-4,
            horizon_max: 30,
            batch_size: 256,
            lr: 1e-3,
            steps: 5000,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PolicyError::InvalidConfig(m.into()));
        if self.layers < 1 || self.width < 1 {
            return bad("layers and width must be positive");
        }
        if !self.segment.is_arm() {
            return bad("controlled segment must be an arm");
        }
        if !(self.lambda_kl >= 0.0 && self.lambda_kl.is_finite()) {
            return bad("lambda_kl must be finite and non-negative");
        }
        if self.horizon_max < 1 || self.batch_size < 1 {
            return bad("horizon_max and batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl PolicyParams {
    pub fn zeros_like(&self) -> Self {
        PolicyParams {
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
        }
    }
}

impl Parameters for PolicyParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub config: PolicyConfig,
    /// Frame rate the displacement steps were learned at.
    pub fps: f64,
    pub params: PolicyParams,
}

impl PolicyModel {
    pub fn new(config: PolicyConfig, fps: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(PolicyError::InvalidConfig("fps must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mk = |out, rng: &mut ChaCha8Rng| {
            Mlp::uniform(SUBSPACE_DIM + COND_DIM, config.width, out, config.layers, Activation::Elu, Activation::Identity, rng)
        };
        let encoder = mk(2 * NOISE_DIM, &mut rng);
        let decoder = mk(SUBSPACE_DIM, &mut rng);
        Ok(PolicyModel { config, fps, params: PolicyParams { encoder, decoder } })
    }

    /// Predicted displacement for each `[noise, z, v]` row.
    pub fn decode(&self, noise: &Array2<f64>, z: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
        self.params.decoder.forward(&concatenate![Axis(1), *noise, *z, *v])
    }

    /// Gaussian means and log-variances for each `[d, z, v]` row.
    pub fn encode(&self, d: &Array2<f64>, z: &Array2<f64>, v: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let h = self.params.encoder.forward(&concatenate![Axis(1), *d, *z, *v]);
        (h.slice(s![.., ..NOISE_DIM]).to_owned(), h.slice(s![.., NOISE_DIM..]).to_owned())
    }
}

/// One supervised transition: subspace latent, its next-frame displacement,
/// and the average normalized hand velocity toward the goal frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySample {
    pub z: [f64; SUBSPACE_DIM],
    pub d: [f64; SUBSPACE_DIM],
    pub v: Vector3<f64>,
}

fn check_indices(len: usize, t: usize, goal: usize) -> Result<()> {
    if t >= goal || goal >= len {
        return Err(PolicyError::IndexOutOfRange { t, goal, len });
    }
    Ok(())
}

fn subspace(row: &[f64], seg: Segment) -> [f64; SUBSPACE_DIM] {
    let mut out = [0.0; SUBSPACE_DIM];
    out.copy_from_slice(&row[seg.index() * SUBSPACE_DIM..(seg.index() + 1) * SUBSPACE_DIM]);
    out
}

fn hand_position(human: &EmbodimentSpec, values: &[f64], seg: Segment) -> Result<Vector3<f64>> {
    Ok(ee_position_normalized(human, &fk_values(human, values), seg)?)
}

/// Builds the sample for frames `t`, `t + 1` and goal frame `goal` of a
/// human motion; requires `t < goal < motion.len()`.
pub fn make_training_sample(latent: &LatentModel, motion: &Motion, t: usize, goal: usize, seg: Segment) -> Result<PolicySample> {
    check_indices(motion.len(), t, goal)?;
    let human = &latent.human;
    for i in [t, t + 1, goal] {
        motion.frames[i].validate(human)?;
    }
    let x = latent.human_input(&[&motion.frames[t].values, &motion.frames[t + 1].values]);
    let z = latent.encode_human_batch(&x);
    let z0 = subspace(z.row(0).as_slice().unwrap(), seg);
    let z1 = subspace(z.row(1).as_slice().unwrap(), seg);
    let d = std::array::from_fn(|k| z1[k] - z0[k]);
    let p0 = hand_position(human, &motion.frames[t].values, seg)?;
    let pg = hand_position(human, &motion.frames[goal].values, seg)?;
    let v = (pg - p0) * motion.fps / (goal - t) as f64;
    Ok(PolicySample { z: z0, d, v })
}

/// Closed-form `KL(N(mu, exp(logvar)) || N(0, I))` of one row.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvaeBreakdown {
    #[serde(rename = "L_rec")]
    pub reconstruction: f64,
    #[serde(rename = "KL")]
    pub kl: f64,
    #[serde(rename = "L_cvae")]
    pub total: f64,
}

struct Stacked {
    z: Array2<f64>,
    d: Array2<f64>,
    v: Array2<f64>,
}

fn stack(samples: &[PolicySample]) -> Stacked {
    let n = samples.len();
    let mut z = Array2::zeros((n, SUBSPACE_DIM));
    let mut d = Array2::zeros((n, SUBSPACE_DIM));
    let mut v = Array2::zeros((n, 3));
    for (i, smp) in samples.iter().enumerate() {
        for k in 0..SUBSPACE_DIM {
            z[[i, k]] = smp.z[k];
            d[[i, k]] = smp.d[k];
        }
        for k in 0..3 {
            v[[i, k]] = smp.v[k];
        }
    }
    Stacked { z, d, v }
}

/// Loss on `samples` with reparameterization noise `eps` (one row each).
pub fn cvae_loss(policy: &PolicyModel, samples: &[PolicySample], eps: &Array2<f64>, lambda_kl: f64) -> Result<CvaeBreakdown> {
    Ok(cvae_loss_and_grad(policy, samples, eps, lambda_kl)?.0)
}

pub fn cvae_loss_and_grad(
    policy: &PolicyModel,
    samples: &[PolicySample],
    eps: &Array2<f64>,
    lambda_kl: f64,
) -> Result<(CvaeBreakdown, PolicyParams)> {
    let n = samples.len();
    if n == 0 {
        return Err(PolicyError::Empty("no samples".into()));
    }
    assert_eq!(eps.dim(), (n, NOISE_DIM), "one noise row per sample");
    let Stacked { z, d, v } = stack(samples);
    let p = &policy.params;
    let enc = p.encoder.forward_cached(&concatenate![Axis(1), d, z, v]);
    let h = enc.output();
    let mu = h.slice(s![.., ..NOISE_DIM]);
    let logvar = h.slice(s![.., NOISE_DIM..]);
    let sigma = logvar.mapv(|lv| (0.5 * lv).exp());
    let noise = &mu + &(&sigma * eps);
    let dec = p.decoder.forward_cached(&concatenate![Axis(1), noise, z, v]);
    let diff = dec.output() - &d;

    let nf = n as f64;
    let reconstruction = diff.mapv(|x| x * x).sum() / nf;
    let kl = mu
        .rows()
        .into_iter()
        .zip(logvar.rows())
        .map(|(m, lv)| kl_divergence(m.as_slice().unwrap(), &lv.to_vec()))
        .sum::<f64>()
        / nf;
    let total = reconstruction + lambda_kl * kl;
    let breakdown = CvaeBreakdown { reconstruction, kl, total };

    let mut grads = p.zeros_like();
    let g_out = diff.mapv(|x| 2.0 * x / nf);
    let g_in = p.decoder.backward(&dec, &g_out, &mut grads.decoder);
    let g_noise = g_in.slice(s![.., ..NOISE_DIM]);
    let g_mu = &g_noise + &mu.mapv(|m| lambda_kl * m / nf);
    let g_logvar = &(&g_noise * eps) * &sigma.mapv(|sg| 0.5 * sg)
        + logvar.mapv(|lv| lambda_kl * 0.5 * (lv.exp() - 1.0) / nf);
    let g_h = concatenate![Axis(1), g_mu, g_logvar];
    p.encoder.backward(&enc, &g_h, &mut grads.encoder);
    Ok((breakdown, grads))
}

/// Per-frame subspace latents and normalized hand positions of a human
/// corpus, computed once before training.
#[derive(Debug, Clone)]
pub struct PolicyDataset {
    pub fps: f64,
    latents: Vec<Array2<f64>>,
    hands: Vec<Vec<Vector3<f64>>>,
}

impl PolicyDataset {
    pub fn new(latent: &LatentModel, motions: &[Motion], seg: Segment) -> Result<Self> {
        let usable: Vec<&Motion> = motions.iter().filter(|m| m.len() >= 2).collect();
        let Some(first) = usable.first() else {
            return Err(PolicyError::Empty("no motion has two frames".into()));
        };
        let fps = first.fps;
        let mut latents = Vec::new();
        let mut hands = Vec::new();
        for m in &usable {
            if m.fps != fps {
                return Err(PolicyError::MixedFps(fps, m.fps));
            }
            m.validate(&latent.human)?;
            let rows: Vec<&[f64]> = m.frames.iter().map(|f| f.values.as_slice()).collect();
            let z = latent.encode_human_batch(&latent.human_input(&rows));
            let cols = seg.index() * SUBSPACE_DIM..(seg.index() + 1) * SUBSPACE_DIM;
            latents.push(z.slice(s![.., cols]).to_owned());
            hands.push(
                m.frames
                    .iter()
                    .map(|f| hand_position(&latent.human, &f.values, seg))
                    .collect::<Result<_>>()?,
            );
        }
        Ok(PolicyDataset { fps, latents, hands })
    }

    pub fn num_motions(&self) -> usize {
        self.latents.len()
    }

    /// Same result as [`make_training_sample`] on the source motion.
    pub fn sample_at(&self, m: usize, t: usize, goal: usize) -> Result<PolicySample> {
        let z = &self.latents[m];
        check_indices(z.nrows(), t, goal)?;
        let z0: [f64; SUBSPACE_DIM] = std::array::from_fn(|k| z[[t, k]]);
        let d = std::array::from_fn(|k| z[[t + 1, k]] - z0[k]);
        let hands = &self.hands[m];
        let v = (hands[goal] - hands[t]) * self.fps / (goal - t) as f64;
        Ok(PolicySample { z: z0, d, v })
    }

    /// Uniform motion, goal offset uniform in `[1, min(horizon_max, len - 1)]`,
    /// then `t` uniform among frames that leave room for it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, horizon_max: usize) -> Vec<PolicySample> {
        (0..n)
            .map(|_| {
                let m = rng.random_range(0..self.latents.len());
                let len = self.latents[m].nrows();
                let k = rng.random_range(1..=horizon_max.min(len - 1));
                let t = rng.random_range(0..len - k);
                self.sample_at(m, t, t + k).expect("indices in range")
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyLogRow {
    pub step: usize,
    #[serde(rename = "L_rec")]
    pub reconstruction: f64,
    #[serde(rename = "KL")]
    pub kl: f64,
    #[serde(rename = "L_cvae")]
    pub total: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyReport {
    pub steps: usize,
    pub wall_ms: u64,
    pub history: Vec<CvaeBreakdown>,
}

/// Optimizes `policy` on `motions` for `policy.config.steps` steps and sets
/// its frame rate to the corpus frame rate.
pub fn train_policy<W: Write>(
    policy: &mut PolicyModel,
    latent: &LatentModel,
    motions: &[Motion],
    mut log: Option<&mut csv::Writer<W>>,
    log_every: usize,
) -> Result<PolicyReport> {
    let cfg = policy.config;
    cfg.validate()?;
    let data = PolicyDataset::new(latent, motions, cfg.segment)?;
    policy.fps = data.fps;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let start = Instant::now();
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let samples = data.sample(&mut rng, cfg.batch_size, cfg.horizon_max);
        let eps = Array2::from_shape_fn((samples.len(), NOISE_DIM), |_| rng.sample::<f64, _>(StandardNormal));
        let (loss, grads) = cvae_loss_and_grad(policy, &samples, &eps, cfg.lambda_kl)?;
        if !loss.total.is_finite() || !grads.all_finite() {
            return Err(PolicyError::NonFinite(step));
        }
        adam.step(&mut policy.params, &grads, &|_| true);
        history.push(loss);
        if let Some(w) = log.as_deref_mut() {
            if log_every > 0 && (step % log_every == 0 || step + 1 == cfg.steps) {
                w.serialize(PolicyLogRow {
                    step,
                    reconstruction: loss.reconstruction,
                    kl: loss.kl,
                    total: loss.total,
                    wall_ms: start.elapsed().as_millis() as u64,
                })
                .map_err(|e| PolicyError::Log(e.to_string()))?;
            }
        }
    }
    if let Some(w) = log {
        w.flush().map_err(|e| PolicyError::Log(e.to_string()))?;
    }
    Ok(PolicyReport { steps: cfg.steps, wall_ms: start.elapsed().as_millis() as u64, history })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub t: usize,
    /// Norm of the intention vector used for this step.
    #[serde(rename = "intention_norm")]
    pub intention: f64,
    /// Metric distance from the generated frame's end effector to the goal.
    pub dtg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Generated frames only; the start pose is not repeated.
    pub motion: Motion,
    pub records: Vec<RolloutRecord>,
    /// Controlled subspace after each step.
    pub latents: Vec<[f64; SUBSPACE_DIM]>,
}

impl Rollout {
    pub fn final_dtg(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.dtg)
    }
}

/// Drives the controlled arm of `spec` from `start` toward the world-frame
/// `goal` over `horizon` frames. `noise_scale` multiplies the decoder noise;
/// zero makes the rollout deterministic.
#[allow(clippy::too_many_arguments)]
pub fn rollout<R: Rng + ?Sized>(
    policy: &PolicyModel,
    latent: &LatentModel,
    spec: &EmbodimentSpec,
    start: &Pose,
    goal: &Vector3<f64>,
    horizon: usize,
    noise_scale: f64,
    rng: &mut R,
) -> Result<Rollout> {
    let seg = policy.config.segment;
    let registered = latent.robot(&spec.name)?;
    if registered != spec {
        return Err(LatentError::SpecMismatch(spec.name.clone()).into());
    }
    if horizon == 0 {
        return Err(PolicyError::ZeroHorizon);
    }
    start.validate(spec)?;
    let fk0 = fk_values(spec, &start.values);
    let reach = normalize_point(spec, &fk0, seg, goal)?.norm();
    if reach > 1.0 {
        return Err(PolicyError::Unreachable(reach));
    }

    let frozen = latent.encode(spec, start)?;
    let mut pose = start.clone();
    let mut frames = Vec::with_capacity(horizon);
    let mut records = Vec::with_capacity(horizon);
    let mut latents = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let fk = fk_values(spec, &pose.values);
        let p = ee_position_normalized(spec, &fk, seg)?;
        let g = normalize_point(spec, &fk, seg, goal)?;
        let v = (g - p) * policy.fps / (horizon - t).max(1) as f64;
        let z = *latent.encode(spec, &pose)?.get(seg);

        let noise = Array2::from_shape_fn((1, NOISE_DIM), |_| noise_scale * rng.sample::<f64, _>(StandardNormal));
        let zr = Array2::from_shape_vec((1, SUBSPACE_DIM), z.to_vec()).unwrap();
        let vr = Array2::from_shape_vec((1, 3), vec![v.x, v.y, v.z]).unwrap();
        let d = policy.decode(&noise, &zr, &vr);
        let next: [f64; SUBSPACE_DIM] = std::array::from_fn(|k| (z[k] + d[[0, k]]).clamp(-1.0, 1.0));

        let mut full = frozen.clone();
        full.set(seg, next);
        pose = latent.decode_to_robot(spec, &full)?;
        let ee = fk_values(spec, &pose.values).ee_position(spec, seg)?;
        records.push(RolloutRecord { t, intention: v.norm(), dtg: (ee - goal).norm() });
        latents.push(next);
        frames.push(pose.clone());
    }
    Ok(Rollout {
        motion: Motion::new(spec.name.clone(), policy.fps, frames),
        records,
        latents,
    })
}

/// A goal the controlled arm can reach from `start`: the end effector of a
/// pose that resamples only that arm's joints within their limits.
pub fn sample_reachable_goal<R: Rng + ?Sized>(spec: &EmbodimentSpec, start: &Pose, seg: Segment, rng: &mut R) -> Result<Vector3<f64>> {
    start.validate(spec)?;
    let bounds = spec.dof_bounds();
    let mut values = start.values.clone();
    for &i in spec.segment_dofs(seg) {
        let (lo, hi) = bounds[i];
        values[i] = rng.random_range(lo..=hi);
    }
    Ok(fk_values(spec, &values).ee_position(spec, seg)?)
}
