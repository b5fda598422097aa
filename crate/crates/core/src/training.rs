//! Latent-space optimization: triplet mining on raw-pose similarity, the
//! four weighted loss terms with analytic gradients, and embedding-only
//! adaptation for robots added after the shared networks are trained.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use nalgebra::Vector3;
use ndarray::{s, Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embodiment::{
    ee_position_normalized, fk_values, normalized_ee_jacobian, sample_random_pose_with, EmbodimentError,
    EmbodimentSpec, Motion, Segment,
};
use crate::latent::{robot_param_prefix, LatentError, LatentModel, LatentParams, SUBSPACE_DIM};
use crate::metrics::{MetricsError, SegmentFeatures};
use crate::nn::{Adam, AdamConfig, Parameters};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty batch or dataset: {0}")]
    Empty(String),
    #[error("segment {segment} has {eligible} eligible samples, need at least 3")]
    InsufficientSamples { segment: Segment, eligible: usize },
    #[error("no robots registered")]
    NoRobots,
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("log output failed: {0}")]
    Log(String),
    #[error("{0}")]
    Callback(String),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Embodiment(#[from] EmbodimentError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Triplet margin.
    pub alpha: f64,
    pub lambda_c: f64,
    pub lambda_rec: f64,
    pub lambda_ltc: f64,
    pub lambda_temp: f64,
    /// End-effector weight in the arm similarity.
    pub omega: f64,
    /// Human frame pairs per step; also robot poses per robot and triplets
    /// per subspace.
    pub batch_size: usize,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.05,
            lambda_c: 10.0,
            lambda_rec: 5.0,
            lambda_ltc: 1.0,
            lambda_temp: 0.1,
            omega: 1.0,
            batch_size: 4096,
            lr: 1e-3,
            steps: 20_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("alpha", self.alpha),
            ("lambda_c", self.lambda_c),
            ("lambda_rec", self.lambda_rec),
            ("lambda_ltc", self.lambda_ltc),
            ("lambda_temp", self.lambda_temp),
            ("omega", self.omega),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(TrainError::InvalidConfig(format!("{name} must be non-negative, got {w}")));
            }
        }
        if self.batch_size < 3 {
            return Err(TrainError::InvalidConfig(format!("batch_size must be at least 3, got {}", self.batch_size)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Per-term losses of one step and their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub reconstruction: f64,
    pub consistency: f64,
    pub temporal: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.contrastive, self.reconstruction, self.consistency, self.temporal, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn weighted_total(&self, cfg: &TrainConfig) -> f64 {
        cfg.lambda_c * self.contrastive
            + cfg.lambda_rec * self.reconstruction
            + cfg.lambda_ltc * self.consistency
            + cfg.lambda_temp * self.temporal
    }
}

/// Human motions with every consecutive-frame pair indexed.
#[derive(Debug, Clone)]
pub struct HumanDataset {
    pub motions: Vec<Motion>,
    pairs: Vec<(usize, usize)>,
}

impl HumanDataset {
    pub fn new(human: &EmbodimentSpec, motions: Vec<Motion>) -> Result<Self> {
        let mut pairs = Vec::new();
        for (m, motion) in motions.iter().enumerate() {
            motion.validate(human)?;
            pairs.extend((0..motion.len().saturating_sub(1)).map(|t| (m, t)));
        }
        if pairs.is_empty() {
            return Err(TrainError::Empty("human dataset has no consecutive-frame pairs".into()));
        }
        Ok(HumanDataset { motions, pairs })
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// `(motion, frame)` indices of uniformly drawn pairs.
    pub fn sample_pairs<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<(usize, usize)> {
        (0..n).map(|_| self.pairs[rng.random_range(0..self.pairs.len())]).collect()
    }
}

/// A raw pose in the triplet pool.
#[derive(Debug, Clone, Copy)]
pub struct PoolSample<'a> {
    pub spec: &'a EmbodimentSpec,
    pub values: &'a [f64],
}

/// Indices into the pool the triplet was mined from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub segment: Segment,
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Draws an anchor and two distinct candidates among samples that have
/// `seg`; the candidate closer to the anchor under the segment similarity
/// is the positive, the first-drawn one on ties.
pub fn mine_triplets<R: Rng + ?Sized>(
    samples: &[PoolSample],
    seg: Segment,
    count: usize,
    omega: f64,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    let eligible: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].spec.has_segment(seg)).collect();
    if eligible.len() < 3 {
        return Err(TrainError::InsufficientSamples {
            segment: seg,
            eligible: eligible.len(),
        });
    }
    let mut features: Vec<Option<SegmentFeatures>> = vec![None; samples.len()];
    let mut feature = |i: usize| -> Result<SegmentFeatures> {
        if features[i].is_none() {
            features[i] = Some(SegmentFeatures::compute(samples[i].spec, samples[i].values, seg)?);
        }
        Ok(features[i].clone().unwrap())
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let pick = sample_indices(rng, eligible.len(), 3);
        let (a, c1, c2) = (eligible[pick.index(0)], eligible[pick.index(1)], eligible[pick.index(2)]);
        let fa = feature(a)?;
        let d1 = fa.similarity(&feature(c1)?, omega)?;
        let d2 = fa.similarity(&feature(c2)?, omega)?;
        let (positive, negative) = if d2 < d1 { (c2, c1) } else { (c1, c2) };
        out.push(Triplet {
            segment: seg,
            anchor: a,
            positive,
            negative,
        });
    }
    Ok(out)
}

fn sub<'a>(z: ArrayView2<'a, f64>, row: usize, seg: Segment) -> ArrayView1<'a, f64> {
    let k = seg.index() * SUBSPACE_DIM;
    z.slice_move(s![row, k..k + SUBSPACE_DIM])
}

/// Hinge triplet loss averaged over each segment's triplets and summed over
/// segments. `latents` holds one row per pool sample.
pub fn contrastive_loss(latents: ArrayView2<f64>, triplets: &[Triplet], alpha: f64) -> f64 {
    contrastive_with_grad(latents, triplets, alpha, None)
}

fn contrastive_with_grad(
    latents: ArrayView2<f64>,
    triplets: &[Triplet],
    alpha: f64,
    mut grad: Option<(&mut Array2<f64>, f64)>,
) -> f64 {
    let mut counts = [0usize; 5];
    for t in triplets {
        counts[t.segment.index()] += 1;
    }
    let mut total = 0.0;
    for t in triplets {
        let n = counts[t.segment.index()] as f64;
        let za = sub(latents, t.anchor, t.segment);
        let dp = &za - &sub(latents, t.positive, t.segment);
        let dn = &za - &sub(latents, t.negative, t.segment);
        let np = dp.dot(&dp).sqrt();
        let nn = dn.dot(&dn).sqrt();
        let v = np - nn + alpha;
        if v <= 0.0 {
            continue;
        }
        total += v / n;
        if let Some((g, scale)) = grad.as_mut() {
            let w = *scale / n;
            let k = t.segment.index() * SUBSPACE_DIM;
            let gp = if np > 0.0 { &dp * (w / np) } else { dp.mapv(|_| 0.0) };
            let gn = if nn > 0.0 { &dn * (w / nn) } else { dn.mapv(|_| 0.0) };
            let mut ga = g.slice_mut(s![t.anchor, k..k + SUBSPACE_DIM]);
            ga += &gp;
            ga -= &gn;
            let mut gpos = g.slice_mut(s![t.positive, k..k + SUBSPACE_DIM]);
            gpos -= &gp;
            let mut gneg = g.slice_mut(s![t.negative, k..k + SUBSPACE_DIM]);
            gneg += &gn;
        }
    }
    total
}

/// Mean L2 joint-space reconstruction error over `poses` (rows).
pub fn reconstruction_loss(model: &LatentModel, spec: &EmbodimentSpec, poses: &Array2<f64>) -> Result<f64> {
    let z = model.encode_robot_batch(spec, poses)?;
    let out = model.decode_batch(spec, z.view())?;
    Ok(row_norms(&(out - poses)).mean().unwrap_or(0.0))
}

/// Mean human-latent cycle error through each robot, averaged over robots.
/// Only subspaces a robot has are compared.
pub fn latent_consistency_loss(model: &LatentModel, human_poses: &Array2<f64>, robots: &[&EmbodimentSpec]) -> Result<f64> {
    if robots.is_empty() {
        return Err(TrainError::NoRobots);
    }
    let rows: Vec<&[f64]> = human_poses.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
    let zh = model.encode_human_batch(&model.human_input(&rows));
    let mut total = 0.0;
    for spec in robots {
        let x = model.decode_batch(spec, zh.view())?;
        let z = model.encode_robot_batch(spec, &x)?;
        let mut diff = &zh - &z;
        mask_unavailable(&mut diff, spec);
        total += row_norms(&diff).mean().unwrap_or(0.0);
    }
    Ok(total / robots.len() as f64)
}

/// Mean distance between human hand velocity and retargeted robot
/// end-effector velocity, in arm lengths per second, over pairs, robots and
/// the arms each robot has.
pub fn temporal_loss(
    model: &LatentModel,
    pairs: &[(&[f64], &[f64], f64)],
    robots: &[&EmbodimentSpec],
) -> Result<f64> {
    let b = pairs.len();
    if b == 0 {
        return Err(TrainError::Empty("no frame pairs".into()));
    }
    let mut rows: Vec<&[f64]> = pairs.iter().map(|p| p.0).collect();
    rows.extend(pairs.iter().map(|p| p.1));
    let zh = model.encode_human_batch(&model.human_input(&rows));
    let human_ee = human_hand_tracks(model, &rows)?;
    let fps: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    let mut total = 0.0;
    let mut n_robots = 0;
    for spec in robots {
        let x = model.decode_batch(spec, zh.view())?;
        if let Some(l) = temporal_term(spec, &x, &human_ee, &fps, None)? {
            total += l;
            n_robots += 1;
        }
    }
    Ok(if n_robots == 0 { 0.0 } else { total / n_robots as f64 })
}

fn row_norms(m: &Array2<f64>) -> ndarray::Array1<f64> {
    m.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect()
}

fn mask_unavailable(m: &mut Array2<f64>, spec: &EmbodimentSpec) {
    for seg in Segment::ALL {
        if !spec.has_segment(seg) {
            let k = seg.index() * SUBSPACE_DIM;
            m.slice_mut(s![.., k..k + SUBSPACE_DIM]).fill(0.0);
        }
    }
}

/// Normalized human hand positions per arm (`[LA, RA]`) for each row.
fn human_hand_tracks(model: &LatentModel, rows: &[&[f64]]) -> Result<Vec<[Vector3<f64>; 2]>> {
    rows.iter()
        .map(|r| {
            let fk = fk_values(&model.human, r);
            Ok([
                ee_position_normalized(&model.human, &fk, Segment::LA)?,
                ee_position_normalized(&model.human, &fk, Segment::RA)?,
            ])
        })
        .collect()
}

/// Temporal loss for one robot given decoded rows (frames t then t+1).
/// With `grad = Some((g, scale))`, adds `scale * dL/dx` into `g`.
fn temporal_term(
    spec: &EmbodimentSpec,
    decoded: &Array2<f64>,
    human_ee: &[[Vector3<f64>; 2]],
    fps: &[f64],
    mut grad: Option<(&mut Array2<f64>, f64)>,
) -> Result<Option<f64>> {
    let b = fps.len();
    let arms: Vec<Segment> = Segment::ARMS.into_iter().filter(|s| spec.has_segment(*s)).collect();
    if arms.is_empty() {
        return Ok(None);
    }
    let count = (b * arms.len()) as f64;
    let mut total = 0.0;
    for i in 0..b {
        let x0 = decoded.row(i);
        let x1 = decoded.row(b + i);
        let fk0 = fk_values(spec, x0.as_slice().expect("contiguous row"));
        let fk1 = fk_values(spec, x1.as_slice().expect("contiguous row"));
        for &arm in &arms {
            let a = if arm == Segment::LA { 0 } else { 1 };
            let vh = (human_ee[b + i][a] - human_ee[i][a]) * fps[i];
            let j0 = normalized_ee_jacobian(spec, &fk0, arm)?;
            let j1 = normalized_ee_jacobian(spec, &fk1, arm)?;
            let vr = (j1.position - j0.position) * fps[i];
            let d = vr - vh;
            let n = d.norm();
            total += n / count;
            if let Some((g, scale)) = grad.as_mut() {
                if n > 0.0 {
                    let gv = d * (*scale / (count * n) * fps[i]);
                    for (col, dp) in &j1.columns {
                        g[[b + i, *col]] += gv.dot(dp);
                    }
                    for (col, dp) in &j0.columns {
                        g[[i, *col]] -= gv.dot(dp);
                    }
                }
            }
        }
    }
    Ok(Some(total))
}

/// Fixed inputs of one optimization step.
#[derive(Debug, Clone)]
pub struct StepBatch {
    /// `2B` raw human rows: frames `t` first, then frames `t + 1`.
    pub human: Array2<f64>,
    /// Frame rate of each pair.
    pub fps: Vec<f64>,
    /// Freshly sampled poses per robot.
    pub robots: Vec<(String, Array2<f64>)>,
    /// Indices into the pool: human rows, then each robot's rows in order.
    pub triplets: Vec<Triplet>,
}

impl StepBatch {
    pub fn num_pairs(&self) -> usize {
        self.fps.len()
    }

    /// Latent rows for every pool sample, in pool order.
    pub fn pool_latents(&self, model: &LatentModel) -> Result<Array2<f64>> {
        let mut blocks = vec![model.encode_human_batch(&self.human_input(model))];
        for (name, x) in &self.robots {
            blocks.push(model.encode_robot_batch(model.robot(name)?, x)?);
        }
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        Ok(ndarray::concatenate(ndarray::Axis(0), &views).expect("latent blocks share width"))
    }

    fn human_input(&self, model: &LatentModel) -> Array2<f64> {
        let rows: Vec<&[f64]> = self.human.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
        model.human_input(&rows)
    }
}

/// Which terms and tensors a step optimizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scope {
    /// Every network and every robot.
    Full,
    /// Only the named robot's embedding layers; other robots only take part
    /// in triplets.
    Adapt(String),
}

impl Scope {
    fn has_terms(&self, robot: &str) -> bool {
        match self {
            Scope::Full => true,
            Scope::Adapt(name) => name == robot,
        }
    }

    fn trains_shared(&self) -> bool {
        matches!(self, Scope::Full)
    }

    pub fn trainable(&self, param: &str) -> bool {
        match self {
            Scope::Full => true,
            Scope::Adapt(name) => param.starts_with(&robot_param_prefix(name)),
        }
    }
}

/// Loss breakdown of `batch` and the gradient of the weighted total.
pub fn loss_and_grad(
    model: &LatentModel,
    batch: &StepBatch,
    cfg: &TrainConfig,
    scope: &Scope,
) -> Result<(LossBreakdown, LatentParams)> {
    let b = batch.num_pairs();
    if b == 0 || batch.human.nrows() != 2 * b {
        return Err(TrainError::Empty("step batch needs 2B human rows for B pairs".into()));
    }
    let mut grads = model.params.zeros_like();
    let specs: Vec<&EmbodimentSpec> = batch
        .robots
        .iter()
        .map(|(n, _)| model.robot(n))
        .collect::<std::result::Result<_, _>>()?;

    let human_rows: Vec<&[f64]> = batch.human.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
    let h_cache = model.encode_human_cached(&model.human_input(&human_rows));
    let zh = h_cache.output().clone();
    let r_caches = specs
        .iter()
        .zip(&batch.robots)
        .map(|(spec, (_, x))| model.encode_robot_cached(spec, x))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let mut pool = zh.clone();
    for c in &r_caches {
        pool = ndarray::concatenate(ndarray::Axis(0), &[pool.view(), c.output().view()]).expect("same width");
    }
    let mut g_pool = Array2::zeros(pool.raw_dim());
    let contrastive = contrastive_with_grad(pool.view(), &batch.triplets, cfg.alpha, Some((&mut g_pool, cfg.lambda_c)));

    // Averages run over every robot in the batch, including ones the scope skips.
    let active: Vec<usize> = (0..specs.len()).filter(|&i| scope.has_terms(&specs[i].name)).collect();
    let n_robots = specs.len().max(1) as f64;
    let arm_robots = specs
        .iter()
        .filter(|s| Segment::ARMS.iter().any(|a| s.has_segment(*a)))
        .count()
        .max(1) as f64;
    let human_ee = if active.is_empty() { Vec::new() } else { human_hand_tracks(model, &human_rows)? };

    let mut offsets = Vec::with_capacity(specs.len());
    let mut off = 2 * b;
    for (_, x) in &batch.robots {
        offsets.push(off);
        off += x.nrows();
    }

    let (mut reconstruction, mut consistency, mut temporal) = (0.0, 0.0, 0.0);
    let mut g_zh = g_pool.slice(s![0..2 * b, ..]).to_owned();
    for &i in &active {
        let spec = specs[i];
        let x = &batch.robots[i].1;
        let rows = x.nrows();
        let zr = r_caches[i].output();

        let dec = model.decode_cached(spec, zr.view())?;
        let diff = dec.output() - x;
        let norms = row_norms(&diff);
        reconstruction += norms.mean().unwrap_or(0.0) / n_robots;
        let mut g_out = diff;
        let w = cfg.lambda_rec / (n_robots * rows as f64);
        for (mut r, n) in g_out.rows_mut().into_iter().zip(&norms) {
            if *n > 0.0 {
                r *= w / n;
            } else {
                r.fill(0.0);
            }
        }
        let gz = model.decode_backward(spec, &dec, &g_out, &mut grads);
        let mut gr = g_pool.slice_mut(s![offsets[i]..offsets[i] + rows, ..]);
        gr += &gz;

        let dec_h = model.decode_cached(spec, zh.view())?;
        let cyc = model.encode_robot_cached(spec, dec_h.output())?;
        let mut diff = &zh - cyc.output();
        mask_unavailable(&mut diff, spec);
        let norms = row_norms(&diff);
        consistency += norms.mean().unwrap_or(0.0) / n_robots;
        let w = cfg.lambda_ltc / (n_robots * (2 * b) as f64);
        for (mut r, n) in diff.rows_mut().into_iter().zip(&norms) {
            if *n > 0.0 {
                r *= w / n;
            } else {
                r.fill(0.0);
            }
        }
        g_zh += &diff;
        let mut g_dec = model.encode_robot_backward(spec, &cyc, &(-&diff), &mut grads);

        if let Some(t) = temporal_term(
            spec,
            dec_h.output(),
            &human_ee,
            &batch.fps,
            Some((&mut g_dec, cfg.lambda_temp / arm_robots)),
        )? {
            temporal += t / arm_robots;
        }
        let gz = model.decode_backward(spec, &dec_h, &g_dec, &mut grads);
        g_zh += &gz;
    }

    for (i, spec) in specs.iter().enumerate() {
        if scope.trains_shared() || scope.has_terms(&spec.name) {
            let rows = batch.robots[i].1.nrows();
            let g = g_pool.slice(s![offsets[i]..offsets[i] + rows, ..]).to_owned();
            model.encode_robot_backward(spec, &r_caches[i], &g, &mut grads);
        }
    }
    if scope.trains_shared() {
        model.encode_human_backward(&h_cache, &g_zh, &mut grads);
    }

    let mut out = LossBreakdown {
        contrastive,
        reconstruction,
        consistency,
        temporal,
        total: 0.0,
    };
    out.total = out.weighted_total(cfg);
    Ok((out, grads))
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    #[serde(rename = "L_con")]
    pub contrastive: f64,
    #[serde(rename = "L_rec")]
    pub reconstruction: f64,
    #[serde(rename = "L_ltc")]
    pub consistency: f64,
    #[serde(rename = "L_temp")]
    pub temporal: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
    pub wall_ms: u64,
}

/// Optimizer state and sample stream for a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: LatentModel,
    pub config: TrainConfig,
    pub scope: Scope,
    optimizer: Adam,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(model: LatentModel, config: TrainConfig) -> Result<Self> {
        Self::with_scope(model, config, Scope::Full)
    }

    pub fn with_scope(model: LatentModel, config: TrainConfig, scope: Scope) -> Result<Self> {
        config.validate()?;
        if model.robots.is_empty() {
            return Err(TrainError::NoRobots);
        }
        if let Scope::Adapt(name) = &scope {
            model.robot(name)?;
        }
        Ok(Trainer {
            model,
            optimizer: Adam::new(AdamConfig {
                lr: config.lr,
                ..Default::default()
            }),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            scope,
            config,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Words consumed from the sampling stream so far.
    pub fn stream_position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Draws human pairs, fresh robot poses and triplets for one step.
    pub fn sample_batch(&mut self, data: &HumanDataset) -> Result<StepBatch> {
        sample_batch(&self.model, &self.config, data, &mut self.rng)
    }

    pub fn step(&mut self, data: &HumanDataset) -> Result<LossBreakdown> {
        let batch = self.sample_batch(data)?;
        self.apply(&batch)
    }

    /// One optimizer update on a prepared batch.
    pub fn apply(&mut self, batch: &StepBatch) -> Result<LossBreakdown> {
        let (loss, grads) = loss_and_grad(&self.model, batch, &self.config, &self.scope)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(TrainError::NonFinite {
                step: self.step,
                detail: format!("{loss:?}"),
            });
        }
        let scope = &self.scope;
        self.optimizer
            .step(&mut self.model.params, &grads, &|name| scope.trainable(name));
        self.step += 1;
        Ok(loss)
    }

    /// Runs `config.steps` steps, writing a CSV row every `log_every` steps
    /// and after the last one.
    pub fn run<W: Write>(
        &mut self,
        data: &HumanDataset,
        log: Option<&mut csv::Writer<W>>,
        log_every: usize,
    ) -> Result<TrainReport> {
        self.run_with(data, log, log_every, |_, _| Ok(()))
    }

    /// [`Trainer::run`] that calls `after_step` with the model and the number
    /// of completed steps after every update.
    pub fn run_with<W: Write, F>(
        &mut self,
        data: &HumanDataset,
        log: Option<&mut csv::Writer<W>>,
        log_every: usize,
        mut after_step: F,
    ) -> Result<TrainReport>
    where
        F: FnMut(&LatentModel, usize) -> std::result::Result<(), String>,
    {
        let start = Instant::now();
        let mut history = Vec::new();
        let mut last = LossBreakdown::default();
        let mut log = log;
        for i in 0..self.config.steps {
            last = self.step(data)?;
            if (i + 1) % log_every.max(1) == 0 || i + 1 == self.config.steps {
                let row = LogRow {
                    step: self.step,
                    contrastive: last.contrastive,
                    reconstruction: last.reconstruction,
                    consistency: last.consistency,
                    temporal: last.temporal,
                    total: last.total,
                    wall_ms: start.elapsed().as_millis() as u64,
                };
                log::debug!("step {} total {:.5}", row.step, row.total);
                if let Some(w) = log.as_deref_mut() {
                    w.serialize(row).map_err(|e| TrainError::Log(e.to_string()))?;
                    w.flush().map_err(|e| TrainError::Log(e.to_string()))?;
                }
                history.push(row);
            }
            after_step(&self.model, self.step).map_err(TrainError::Callback)?;
        }
        Ok(TrainReport {
            steps: self.config.steps,
            wall_ms: start.elapsed().as_millis() as u64,
            final_loss: last,
            history,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub wall_ms: u64,
    pub final_loss: LossBreakdown,
    pub history: Vec<LogRow>,
}

pub fn sample_batch<R: Rng + ?Sized>(
    model: &LatentModel,
    cfg: &TrainConfig,
    data: &HumanDataset,
    rng: &mut R,
) -> Result<StepBatch> {
    let b = cfg.batch_size;
    let pairs = data.sample_pairs(rng, b);
    let dim = model.human.pose_dim;
    let mut human = Array2::zeros((2 * b, dim));
    let mut fps = Vec::with_capacity(b);
    for (i, &(m, t)) in pairs.iter().enumerate() {
        let motion = &data.motions[m];
        human.row_mut(i).assign(&ArrayView1::from(&motion.frames[t].values));
        human.row_mut(b + i).assign(&ArrayView1::from(&motion.frames[t + 1].values));
        fps.push(motion.fps);
    }
    let mut robots = Vec::new();
    for (name, spec) in &model.robots {
        let mut x = Array2::zeros((b, spec.pose_dim));
        for mut row in x.rows_mut() {
            row.assign(&ArrayView1::from(&sample_random_pose_with(spec, rng).values));
        }
        robots.push((name.clone(), x));
    }
    let mut samples: Vec<PoolSample> = human
        .rows()
        .into_iter()
        .map(|r| PoolSample {
            spec: &model.human,
            values: r.to_slice().unwrap(),
        })
        .collect();
    for (name, x) in &robots {
        let spec = &model.robots[name];
        samples.extend(x.rows().into_iter().map(|r| PoolSample {
            spec,
            values: r.to_slice().unwrap(),
        }));
    }
    let mut triplets = Vec::with_capacity(5 * b);
    for seg in Segment::ALL {
        triplets.extend(mine_triplets(&samples, seg, b, cfg.omega, rng)?);
    }
    Ok(StepBatch {
        human,
        fps,
        robots,
        triplets,
    })
}

/// Steps of the full training loop with a fresh optimizer.
pub fn train_step(
    model: LatentModel,
    cfg: &TrainConfig,
    data: &HumanDataset,
) -> Result<(LatentModel, LossBreakdown)> {
    let mut t = Trainer::new(model, *cfg)?;
    let loss = t.step(data)?;
    Ok((t.model, loss))
}

/// Registers `spec` and trains only its embedding layers for `cfg.steps`.
pub fn adapt_new_robot<W: Write>(
    mut model: LatentModel,
    spec: &EmbodimentSpec,
    cfg: &TrainConfig,
    data: &HumanDataset,
    log: Option<&mut csv::Writer<W>>,
    log_every: usize,
) -> Result<(LatentModel, TrainReport)> {
    model.register_robot(spec, cfg.seed ^ 0x5eed)?;
    let mut t = Trainer::with_scope(model, *cfg, Scope::Adapt(spec.name.clone()))?;
    let report = t.run(data, log, log_every)?;
    Ok((t.model, report))
}

/// Robots whose terms appear in the loss for a given scope.
pub fn scoped_robots<'a>(model: &'a LatentModel, scope: &Scope) -> BTreeSet<&'a str> {
    model.robot_names().filter(|n| scope.has_terms(n)).collect()
}
