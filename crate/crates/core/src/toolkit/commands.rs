//! Library side of every command-line entry point.

use std::fs::File;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::experiment::{load_motion_glob, read_text, resolve_spec, ExperimentConfig};
use super::{split_indices, Pca, Result, ToolkitError};
use crate::checkpoint::{load_latent, load_policy_for, save_latent, save_policy};
use crate::embodiment::{sample_random_pose, EmbodimentSpec, Motion, Segment};
use crate::latent::LatentModel;
use crate::metrics::{eval_nds, eval_nvs, eval_rs};
use crate::policy::{rollout, sample_reachable_goal, train_policy, PolicyModel};
use crate::training::{adapt_new_robot, HumanDataset, LossBreakdown, Trainer};

fn io(path: &Path, e: impl std::fmt::Display) -> ToolkitError {
    ToolkitError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

/// Human motions of the experiment, split into train and test sets.
pub fn experiment_motions(cfg: &ExperimentConfig, human: &EmbodimentSpec) -> Result<(Vec<Motion>, Vec<Motion>)> {
    let motions = cfg.load_motions(human)?;
    let (train, test) = split_indices(motions.len(), cfg.split, cfg.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| motions[i].clone()).collect::<Vec<_>>();
    Ok((pick(&train), pick(&test)))
}

/// A fresh latent model with every configured robot registered.
pub fn initial_model(cfg: &ExperimentConfig) -> Result<LatentModel> {
    let mut model = LatentModel::new(cfg.model, cfg.human_spec()?, cfg.seed)?;
    for (i, spec) in cfg.robot_specs()?.iter().enumerate() {
        model.register_robot(spec, cfg.seed.wrapping_add(1 + i as u64))?;
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLatentSummary {
    pub steps: usize,
    pub wall_ms: u64,
    pub final_loss: LossBreakdown,
    pub robots: Vec<String>,
    pub train_motions: usize,
    pub test_motions: usize,
    pub shared_digest: String,
    pub checkpoint: PathBuf,
}

pub const LATENT_CKPT: &str = "latent.ckpt";
pub const POLICY_CKPT: &str = "policy.ckpt";
pub const TRAIN_SUMMARY: &str = "train_summary.json";

/// Metadata stored in latent checkpoints written after `step` updates.
pub fn train_metadata(cfg: &ExperimentConfig, step: usize) -> serde_json::Value {
    serde_json::json!({ "train": cfg.train, "model": cfg.model, "seed": cfg.seed, "step": step })
}

/// Trains the latent model of `cfg` and writes the checkpoint, CSV log,
/// resolved config, split and held-out motions into the output directory.
pub fn cmd_train_latent(cfg: &ExperimentConfig) -> Result<TrainLatentSummary> {
    let out = cfg.output_dir();
    create_dir(&out)?;
    write_json(&out.join("config.json"), cfg)?;
    let model = initial_model(cfg)?;
    let (train, test) = experiment_motions(cfg, &model.human)?;
    let test_dir = out.join("test_motions");
    create_dir(&test_dir)?;
    for (i, m) in test.iter().enumerate() {
        let p = test_dir.join(format!("motion_{i:04}.json"));
        m.save(&p).map_err(|e| io(&p, e))?;
    }
    let (n_train, n_test) = (train.len(), test.len());
    let data = HumanDataset::new(&model.human, train)?;

    let log_path = out.join("latent_log.csv");
    let mut log = csv_writer(&log_path)?;
    let mut trainer = Trainer::new(model, cfg.train)?;
    let every = cfg.checkpoint_every;
    let report = trainer.run_with(&data, Some(&mut log), cfg.log_every, |m, step| {
        if every > 0 && step % every == 0 && step < cfg.train.steps {
            save_latent(m, &out.join(format!("latent_step{step}.ckpt")), train_metadata(cfg, step))
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    })?;
    let model = trainer.model;
    let ckpt = out.join(LATENT_CKPT);
    save_latent(&model, &ckpt, train_metadata(cfg, report.steps))?;
    let summary = TrainLatentSummary {
        steps: report.steps,
        wall_ms: report.wall_ms,
        final_loss: report.final_loss,
        robots: model.robot_names().map(String::from).collect(),
        train_motions: n_train,
        test_motions: n_test,
        shared_digest: model.shared_digest(),
        checkpoint: ckpt,
    };
    write_json(&out.join(TRAIN_SUMMARY), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddRobotSummary {
    pub robot: String,
    pub steps: usize,
    pub wall_ms: u64,
    /// Wall time of the run that produced the input checkpoint, when its
    /// summary sits next to it.
    pub original_wall_ms: Option<u64>,
    pub original_steps: Option<usize>,
    pub final_loss: LossBreakdown,
    pub shared_digest: String,
    pub checkpoint: PathBuf,
}

/// Registers the robot described by `spec_source` in the checkpoint and
/// trains only its embedding layers for `cfg.adapt_steps` steps at
/// `cfg.adapt_lr`.
pub fn cmd_add_robot(ckpt: &Path, spec_source: &str, cfg: &ExperimentConfig, out: Option<&Path>) -> Result<AddRobotSummary> {
    let model = load_latent(ckpt)?;
    let spec = resolve_spec(spec_source, Path::new("."))?;
    let (train, _) = experiment_motions(cfg, &model.human)?;
    let data = HumanDataset::new(&model.human, train)?;
    let dir = ckpt.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| dir.join(format!("latent_{}.ckpt", spec.name)));
    let digest = model.shared_digest();

    let mut tc = cfg.train;
    tc.steps = cfg.adapt_steps;
    tc.lr = cfg.adapt_lr.unwrap_or(tc.lr);
    let log_path = out.with_extension("csv");
    let mut log = csv_writer(&log_path)?;
    let (model, report) = adapt_new_robot(model, &spec, &tc, &data, Some(&mut log), cfg.log_every)?;
    if model.shared_digest() != digest {
        return Err(ToolkitError::InvalidParams("shared networks changed during adaptation".into()));
    }
    save_latent(&model, &out, serde_json::json!({ "adapt": tc, "robot": spec.name }))?;

    let original: Option<TrainLatentSummary> = read_text(&dir.join(TRAIN_SUMMARY))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let summary = AddRobotSummary {
        robot: spec.name.clone(),
        steps: report.steps,
        wall_ms: report.wall_ms,
        original_wall_ms: original.as_ref().map(|s| s.wall_ms),
        original_steps: original.as_ref().map(|s| s.steps),
        final_loss: report.final_loss,
        shared_digest: digest,
        checkpoint: out.clone(),
    };
    write_json(&out.with_extension("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPolicySummary {
    pub steps: usize,
    pub wall_ms: u64,
    pub final_loss: f64,
    pub fps: f64,
    pub checkpoint: PathBuf,
}

/// Trains the goal-conditioned policy on the training split of `cfg`
/// against the human encoder of `ckpt`.
pub fn cmd_train_policy(ckpt: &Path, cfg: &ExperimentConfig, out: Option<&Path>) -> Result<TrainPolicySummary> {
    let latent = load_latent(ckpt)?;
    let (train, _) = experiment_motions(cfg, &latent.human)?;
    let fps = train.first().map_or(20.0, |m| m.fps);
    let mut policy = PolicyModel::new(cfg.policy, fps, cfg.seed)?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ckpt.parent().map(Path::to_path_buf).unwrap_or_default().join(POLICY_CKPT));
    let mut log = csv_writer(&out.with_extension("csv"))?;
    let report = train_policy(&mut policy, &latent, &train, Some(&mut log), cfg.log_every)?;
    save_policy(&policy, &latent, &out, serde_json::json!({ "policy": cfg.policy }))?;
    let summary = TrainPolicySummary {
        steps: report.steps,
        wall_ms: report.wall_ms,
        final_loss: report.history.last().map_or(f64::NAN, |l| l.total),
        fps: policy.fps,
        checkpoint: out.clone(),
    };
    write_json(&out.with_extension("summary.json"), &summary)?;
    Ok(summary)
}

fn source_spec(model: &LatentModel, name: &str) -> Result<EmbodimentSpec> {
    if name == model.human.name {
        Ok(model.human.clone())
    } else {
        Ok(model.robot(name)?.clone())
    }
}

/// Retargets the motion file to the registered robot `target` and writes
/// the result as Motion JSON.
pub fn cmd_retarget(ckpt: &Path, motion: &Path, target: &str, out: &Path) -> Result<Motion> {
    let model = load_latent(ckpt)?;
    let src = Motion::load(motion).map_err(|e| io(motion, e))?;
    let src_spec = source_spec(&model, &src.embodiment)?;
    let tgt = model.robot(target)?.clone();
    let result = model.retarget_motion(&src_spec, &src, &tgt)?;
    result.save(out).map_err(|e| io(out, e))?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSummary {
    pub robot: String,
    pub goal: [f64; 3],
    pub horizon: usize,
    pub seed: u64,
    pub final_dtg: f64,
    pub arm_length: f64,
}

/// One rollout from a seeded random start pose toward `goal`; writes the
/// motion to `out` and the per-step record next to it as CSV.
#[allow(clippy::too_many_arguments)]
pub fn cmd_control(
    ckpt: &Path,
    policy: &Path,
    robot: &str,
    goal: [f64; 3],
    horizon: usize,
    seed: u64,
    noise_scale: f64,
    out: &Path,
) -> Result<ControlSummary> {
    let latent = load_latent(ckpt)?;
    let policy = load_policy_for(policy, &latent)?;
    let spec = latent.robot(robot)?.clone();
    let start = sample_random_pose(&spec, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Vector3::from(goal);
    let r = rollout(&policy, &latent, &spec, &start, &g, horizon, noise_scale, &mut rng)?;
    r.motion.save(out).map_err(|e| io(out, e))?;
    write_csv(&out.with_extension("csv"), &r.records)?;
    Ok(ControlSummary {
        robot: robot.into(),
        goal,
        horizon,
        seed,
        final_dtg: r.final_dtg(),
        arm_length: spec.arm_length[&policy.config.segment],
    })
}

/// One line of a pairs file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub source: String,
    pub target: String,
    /// Glob of source-embodiment Motion files, relative to the pairs file.
    pub motions: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub embodiment_pair: String,
    pub segment: Segment,
    #[serde(rename = "RS_deg")]
    pub rs_deg: f64,
    #[serde(rename = "NDS")]
    pub nds: f64,
    #[serde(rename = "NVS")]
    pub nvs: f64,
    /// Mean final distance to goal in meters over control episodes; only on
    /// the controlled segment when a policy is given.
    #[serde(rename = "DTG")]
    pub dtg: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlEval {
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    pub noise_scale: f64,
}

/// Mean final distance to goal over seeded random start/goal episodes.
pub fn mean_control_dtg(policy: &PolicyModel, latent: &LatentModel, spec: &EmbodimentSpec, ev: ControlEval) -> Result<f64> {
    let seg = policy.config.segment;
    let mut total = 0.0;
    for ep in 0..ev.episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(ev.seed.wrapping_add(ep as u64));
        let start = crate::embodiment::sample_random_pose_with(spec, &mut rng);
        let goal = sample_reachable_goal(spec, &start, seg, &mut rng)?;
        total += rollout(policy, latent, spec, &start, &goal, ev.horizon, ev.noise_scale, &mut rng)?.final_dtg();
    }
    Ok(total / ev.episodes.max(1) as f64)
}

/// Retargeting metrics for every pair and shared segment, plus control
/// accuracy on the target when a policy checkpoint is given.
pub fn cmd_eval(ckpt: &Path, pairs: &Path, out: &Path, policy: Option<&Path>, control: ControlEval) -> Result<Vec<EvalRow>> {
    let model = load_latent(ckpt)?;
    let policy = policy.map(|p| load_policy_for(p, &model)).transpose()?;
    let base = pairs.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::Reader::from_path(pairs).map_err(|e| io(pairs, e))?;
    let mut rows = Vec::new();
    for rec in reader.deserialize::<EvalPair>() {
        let pair = rec.map_err(|e| io(pairs, e))?;
        let src_spec = source_spec(&model, &pair.source)?;
        let tgt_spec = model.robot(&pair.target)?.clone();
        let motions = load_motion_glob(&base.join(&pair.motions).to_string_lossy())?;
        let outs: Vec<Motion> = motions
            .iter()
            .map(|m| model.retarget_motion(&src_spec, m, &tgt_spec))
            .collect::<std::result::Result<_, _>>()?;
        let dtg = match &policy {
            Some(p) => Some(mean_control_dtg(p, &model, &tgt_spec, control)?),
            None => None,
        };
        for seg in Segment::ALL {
            if !src_spec.has_segment(seg) || !tgt_spec.has_segment(seg) {
                continue;
            }
            let n = motions.len() as f64;
            let (mut rs, mut nds, mut nvs) = (0.0, 0.0, 0.0);
            for (a, b) in motions.iter().zip(&outs) {
                rs += eval_rs(&src_spec, a, &tgt_spec, b, seg)? / n;
                if seg.is_arm() {
                    nds += eval_nds(&src_spec, a, &tgt_spec, b, seg)? / n;
                    nvs += eval_nvs(&src_spec, a, &tgt_spec, b, seg)? / n;
                }
            }
            let arm = seg.is_arm();
            rows.push(EvalRow {
                embodiment_pair: format!("{}->{}", pair.source, pair.target),
                segment: seg,
                rs_deg: rs,
                nds: if arm { nds } else { f64::NAN },
                nvs: if arm { nvs } else { f64::NAN },
                dtg: policy.as_ref().filter(|p| p.config.segment == seg).and(dtg),
            });
        }
    }
    write_csv(out, &rows)?;
    Ok(rows)
}

/// One projected frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaPoint {
    pub embodiment: String,
    pub motion: usize,
    pub frame: usize,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VizReport {
    pub pca: Pca,
    /// Pooled latent vectors, one row per frame.
    pub data: DMatrix<f64>,
    pub points: Vec<PcaPoint>,
}

/// Projects the latents of every frame of the given motions onto their two
/// leading principal components. Writes the points as CSV beside `out` and
/// a plot of the trajectories to `out` (SVG).
pub fn cmd_viz_pca(ckpt: &Path, motions: &str, out: &Path) -> Result<VizReport> {
    let model = load_latent(ckpt)?;
    let motions = load_motion_glob(motions)?;
    let report = project_latents(&model, &motions)?;
    write_csv(&out.with_extension("csv"), &report.points)?;
    super::plot::trajectory_svg(out, &report.points).map_err(|e| io(out, e))?;
    Ok(report)
}

pub fn project_latents(model: &LatentModel, motions: &[Motion]) -> Result<VizReport> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (mi, m) in motions.iter().enumerate() {
        let spec = source_spec(model, &m.embodiment)?;
        for (fi, z) in model.encode_frames(&spec, &m.frames)?.into_iter().enumerate() {
            rows.push(z.to_flat());
            labels.push((m.embodiment.clone(), mi, fi));
        }
    }
    let d = rows.first().map_or(0, Vec::len);
    let data = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let pca = Pca::fit(&data, 2)?;
    let proj = pca.project(&data);
    let points = labels
        .into_iter()
        .enumerate()
        .map(|(i, (embodiment, motion, frame))| PcaPoint {
            embodiment,
            motion,
            frame,
            pc1: proj[(i, 0)],
            pc2: proj[(i, 1)],
        })
        .collect();
    Ok(VizReport { pca, data, points })
}
