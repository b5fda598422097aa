//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Criteria 4-10 share the runs of the
//! desk-scale experiment in `configs/desk.json` (override with
//! `ACCEPTANCE_CONFIG`; select criteria with `ACCEPTANCE_ONLY=1,2`).

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unilatent::checkpoint::{load_latent, load_policy_for, save_latent};
use unilatent::embodiment::{
    ee_position_normalized, fixture, fk_values, forward_kinematics, haar_quaternion, sample_random_pose,
    sample_random_pose_with, Motion, Pose, Segment,
};
use unilatent::latent::{compose_latents, LatentModel, LatentPose, SUBSPACE_DIM};
use unilatent::metrics::{ee_distance, eval_nds, eval_nvs, rotation_distance, segment_similarity, MetricConfig};
use unilatent::policy::{rollout, sample_reachable_goal, PolicyModel};
use unilatent::toolkit::{
    cmd_add_robot, cmd_retarget, cmd_train_latent, cmd_train_policy, cmd_viz_pca, experiment_motions, initial_model,
    train_metadata, ExperimentConfig, TrainLatentSummary,
};
use unilatent::training::{HumanDataset, Trainer};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

/// Outputs of earlier criteria that later ones build on.
struct Ctx {
    cfg: ExperimentConfig,
    work: PathBuf,
    m2: Option<TrainLatentSummary>,
    adapted: BTreeMap<String, PathBuf>,
    policy: Option<PathBuf>,
    /// Final distances of the first random-goal episodes on the first robot.
    control_dtgs: Vec<f64>,
}

impl Ctx {
    fn m2_ckpt(&self) -> Result<PathBuf, String> {
        self.m2.as_ref().map(|s| s.checkpoint.clone()).ok_or_else(|| "latent training did not complete".to_string())
    }

    fn test_motions(&self) -> Result<Vec<Motion>, String> {
        let human = self.cfg.human_spec().map_err(|e| e.to_string())?;
        Ok(experiment_motions(&self.cfg, &human).map_err(|e| e.to_string())?.1)
    }
}

fn e2s(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// 1

fn fk_oracle(_: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for name in ["planar2", "arm3", "human", "tiago", "h1"] {
        let spec = fixture(name).map_err(e2s)?;
        for s in 0..1000 {
            let pose = sample_random_pose(&spec, 7_000_000 + s);
            let fk = forward_kinematics(&spec, &pose).map_err(e2s)?;
            for (i, link) in spec.links().iter().enumerate() {
                let m = common::oracle::link_transform(&spec, link, &pose.values);
                let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
                let r = m.fixed_view::<3, 3>(0, 0).into_owned();
                worst = worst.max((fk.link_positions[i] - t).amax());
                worst = worst.max((fk.link_orientations[i].to_rotation_matrix().into_inner() - r).amax());
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-9 && within(elapsed, 10.0),
        format!("max deviation {worst:.2e} over 5000 poses (tol 1e-9, budget 10 s)"),
    )
}

// 2

fn metric_axioms(_: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = Vec::new();
    for _ in 0..2000 {
        let a: Vec<UnitQuaternion<f64>> = (0..3).map(|_| haar_quaternion(&mut rng)).collect();
        let b: Vec<UnitQuaternion<f64>> = (0..3).map(|_| haar_quaternion(&mut rng)).collect();
        let flipped: Vec<UnitQuaternion<f64>> =
            a.iter().map(|q| UnitQuaternion::new_unchecked(-q.into_inner())).collect();
        let ab = rotation_distance(&a, &b).map_err(e2s)?;
        let ba = rotation_distance(&b, &a).map_err(e2s)?;
        if ab != ba {
            failures.push(format!("asymmetric {ab} vs {ba}"));
        }
        let fb = rotation_distance(&flipped, &b).map_err(e2s)?;
        if (fb - ab).abs() > 1e-12 {
            failures.push(format!("sign flip changed {ab} to {fb}"));
        }
        let self_dist = rotation_distance(&a, &flipped).map_err(e2s)?;
        if self_dist.abs() > 1e-12 {
            failures.push(format!("q vs -q gave {self_dist}"));
        }
        if ab <= 1e-9 {
            failures.push(format!("distinct rotations at distance {ab}"));
        }
    }
    let quarter = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_2);
    let identity_vs_90 = rotation_distance(&[UnitQuaternion::identity()], &[quarter]).map_err(e2s)?;
    if (identity_vs_90 - 0.5).abs() > 1e-12 {
        failures.push(format!("identity vs 90 deg gave {identity_vs_90}"));
    }
    let ee = ee_distance(&Vector3::new(1.0, 2.0, 3.0), &Vector3::new(4.0, 6.0, 3.0));
    if (ee - 5.0).abs() > 1e-12 {
        failures.push(format!("ee distance {ee}"));
    }

    // Two unit links: elbow-straight rotations of the shoulder and elbow.
    let planar = fixture("planar2").map_err(e2s)?;
    let pose = |a: f64, b: f64| Pose::new(&planar, vec![a, b]);
    let cfg = MetricConfig { omega: 0.7 };
    let pi = std::f64::consts::PI;
    let cases = [
        ((0.0, 0.0), (0.0, 0.0), 0.0),
        ((0.0, 0.0), (pi / 2.0, 0.0), 0.5 + 0.7 * 2f64.sqrt()),
        ((0.0, 0.0), (0.0, pi), 1.0 + 0.7),
        ((pi / 2.0, 0.0), (0.0, pi / 2.0), 1.0 + 0.7 * (0.5f64).sqrt()),
    ];
    for ((a0, a1), (b0, b1), want) in cases {
        let s = segment_similarity(&planar, &pose(a0, a1), &planar, &pose(b0, b1), Segment::RA, &cfg)
            .map_err(e2s)?
            .value;
        if (s - want).abs() > 1e-12 {
            failures.push(format!("similarity ({a0},{a1}) vs ({b0},{b1}) = {s}, expected {want}"));
        }
    }
    let elapsed = start.elapsed();
    check(
        failures.is_empty() && within(elapsed, 5.0),
        if failures.is_empty() {
            format!("2000 random quaternion triples, 0.5 at 90 deg, {} hand cases (budget 5 s)", cases.len() + 1)
        } else {
            failures[..failures.len().min(3)].join("; ")
        },
    )
}

// 3

fn gradients(_: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let mut errors: Vec<(String, f64)> = common::grad::LATENT_TERMS
        .iter()
        .enumerate()
        .map(|(i, name)| (name.to_string(), common::grad::latent_term_error(i)))
        .collect();
    errors.push(("L_cvae".into(), common::grad::cvae_error()));
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let detail = errors.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    check(
        worst < 1e-4 && within(elapsed, 120.0),
        format!("relative errors {detail} (tol 1e-4, budget 120 s)"),
    )
}

// 4

/// Root-mean-square joint error of encode-decode on random poses.
fn self_reconstruction_rms(model: &LatentModel, name: &str, n: u64) -> Result<f64, String> {
    let spec = model.robot(name).map_err(e2s)?;
    let mut se = 0.0;
    let mut count = 0.0;
    for s in 0..n {
        let p = sample_random_pose(spec, 4_000_000 + s);
        let q = model.retarget_pose(spec, &p, spec).map_err(e2s)?;
        se += p.values.iter().zip(&q.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        count += p.values.len() as f64;
    }
    Ok((se / count).sqrt())
}

/// Mean NDS and NVS of human-to-robot retargeting on one arm.
fn arm_scores(model: &LatentModel, motions: &[Motion], robot: &str, seg: Segment) -> Result<(f64, f64), String> {
    let spec = model.robot(robot).map_err(e2s)?;
    let n = motions.len() as f64;
    let (mut nds, mut nvs) = (0.0, 0.0);
    for m in motions {
        let out = model.retarget_motion(&model.human, m, spec).map_err(e2s)?;
        nds += eval_nds(&model.human, m, spec, &out, seg).map_err(e2s)? / n;
        nvs += eval_nvs(&model.human, m, spec, &out, seg).map_err(e2s)? / n;
    }
    Ok((nds, nvs))
}

fn latent_convergence(ctx: &mut Ctx) -> Outcome {
    let summary = cmd_train_latent(&ctx.cfg).map_err(e2s)?;
    let model = load_latent(&summary.checkpoint).map_err(e2s)?;
    ctx.m2 = Some(summary.clone());
    let test = ctx.test_motions()?;
    let mut ok = within(Duration::from_millis(summary.wall_ms), 45.0 * 60.0);
    let mut parts = Vec::new();
    for name in &summary.robots {
        let rms = self_reconstruction_rms(&model, name, 500)?;
        ok &= rms < 0.05;
        parts.push(format!("{name} rms {rms:.4}"));
        let spec = model.robot(name).map_err(e2s)?;
        for seg in Segment::ARMS {
            if !spec.has_segment(seg) {
                continue;
            }
            let (nds, nvs) = arm_scores(&model, &test, name, seg)?;
            ok &= nds < 0.10 && nvs < 0.20;
            parts.push(format!("{name} {seg} NDS {nds:.3} NVS {nvs:.3}"));
        }
    }

    let mut peak: f64 = 0.0;
    let mut observe = |z: &LatentPose| {
        for v in z.to_flat() {
            peak = peak.max(v.abs());
        }
    };
    for m in &test {
        for z in model.encode_frames(&model.human, &m.frames).map_err(e2s)? {
            observe(&z);
        }
    }
    for name in &summary.robots {
        let spec = model.robot(name).map_err(e2s)?;
        for s in 0..500 {
            observe(&model.encode(spec, &sample_random_pose(spec, 4_500_000 + s)).map_err(e2s)?);
        }
    }
    ok &= peak <= 1.0;
    parts.push(format!("max |z| {peak:.4}"));
    parts.push(format!(
        "{} steps batch {} in {:.1} min (tol rms 0.05, NDS 0.10, NVS 0.20, budget 45 min)",
        summary.steps,
        ctx.cfg.train.batch_size,
        summary.wall_ms as f64 / 60_000.0
    ));
    check(ok, parts.join(", "))
}

// 5

fn adaptation(ctx: &mut Ctx) -> Outcome {
    let m2 = ctx.m2_ckpt()?;
    let base = load_latent(&m2).map_err(e2s)?;
    let adapted_path = ctx.work.join("m2").join("latent_arm3.ckpt");
    let adapt = cmd_add_robot(&m2, "fixture:arm3", &ctx.cfg, Some(&adapted_path)).map_err(e2s)?;
    let adapted = load_latent(&adapted_path).map_err(e2s)?;
    ctx.adapted.insert("arm3".into(), adapted_path);
    let frozen = adapted.shared_digest() == base.shared_digest() && adapt.shared_digest == base.shared_digest();

    let mut m3 = ctx.cfg.clone();
    m3.robots.push("fixture:arm3".into());
    m3.output_dir = ctx.work.join("m3");
    let full = cmd_train_latent(&m3).map_err(e2s)?;
    let joint = load_latent(&full.checkpoint).map_err(e2s)?;

    let test = ctx.test_motions()?;
    let (nds_adapted, _) = arm_scores(&adapted, &test, "arm3", Segment::RA)?;
    let (nds_joint, _) = arm_scores(&joint, &test, "arm3", Segment::RA)?;
    let fraction = adapt.steps as f64 / ctx.cfg.train.steps as f64;
    let time_ratio = adapt.wall_ms as f64 / full.wall_ms.max(1) as f64;
    check(
        frozen && fraction < 0.10 && nds_adapted <= 2.0 * nds_joint,
        format!(
            "shared digest {}, adapted NDS {nds_adapted:.3} vs end-to-end {nds_joint:.3} (tol 2x), \
             {} of {} steps ({:.1}%), wall time ratio {time_ratio:.3}",
            if frozen { "unchanged" } else { "CHANGED" },
            adapt.steps,
            ctx.cfg.train.steps,
            100.0 * fraction
        ),
    )
}

// 6

fn decoupling(ctx: &mut Ctx) -> Outcome {
    let model = load_latent(&ctx.m2_ckpt()?).map_err(e2s)?;
    let spec = model.robot("h1").map_err(e2s)?.clone();
    let arm_dofs: Vec<usize> = Segment::ARMS.iter().flat_map(|&s| spec.segment_dofs(s).to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut leg_moved: f64 = 0.0;
    for _ in 0..500 {
        let pose = sample_random_pose_with(&spec, &mut rng);
        let z = model.encode(&spec, &pose).map_err(e2s)?;
        let mut perturbed = z.clone();
        let noise: [f64; SUBSPACE_DIM] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        perturbed.set(Segment::LL, noise);
        let a = model.decode_to_robot(&spec, &z).map_err(e2s)?;
        let b = model.decode_to_robot(&spec, &perturbed).map_err(e2s)?;
        for &i in &arm_dofs {
            worst = worst.max((a.values[i] - b.values[i]).abs());
        }
        for &i in spec.segment_dofs(Segment::LL) {
            leg_moved = leg_moved.max((a.values[i] - b.values[i]).abs());
        }
    }
    check(
        worst < 1e-6 && leg_moved > 0.0,
        format!("h1 arm joints moved at most {worst:.2e} (tol 1e-6) while left leg moved up to {leg_moved:.3}"),
    )
}

// 7

struct ControlStats {
    mean_dtg_norm: f64,
    trivial_dtg_norm: f64,
    trivial_step: f64,
    steps_per_s: f64,
    dtgs: Vec<f64>,
}

fn control_stats(policy: &PolicyModel, model: &LatentModel, robot: &str, episodes: usize, horizon: usize, seed: u64) -> Result<ControlStats, String> {
    let spec = model.robot(robot).map_err(e2s)?;
    let seg = policy.config.segment;
    let arm = spec.arm_length[&seg];
    let mut dtgs = Vec::with_capacity(episodes);
    let mut steps = 0usize;
    let start = Instant::now();
    for ep in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(ep as u64));
        let pose = sample_random_pose_with(spec, &mut rng);
        let goal = sample_reachable_goal(spec, &pose, seg, &mut rng).map_err(e2s)?;
        let r = rollout(policy, model, spec, &pose, &goal, horizon, 1.0, &mut rng).map_err(e2s)?;
        steps += r.records.len();
        dtgs.push(r.final_dtg());
    }
    let steps_per_s = steps as f64 / start.elapsed().as_secs_f64();

    let trivial_episodes = episodes / 5;
    let (mut trivial, mut displacement) = (0.0, 0.0);
    for ep in 0..trivial_episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1_000_000 + ep as u64));
        let pose = sample_random_pose_with(spec, &mut rng);
        let fk = fk_values(spec, &pose.values);
        let goal = fk.ee_position(spec, seg).map_err(e2s)?;
        let r = rollout(policy, model, spec, &pose, &goal, horizon, 1.0, &mut rng).map_err(e2s)?;
        trivial += r.final_dtg() / arm;
        let mut prev = ee_position_normalized(spec, &fk, seg).map_err(e2s)?;
        let mut moved = 0.0;
        for f in &r.motion.frames {
            let p = ee_position_normalized(spec, &fk_values(spec, &f.values), seg).map_err(e2s)?;
            moved += (p - prev).norm();
            prev = p;
        }
        displacement += moved / r.motion.len() as f64;
    }
    let n = trivial_episodes.max(1) as f64;
    Ok(ControlStats {
        mean_dtg_norm: dtgs.iter().sum::<f64>() / episodes as f64 / arm,
        trivial_dtg_norm: trivial / n,
        trivial_step: displacement / n,
        steps_per_s,
        dtgs,
    })
}

const CONTROL_EPISODES: usize = 1000;
const CONTROL_SEED: u64 = 70_000;
const RERUN_EPISODES: usize = 100;

fn control(ctx: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let m2 = ctx.m2_ckpt()?;
    let summary = cmd_train_policy(&m2, &ctx.cfg, None).map_err(e2s)?;
    ctx.policy = Some(summary.checkpoint.clone());

    let mut models: Vec<(String, LatentModel)> = Vec::new();
    let base = load_latent(&m2).map_err(e2s)?;
    for name in base.robot_names() {
        models.push((name.to_string(), base.clone()));
    }
    for extra in ["arm3", "planar2"] {
        let path = match ctx.adapted.get(extra) {
            Some(p) => p.clone(),
            None => {
                let p = ctx.work.join("m2").join(format!("latent_{extra}.ckpt"));
                cmd_add_robot(&m2, &format!("fixture:{extra}"), &ctx.cfg, Some(&p)).map_err(e2s)?;
                ctx.adapted.insert(extra.into(), p.clone());
                p
            }
        };
        models.push((extra.to_string(), load_latent(&path).map_err(e2s)?));
    }

    let mut ok = true;
    let mut parts = Vec::new();
    for (i, (robot, model)) in models.iter().enumerate() {
        let policy = load_policy_for(&summary.checkpoint, model).map_err(e2s)?;
        let s = control_stats(&policy, model, robot, CONTROL_EPISODES, ctx.cfg.eval_horizon, CONTROL_SEED)?;
        if i == 0 {
            ctx.control_dtgs = s.dtgs[..RERUN_EPISODES].to_vec();
        }
        ok &= s.mean_dtg_norm < 0.05 && s.trivial_dtg_norm < 0.02 && s.steps_per_s >= 100.0;
        parts.push(format!(
            "{robot} DTG {:.2}% trivial {:.2}% step {:.4} at {:.0} steps/s",
            100.0 * s.mean_dtg_norm,
            100.0 * s.trivial_dtg_norm,
            s.trivial_step,
            s.steps_per_s
        ));
    }
    let elapsed = start.elapsed();
    ok &= within(elapsed, 20.0 * 60.0);
    parts.push(format!(
        "{CONTROL_EPISODES} episodes of {} frames per robot (tol 5% / 2% of arm length, 100 steps/s, budget 20 min)",
        ctx.cfg.eval_horizon
    ));
    check(ok, parts.join(", "))
}

// 8

fn composition(ctx: &mut Ctx) -> Outcome {
    let base = load_latent(&ctx.m2_ckpt()?).map_err(e2s)?;
    let robots = ["planar2", "arm3", "tiago", "h1", "atlas"];
    let mut model = base.clone();
    for (i, name) in robots.iter().enumerate() {
        if model.robot(name).is_err() {
            model.register_robot(&fixture(name).map_err(e2s)?, 800 + i as u64).map_err(e2s)?;
        }
    }
    let human = model.human.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0usize;
    let mut invalid = Vec::new();
    let mut decoded = 0usize;
    for _ in 0..200 {
        let sources: Vec<LatentPose> = (0..3)
            .map(|_| model.encode(&human, &sample_random_pose_with(&human, &mut rng)))
            .collect::<Result<_, _>>()
            .map_err(e2s)?;
        let h1 = model.robot("h1").map_err(e2s)?;
        let robot_z = model.encode(h1, &sample_random_pose_with(h1, &mut rng)).map_err(e2s)?;
        let mut parts: BTreeMap<Segment, &LatentPose> = BTreeMap::new();
        for seg in Segment::ALL {
            let pick = rng.random_range(0..4);
            let src = if pick == 3 && robot_z.is_available(seg) { &robot_z } else { &sources[pick % 3] };
            parts.insert(seg, src);
        }
        let composed = compose_latents(&parts).map_err(e2s)?;
        for seg in Segment::ALL {
            if composed.get(seg) != parts[&seg].get(seg) || !composed.is_available(seg) {
                mismatches += 1;
            }
        }
        let mut partial = parts.clone();
        partial.remove(&Segment::TK);
        let without_trunk = compose_latents(&partial).map_err(e2s)?;
        if without_trunk.is_available(Segment::TK) || without_trunk.get(Segment::TK).iter().any(|&v| v != 0.0) {
            mismatches += 1;
        }
        for name in robots {
            let spec = model.robot(name).map_err(e2s)?;
            let pose = model.decode_to_robot(spec, &composed).map_err(e2s)?;
            decoded += 1;
            if let Err(e) = pose.validate(spec) {
                invalid.push(format!("{name}: {e}"));
            }
        }
    }
    let mut unavailable = BTreeMap::new();
    let tiago_z = {
        let tiago = model.robot("tiago").map_err(e2s)?;
        model.encode(tiago, &sample_random_pose(tiago, 1)).map_err(e2s)?
    };
    unavailable.insert(Segment::LL, &tiago_z);
    let rejects = compose_latents(&unavailable).is_err();
    check(
        mismatches == 0 && invalid.is_empty() && rejects,
        format!(
            "{mismatches} component mismatches, {} of {decoded} decoded poses invalid, unavailable source {}",
            invalid.len(),
            if rejects { "rejected" } else { "ACCEPTED" }
        ),
    )
}

// 9

fn pca(ctx: &mut Ctx) -> Outcome {
    let ckpt = ctx.m2_ckpt()?;
    let dir = ctx.work.join("viz");
    std::fs::create_dir_all(&dir).map_err(e2s)?;
    let test = ctx.test_motions()?;
    let sources: Vec<&Motion> = test.iter().take(3).collect();
    for (i, m) in sources.iter().enumerate() {
        let path = dir.join(format!("a_human_{i}.json"));
        m.save(&path).map_err(e2s)?;
        for robot in ["tiago", "h1"] {
            cmd_retarget(&ckpt, &path, robot, &dir.join(format!("b_{robot}_{i}.json"))).map_err(e2s)?;
        }
    }
    sources[0].save(&dir.join("c_duplicate.json")).map_err(e2s)?;
    let report = cmd_viz_pca(&ckpt, &dir.join("*.json").to_string_lossy(), &dir.join("pca.svg")).map_err(e2s)?;

    let gram = &report.pca.components * report.pca.components.transpose();
    let ortho = (gram - DMatrix::identity(2, 2)).amax();

    let data = &report.data;
    let (n, d) = data.shape();
    let mean: Vec<f64> = (0..d).map(|j| data.column(j).mean()).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| data[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let mut eig = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect::<Vec<_>>();
    eig.sort_by(|a, b| b.total_cmp(a));
    let tail: f64 = eig[2..].iter().sum();
    let recon = report.pca.reconstruction_error(data);
    let recon_gap = (recon - tail).abs();
    let eig_gap = eig
        .iter()
        .zip(&report.pca.variances)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let pts = &report.points;
    let of = |motion: usize| pts.iter().filter(|p| p.motion == motion).map(|p| (p.pc1, p.pc2)).collect::<Vec<_>>();
    let original = of(0);
    let duplicate = of(report.points.iter().map(|p| p.motion).max().unwrap_or(0));
    let same = !original.is_empty() && original == duplicate;
    check(
        ortho < 1e-9 && recon_gap < 1e-9 && eig_gap < 1e-9 && same,
        format!(
            "{n} points: orthonormality error {ortho:.1e}, projection error vs eigenvalue tail {recon_gap:.1e}, \
             variances vs eigenvalues {eig_gap:.1e} (tol 1e-9), duplicate trajectory {}",
            if same { "identical" } else { "DIFFERENT" }
        ),
    )
}

// 10

/// CSV rows without the wall clock column.
fn csv_rows(bytes: &[u8]) -> Result<Vec<Vec<String>>, String> {
    let mut r = csv::Reader::from_reader(bytes);
    let headers = r.headers().map_err(e2s)?.clone();
    let keep: Vec<usize> = (0..headers.len()).filter(|&i| &headers[i] != "wall_ms").collect();
    let mut rows = vec![keep.iter().map(|&i| headers[i].to_string()).collect()];
    for rec in r.records() {
        let rec = rec.map_err(e2s)?;
        rows.push(keep.iter().map(|&i| rec[i].to_string()).collect());
    }
    Ok(rows)
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn determinism(ctx: &mut Ctx) -> Outcome {
    let m2 = ctx.m2_ckpt()?;
    let out = ctx.cfg.output_dir();
    let k = ctx.cfg.checkpoint_every;
    if k == 0 || k >= ctx.cfg.train.steps {
        return Err("config has no intermediate checkpoint to compare against".into());
    }
    let mut issues = Vec::new();

    // Latent training, replayed up to the first intermediate checkpoint.
    let model = initial_model(&ctx.cfg).map_err(e2s)?;
    let (train, _) = experiment_motions(&ctx.cfg, &model.human).map_err(e2s)?;
    let data = HumanDataset::new(&model.human, train).map_err(e2s)?;
    let mut trainer = Trainer::new(model, ctx.cfg.train).map_err(e2s)?;
    let replay = ctx.work.join("replay_latent.ckpt");
    let mut log = csv::Writer::from_writer(Vec::new());
    let result = trainer.run_with(&data, Some(&mut log), ctx.cfg.log_every, |m, step| {
        if step == k {
            save_latent(m, &replay, train_metadata(&ctx.cfg, step)).map_err(e2s)?;
            return Err("stop".into());
        }
        Ok(())
    });
    if result.is_ok() {
        issues.push("replay did not stop".to_string());
    }
    let replay_log = csv_rows(&log.into_inner().map_err(e2s)?)?;
    let original_log = csv_rows(&read(&out.join("latent_log.csv"))?)?;
    if original_log.len() < replay_log.len() || original_log[..replay_log.len()] != replay_log[..] {
        issues.push("latent log differs".into());
    }
    if read(&replay)? != read(&out.join(format!("latent_step{k}.ckpt")))? {
        issues.push(format!("latent checkpoint at step {k} differs"));
    }

    // Policy training, replayed in full.
    let policy = ctx.policy.clone().ok_or("policy training did not complete")?;
    let again = ctx.work.join("replay_policy.ckpt");
    cmd_train_policy(&m2, &ctx.cfg, Some(&again)).map_err(e2s)?;
    if read(&again)? != read(&policy)? {
        issues.push("policy checkpoint differs".into());
    }
    if csv_rows(&read(&again.with_extension("csv"))?)? != csv_rows(&read(&policy.with_extension("csv"))?)? {
        issues.push("policy log differs".into());
    }

    // Control episodes.
    let base = load_latent(&m2).map_err(e2s)?;
    let first = base.robot_names().next().ok_or("no robots")?.to_string();
    let p = load_policy_for(&again, &base).map_err(e2s)?;
    let s = control_stats(&p, &base, &first, RERUN_EPISODES, ctx.cfg.eval_horizon, CONTROL_SEED)?;
    let same_dtg = s.dtgs.iter().map(|v| v.to_bits()).eq(ctx.control_dtgs.iter().map(|v| v.to_bits()));
    if !same_dtg {
        issues.push("control rollouts differ".into());
    }
    check(
        issues.is_empty(),
        if issues.is_empty() {
            format!(
                "latent log and step-{k} checkpoint, policy log and checkpoint, {RERUN_EPISODES} {first} rollouts identical"
            )
        } else {
            issues.join("; ")
        },
    )
}

type Criterion = fn(&mut Ctx) -> Outcome;

fn main() -> ExitCode {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let work = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&work);
    std::fs::create_dir_all(&work).expect("work directory");
    let cfg_path = std::env::var_os("ACCEPTANCE_CONFIG").map_or_else(|| root.join("configs/desk.json"), PathBuf::from);
    let mut cfg = ExperimentConfig::load(&cfg_path).expect("experiment config");
    cfg.output_dir = work.join("m2");
    let mut ctx = Ctx { cfg, work, m2: None, adapted: BTreeMap::new(), policy: None, control_dtgs: Vec::new() };

    let criteria: [(&str, Criterion); 10] = [
        ("forward kinematics oracle", fk_oracle),
        ("metric axioms", metric_axioms),
        ("gradient correctness", gradients),
        ("latent convergence", latent_convergence),
        ("new-robot adaptation", adaptation),
        ("decoupling", decoupling),
        ("goal-conditioned control", control),
        ("latent composition", composition),
        ("PCA visualization", pca),
        ("determinism", determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| run(&mut ctx)))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into())));
        let secs = start.elapsed().as_secs_f64();
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} {status} {name}: {detail} [{secs:.1} s]");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
