#![allow(dead_code)]

pub mod grad;
pub mod oracle;

use unilatent::embodiment::{fixture, sample_random_pose, Motion};
use unilatent::latent::{LatentModel, ModelConfig};
use unilatent::nn::Parameters;
use unilatent::training::HumanDataset;

/// Width 8, two layers.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        width: 8,
        embed_dim: 10,
    }
}

pub fn micro_model(robots: &[&str]) -> LatentModel {
    let mut m = LatentModel::new(micro_config(), fixture("human").unwrap(), 11).unwrap();
    for (i, name) in robots.iter().enumerate() {
        m.register_robot(&fixture(name).unwrap(), 20 + i as u64).unwrap();
    }
    m
}

/// Motions that hop between random poses; enough for gradient checks.
pub fn random_human_data(motions: usize, frames: usize) -> HumanDataset {
    let human = fixture("human").unwrap();
    let motions = (0..motions)
        .map(|m| {
            let frames = (0..frames)
                .map(|t| sample_random_pose(&human, (m * 1000 + t) as u64))
                .collect();
            Motion::new("human", 20.0, frames)
        })
        .collect();
    HumanDataset::new(&human, motions).unwrap()
}

/// `|analytic - fd| / |fd|` over the whole gradient, with central differences.
pub fn fd_relative_error<P, F>(params: &P, analytic: &[f64], step: f64, loss: F) -> f64
where
    P: Parameters + Clone,
    F: Fn(&P) -> f64,
{
    let base = params.to_flat();
    assert_eq!(base.len(), analytic.len());
    let mut probe = params.clone();
    let mut v = base.clone();
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..base.len() {
        v[k] = base[k] + step;
        probe.load_flat(&v);
        let up = loss(&probe);
        v[k] = base[k] - step;
        probe.load_flat(&v);
        let down = loss(&probe);
        v[k] = base[k];
        let fd = (up - down) / (2.0 * step);
        num += (fd - analytic[k]).powi(2);
        den += fd * fd;
    }
    num.sqrt() / den.sqrt().max(1e-300)
}
