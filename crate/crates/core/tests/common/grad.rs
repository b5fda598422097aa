//! Finite-difference checks of every analytic loss gradient on micro models.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use unilatent::embodiment::{EmbodimentSpec, Segment};
use unilatent::latent::LatentModel;
use unilatent::nn::Parameters;
use unilatent::policy::{cvae_loss, cvae_loss_and_grad, PolicyConfig, PolicyDataset, PolicyModel, NOISE_DIM};
use unilatent::training::{
    contrastive_loss, latent_consistency_loss, loss_and_grad, reconstruction_loss, sample_batch, temporal_loss,
    Scope, StepBatch, TrainConfig,
};

pub const LATENT_TERMS: [&str; 4] = ["L_con", "L_rec", "L_ltc", "L_temp"];

pub fn isolated(term: usize) -> TrainConfig {
    let mut w = [0.0; 4];
    w[term] = 1.0;
    TrainConfig {
        lambda_c: w[0],
        lambda_rec: w[1],
        lambda_ltc: w[2],
        lambda_temp: w[3],
        batch_size: 4,
        ..Default::default()
    }
}

fn standalone(model: &LatentModel, batch: &StepBatch, term: usize, alpha: f64) -> f64 {
    let specs: Vec<&EmbodimentSpec> = batch.robots.iter().map(|(n, _)| model.robot(n).unwrap()).collect();
    match term {
        0 => contrastive_loss(batch.pool_latents(model).unwrap().view(), &batch.triplets, alpha),
        1 => {
            batch
                .robots
                .iter()
                .zip(&specs)
                .map(|((_, x), s)| reconstruction_loss(model, s, x).unwrap())
                .sum::<f64>()
                / specs.len() as f64
        }
        2 => latent_consistency_loss(model, &batch.human, &specs).unwrap(),
        _ => {
            let b = batch.num_pairs();
            let pairs: Vec<(&[f64], &[f64], f64)> = (0..b)
                .map(|i| {
                    (
                        batch.human.row(i).to_slice().unwrap(),
                        batch.human.row(b + i).to_slice().unwrap(),
                        batch.fps[i],
                    )
                })
                .collect();
            temporal_loss(model, &pairs, &specs).unwrap()
        }
    }
}

/// Relative error of the analytic gradient of latent loss term `term`
/// (index into [`LATENT_TERMS`]) against central differences.
pub fn latent_term_error(term: usize) -> f64 {
    let model = super::micro_model(&["tiago", "h1"]);
    let data = super::random_human_data(3, 6);
    let cfg = isolated(term);
    let batch = sample_batch(&model, &cfg, &data, &mut ChaCha8Rng::seed_from_u64(term as u64)).unwrap();
    let (loss, grads) = loss_and_grad(&model, &batch, &cfg, &Scope::Full).unwrap();
    assert!(loss.total > 0.0, "{} vanished on the probe batch", LATENT_TERMS[term]);
    super::fd_relative_error(&model.params, &grads.to_flat(), 1e-5, |p| {
        let mut m = model.clone();
        m.params = p.clone();
        standalone(&m, &batch, term, cfg.alpha)
    })
}

/// Same check for the c-VAE loss; a large KL weight keeps both terms visible.
pub fn cvae_error() -> f64 {
    let model = super::micro_model(&["arm3"]);
    let data = super::random_human_data(3, 6);
    let pd = PolicyDataset::new(&model, &data.motions, Segment::RA).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let samples = pd.sample(&mut rng, 5, 4);
    let eps = Array2::from_shape_fn((5, NOISE_DIM), |_| StandardNormal.sample(&mut rng));
    let cfg = PolicyConfig { layers: 2, width: 8, ..PolicyConfig::default() };
    let policy = PolicyModel::new(cfg, 20.0, 2).unwrap();
    let lambda = 0.3;
    let (_, grads) = cvae_loss_and_grad(&policy, &samples, &eps, lambda).unwrap();
    super::fd_relative_error(&policy.params, &grads.to_flat(), 1e-5, |p| {
        let probe = PolicyModel { params: p.clone(), ..policy.clone() };
        cvae_loss(&probe, &samples, &eps, lambda).unwrap().total
    })
}
