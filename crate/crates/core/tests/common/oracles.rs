//! Formula oracles shared by the unit tests and the acceptance run: each
//! returns the worst relative gap between the library and the reference.

use super::Reference;
use paegan::nnsub::{ParamStore, Tensor};
use paegan::paegan::{
    accumulate_sampler_gradients, averager_loss, draw_mask, pae_loss, ArchConfig, DiscriminatorModel, PaeModel,
    SamplerLossConfig, SamplerModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CASES: u64 = 100;

pub fn random_frames(rng: &mut impl Rng, steps: usize, px: usize) -> Vec<Vec<f32>> {
    (0..steps).map(|_| (0..px).map(|_| rng.random::<f32>()).collect()).collect()
}

pub fn widen(frames: &[Vec<f32>]) -> Vec<Vec<f64>> {
    frames.iter().map(|f| f.iter().map(|&v| f64::from(v)).collect()).collect()
}

/// Randomizes the discriminator's running statistics so the oracle covers
/// the normalization arithmetic.
pub fn perturb_bn(store: &mut ParamStore<f64>, rng: &mut impl Rng) {
    for bn in ["disc.bn2", "disc.bn3"] {
        for (k, lo, hi) in [("mean", -0.5, 0.5), ("var", 0.2, 2.0), ("gamma", 0.5, 1.5), ("beta", -0.3, 0.3)] {
            let key = format!("{bn}.{k}");
            let t = store.value_mut(&key).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(lo..hi));
        }
    }
}

pub struct Models {
    pub pae: PaeModel<f64>,
    pub sampler: SamplerModel<f64>,
    pub disc: DiscriminatorModel<f64>,
}

pub fn models(seed: u64) -> Models {
    let arch = ArchConfig::tiny();
    let mut disc = DiscriminatorModel::<f32>::new(arch.clone(), seed + 2).unwrap().cast::<f64>();
    perturb_bn(disc.store_mut(), &mut ChaCha8Rng::seed_from_u64(seed));
    Models {
        pae: PaeModel::<f32>::new(arch.clone(), seed).unwrap().cast(),
        sampler: SamplerModel::<f32>::new(arch, seed + 1).unwrap().cast(),
        disc,
    }
}

pub fn reference(m: &Models) -> Reference<'_> {
    Reference {
        arch: m.pae.arch(),
        pae: m.pae.store(),
        sampler: Some(m.sampler.store()),
        disc: Some(m.disc.store()),
    }
}

pub fn random_rows(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(&[rows, cols], |_| rng.random_range(-scale..scale))
}

pub fn gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    gap(a, b) <= tol
}

/// Masked PAE episode loss.
pub fn pae_loss_gap(cases: u64) -> f64 {
    let mut worst = 0.0f64;
    for case in 0..cases {
        let m = models(case);
        let r = reference(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let steps = rng.random_range(1..8);
        let frames = random_frames(&mut rng, steps, r.arch.pixels());
        let p = rng.random::<f64>();
        let mask = draw_mask(&mut rng, steps, p);
        let refs: Vec<&[f32]> = frames.iter().map(|f| f.as_slice()).collect();
        let got = pae_loss(&m.pae, &refs, &mask).unwrap();
        worst = worst.max(gap(got, r.pae_loss(&widen(&frames), &mask)));
    }
    worst
}

/// Averager loss of one belief.
pub fn averager_gap(cases: u64) -> f64 {
    let mut worst = 0.0f64;
    for case in 0..cases {
        let m = models(case);
        let r = reference(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + case);
        let a = r.arch;
        let n = rng.random_range(1..5);
        let horizon = rng.random_range(0..4);
        let bs = random_rows(&mut rng, 1, a.hidden_dim, 1.0);
        let noise = random_rows(&mut rng, n, a.noise_dim, 1.0);
        let got = averager_loss(&bs, &noise, horizon, &m.sampler, &m.pae).unwrap();
        let noises: Vec<Vec<f64>> = (0..n).map(|i| noise.row(i).to_vec()).collect();
        worst = worst.max(gap(got, r.averager_loss(bs.data(), &noises, horizon)));
    }
    worst
}

/// Both terms and the weighted total of the batch sampler objective.
pub fn sampler_objective_gap(cases: u64) -> f64 {
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut m = models(case);
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + case);
        let a = m.pae.arch().clone();
        let cfg = SamplerLossConfig {
            n_samples: rng.random_range(1..4),
            lambda_g: rng.random_range(0.1..2.0),
            lambda_av: rng.random_range(1.0..600.0),
            ..SamplerLossConfig::default()
        };
        let (b, n) = (rng.random_range(1..4), cfg.n_samples);
        let horizon = rng.random_range(0..3);
        let bs = random_rows(&mut rng, b, a.hidden_dim, 1.0);
        let noise = random_rows(&mut rng, b * n, a.noise_dim, 1.0);
        let (want_g, want_av) = {
            let r = reference(&m);
            let mut lav = 0.0;
            for i in 0..b {
                let nz: Vec<Vec<f64>> = (0..n).map(|j| noise.row(i * n + j).to_vec()).collect();
                lav += r.averager_loss(bs.row(i), &nz, horizon);
            }
            let rep: Vec<Vec<f64>> = (0..b * n).map(|i| bs.row(i / n).to_vec()).collect();
            let nz: Vec<Vec<f64>> = (0..b * n).map(|i| noise.row(i).to_vec()).collect();
            (r.generator_loss(&rep, &nz), lav / b as f64)
        };
        let out = accumulate_sampler_gradients(&m.pae, &mut m.sampler, &m.disc, &bs, &noise, horizon, &cfg).unwrap();
        assert_eq!(out.fakes.shape(), &[b * n, a.pixels()]);
        let total = cfg.lambda_g * want_g + cfg.lambda_av * want_av;
        worst = worst.max(gap(out.l_g, want_g)).max(gap(out.l_av, want_av)).max(gap(out.total, total));
    }
    worst
}
