use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{draw_noise, image_batch};
use super::net::{self, Bound, Mode, Norm};
use super::schedule::draw_mask;
use super::{DiscriminatorModel, PaeModel, SamplerModel};
use crate::ballworld::EpisodeSet;
use crate::error::{Error, Result};
use crate::nnsub::kernels::bce_loss;
use crate::nnsub::{adam_step, AdamConfig, Graph, ParamStore, Scalar, Tensor, Var};
use crate::seed::{self, tag};

/// Momentum of the discriminator's running batch-norm statistics.
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerLossConfig {
    pub lambda_g: f64,
    pub lambda_av: f64,
    /// Samples per belief in the averager term.
    pub n_samples: usize,
    /// Blind horizon of the averager term, drawn uniformly from `0..=max_horizon`.
    pub max_horizon: usize,
}

impl Default for SamplerLossConfig {
    fn default() -> Self {
        SamplerLossConfig {
            lambda_g: 1.0,
            lambda_av: 500.0,
            n_samples: 8,
            max_horizon: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSamplerConfig {
    pub updates: u64,
    /// Beliefs per update.
    pub batch_size: usize,
    pub loss: SamplerLossConfig,
    pub d_update_period: u64,
    /// Episodes run through the frozen PAE to build the belief bank.
    pub bank_episodes: usize,
    pub bank_p_mask: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl TrainSamplerConfig {
    pub fn new(updates: u64, batch_size: usize, seed: u64) -> Self {
        TrainSamplerConfig {
            updates,
            batch_size,
            loss: SamplerLossConfig::default(),
            d_update_period: 2,
            bank_episodes: 200,
            bank_p_mask: super::CurriculumSchedule::P_END,
            adam: AdamConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.loss.n_samples == 0 || self.d_update_period == 0 || self.bank_episodes == 0 {
            return Err(Error::Config(
                "batch_size, n_samples, d_update_period and bank_episodes must be positive".into(),
            ));
        }
        if self.loss.lambda_g < 0.0 || self.loss.lambda_av < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerLogRow {
    pub update: u64,
    pub horizon: usize,
    pub l_g: f64,
    pub l_av: f64,
    /// Present on discriminator updates.
    pub l_d: Option<f64>,
    /// Discriminator accuracy on the batch it was trained on.
    pub d_accuracy: Option<f64>,
    pub wall_time: f64,
}

/// Generator loss: mean BCE of the discriminator's verdicts on the decoded
/// samples against the "real" label. The discriminator normalizes with the
/// statistics of this batch of samples, as in its own training step.
pub fn generator_loss<T: Scalar>(
    bs: &Tensor<T>,
    noise: &Tensor<T>,
    sampler: &SamplerModel<T>,
    pae: &PaeModel<T>,
    disc: &DiscriminatorModel<T>,
) -> Result<f64> {
    let img = pae.decode_batch(&sampler.sample_batch(bs, noise)?)?;
    let p = disc.batch_probabilities(&img)?;
    Ok(p.iter().map(|&p| bce_loss(p, 1.0)).sum::<f64>() / p.len() as f64)
}

/// Averager loss of one belief `bs` (`[1, H]`) and `n` noise rows: squared
/// distance between the decoded `horizon`-step blind propagation of `bs`
/// and the mean decoded propagation of its samples.
pub fn averager_loss<T: Scalar>(
    bs: &Tensor<T>,
    noises: &Tensor<T>,
    horizon: usize,
    sampler: &SamplerModel<T>,
    pae: &PaeModel<T>,
) -> Result<f64> {
    let n = noises.rows();
    if n == 0 || bs.rows() != 1 {
        return Err(Error::Config("averager_loss needs one belief and n >= 1 samples".into()));
    }
    let target = pae.decode_batch(&pae.blind_batch(bs, horizon)?)?;
    let rows = Tensor::from_fn(&[n, bs.len()], |i| bs.data()[i % bs.len()]);
    let s = pae.blind_batch(&sampler.sample_batch(&rows, noises)?, horizon)?;
    let imgs = pae.decode_batch(&s)?;
    let px = target.len();
    let mut total = 0.0;
    for k in 0..px {
        let mean = (0..n).map(|i| imgs.row(i)[k].f64()).sum::<f64>() / n as f64;
        total += (target.data()[k].f64() - mean).powi(2);
    }
    Ok(total)
}

pub fn sampler_loss(l_g: f64, l_av: f64, cfg: &SamplerLossConfig) -> f64 {
    cfg.lambda_g * l_g + cfg.lambda_av * l_av
}

/// Nodes of one recorded sampler objective.
pub(crate) struct SamplerObjective {
    pub total: Var,
    pub l_g: Var,
    pub l_av: Var,
    /// Decoded samples `[B*n, 1, S, S]`.
    pub fakes: Var,
}

/// Records the batch sampler objective: `L_G` is the mean BCE over all
/// `B*n` samples (discriminator on batch statistics), `L_Av` the mean over
/// the `B` beliefs. Sample row
/// `i * n + j` is sample `j` of belief `i`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sampler_objective<T: Scalar>(
    g: &mut Graph<T>,
    sampler: &Bound,
    pae_b: &Bound,
    pae: &PaeModel<T>,
    disc_b: &Bound,
    bs: &Tensor<T>,
    noise: &Tensor<T>,
    horizon: usize,
    cfg: &SamplerLossConfig,
) -> Result<SamplerObjective> {
    let arch = pae.arch();
    let (b, n, hd) = (bs.rows(), cfg.n_samples, arch.hidden_dim);
    if noise.rows() != b * n {
        return Err(Error::Length(format!("{} noise rows for {b} beliefs x {n} samples", noise.rows())));
    }
    let target = pae.decode_batch(&pae.blind_batch(bs, horizon)?)?;
    let rep = Tensor::from_fn(&[b * n, hd], |i| bs.data()[(i / (n * hd)) * hd + i % hd]);
    let rep = g.constant(rep);
    let nz = g.constant(noise.clone());
    let s = net::sampler(g, sampler, rep, nz)?;
    let fakes = net::decode(g, pae_b, arch, s)?;
    let (probs, _) = net::discriminator(g, disc_b, fakes, &Norm::Batch)?;
    let l_g = g.mean_bce(probs, &vec![1.0; b * n])?;

    let mut sh = s;
    if horizon > 0 {
        let null = vec![0.0f32; arch.pixels()];
        let x = g.constant(image_batch(arch.image_size, &[&null])?);
        let f = net::encode(g, pae_b, x)?;
        let xp1 = net::gru_input(g, pae_b, f)?;
        let xp = g.gather_rows(xp1, vec![0; b * n])?;
        for _ in 0..horizon {
            sh = net::gru_step(g, pae_b, xp, sh)?;
        }
    }
    let decoded = if horizon > 0 { net::decode(g, pae_b, arch, sh)? } else { fakes };
    let flat = g.reshape(decoded, &[b * n, arch.pixels()])?;
    let mean = g.group_mean(flat, n)?;
    let t = g.constant(target);
    let sse = g.sum_squared_error(mean, t)?;
    let l_av = g.affine(sse, 1.0 / b as f64, 0.0);
    let wg = g.affine(l_g, cfg.lambda_g, 0.0);
    let wa = g.affine(l_av, cfg.lambda_av, 0.0);
    let total = g.add(wg, wa)?;
    Ok(SamplerObjective { total, l_g, l_av, fakes })
}

/// Values of one batch sampler objective.
#[derive(Debug, Clone)]
pub struct SamplerBatch<T: Scalar> {
    pub total: f64,
    pub l_g: f64,
    pub l_av: f64,
    /// Decoded samples `[B*n, S*S]`.
    pub fakes: Tensor<T>,
}

/// Records the sampler objective for beliefs `bs` (`[B, H]`) and noise
/// (`[B*n, noise_dim]`, row `i*n + j` is sample `j` of belief `i`) and adds
/// its gradient to the sampler's store. The PAE and discriminator are
/// constants.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_sampler_gradients<T: Scalar>(
    pae: &PaeModel<T>,
    sampler: &mut SamplerModel<T>,
    disc: &DiscriminatorModel<T>,
    bs: &Tensor<T>,
    noise: &Tensor<T>,
    horizon: usize,
    cfg: &SamplerLossConfig,
) -> Result<SamplerBatch<T>> {
    let mut g = Graph::new();
    let ps = Bound::new(&mut g, sampler.store(), Mode::Train)?;
    let pp = Bound::new(&mut g, pae.store(), Mode::Frozen)?;
    let pd = Bound::new(&mut g, disc.store(), Mode::Frozen)?;
    let obj = sampler_objective(&mut g, &ps, &pp, pae, &pd, bs, noise, horizon, cfg)?;
    let out = SamplerBatch {
        total: g.value(obj.total).item().f64(),
        l_g: g.value(obj.l_g).item().f64(),
        l_av: g.value(obj.l_av).item().f64(),
        fakes: g.value(obj.fakes).clone().reshape(&[noise.rows(), pae.arch().pixels()])?,
    };
    g.backward_into(obj.total, sampler.store_mut())?;
    Ok(out)
}

/// Beliefs of the frozen PAE over `episodes` random dataset episodes, inputs
/// masked at `p_mask` (first frame kept): `[episodes * steps, H]`.
pub fn belief_bank<T: Scalar>(
    pae: &PaeModel<T>,
    data: &EpisodeSet,
    episodes: usize,
    p_mask: f64,
    seed: u64,
) -> Result<Tensor<T>> {
    if data.episodes == 0 || episodes == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = seed::rng_for(seed, tag::BANK, 0);
    let idx: Vec<usize> = (0..episodes).map(|_| rng.random_range(0..data.episodes)).collect();
    let masks: Vec<Vec<bool>> = idx.iter().map(|_| draw_mask(&mut rng, data.steps, p_mask)).collect();
    let hd = pae.arch().hidden_dim;
    let mut bank = vec![T::zero(); episodes * data.steps * hd];
    let mut h = pae.zero_beliefs(episodes);
    for t in 0..data.steps {
        let obs: Vec<Option<&[f32]>> = idx
            .iter()
            .zip(&masks)
            .map(|(&e, m)| (!m[t]).then(|| data.frame(e, t)))
            .collect();
        h = pae.propagate_batch(&h, &obs)?;
        for e in 0..episodes {
            let at = (e * data.steps + t) * hd;
            bank[at..at + hd].copy_from_slice(h.row(e));
        }
    }
    Tensor::new(&[episodes * data.steps, hd], bank)
}

fn update_running_stats<T: Scalar>(disc: &mut ParamStore<T>, stats: &[net::BnBatch<T>]) -> Result<()> {
    for (name, mean, var, count) in stats {
        let unbias = if *count > 1 { *count as f64 / (*count as f64 - 1.0) } else { 1.0 };
        let m = disc.value_mut(&format!("{name}.mean"))?;
        for (r, &b) in m.data_mut().iter_mut().zip(mean) {
            *r = T::of((1.0 - BN_MOMENTUM) * r.f64() + BN_MOMENTUM * b.f64());
        }
        let v = disc.value_mut(&format!("{name}.var"))?;
        for (r, &b) in v.data_mut().iter_mut().zip(var) {
            *r = T::of((1.0 - BN_MOMENTUM) * r.f64() + BN_MOMENTUM * b.f64() * unbias);
        }
    }
    Ok(())
}

/// One discriminator step on real frames versus detached fakes; returns the
/// loss and the batch accuracy.
pub fn discriminator_step<T: Scalar>(
    disc: &mut DiscriminatorModel<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    adam: &AdamConfig,
) -> Result<(f64, f64)> {
    let s = disc.arch().image_size;
    let mut g = Graph::new();
    let p = Bound::new(&mut g, disc.store(), Mode::Train)?;
    let mut losses = Vec::new();
    let mut correct = 0usize;
    let mut all_stats = Vec::new();
    for (images, label) in [(real, 1.0), (fake, 0.0)] {
        let n = images.rows();
        let x = g.constant(images.clone().reshape(&[n, 1, s, s])?);
        let (probs, stats) = net::discriminator(&mut g, &p, x, &Norm::Batch)?;
        correct += g
            .value(probs)
            .data()
            .iter()
            .filter(|&&v| (v.f64() > 0.5) == (label == 1.0))
            .count();
        losses.push(g.mean_bce(probs, &vec![label; n])?);
        all_stats.extend(stats);
    }
    let loss = g.add(losses[0], losses[1])?;
    let value = g.value(loss).item().f64();
    g.backward_into(loss, disc.store_mut())?;
    drop(g);
    adam_step(disc.store_mut(), adam);
    update_running_stats(disc.store_mut(), &all_stats)?;
    Ok((value, correct as f64 / (real.rows() + fake.rows()) as f64))
}

/// Alternating sampler / discriminator training with the PAE frozen.
/// Runs updates `start..cfg.updates`; `bank` comes from [`belief_bank`].
#[allow(clippy::too_many_arguments)]
pub fn train_sampler_gan<T: Scalar>(
    pae: &PaeModel<T>,
    sampler: &mut SamplerModel<T>,
    disc: &mut DiscriminatorModel<T>,
    data: &EpisodeSet,
    bank: &Tensor<T>,
    cfg: &TrainSamplerConfig,
    start: u64,
    mut on_row: impl FnMut(&SamplerModel<T>, &DiscriminatorModel<T>, &SamplerLogRow) -> Result<()>,
) -> Result<Vec<SamplerLogRow>> {
    cfg.validate()?;
    if data.episodes == 0 {
        return Err(Error::EmptyDataset);
    }
    let arch = pae.arch();
    if sampler.arch() != arch || disc.arch() != arch || data.pixels() != arch.pixels() {
        return Err(Error::Config("PAE, sampler, discriminator and dataset disagree on sizes".into()));
    }
    let clock = Instant::now();
    let (b, n, hd) = (cfg.batch_size, cfg.loss.n_samples, arch.hidden_dim);
    let mut log = Vec::new();
    for update in start..cfg.updates {
        let mut rng = seed::rng_for(cfg.seed, tag::GAN_UPDATE, update);
        let rows: Vec<usize> = (0..b).map(|_| rng.random_range(0..bank.rows())).collect();
        let bs = Tensor::new(&[b, hd], rows.iter().flat_map(|&r| bank.row(r).to_vec()).collect())?;
        let horizon = rng.random_range(0..=cfg.loss.max_horizon);
        let noise = draw_noise(&mut rng, b * n, arch.noise_dim);

        let batch = accumulate_sampler_gradients(pae, sampler, disc, &bs, &noise, horizon, &cfg.loss)?;
        let (l_g, l_av, fake) = (batch.l_g, batch.l_av, batch.fakes);
        adam_step(sampler.store_mut(), &cfg.adam);

        let (mut l_d, mut d_accuracy) = (None, None);
        if update % cfg.d_update_period == 0 {
            let frames: Vec<&[f32]> = (0..b * n)
                .map(|_| data.frame(rng.random_range(0..data.episodes), rng.random_range(0..data.steps)))
                .collect();
            let real = image_batch::<T>(arch.image_size, &frames)?.reshape(&[b * n, arch.pixels()])?;
            let (l, acc) = discriminator_step(disc, &real, &fake, &cfg.adam)?;
            l_d = Some(l);
            d_accuracy = Some(acc);
        }
        let row = SamplerLogRow {
            update,
            horizon,
            l_g,
            l_av,
            l_d,
            d_accuracy,
            wall_time: clock.elapsed().as_secs_f64(),
        };
        on_row(sampler, disc, &row)?;
        log.push(row);
    }
    Ok(log)
}
