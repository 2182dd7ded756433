use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::net::{self, Bound, Mode};
use super::schedule::{draw_mask, mask_probability, CurriculumSchedule};
use super::PaeModel;
use crate::ballworld::EpisodeSet;
use crate::error::{Error, Result};
use crate::nnsub::{adam_step, AdamConfig, Graph, Scalar, Tensor, Var};
use crate::seed::{self, tag};
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPaeConfig {
    pub updates: u64,
    /// Episodes per update.
    pub batch_size: usize,
    pub schedule: CurriculumSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl TrainPaeConfig {
    pub fn new(updates: u64, batch_size: usize, seed: u64) -> Self {
        TrainPaeConfig {
            updates,
            batch_size,
            schedule: CurriculumSchedule::for_updates(updates),
            adam: AdamConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.schedule.validate()?;
        self.adam.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaeLogRow {
    pub update: u64,
    pub p_mask: f64,
    pub loss: f64,
    pub wall_time: f64,
}

/// Records the summed squared error of `B` episodes of equal length
/// (inputs replaced by the null frame where masked) and returns it divided
/// by `B`.
pub(crate) fn pae_batch_loss<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound,
    pae: &PaeModel<T>,
    episodes: &[&[f32]],
    masks: &[Vec<bool>],
) -> Result<Var> {
    let arch = pae.arch();
    let px = arch.pixels();
    let b = episodes.len();
    if b == 0 || masks.len() != b {
        return Err(Error::Length(format!("{b} episodes with {} masks", masks.len())));
    }
    let steps = masks[0].len();
    for (e, m) in episodes.iter().zip(masks) {
        if m.len() != steps || e.len() != steps * px || steps == 0 {
            return Err(Error::Length(format!(
                "episode of {} pixels with a {}-step mask ({} expected)",
                e.len(),
                m.len(),
                steps
            )));
        }
    }
    // Encode every unmasked frame plus one null frame in a single pass.
    let mut frames: Vec<&[f32]> = Vec::new();
    let mut row_of = vec![usize::MAX; steps * b];
    for t in 0..steps {
        for e in 0..b {
            if !masks[e][t] {
                row_of[t * b + e] = frames.len();
                frames.push(&episodes[e][t * px..(t + 1) * px]);
            }
        }
    }
    let null_row = frames.len();
    let null = vec![0.0f32; px];
    frames.push(&null);
    let x = g.constant(super::model::image_batch(arch.image_size, &frames)?);
    let feats = net::encode(g, p, x)?;
    let xp_all = net::gru_input(g, p, feats)?;
    let index = row_of.iter().map(|&r| if r == usize::MAX { null_row } else { r }).collect();
    let xp = g.gather_rows(xp_all, index)?;

    let mut h = g.constant(pae.zero_beliefs(b));
    let mut hs = Vec::with_capacity(steps);
    for t in 0..steps {
        let xp_t = g.slice_rows(xp, t * b, b)?;
        h = net::gru_step(g, p, xp_t, h)?;
        hs.push(h);
    }
    let all_h = g.concat_rows(&hs)?;
    let decoded = net::decode(g, p, arch, all_h)?;
    let mut target = Vec::with_capacity(steps * b * px);
    for t in 0..steps {
        for e in episodes {
            target.extend(e[t * px..(t + 1) * px].iter().map(|&v| T::of(f64::from(v))));
        }
    }
    let s = arch.image_size;
    let target = g.constant(Tensor::new(&[steps * b, 1, s, s], target)?);
    let sse = g.sum_squared_error(decoded, target)?;
    Ok(g.affine(sse, 1.0 / b as f64, 0.0))
}

/// Summed squared prediction error of one episode: the belief starts at
/// zero, each input is the frame or (where `mask[t]`) the null frame, and
/// the target is always the true frame.
pub fn pae_loss<T: Scalar>(pae: &PaeModel<T>, frames: &[&[f32]], mask: &[bool]) -> Result<f64> {
    if frames.len() != mask.len() {
        return Err(Error::Length(format!("{} frames with a {}-step mask", frames.len(), mask.len())));
    }
    let mut h = pae.zero_beliefs(1);
    let mut total = 0.0;
    for (f, &m) in frames.iter().zip(mask) {
        h = pae.propagate_batch(&h, &[(!m).then_some(*f)])?;
        let o = pae.decode_batch(&h)?;
        total += o
            .data()
            .iter()
            .zip(f.iter())
            .map(|(&a, &b)| (a.f64() - f64::from(b)).powi(2))
            .sum::<f64>();
    }
    Ok(total)
}

/// Episode indices and masks for one update, from the update's own stream.
pub fn pae_minibatch(data: &EpisodeSet, cfg: &TrainPaeConfig, update: u64) -> (Vec<usize>, Vec<Vec<bool>>, f64) {
    let mut rng = seed::rng_for(cfg.seed, tag::PAE_UPDATE, update);
    let p = mask_probability(update, &cfg.schedule);
    let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..data.episodes)).collect();
    let masks = idx.iter().map(|_| draw_mask(&mut rng, data.steps, p)).collect();
    (idx, masks, p)
}

/// Batch objective (summed squared error divided by the number of
/// episodes) with gradients added to the model's store.
pub fn accumulate_pae_gradients<T: Scalar>(pae: &mut PaeModel<T>, episodes: &[&[f32]], masks: &[Vec<bool>]) -> Result<f64> {
    let mut g = Graph::new();
    let bound = Bound::new(&mut g, pae.store(), Mode::Train)?;
    let loss = pae_batch_loss(&mut g, &bound, pae, episodes, masks)?;
    let value = g.value(loss).item().f64();
    g.backward_into(loss, pae.store_mut())?;
    Ok(value)
}

/// One optimizer step; returns the batch loss and mask probability.
pub fn pae_update<T: Scalar>(pae: &mut PaeModel<T>, data: &EpisodeSet, cfg: &TrainPaeConfig, update: u64) -> Result<(f64, f64)> {
    let (idx, masks, p) = pae_minibatch(data, cfg, update);
    let episodes: Vec<&[f32]> = idx.iter().map(|&e| data.episode_frames(e)).collect();
    let value = accumulate_pae_gradients(pae, &episodes, &masks)?;
    adam_step(pae.store_mut(), &cfg.adam);
    Ok((value, p))
}

/// Runs updates `start..cfg.updates`, calling `on_row` after each.
pub fn train_pae<T: Scalar>(
    pae: &mut PaeModel<T>,
    data: &EpisodeSet,
    cfg: &TrainPaeConfig,
    start: u64,
    mut on_row: impl FnMut(&PaeModel<T>, &PaeLogRow) -> Result<()>,
) -> Result<Vec<PaeLogRow>> {
    cfg.validate()?;
    if data.episodes == 0 || data.steps == 0 {
        return Err(Error::EmptyDataset);
    }
    if data.pixels() != pae.arch().pixels() {
        return Err(Error::Config(format!(
            "dataset frames have {} pixels, model expects {}",
            data.pixels(),
            pae.arch().pixels()
        )));
    }
    let clock = Instant::now();
    let mut log = Vec::new();
    for update in start..cfg.updates {
        let (loss, p_mask) = pae_update(pae, data, cfg, update)?;
        let row = PaeLogRow {
            update,
            p_mask,
            loss,
            wall_time: clock.elapsed().as_secs_f64(),
        };
        on_row(pae, &row)?;
        log.push(row);
    }
    Ok(log)
}
