//! Tracking protocols, MSE-versus-horizon curves, the uninformed baseline,
//! CSV export and frame strips.
//!
//! Both trackers see one shared availability schedule: the first
//! `warmup_obs` steps are always observed, after which each step is observed
//! with probability `obs_probability`. PAEGAN receives the rendered frame,
//! the particle filter a noisy position measurement of the same step.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ballworld::{self, EnvState, EpisodeSet, Observation, RngState};
use crate::container;
use crate::error::{Error, Result};
use crate::nnsub::Tensor;
use crate::paegan::{draw_noise, PaeModel, SamplerModel};
use crate::pfilter::{self, PfConfig};
use crate::seed::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub warmup_obs: usize,
    pub horizon: usize,
    pub obs_probability: f64,
    pub num_eval_episodes: usize,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            warmup_obs: 8,
            horizon: 160,
            obs_probability: 0.0,
            num_eval_episodes: 20,
            seed: 0,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_obs < 1 || self.horizon < 1 {
            return Err(Error::Config("warmup_obs and horizon must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.obs_probability) {
            return Err(Error::Config(format!(
                "obs_probability must be in [0, 1], got {}",
                self.obs_probability
            )));
        }
        if self.num_eval_episodes < 1 {
            return Err(Error::Config("num_eval_episodes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.warmup_obs + self.horizon
    }
}

/// Pixelwise mean over every frame of every episode.
pub fn uninformed_baseline(data: &EpisodeSet) -> Result<Observation> {
    let px = data.pixels();
    if data.frames().is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = vec![0.0f64; px];
    let mut n = 0usize;
    for f in data.frames().chunks_exact(px) {
        for (s, &v) in sum.iter_mut().zip(f) {
            *s += f64::from(v);
        }
        n += 1;
    }
    Observation::from_pixels(data.cfg.image_size, sum.iter().map(|&s| (s / n as f64) as f32).collect())
}

/// Which steps of episode `episode` are observed.
pub fn availability_schedule(p: &ProtocolConfig, episode: usize) -> Vec<bool> {
    let mut rng = seed::rng_for(p.seed, tag::SCHEDULE, episode as u64);
    (0..p.total_steps())
        .map(|t| t < p.warmup_obs || rng.random_bool(p.obs_probability))
        .collect()
}

/// Names of the five image rows kept per step.
pub const RECORD_ROWS: [&str; 5] = ["truth", "pf_expected", "pf_sample", "paegan_expected", "paegan_sample"];

/// Per-step images of one tracked episode, one flat `[steps * pixels]`
/// array per entry of [`RECORD_ROWS`].
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub schedule: Vec<bool>,
    pub size: usize,
    pub rows: [Vec<f32>; 5],
    /// Number of updates in which every particle likelihood underflowed.
    pub pf_divergences: usize,
}

impl EpisodeRecord {
    pub fn steps(&self) -> usize {
        self.schedule.len()
    }

    pub fn image(&self, row: usize, t: usize) -> &[f32] {
        let px = self.size * self.size;
        &self.rows[row][t * px..(t + 1) * px]
    }
}

pub struct Trackers<'a> {
    pub pae: &'a PaeModel<f32>,
    /// Without a sampler the PAEGAN sample row is left blank.
    pub sampler: Option<&'a SamplerModel<f32>>,
    pub pf: &'a PfConfig,
}

fn check_episode_set(p: &ProtocolConfig, data: &EpisodeSet) -> Result<()> {
    if data.steps < p.total_steps() {
        return Err(Error::Length(format!(
            "protocol needs {} steps per episode, dataset has {}",
            p.total_steps(),
            data.steps
        )));
    }
    if !data.has_states() {
        return Err(Error::Config("evaluation episodes need ground-truth states".into()));
    }
    if p.num_eval_episodes > data.episodes {
        return Err(Error::Config(format!(
            "{} evaluation episodes requested, dataset has {}",
            p.num_eval_episodes, data.episodes
        )));
    }
    Ok(())
}

/// Runs the particle filter over one episode; returns the expected and
/// sampled observations per step and the divergence count.
fn track_pf(
    p: &ProtocolConfig,
    states: &[EnvState],
    schedule: &[bool],
    cfg: &PfConfig,
    episode: usize,
) -> Result<(Vec<f32>, Vec<f32>, usize)> {
    let mut rng = seed::rng_for(p.seed, tag::PF, episode as u64);
    let mut meas = RngState::new(seed::derive(p.seed, tag::MEASURE, episode as u64), cfg.world.num_balls);
    let mut current = None;
    let (mut expected, mut sampled, mut diverged) = (Vec::new(), Vec::new(), 0);
    for (&seen, s) in schedule.iter().zip(states) {
        let z = seen.then(|| ballworld::measure(s, &cfg.world, &mut meas));
        let (ps, out) = pfilter::pf_step(current.take(), z.as_ref(), cfg, &mut rng)?;
        diverged += usize::from(out.is_some_and(|o| o.diverged));
        expected.extend(pfilter::pf_expected_observation(&ps, cfg).pixels);
        sampled.extend(pfilter::pf_sample_observation(&ps, cfg, &mut rng).pixels);
        current = Some(ps);
    }
    Ok((expected, sampled, diverged))
}

/// Tracks the first `num_eval_episodes` episodes of `data` with both
/// trackers under the shared schedule.
pub fn run_tracking(p: &ProtocolConfig, data: &EpisodeSet, trackers: &Trackers<'_>) -> Result<Vec<EpisodeRecord>> {
    p.validate()?;
    check_episode_set(p, data)?;
    let arch = trackers.pae.arch();
    if arch.pixels() != data.pixels() {
        return Err(Error::Config("model and dataset image sizes differ".into()));
    }
    let (n, steps, px) = (p.num_eval_episodes, p.total_steps(), data.pixels());
    let schedules: Vec<Vec<bool>> = (0..n).map(|e| availability_schedule(p, e)).collect();

    let pf: Vec<(Vec<f32>, Vec<f32>, usize)> = (0..n)
        .into_par_iter()
        .map(|e| track_pf(p, &data.states(e).expect("checked")[..steps], &schedules[e], trackers.pf, e))
        .collect::<Result<_>>()?;

    // PAEGAN runs all episodes as one batch.
    let mut noise_rng = seed::rng_for(p.seed, tag::SAMPLE, 0);
    let mut h = trackers.pae.zero_beliefs(n);
    let mut expected = vec![Vec::with_capacity(steps * px); n];
    let mut sampled = vec![Vec::with_capacity(steps * px); n];
    for t in 0..steps {
        let obs: Vec<Option<&[f32]>> = (0..n).map(|e| schedules[e][t].then(|| data.frame(e, t))).collect();
        h = trackers.pae.propagate_batch(&h, &obs)?;
        let dec = trackers.pae.decode_batch(&h)?;
        let samples = match trackers.sampler {
            Some(s) => {
                let noise: Tensor<f32> = draw_noise(&mut noise_rng, n, arch.noise_dim);
                Some(trackers.pae.decode_batch(&s.sample_batch(&h, &noise)?)?)
            }
            None => None,
        };
        for e in 0..n {
            expected[e].extend_from_slice(dec.row(e));
            match &samples {
                Some(s) => sampled[e].extend_from_slice(s.row(e)),
                None => sampled[e].extend(std::iter::repeat_n(0.0, px)),
            }
        }
    }

    let mut out = Vec::with_capacity(n);
    for (e, ((pf_exp, pf_smp, div), (pe, ps))) in pf.into_iter().zip(expected.into_iter().zip(sampled)).enumerate() {
        let truth: Vec<f32> = data.states(e).expect("checked")[..steps]
            .iter()
            .flat_map(|s| ballworld::render(s, &data.cfg).pixels)
            .collect();
        out.push(EpisodeRecord {
            episode: e,
            schedule: schedules[e].clone(),
            size: data.cfg.image_size,
            rows: [truth, pf_exp, pf_smp, pe, ps],
            pf_divergences: div,
        });
    }
    Ok(out)
}

/// Per-step mean squared error (summed over pixels) over episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MseCurve {
    pub mse_paegan: Vec<f64>,
    pub mse_pf: Vec<f64>,
    pub mse_baseline: Vec<f64>,
}

fn sse(a: &[f32], b: &[f32]) -> f64 {
    ballworld::sq_error(a, b)
}

/// Curves over the `horizon` steps following the warm-up.
pub fn mse_curve(records: &[EpisodeRecord], baseline: &Observation, warmup: usize) -> Result<MseCurve> {
    let first = records.first().ok_or(Error::EmptyDataset)?;
    let steps = first.steps();
    if warmup >= steps || records.iter().any(|r| r.steps() != steps) {
        return Err(Error::Length("records must share a length longer than the warm-up".into()));
    }
    let horizon = steps - warmup;
    let mut c = MseCurve {
        mse_paegan: vec![0.0; horizon],
        mse_pf: vec![0.0; horizon],
        mse_baseline: vec![0.0; horizon],
    };
    let n = records.len() as f64;
    for r in records {
        for k in 0..horizon {
            let t = warmup + k;
            let truth = r.image(0, t);
            c.mse_pf[k] += sse(r.image(1, t), truth) / n;
            c.mse_paegan[k] += sse(r.image(3, t), truth) / n;
            c.mse_baseline[k] += sse(&baseline.pixels, truth) / n;
        }
    }
    Ok(c)
}

impl MseCurve {
    pub fn len(&self) -> usize {
        self.mse_paegan.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mse_paegan.is_empty()
    }

    /// CSV text with one row per blind step `t = 1..=horizon`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,mse_paegan,mse_pf,mse_baseline\n");
        for k in 0..self.len() {
            s.push_str(&format!(
                "{},{:.8e},{:.8e},{:.8e}\n",
                k + 1,
                self.mse_paegan[k],
                self.mse_pf[k],
                self.mse_baseline[k]
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Mean binary entropy (nats) of the pixel intensities; 0 for a crisp
/// black-and-white image, `ln 2` for uniform grey 0.5.
pub fn image_entropy(pixels: &[f32]) -> f64 {
    let h = |p: f64| if p <= 0.0 || p >= 1.0 { 0.0 } else { -p * p.ln() - (1.0 - p) * (1.0 - p).ln() };
    pixels.iter().map(|&p| h(f64::from(p))).sum::<f64>() / pixels.len().max(1) as f64
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Least-squares slope of `v` against its index.
pub fn slope(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = mean(v);
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &y) in v.iter().enumerate() {
        let dx = i as f64 - xm;
        num += dx * (y - ym);
        den += dx * dx;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordsHeader {
    format: String,
    size: usize,
    steps: usize,
    warmup: usize,
    rows: Vec<String>,
    episodes: Vec<usize>,
    schedules: Vec<Vec<bool>>,
    pf_divergences: Vec<usize>,
}

const RECORDS_FORMAT: &str = "paegan-records-v1";

/// Writes records as a container: JSON header, then per episode the five
/// rows in [`RECORD_ROWS`] order.
pub fn save_records(path: &Path, records: &[EpisodeRecord], warmup: usize) -> Result<()> {
    let first = records.first().ok_or(Error::EmptyDataset)?;
    let header = RecordsHeader {
        format: RECORDS_FORMAT.into(),
        size: first.size,
        steps: first.steps(),
        warmup,
        rows: RECORD_ROWS.iter().map(|s| s.to_string()).collect(),
        episodes: records.iter().map(|r| r.episode).collect(),
        schedules: records.iter().map(|r| r.schedule.clone()).collect(),
        pf_divergences: records.iter().map(|r| r.pf_divergences).collect(),
    };
    let payload: Vec<f32> = records.iter().flat_map(|r| r.rows.iter().flatten().copied()).collect();
    container::write(path, &header, &payload)
}

/// Reads records and the warm-up length they were produced with.
pub fn load_records(path: &Path) -> Result<(Vec<EpisodeRecord>, usize)> {
    let (h, payload): (RecordsHeader, Vec<f32>) = container::read(path)?;
    let per_row = h.steps * h.size * h.size;
    if h.format != RECORDS_FORMAT
        || h.schedules.len() != h.episodes.len()
        || payload.len() != h.episodes.len() * 5 * per_row
    {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "records header and payload disagree".into(),
        });
    }
    let mut chunks = payload.chunks_exact(per_row);
    let mut out = Vec::new();
    for (i, &episode) in h.episodes.iter().enumerate() {
        let rows = std::array::from_fn(|_| chunks.next().expect("length checked").to_vec());
        out.push(EpisodeRecord {
            episode,
            schedule: h.schedules[i].clone(),
            size: h.size,
            rows,
            pf_divergences: h.pf_divergences.get(i).copied().unwrap_or(0),
        });
    }
    Ok((out, h.warmup))
}

/// Frame strip: rows follow [`RECORD_ROWS`], columns every `stride`-th step
/// after the warm-up. Returns `(width, height, pixels)`.
pub fn strip_image(record: &EpisodeRecord, warmup: usize, stride: usize) -> Result<(usize, usize, Vec<f32>)> {
    if stride == 0 || warmup >= record.steps() {
        return Err(Error::Config("stride must be positive and the warm-up shorter than the record".into()));
    }
    let s = record.size;
    let times: Vec<usize> = (warmup..record.steps()).step_by(stride).collect();
    let (w, h) = (times.len() * s, 5 * s);
    let mut px = vec![0.0f32; w * h];
    for row in 0..5 {
        for (col, &t) in times.iter().enumerate() {
            let img = record.image(row, t);
            for y in 0..s {
                let dst = (row * s + y) * w + col * s;
                px[dst..dst + s].copy_from_slice(&img[y * s..(y + 1) * s]);
            }
        }
    }
    Ok((w, h, px))
}

/// Writes [`strip_image`] of `record` as a PGM.
pub fn render_strip(record: &EpisodeRecord, warmup: usize, stride: usize, path: &Path) -> Result<(usize, usize)> {
    let (w, h, px) = strip_image(record, warmup, stride)?;
    container::write_pgm(path, w, h, &px)?;
    Ok((w, h))
}

/// Writes `(name, value)` pairs as a two-column CSV.
pub fn write_summary(out: &mut impl Write, rows: &[(&str, f64)]) -> std::io::Result<()> {
    writeln!(out, "metric,value")?;
    for (k, v) in rows {
        writeln!(out, "{k},{v:.8e}")?;
    }
    Ok(())
}
