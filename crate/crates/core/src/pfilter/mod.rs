//! Sequential Monte Carlo tracker driven by the true world model.
//!
//! Particles are full [`EnvState`] hypotheses advanced with
//! [`crate::ballworld::step`] and reweighted by a Gaussian likelihood of
//! per-ball position measurements. Weights are combined in log space and
//! stored normalized.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ballworld::{self, CollisionMode, EnvState, Observation, PositionMeasurement, RngState, WorldConfig};
use crate::error::{Error, Result};
use crate::seed::{self, tag};

/// Exhaustive data association is used up to this many balls.
pub const MAX_BALLS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfConfig {
    pub num_particles: usize,
    /// Std of the Gaussian measurement likelihood; `None` uses the world's
    /// measurement noise.
    pub likelihood_sigma: Option<f64>,
    /// Resample when ESS falls below this fraction of the particle count.
    pub resample_threshold: f64,
    pub world: WorldConfig,
}

impl PfConfig {
    pub fn new(world: WorldConfig) -> Self {
        PfConfig {
            num_particles: 1000,
            likelihood_sigma: None,
            resample_threshold: 0.5,
            world,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.likelihood_sigma.unwrap_or(self.world.measurement_noise_sigma)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if self.num_particles == 0 {
            return Err(Error::Config("num_particles must be at least 1".into()));
        }
        let s = self.sigma();
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Config(format!("likelihood sigma must be positive, got {s}")));
        }
        if !(self.resample_threshold > 0.0 && self.resample_threshold <= 1.0) {
            return Err(Error::Config("resample_threshold must be in (0, 1]".into()));
        }
        if self.world.num_balls > MAX_BALLS {
            return Err(Error::Config(format!("at most {MAX_BALLS} balls are supported")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<EnvState>,
    /// Normalized, non-negative.
    pub weights: Vec<f64>,
}

/// What one [`pf_update`] did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    /// Effective sample size after reweighting, before any resampling.
    pub ess: f64,
    pub resampled: bool,
    /// Every likelihood underflowed or was invalid; weights were reset to
    /// uniform.
    pub diverged: bool,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Effective sample size `1 / Σ w²`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Weighted mean position of each ball (by index).
    pub fn mean_positions(&self) -> Vec<[f64; 2]> {
        let nb = self.particles.first().map_or(0, EnvState::num_balls);
        let mut m = vec![[0.0; 2]; nb];
        for (p, &w) in self.particles.iter().zip(&self.weights) {
            for (acc, pos) in m.iter_mut().zip(&p.positions) {
                acc[0] += w * pos[0];
                acc[1] += w * pos[1];
            }
        }
        m
    }

    /// Trace of the weighted position covariance, summed over balls.
    pub fn position_spread(&self) -> f64 {
        let mean = self.mean_positions();
        self.particles
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| {
                w * p
                    .positions
                    .iter()
                    .zip(&mean)
                    .map(|(a, m)| (a[0] - m[0]).powi(2) + (a[1] - m[1]).powi(2))
                    .sum::<f64>()
            })
            .sum()
    }
}

fn particle_rng(base: u64, i: usize, balls: usize) -> RngState {
    RngState::new(seed::derive(base, tag::PF, i as u64), balls)
}

/// Particles from the dataset's initial-state distribution, uniform weights.
pub fn pf_init(cfg: &PfConfig, rng: &mut impl Rng) -> Result<ParticleSet> {
    cfg.validate()?;
    let base: u64 = rng.random();
    let nb = cfg.world.num_balls;
    let particles = (0..cfg.num_particles)
        .into_par_iter()
        .map(|i| ballworld::initial_state(&cfg.world, &mut particle_rng(base, i, nb)))
        .collect::<Result<Vec<_>>>()?;
    let n = cfg.num_particles;
    Ok(ParticleSet {
        particles,
        weights: vec![1.0 / n as f64; n],
    })
}

/// Particles from the exact posterior after a first measurement `z`.
///
/// The prior over positions is uniform on the admissible box, so each
/// coordinate's posterior is a Gaussian around the measurement truncated to
/// the box; velocities keep their prior. Ball `b` is placed around
/// measurement `b`, which is harmless since the likelihood is symmetric
/// under relabeling. In bounce mode overlapping draws are rejected. Weights
/// are uniform: `z` is already accounted for and must not be applied again
/// with [`pf_update`].
pub fn pf_init_from_measurement(cfg: &PfConfig, z: &PositionMeasurement, rng: &mut impl Rng) -> Result<ParticleSet> {
    const MAX_ATTEMPTS: usize = 10_000;
    cfg.validate()?;
    let nb = cfg.world.num_balls;
    if z.measured_positions.len() != nb {
        return Err(Error::Length(format!(
            "{} measured positions for {nb} balls",
            z.measured_positions.len()
        )));
    }
    let (lo, hi) = cfg.world.bounds();
    let sigma = cfg.sigma();
    let noise = Normal::new(0.0, sigma).expect("validated sigma");
    let truncated = |m: f64, r: &mut ChaCha8Rng| -> Result<f64> {
        for _ in 0..MAX_ATTEMPTS {
            let x = m + noise.sample(r);
            if (lo..=hi).contains(&x) {
                return Ok(x);
            }
        }
        Err(Error::Config(format!("measurement {m} is implausibly far outside the arena")))
    };
    let base: u64 = rng.random();
    let bounce = cfg.world.collision_mode == CollisionMode::Bounce;
    let min_gap = 2.0 * cfg.world.ball_radius;
    let particles = (0..cfg.num_particles)
        .into_par_iter()
        .map(|i| {
            let mut rs = particle_rng(base, i, nb);
            let mut positions: Vec<[f64; 2]> = Vec::with_capacity(nb);
            let mut velocities = Vec::with_capacity(nb);
            for (b, m) in z.measured_positions.iter().enumerate() {
                let r = rs.ball(b);
                let mut attempts = 0;
                let p = loop {
                    let p = [truncated(m[0], r)?, truncated(m[1], r)?];
                    if !bounce || positions.iter().all(|q| (p[0] - q[0]).hypot(p[1] - q[1]) >= min_gap) {
                        break p;
                    }
                    attempts += 1;
                    if attempts == MAX_ATTEMPTS {
                        return Err(Error::Config("could not place non-overlapping particle balls".into()));
                    }
                };
                let angle = r.random_range(0.0..std::f64::consts::TAU);
                positions.push(p);
                velocities.push([cfg.world.speed * angle.cos(), cfg.world.speed * angle.sin()]);
            }
            Ok(EnvState { positions, velocities })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = cfg.num_particles;
    Ok(ParticleSet {
        particles,
        weights: vec![1.0 / n as f64; n],
    })
}

/// Advances every particle one step with independent process noise.
pub fn pf_predict(ps: &mut ParticleSet, cfg: &PfConfig, rng: &mut impl Rng) {
    let base: u64 = rng.random();
    let nb = cfg.world.num_balls;
    ps.particles.par_iter_mut().enumerate().for_each(|(i, p)| {
        *p = ballworld::step(p, &cfg.world, &mut particle_rng(base, i, nb));
    });
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for slot in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(slot, n - 1);
            out.push(p);
        }
    }
    out
}

/// Minimum over ball-to-measurement assignments of the summed squared
/// distance.
pub fn association_cost(state: &EnvState, z: &PositionMeasurement, perms: &[Vec<usize>]) -> f64 {
    perms
        .iter()
        .map(|perm| {
            state
                .positions
                .iter()
                .zip(perm)
                .map(|(p, &j)| {
                    let m = z.measured_positions[j];
                    (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2)
                })
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Reweights by the measurement likelihood and resamples when the effective
/// sample size drops below the configured fraction.
pub fn pf_update(
    ps: &mut ParticleSet,
    z: &PositionMeasurement,
    cfg: &PfConfig,
    rng: &mut impl Rng,
) -> Result<UpdateOutcome> {
    let nb = cfg.world.num_balls;
    if z.measured_positions.len() != nb {
        return Err(Error::Length(format!(
            "{} measured positions for {nb} balls",
            z.measured_positions.len()
        )));
    }
    let perms = permutations(nb);
    let inv = 1.0 / (2.0 * cfg.sigma().powi(2));
    let log_w: Vec<f64> = ps
        .particles
        .par_iter()
        .zip(&ps.weights)
        .map(|(p, &w)| w.ln() - association_cost(p, z, &perms) * inv)
        .collect();
    let max = log_w.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    let n = ps.len();
    if !max.is_finite() {
        ps.weights = vec![1.0 / n as f64; n];
        return Ok(UpdateOutcome {
            ess: n as f64,
            resampled: false,
            diverged: true,
        });
    }
    let unnorm: Vec<f64> = log_w
        .iter()
        .map(|&l| if l.is_nan() { 0.0 } else { (l - max).exp() })
        .collect();
    let total: f64 = unnorm.iter().sum();
    ps.weights = unnorm.into_iter().map(|u| u / total).collect();
    let ess = ps.ess();
    let resampled = ess < cfg.resample_threshold * n as f64;
    if resampled {
        pf_resample(ps, rng);
    }
    Ok(UpdateOutcome {
        ess,
        resampled,
        diverged: false,
    })
}

/// One tracking step. Without a particle set yet, initializes from `z` when
/// present and from the prior otherwise; afterwards predicts and, given a
/// measurement, updates.
pub fn pf_step(
    ps: Option<ParticleSet>,
    z: Option<&PositionMeasurement>,
    cfg: &PfConfig,
    rng: &mut impl Rng,
) -> Result<(ParticleSet, Option<UpdateOutcome>)> {
    match (ps, z) {
        (None, Some(z)) => Ok((pf_init_from_measurement(cfg, z, rng)?, None)),
        (None, None) => Ok((pf_init(cfg, rng)?, None)),
        (Some(mut ps), z) => {
            pf_predict(&mut ps, cfg, rng);
            let out = match z {
                Some(z) => Some(pf_update(&mut ps, z, cfg, rng)?),
                None => None,
            };
            Ok((ps, out))
        }
    }
}

/// Systematic resampling: one uniform offset, `n` evenly spaced pointers.
pub fn pf_resample(ps: &mut ParticleSet, rng: &mut impl Rng) {
    let n = ps.len();
    let step = 1.0 / n as f64;
    let u0 = rng.random_range(0.0..step);
    let mut out = Vec::with_capacity(n);
    let mut cum = ps.weights[0];
    let mut i = 0;
    for k in 0..n {
        let u = u0 + k as f64 * step;
        while u > cum && i + 1 < n {
            i += 1;
            cum += ps.weights[i];
        }
        out.push(ps.particles[i].clone());
    }
    ps.particles = out;
    ps.weights = vec![step; n];
}

/// `Σ w_i render(particle_i)`, clamped to `[0, 1]`.
pub fn pf_expected_observation(ps: &ParticleSet, cfg: &PfConfig) -> Observation {
    const CHUNK: usize = 64;
    let px = cfg.world.pixels();
    let partials: Vec<Vec<f64>> = ps
        .particles
        .par_chunks(CHUNK)
        .zip(ps.weights.par_chunks(CHUNK))
        .map(|(parts, ws)| {
            let mut acc = vec![0.0; px];
            for (p, &w) in parts.iter().zip(ws) {
                let img = ballworld::render(p, &cfg.world);
                for (a, &v) in acc.iter_mut().zip(&img.pixels) {
                    *a += w * f64::from(v);
                }
            }
            acc
        })
        .collect();
    let mut sum = vec![0.0; px];
    for part in partials {
        for (s, v) in sum.iter_mut().zip(part) {
            *s += v;
        }
    }
    Observation {
        pixels: sum.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect(),
        size: cfg.world.image_size,
        is_null: false,
    }
}

/// Index of a particle drawn with probability equal to its weight.
pub fn pf_draw_index(ps: &ParticleSet, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, &w) in ps.weights.iter().enumerate() {
        cum += w;
        if u < cum {
            return i;
        }
    }
    ps.len() - 1
}

/// Render of one particle drawn by weight.
pub fn pf_sample_observation(ps: &ParticleSet, cfg: &PfConfig, rng: &mut impl Rng) -> Observation {
    ballworld::render(&ps.particles[pf_draw_index(ps, rng)], &cfg.world)
}

/// Appends rows `t,particle_id,weight,x,y,vx,vy` (one per particle and ball).
pub fn write_particles_csv(out: &mut impl Write, t: usize, ps: &ParticleSet) -> std::io::Result<()> {
    for (i, (p, w)) in ps.particles.iter().zip(&ps.weights).enumerate() {
        for (pos, vel) in p.positions.iter().zip(&p.velocities) {
            writeln!(out, "{t},{i},{w:.9e},{},{},{},{}", pos[0], pos[1], vel[0], vel[1])?;
        }
    }
    Ok(())
}

pub const PARTICLES_CSV_HEADER: &str = "t,particle_id,weight,x,y,vx,vy";
