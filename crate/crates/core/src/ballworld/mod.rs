//! Ground-truth stochastic ball world.
//!
//! Balls move with near-constant velocity inside a square arena, reflect off
//! the walls, and (in [`CollisionMode::Bounce`]) collide elastically with each
//! other. Velocities receive Gaussian noise every step. The world is observed
//! either as a rendered grayscale image or, for the particle filter, as noisy
//! per-ball position measurements.

mod dataset;
mod physics;
mod render;

pub use dataset::{generate_dataset, EpisodeSet, EpisodeSetHeader};
pub use physics::{initial_state, step, step_with_events, CollisionEvent, StepEvents};
pub use render::{null_observation, render};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionMode {
    PhaseThrough,
    Bounce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub num_balls: usize,
    /// Arena side length in world units.
    pub world_size: f64,
    pub ball_radius: f64,
    /// Initial speed magnitude, units per step.
    pub speed: f64,
    /// Std of the per-step Gaussian velocity perturbation.
    pub process_noise_sigma: f64,
    pub collision_mode: CollisionMode,
    /// Std of the per-component position noise on structured measurements.
    pub measurement_noise_sigma: f64,
    pub image_size: usize,
    /// Gaussian blob width as a fraction of the ball radius.
    pub render_sharpness: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            num_balls: 1,
            world_size: 28.0,
            ball_radius: 2.5,
            speed: 1.0,
            process_noise_sigma: 0.05,
            collision_mode: CollisionMode::PhaseThrough,
            measurement_noise_sigma: 0.5,
            image_size: 28,
            render_sharpness: 0.6,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_balls < 1 {
            return fail("num_balls must be at least 1");
        }
        if !(self.world_size.is_finite() && self.world_size > 0.0) {
            return fail("world_size must be positive");
        }
        if !(self.ball_radius > 0.0 && self.ball_radius < self.world_size / 2.0) {
            return fail("ball_radius must lie in (0, world_size / 2)");
        }
        for (name, v) in [
            ("speed", self.speed),
            ("process_noise_sigma", self.process_noise_sigma),
            ("measurement_noise_sigma", self.measurement_noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        if self.image_size == 0 {
            return fail("image_size must be positive");
        }
        if !(self.render_sharpness.is_finite() && self.render_sharpness > 0.0) {
            return fail("render_sharpness must be positive");
        }
        Ok(())
    }

    /// Lowest and highest admissible ball-center coordinate.
    pub fn bounds(&self) -> (f64, f64) {
        (self.ball_radius, self.world_size - self.ball_radius)
    }

    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
}

impl EnvState {
    pub fn num_balls(&self) -> usize {
        self.positions.len()
    }

    pub fn is_contained(&self, cfg: &WorldConfig) -> bool {
        let (lo, hi) = cfg.bounds();
        self.positions
            .iter()
            .all(|p| p.iter().all(|&c| (lo..=hi).contains(&c)))
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.velocities
            .iter()
            .map(|v| 0.5 * (v[0] * v[0] + v[1] * v[1]))
            .sum()
    }

    pub fn momentum(&self) -> [f64; 2] {
        self.velocities
            .iter()
            .fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]])
    }
}

/// A grayscale `size x size` image in `[0, 1]`, row-major (row = y).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub pixels: Vec<f32>,
    pub size: usize,
    pub is_null: bool,
}

impl Observation {
    pub fn from_pixels(size: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::Length(format!(
                "observation of side {size} needs {} pixels, got {}",
                size * size,
                pixels.len()
            )));
        }
        Ok(Observation {
            pixels,
            size,
            is_null: false,
        })
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().map(|&p| f64::from(p)).sum()
    }

    /// Sum of squared pixel differences.
    pub fn sq_error(&self, other: &Observation) -> f64 {
        sq_error(&self.pixels, &other.pixels)
    }
}

pub fn sq_error(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionMeasurement {
    pub measured_positions: Vec<[f64; 2]>,
}

/// One independent random stream per ball.
///
/// Keeping the streams separate makes a phase-through N-ball world exactly
/// the superposition of N single-ball worlds seeded with the same per-ball
/// streams.
#[derive(Debug, Clone)]
pub struct RngState {
    streams: Vec<ChaCha8Rng>,
}

impl RngState {
    pub fn new(seed: u64, num_balls: usize) -> Self {
        RngState {
            streams: (0..num_balls).map(|b| Self::stream(seed, b)).collect(),
        }
    }

    /// The stream that ball `ball` of an `RngState::new(seed, _)` would use.
    pub fn for_ball(seed: u64, ball: usize) -> Self {
        RngState {
            streams: vec![Self::stream(seed, ball)],
        }
    }

    fn stream(seed: u64, ball: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ball as u64);
        rng
    }

    pub fn ball(&mut self, i: usize) -> &mut ChaCha8Rng {
        &mut self.streams[i]
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }
}

/// Noisy per-ball position readout: `z_i = p_i + N(0, sigma^2)` per component.
pub fn measure(state: &EnvState, cfg: &WorldConfig, rng: &mut RngState) -> PositionMeasurement {
    let noise = Normal::new(0.0, cfg.measurement_noise_sigma).expect("validated sigma");
    let measured_positions = state
        .positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let r = rng.ball(i);
            [p[0] + noise.sample(r), p[1] + noise.sample(r)]
        })
        .collect();
    PositionMeasurement { measured_positions }
}
