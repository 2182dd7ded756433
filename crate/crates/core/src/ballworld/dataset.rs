use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{initial_state, render, step, EnvState, RngState, WorldConfig};
use crate::container;
use crate::error::{Error, Result};
use crate::seed::{self, tag};

/// Header of an episode-set file. The payload holds all frames
/// (episode-major, time-major, row-major), followed by the ground-truth
/// states as `(x, y, vx, vy)` per ball when `has_states` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSetHeader {
    pub format: String,
    pub episodes: usize,
    pub steps: usize,
    pub height: usize,
    pub width: usize,
    pub num_balls: usize,
    pub cfg: WorldConfig,
    pub seed: u64,
    pub has_states: bool,
}

const FORMAT: &str = "paegan-episodes-v1";

/// Rendered trajectories plus (for evaluation only) their true states.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSet {
    pub cfg: WorldConfig,
    pub seed: u64,
    pub episodes: usize,
    pub steps: usize,
    frames: Vec<f32>,
    states: Option<Vec<Vec<EnvState>>>,
}

/// Simulates `episodes` independent trajectories of `steps` frames each.
///
/// Episode `e` draws from its own per-ball streams derived from
/// `(seed, e)`, so generation order does not affect the result.
pub fn generate_dataset(
    cfg: &WorldConfig,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Result<EpisodeSet> {
    cfg.validate()?;
    if episodes < 1 || steps < 1 {
        return Err(Error::Config("episodes and steps must be at least 1".into()));
    }
    let runs: Vec<(Vec<f32>, Vec<EnvState>)> = (0..episodes)
        .into_par_iter()
        .map(|e| -> Result<_> {
            let mut rng = RngState::new(seed::derive(seed, tag::EPISODE, e as u64), cfg.num_balls);
            let mut s = initial_state(cfg, &mut rng)?;
            let mut frames = Vec::with_capacity(steps * cfg.pixels());
            let mut states = Vec::with_capacity(steps);
            for t in 0..steps {
                if t > 0 {
                    s = step(&s, cfg, &mut rng);
                }
                frames.extend_from_slice(&render(&s, cfg).pixels);
                states.push(s.clone());
            }
            Ok((frames, states))
        })
        .collect::<Result<_>>()?;
    let mut frames = Vec::with_capacity(episodes * steps * cfg.pixels());
    let mut states = Vec::with_capacity(episodes);
    for (f, s) in runs {
        frames.extend(f);
        states.push(s);
    }
    Ok(EpisodeSet {
        cfg: cfg.clone(),
        seed,
        episodes,
        steps,
        frames,
        states: Some(states),
    })
}

impl EpisodeSet {
    /// Builds a set directly from frames (no ground-truth states).
    pub fn from_frames(cfg: WorldConfig, steps: usize, frames: Vec<f32>) -> Result<Self> {
        let per_episode = steps * cfg.pixels();
        if steps == 0 || frames.is_empty() || frames.len() % per_episode != 0 {
            return Err(Error::Length(format!(
                "{} values do not form whole episodes of {steps} frames",
                frames.len()
            )));
        }
        Ok(EpisodeSet {
            episodes: frames.len() / per_episode,
            cfg,
            seed: 0,
            steps,
            frames,
            states: None,
        })
    }

    pub fn pixels(&self) -> usize {
        self.cfg.pixels()
    }

    pub fn frame(&self, episode: usize, t: usize) -> &[f32] {
        let p = self.pixels();
        let start = (episode * self.steps + t) * p;
        &self.frames[start..start + p]
    }

    pub fn episode_frames(&self, episode: usize) -> &[f32] {
        let n = self.steps * self.pixels();
        &self.frames[episode * n..(episode + 1) * n]
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn states(&self, episode: usize) -> Option<&[EnvState]> {
        self.states.as_ref().map(|s| s[episode].as_slice())
    }

    pub fn has_states(&self) -> bool {
        self.states.is_some()
    }

    /// Episodes `range` as a new set.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Result<EpisodeSet> {
        if range.start >= range.end || range.end > self.episodes {
            return Err(Error::Config(format!(
                "episode range {range:?} outside 0..{}",
                self.episodes
            )));
        }
        let n = self.steps * self.pixels();
        Ok(EpisodeSet {
            cfg: self.cfg.clone(),
            seed: self.seed,
            episodes: range.len(),
            steps: self.steps,
            frames: self.frames[range.start * n..range.end * n].to_vec(),
            states: self.states.as_ref().map(|s| s[range].to_vec()),
        })
    }

    pub fn header(&self) -> EpisodeSetHeader {
        EpisodeSetHeader {
            format: FORMAT.into(),
            episodes: self.episodes,
            steps: self.steps,
            height: self.cfg.image_size,
            width: self.cfg.image_size,
            num_balls: self.cfg.num_balls,
            cfg: self.cfg.clone(),
            seed: self.seed,
            has_states: self.states.is_some(),
        }
    }

    fn payload(&self) -> Vec<f32> {
        let mut out = self.frames.clone();
        if let Some(states) = &self.states {
            for s in states.iter().flatten() {
                for (p, v) in s.positions.iter().zip(&s.velocities) {
                    out.extend([p[0] as f32, p[1] as f32, v[0] as f32, v[1] as f32]);
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(&self.header(), &self.payload())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write(path, &self.header(), &self.payload())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload): (EpisodeSetHeader, Vec<f32>) = container::read(path)?;
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if h.format != FORMAT {
            return Err(bad(format!("unexpected format tag {:?}", h.format)));
        }
        if h.height != h.cfg.image_size || h.width != h.cfg.image_size {
            return Err(bad("frame size disagrees with config".into()));
        }
        let n_frames = h.episodes * h.steps * h.height * h.width;
        let n_states = if h.has_states {
            h.episodes * h.steps * h.num_balls * 4
        } else {
            0
        };
        if payload.len() != n_frames + n_states {
            return Err(bad(format!(
                "payload holds {} values, header implies {}",
                payload.len(),
                n_frames + n_states
            )));
        }
        let mut frames = payload;
        let raw_states = frames.split_off(n_frames);
        let states = h.has_states.then(|| {
            raw_states
                .chunks_exact(h.steps * h.num_balls * 4)
                .map(|ep| {
                    ep.chunks_exact(h.num_balls * 4)
                        .map(|s| EnvState {
                            positions: s.chunks_exact(4).map(|b| [b[0] as f64, b[1] as f64]).collect(),
                            velocities: s.chunks_exact(4).map(|b| [b[2] as f64, b[3] as f64]).collect(),
                        })
                        .collect()
                })
                .collect()
        });
        Ok(EpisodeSet {
            cfg: h.cfg,
            seed: h.seed,
            episodes: h.episodes,
            steps: h.steps,
            frames,
            states,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballworld::CollisionMode;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn rejects_empty_requests() {
        let cfg = WorldConfig::default();
        assert!(generate_dataset(&cfg, 0, 10, 1).is_err());
        assert!(generate_dataset(&cfg, 1, 0, 1).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = WorldConfig::default();
        let a = generate_dataset(&cfg, 2, 100, 7).unwrap();
        let b = generate_dataset(&cfg, 2, 100, 7).unwrap();
        assert_eq!(a.frames().len(), 2 * 100 * 784);
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        let c = generate_dataset(&cfg, 2, 100, 8).unwrap();
        assert_ne!(a.frames(), c.frames());
    }

    #[test]
    fn static_world_repeats_its_first_frame() {
        let cfg = WorldConfig {
            speed: 0.0,
            process_noise_sigma: 0.0,
            ..WorldConfig::default()
        };
        let d = generate_dataset(&cfg, 3, 20, 5).unwrap();
        for e in 0..3 {
            for t in 1..20 {
                assert_eq!(d.frame(e, t), d.frame(e, 0));
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let cfg = WorldConfig {
            num_balls: 2,
            ..WorldConfig::default()
        };
        let d = generate_dataset(&cfg, 3, 5, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        d.save(&path).unwrap();
        let back = EpisodeSet::load(&path).unwrap();
        assert_eq!(back.frames(), d.frames());
        assert_eq!(back.header(), d.header());
        let s = &back.states(2).unwrap()[4];
        let t = &d.states(2).unwrap()[4];
        assert!((s.positions[1][0] - t.positions[1][0]).abs() < 1e-5);
    }

    /// Straight-line motion with wall reflection and the same per-ball noise
    /// draws, coded independently of `physics::step`.
    fn resimulate(cfg: &WorldConfig, seed: u64, steps: usize) -> Vec<[f64; 4]> {
        let mut rng = RngState::new(seed, 1);
        let s = initial_state(cfg, &mut rng).unwrap();
        let (lo, hi) = cfg.bounds();
        let noise = Normal::new(0.0, cfg.process_noise_sigma).unwrap();
        let (mut x, mut y) = (s.positions[0][0], s.positions[0][1]);
        let (mut vx, mut vy) = (s.velocities[0][0], s.velocities[0][1]);
        let mut out = vec![[x, y, vx, vy]];
        for _ in 1..steps {
            x += vx;
            y += vy;
            if x > hi {
                x = 2.0 * hi - x;
                vx = -vx;
            }
            if x < lo {
                x = 2.0 * lo - x;
                vx = -vx;
            }
            if y > hi {
                y = 2.0 * hi - y;
                vy = -vy;
            }
            if y < lo {
                y = 2.0 * lo - y;
                vy = -vy;
            }
            vx += noise.sample(rng.ball(0));
            vy += noise.sample(rng.ball(0));
            out.push([x, y, vx, vy]);
        }
        out
    }

    #[test]
    fn noisy_velocities_random_walk_away_from_nominal_speed() {
        let cfg = WorldConfig {
            process_noise_sigma: 0.05,
            collision_mode: CollisionMode::PhaseThrough,
            ..WorldConfig::default()
        };
        let (episodes, steps) = (40, 400);
        let d = generate_dataset(&cfg, episodes, steps, 3).unwrap();
        let mut final_dev = 0.0;
        for e in 0..episodes {
            let oracle = resimulate(&cfg, seed::derive(3, tag::EPISODE, e as u64), steps);
            for (t, s) in d.states(e).unwrap().iter().enumerate() {
                let o = oracle[t];
                assert!((s.positions[0][0] - o[0]).abs() < 1e-9);
                assert!((s.velocities[0][1] - o[3]).abs() < 1e-9);
            }
            let v = oracle[steps - 1];
            final_dev += (v[2].hypot(v[3]) - cfg.speed).powi(2);
        }
        // Each velocity component gains variance sigma^2 per step, so the
        // speed spreads by roughly sigma * sqrt(steps) = 1.0 here.
        let rms = (final_dev / episodes as f64).sqrt();
        assert!(rms > 0.3, "speed spread {rms}");
    }
}
