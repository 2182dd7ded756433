use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{CollisionMode, EnvState, RngState, WorldConfig};
use crate::error::{Error, Result};

/// A ball-ball contact resolved during a step, with the pair's velocities
/// just before and just after the elastic exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionEvent {
    pub pair: (usize, usize),
    pub before: [[f64; 2]; 2],
    pub after: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepEvents {
    pub wall_bounces: usize,
    pub collisions: Vec<CollisionEvent>,
}

/// Advances the world by one step.
pub fn step(state: &EnvState, cfg: &WorldConfig, rng: &mut RngState) -> EnvState {
    step_with_events(state, cfg, rng).0
}

/// [`step`] that also reports wall bounces and ball-ball collisions.
///
/// Order within a step: move, reflect off walls, resolve ball-ball contacts
/// pairwise in index order (bounce mode only), clamp into the arena, then
/// perturb velocities. Every ball consumes exactly two normal draws from its
/// own stream per step, whatever the noise level.
pub fn step_with_events(
    state: &EnvState,
    cfg: &WorldConfig,
    rng: &mut RngState,
) -> (EnvState, StepEvents) {
    let (lo, hi) = cfg.bounds();
    let mut next = state.clone();
    let mut events = StepEvents::default();

    for (p, v) in next.positions.iter_mut().zip(next.velocities.iter_mut()) {
        for axis in 0..2 {
            p[axis] += v[axis];
            events.wall_bounces += reflect(&mut p[axis], &mut v[axis], lo, hi);
        }
    }

    if cfg.collision_mode == CollisionMode::Bounce {
        let n = next.num_balls();
        for i in 0..n {
            for j in (i + 1)..n {
                if let Some(ev) = collide(&mut next, i, j, cfg.ball_radius) {
                    events.collisions.push(ev);
                }
            }
        }
        for p in next.positions.iter_mut() {
            for c in p.iter_mut() {
                *c = c.clamp(lo, hi);
            }
        }
    }

    let noise = Normal::new(0.0, cfg.process_noise_sigma).expect("validated sigma");
    for (i, v) in next.velocities.iter_mut().enumerate() {
        let r = rng.ball(i);
        v[0] += noise.sample(r);
        v[1] += noise.sample(r);
    }
    (next, events)
}

/// Specular reflection of one coordinate about the arena walls. Returns the
/// number of reflections applied.
fn reflect(x: &mut f64, v: &mut f64, lo: f64, hi: f64) -> usize {
    let mut count = 0;
    while *x > hi || *x < lo {
        if *x > hi {
            *x = 2.0 * hi - *x;
            *v = -v.abs();
        } else {
            *x = 2.0 * lo - *x;
            *v = v.abs();
        }
        count += 1;
    }
    count
}

/// Equal-mass elastic contact between balls `i` and `j`.
///
/// Overlapping balls are pushed apart symmetrically along the center line;
/// the normal velocity components are exchanged only when the pair is
/// approaching.
fn collide(state: &mut EnvState, i: usize, j: usize, radius: f64) -> Option<CollisionEvent> {
    let (pi, pj) = (state.positions[i], state.positions[j]);
    let d = [pj[0] - pi[0], pj[1] - pi[1]];
    let dist = d[0].hypot(d[1]);
    if dist >= 2.0 * radius {
        return None;
    }
    let n = if dist > 0.0 {
        [d[0] / dist, d[1] / dist]
    } else {
        [1.0, 0.0]
    };
    let push = 0.5 * (2.0 * radius - dist);
    state.positions[i] = [pi[0] - push * n[0], pi[1] - push * n[1]];
    state.positions[j] = [pj[0] + push * n[0], pj[1] + push * n[1]];

    let (vi, vj) = (state.velocities[i], state.velocities[j]);
    let approach = (vi[0] - vj[0]) * n[0] + (vi[1] - vj[1]) * n[1];
    if approach <= 0.0 {
        return None;
    }
    let after_i = [vi[0] - approach * n[0], vi[1] - approach * n[1]];
    let after_j = [vj[0] + approach * n[0], vj[1] + approach * n[1]];
    state.velocities[i] = after_i;
    state.velocities[j] = after_j;
    Some(CollisionEvent {
        pair: (i, j),
        before: [vi, vj],
        after: [after_i, after_j],
    })
}

/// Draws an initial state: positions uniform over the admissible arena,
/// velocity directions uniform on the circle with magnitude `cfg.speed`.
///
/// Each ball draws from its own stream. In bounce mode a ball is redrawn
/// until it does not overlap any lower-indexed ball.
pub fn initial_state(cfg: &WorldConfig, rng: &mut RngState) -> Result<EnvState> {
    const MAX_ATTEMPTS: usize = 10_000;
    let (lo, hi) = cfg.bounds();
    let mut positions: Vec<[f64; 2]> = Vec::with_capacity(cfg.num_balls);
    let mut velocities = Vec::with_capacity(cfg.num_balls);
    for b in 0..cfg.num_balls {
        let r = rng.ball(b);
        let mut attempts = 0;
        let p = loop {
            let p = [r.random_range(lo..=hi), r.random_range(lo..=hi)];
            let clear = cfg.collision_mode == CollisionMode::PhaseThrough
                || positions.iter().all(|q| {
                    (p[0] - q[0]).hypot(p[1] - q[1]) >= 2.0 * cfg.ball_radius
                });
            if clear {
                break p;
            }
            attempts += 1;
            if attempts == MAX_ATTEMPTS {
                return Err(Error::Config(format!(
                    "could not place {} non-overlapping balls",
                    cfg.num_balls
                )));
            }
        };
        let angle = r.random_range(0.0..std::f64::consts::TAU);
        positions.push(p);
        velocities.push([cfg.speed * angle.cos(), cfg.speed * angle.sin()]);
    }
    Ok(EnvState {
        positions,
        velocities,
    })
}
