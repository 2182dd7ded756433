//! Simulator conservation and containment audits.

use paegan::ballworld::{initial_state, step, step_with_events, CollisionMode, RngState, WorldConfig};

pub fn world(balls: usize, mode: CollisionMode, sigma: f64, speed: f64) -> WorldConfig {
    WorldConfig {
        num_balls: balls,
        collision_mode: mode,
        process_noise_sigma: sigma,
        speed,
        ..WorldConfig::default()
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Default)]
pub struct CollisionAudit {
    pub events: usize,
    pub steps: usize,
    /// Worst relative change of a colliding pair's kinetic energy.
    pub pair_energy: f64,
    /// Worst momentum change of a pair, relative to its speed scale.
    pub pair_momentum: f64,
    /// Worst relative drift of the total kinetic energy.
    pub total_energy: f64,
}

/// Runs a noiseless 5-ball bounce world until `min_events` ball-ball
/// collisions have occurred.
pub fn collision_audit(min_events: usize) -> CollisionAudit {
    let cfg = world(5, CollisionMode::Bounce, 0.0, 1.3);
    let mut rng = RngState::new(11, cfg.num_balls);
    let mut s = initial_state(&cfg, &mut rng).unwrap();
    let e0 = s.kinetic_energy();
    let mut a = CollisionAudit::default();
    while a.events < min_events {
        let (next, ev) = step_with_events(&s, &cfg, &mut rng);
        for c in &ev.collisions {
            let [vi, vj] = c.before;
            let [wi, wj] = c.after;
            let e_before = 0.5 * (vi[0] * vi[0] + vi[1] * vi[1] + vj[0] * vj[0] + vj[1] * vj[1]);
            let e_after = 0.5 * (wi[0] * wi[0] + wi[1] * wi[1] + wj[0] * wj[0] + wj[1] * wj[1]);
            a.pair_energy = a.pair_energy.max(rel(e_before, e_after));
            let scale = e_before.sqrt().max(1.0);
            for axis in 0..2 {
                let dp = (vi[axis] + vj[axis]) - (wi[axis] + wj[axis]);
                a.pair_momentum = a.pair_momentum.max(dp.abs() / scale);
            }
        }
        a.events += ev.collisions.len();
        a.total_energy = a.total_energy.max(rel(next.kinetic_energy(), e0));
        s = next;
        a.steps += 1;
        assert!(a.steps < 2_000_000, "only {} collisions", a.events);
    }
    a
}

/// First step at which a noisy 3-ball bounce world leaves the arena.
pub fn first_escape(steps: usize) -> Option<usize> {
    let cfg = world(3, CollisionMode::Bounce, 0.05, 1.0);
    let mut rng = RngState::new(3, cfg.num_balls);
    let mut s = initial_state(&cfg, &mut rng).unwrap();
    (0..steps).find(|_| {
        s = step(&s, &cfg, &mut rng);
        !s.is_contained(&cfg)
    })
}
