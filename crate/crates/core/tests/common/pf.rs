//! Particle-filter statistics shared by the filter tests and acceptance.

use paegan::ballworld::{initial_state, measure, step, EnvState, RngState, WorldConfig};
use paegan::pfilter::{pf_resample, pf_step, ParticleSet, PfConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Particle `i` sits at `x = i`, so resampled copies can be counted.
pub fn tagged(weights: Vec<f64>) -> ParticleSet {
    let particles = (0..weights.len())
        .map(|i| EnvState {
            positions: vec![[i as f64, 0.0]],
            velocities: vec![[0.0, 0.0]],
        })
        .collect();
    ParticleSet { particles, weights }
}

pub fn normalized(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|w| w / s).collect()
}

/// Largest amount by which a mean copy count over `trials` resamplings
/// misses `n w` beyond three standard errors. The count is `floor(nw)` or
/// `ceil(nw)`, the latter with probability `frac(nw)`.
pub fn resampling_excess(trials: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = f64::NEG_INFINITY;
    for n in [5, 10, 17, 40, 100] {
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
        let w = normalized(&raw);
        let mut sum = vec![0.0; n];
        for _ in 0..trials {
            let mut ps = tagged(w.clone());
            pf_resample(&mut ps, &mut rng);
            for p in &ps.particles {
                sum[p.positions[0][0] as usize] += 1.0;
            }
        }
        for i in 0..n {
            let mean = sum[i] / trials as f64;
            let expected = n as f64 * w[i];
            let f = expected - expected.floor();
            let se = (f * (1.0 - f) / trials as f64).sqrt();
            worst = worst.max((mean - expected).abs() - 3.0 * se);
        }
    }
    worst
}

/// Whether `1 <= ESS <= n` on random weights and the extremes are exact.
pub fn ess_bounds_hold(cases: usize) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    (0..cases).all(|_| {
        let n = rng.random_range(1..300);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(1e-6..1.0)).collect();
        let ess = tagged(normalized(&raw)).ess();
        let uniform = tagged(vec![1.0 / n as f64; n]).ess();
        let mut hot = vec![0.0; n];
        hot[rng.random_range(0..n)] = 1.0;
        (1.0 - 1e-9..=n as f64 + 1e-9).contains(&ess)
            && (uniform - n as f64).abs() < 1e-9 * n as f64
            && (tagged(hot).ess() - 1.0).abs() < 1e-12
    })
}

/// Weighted-mean position error, per step, of a fully observed 1-ball run.
pub fn tracking_errors(episode: u64, steps: usize) -> Vec<f64> {
    let world = WorldConfig::default();
    let cfg = PfConfig::new(world.clone());
    let mut truth_rng = RngState::new(100 + episode, 1);
    let mut meas_rng = RngState::new(200 + episode, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(300 + episode);
    let mut truth = initial_state(&world, &mut truth_rng).unwrap();
    let mut current = None;
    let mut errors = Vec::with_capacity(steps);
    for t in 0..steps {
        if t > 0 {
            truth = step(&truth, &world, &mut truth_rng);
        }
        let z = measure(&truth, &world, &mut meas_rng);
        let (ps, out) = pf_step(current.take(), Some(&z), &cfg, &mut rng).unwrap();
        assert!(!out.is_some_and(|o| o.diverged));
        let m = ps.mean_positions()[0];
        let p = truth.positions[0];
        errors.push((m[0] - p[0]).hypot(m[1] - p[1]));
        current = Some(ps);
    }
    errors
}

/// Time-averaged tracking error of each episode.
pub fn tracking_means(episodes: u64, steps: usize) -> Vec<f64> {
    (0..episodes)
        .map(|e| {
            let errors = tracking_errors(e, steps);
            errors.iter().sum::<f64>() / errors.len() as f64
        })
        .collect()
}
