use super::{EnvState, Observation, WorldConfig};

/// Projects a state to an image: each ball is an isotropic Gaussian blob
/// `exp(-d^2 / (2 s^2))` with `s = render_sharpness * radius` in pixel units,
/// summed over balls and clamped to `[0, 1]`. Pixel `(row, col)` is sampled
/// at its center `(col + 0.5, row + 0.5)`.
pub fn render(state: &EnvState, cfg: &WorldConfig) -> Observation {
    let size = cfg.image_size;
    let scale = size as f64 / cfg.world_size;
    let s = cfg.render_sharpness * cfg.ball_radius * scale;
    let inv_two_var = 1.0 / (2.0 * s * s);
    let centers: Vec<[f64; 2]> = state
        .positions
        .iter()
        .map(|p| [p[0] * scale, p[1] * scale])
        .collect();

    let mut pixels = vec![0f32; size * size];
    for (row, line) in pixels.chunks_exact_mut(size).enumerate() {
        let py = row as f64 + 0.5;
        for (col, px) in line.iter_mut().enumerate() {
            let cx = col as f64 + 0.5;
            let v: f64 = centers
                .iter()
                .map(|c| {
                    let (dx, dy) = (cx - c[0], py - c[1]);
                    (-(dx * dx + dy * dy) * inv_two_var).exp()
                })
                .sum();
            *px = v.clamp(0.0, 1.0) as f32;
        }
    }
    Observation {
        pixels,
        size,
        is_null: false,
    }
}

/// The all-zeros image standing in for "no percept this step".
pub fn null_observation(cfg: &WorldConfig) -> Observation {
    Observation {
        pixels: vec![0.0; cfg.pixels()],
        size: cfg.image_size,
        is_null: true,
    }
}
