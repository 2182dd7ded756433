//! C interface to the paegan trackers.
//!
//! Objects are opaque handles created by `*_new` / `*_load` / `*_generate`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`PaeganStatus`]; on failure `paegan_last_error()` describes
//! the problem until the next call on the same thread. Buffers passed in
//! are caller-owned and sized in elements, not bytes.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use paegan::ballworld::{self, EpisodeSet, PositionMeasurement, WorldConfig};
use paegan::nnsub::Tensor;
use paegan::paegan::io as model_io;
use paegan::paegan::{draw_noise, PaeModel, SamplerModel};
use paegan::pfilter::{self, ParticleSet, PfConfig};
use paegan::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaeganStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Length = 6,
    MissingStage = 7,
    Internal = 8,
    Panic = 9,
}

pub struct PaeganDataset(EpisodeSet);
pub struct PaeganPae(PaeModel<f32>);
pub struct PaeganSampler(SamplerModel<f32>);
pub struct PaeganBelief(Tensor<f32>);

pub struct PaeganFilter {
    cfg: PfConfig,
    particles: ParticleSet,
    rng: ChaCha8Rng,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(PaeganStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let s = match &e {
            Error::Config(_) => PaeganStatus::Config,
            Error::Io { .. } => PaeganStatus::Io,
            Error::Format { .. } | Error::Json(_) => PaeganStatus::Format,
            Error::Length(_) | Error::Shape { .. } => PaeganStatus::Length,
            Error::MissingStage(_) => PaeganStatus::MissingStage,
            _ => PaeganStatus::Internal,
        };
        Fail(s, e.to_string())
    }
}

fn fail(s: PaeganStatus, msg: impl Into<String>) -> Fail {
    Fail(s, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PaeganStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PaeganStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(&m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            PaeganStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(PaeganStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| fail(PaeganStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(fail(PaeganStatus::NullPointer, "output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(fail(PaeganStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| fail(PaeganStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(fail(PaeganStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(fail(PaeganStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn need_len(len: usize, want: usize, what: &str) -> Result<(), Fail> {
    if len != want {
        return Err(fail(PaeganStatus::Length, format!("{what} needs {want} elements, got {len}")));
    }
    Ok(())
}

/// World configuration from JSON; null means the defaults.
unsafe fn world(json: *const c_char) -> Result<WorldConfig, Fail> {
    let cfg: WorldConfig = if json.is_null() {
        WorldConfig::default()
    } else {
        serde_json::from_str(&string(json, "world config")?).map_err(|e| fail(PaeganStatus::Config, e.to_string()))?
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Message of the last failed call on this thread (empty after success).
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn paegan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn paegan_status_name(status: PaeganStatus) -> *const c_char {
    let s: &'static CStr = match status {
        PaeganStatus::Ok => c"ok",
        PaeganStatus::NullPointer => c"null pointer",
        PaeganStatus::InvalidArgument => c"invalid argument",
        PaeganStatus::Config => c"invalid configuration",
        PaeganStatus::Io => c"i/o error",
        PaeganStatus::Format => c"malformed file",
        PaeganStatus::Length => c"length mismatch",
        PaeganStatus::MissingStage => c"missing training stage",
        PaeganStatus::Internal => c"internal error",
        PaeganStatus::Panic => c"panic",
    };
    s.as_ptr()
}

/// Simulates an episode set. `world_json` may be null for the defaults.
#[no_mangle]
pub unsafe extern "C" fn paegan_dataset_generate(
    world_json: *const c_char,
    episodes: usize,
    steps: usize,
    seed: u64,
    out: *mut *mut PaeganDataset,
) -> PaeganStatus {
    guard(|| {
        let cfg = world(world_json)?;
        let d = ballworld::generate_dataset(&cfg, episodes, steps, seed)?;
        out_ptr(out, PaeganDataset(d))
    })
}

#[no_mangle]
pub unsafe extern "C" fn paegan_dataset_load(path: *const c_char, out: *mut *mut PaeganDataset) -> PaeganStatus {
    guard(|| {
        let p = PathBuf::from(string(path, "path")?);
        out_ptr(out, PaeganDataset(EpisodeSet::load(&p)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn paegan_dataset_save(ds: *const PaeganDataset, path: *const c_char) -> PaeganStatus {
    guard(|| {
        let d = handle(ds, "dataset")?;
        Ok(d.0.save(&PathBuf::from(string(path, "path")?))?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn paegan_dataset_free(ds: *mut PaeganDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Writes episode count, steps per episode and image side.
#[no_mangle]
pub unsafe extern "C" fn paegan_dataset_shape(
    ds: *const PaeganDataset,
    episodes: *mut usize,
    steps: *mut usize,
    side: *mut usize,
) -> PaeganStatus {
    guard(|| {
        let d = &handle(ds, "dataset")?.0;
        *handle_mut(episodes, "episodes")? = d.episodes;
        *handle_mut(steps, "steps")? = d.steps;
        *handle_mut(side, "side")? = d.cfg.image_size;
        Ok(())
    })
}

/// Copies frame `t` of `episode` into `buf` (`side * side` floats).
#[no_mangle]
pub unsafe extern "C" fn paegan_dataset_frame(
    ds: *const PaeganDataset,
    episode: usize,
    t: usize,
    buf: *mut f32,
    len: usize,
) -> PaeganStatus {
    guard(|| {
        let d = &handle(ds, "dataset")?.0;
        if episode >= d.episodes || t >= d.steps {
            return Err(fail(PaeganStatus::InvalidArgument, "frame index out of range"));
        }
        need_len(len, d.pixels(), "frame buffer")?;
        slice_mut(buf, len, "buf")?.copy_from_slice(d.frame(episode, t));
        Ok(())
    })
}

/// Writes ball `ball`'s true position at step `t` as `xy[0..2]`.
#[no_mangle]
pub unsafe extern "C" fn paegan_dataset_position(
    ds: *const PaeganDataset,
    episode: usize,
    t: usize,
    ball: usize,
    xy: *mut f64,
) -> PaeganStatus {
    guard(|| {
        let d = &handle(ds, "dataset")?.0;
        let states = d
            .states(episode)
            .ok_or_else(|| fail(PaeganStatus::InvalidArgument, "dataset has no states or episode out of range"))?;
        let s = states
            .get(t)
            .filter(|s| ball < s.num_balls())
            .ok_or_else(|| fail(PaeganStatus::InvalidArgument, "step or ball out of range"))?;
        slice_mut(xy, 2, "xy")?.copy_from_slice(&s.positions[ball]);
        Ok(())
    })
}

/// Loads a trained PAE checkpoint.
#[no_mangle]
pub unsafe extern "C" fn paegan_pae_load(path: *const c_char, out: *mut *mut PaeganPae) -> PaeganStatus {
    guard(|| {
        let (m, _) = model_io::load_pae(&PathBuf::from(string(path, "path")?))?;
        out_ptr(out, PaeganPae(m))
    })
}

/// Fresh untrained PAE with the default architecture.
#[no_mangle]
pub unsafe extern "C" fn paegan_pae_new(seed: u64, out: *mut *mut PaeganPae) -> PaeganStatus {
    guard(|| out_ptr(out, PaeganPae(PaeModel::new(Default::default(), seed)?)))
}

#[no_mangle]
pub unsafe extern "C" fn paegan_pae_free(pae: *mut PaeganPae) {
    if !pae.is_null() {
        drop(Box::from_raw(pae));
    }
}

/// Pixels per observation of this model.
#[no_mangle]
pub unsafe extern "C" fn paegan_pae_pixels(pae: *const PaeganPae) -> usize {
    pae.as_ref().map_or(0, |p| p.0.arch().pixels())
}

/// Zero belief state for `pae`.
#[no_mangle]
pub unsafe extern "C" fn paegan_belief_new(pae: *const PaeganPae, out: *mut *mut PaeganBelief) -> PaeganStatus {
    guard(|| {
        let p = &handle(pae, "pae")?.0;
        out_ptr(out, PaeganBelief(p.zero_beliefs(1)))
    })
}

#[no_mangle]
pub unsafe extern "C" fn paegan_belief_free(b: *mut PaeganBelief) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Advances the belief by one step. `frame` null means no observation.
#[no_mangle]
pub unsafe extern "C" fn paegan_belief_propagate(
    pae: *const PaeganPae,
    belief: *mut PaeganBelief,
    frame: *const f32,
    len: usize,
) -> PaeganStatus {
    guard(|| {
        let p = &handle(pae, "pae")?.0;
        let b = handle_mut(belief, "belief")?;
        let obs = if frame.is_null() {
            None
        } else {
            need_len(len, p.arch().pixels(), "frame")?;
            Some(slice(frame, len, "frame")?)
        };
        b.0 = p.propagate_batch(&b.0, &[obs])?;
        Ok(())
    })
}

/// Expected observation of the belief into `buf`.
#[no_mangle]
pub unsafe extern "C" fn paegan_belief_decode(
    pae: *const PaeganPae,
    belief: *const PaeganBelief,
    buf: *mut f32,
    len: usize,
) -> PaeganStatus {
    guard(|| {
        let p = &handle(pae, "pae")?.0;
        let b = handle(belief, "belief")?;
        need_len(len, p.arch().pixels(), "output buffer")?;
        let img = p.decode_batch(&b.0)?;
        slice_mut(buf, len, "buf")?.copy_from_slice(img.data());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn paegan_sampler_load(path: *const c_char, out: *mut *mut PaeganSampler) -> PaeganStatus {
    guard(|| {
        let (s, _, _) = model_io::load_gan(&PathBuf::from(string(path, "path")?))?;
        out_ptr(out, PaeganSampler(s))
    })
}

#[no_mangle]
pub unsafe extern "C" fn paegan_sampler_free(s: *mut PaeganSampler) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Draws one state sample from the belief (noise seeded by `seed`) and
/// writes its decoded observation into `buf`.
#[no_mangle]
pub unsafe extern "C" fn paegan_sample_observation(
    pae: *const PaeganPae,
    sampler: *const PaeganSampler,
    belief: *const PaeganBelief,
    seed: u64,
    buf: *mut f32,
    len: usize,
) -> PaeganStatus {
    guard(|| {
        let p = &handle(pae, "pae")?.0;
        let s = &handle(sampler, "sampler")?.0;
        let b = handle(belief, "belief")?;
        if s.arch() != p.arch() {
            return Err(fail(PaeganStatus::InvalidArgument, "sampler and PAE sizes differ"));
        }
        need_len(len, p.arch().pixels(), "output buffer")?;
        let noise: Tensor<f32> = draw_noise(&mut ChaCha8Rng::seed_from_u64(seed), 1, p.arch().noise_dim);
        let img = p.decode_batch(&s.sample_batch(&b.0, &noise)?)?;
        slice_mut(buf, len, "buf")?.copy_from_slice(img.data());
        Ok(())
    })
}

unsafe fn measurement(xy: *const f64, len: usize) -> Result<PositionMeasurement, Fail> {
    Ok(PositionMeasurement {
        measured_positions: slice(xy, len, "xy")?.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
    })
}

/// Particle filter over the world described by `world_json` (null for the
/// defaults), initialized from the prior.
#[no_mangle]
pub unsafe extern "C" fn paegan_filter_new(
    world_json: *const c_char,
    num_particles: usize,
    seed: u64,
    out: *mut *mut PaeganFilter,
) -> PaeganStatus {
    guard(|| {
        let cfg = PfConfig {
            num_particles,
            ..PfConfig::new(world(world_json)?)
        };
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let particles = pfilter::pf_init(&cfg, &mut rng)?;
        out_ptr(out, PaeganFilter { cfg, particles, rng })
    })
}

/// Particle filter initialized from the posterior after a first position
/// measurement `xy` (`2 * num_balls` values). Do not pass the same
/// measurement to `paegan_filter_update` again.
#[no_mangle]
pub unsafe extern "C" fn paegan_filter_new_from_measurement(
    world_json: *const c_char,
    num_particles: usize,
    seed: u64,
    xy: *const f64,
    len: usize,
    out: *mut *mut PaeganFilter,
) -> PaeganStatus {
    guard(|| {
        let cfg = PfConfig {
            num_particles,
            ..PfConfig::new(world(world_json)?)
        };
        cfg.validate()?;
        need_len(len, 2 * cfg.world.num_balls, "measurement")?;
        let z = measurement(xy, len)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let particles = pfilter::pf_init_from_measurement(&cfg, &z, &mut rng)?;
        out_ptr(out, PaeganFilter { cfg, particles, rng })
    })
}

#[no_mangle]
pub unsafe extern "C" fn paegan_filter_free(f: *mut PaeganFilter) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Propagates every particle one step.
#[no_mangle]
pub unsafe extern "C" fn paegan_filter_predict(f: *mut PaeganFilter) -> PaeganStatus {
    guard(|| {
        let f = handle_mut(f, "filter")?;
        pfilter::pf_predict(&mut f.particles, &f.cfg, &mut f.rng);
        Ok(())
    })
}

/// Weights by a position measurement `xy` (`2 * num_balls` values).
/// `diverged` (optional) is set to 1 when every weight collapsed.
#[no_mangle]
pub unsafe extern "C" fn paegan_filter_update(
    f: *mut PaeganFilter,
    xy: *const f64,
    len: usize,
    diverged: *mut i32,
) -> PaeganStatus {
    guard(|| {
        let f = handle_mut(f, "filter")?;
        need_len(len, 2 * f.cfg.world.num_balls, "measurement")?;
        let z = measurement(xy, len)?;
        let o = pfilter::pf_update(&mut f.particles, &z, &f.cfg, &mut f.rng)?;
        if let Some(d) = diverged.as_mut() {
            *d = i32::from(o.diverged);
        }
        Ok(())
    })
}

/// Weighted mean of the particles' rendered observations into `buf`.
#[no_mangle]
pub unsafe extern "C" fn paegan_filter_expected_observation(
    f: *const PaeganFilter,
    buf: *mut f32,
    len: usize,
) -> PaeganStatus {
    guard(|| {
        let f = handle(f, "filter")?;
        need_len(len, f.cfg.world.pixels(), "output buffer")?;
        let o = pfilter::pf_expected_observation(&f.particles, &f.cfg);
        slice_mut(buf, len, "buf")?.copy_from_slice(&o.pixels);
        Ok(())
    })
}

/// Weighted mean position of each ball into `xy` (`2 * num_balls` values).
#[no_mangle]
pub unsafe extern "C" fn paegan_filter_mean_positions(f: *const PaeganFilter, xy: *mut f64, len: usize) -> PaeganStatus {
    guard(|| {
        let f = handle(f, "filter")?;
        need_len(len, 2 * f.cfg.world.num_balls, "output buffer")?;
        let out = slice_mut(xy, len, "xy")?;
        for (i, p) in f.particles.mean_positions().iter().enumerate() {
            out[2 * i..2 * i + 2].copy_from_slice(p);
        }
        Ok(())
    })
}

/// Effective sample size of the current weights.
#[no_mangle]
pub unsafe extern "C" fn paegan_filter_ess(f: *const PaeganFilter) -> f64 {
    f.as_ref().map_or(0.0, |f| f.particles.ess())
}
