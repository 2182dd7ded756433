use rand::Rng;
use rand_distr::StandardNormal;

use super::net::{self, Bound, Mode, Norm};
use super::ArchConfig;
use crate::ballworld::Observation;
use crate::error::{Error, Result};
use crate::nnsub::{Graph, ParamStore, Scalar, Tensor};
use crate::seed::{self, tag};

/// The recurrent hidden vector of the PAE. A state sample has the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState<T: Scalar = f32> {
    pub h: Vec<T>,
}

impl<T: Scalar> BeliefState<T> {
    pub fn zeros(dim: usize) -> Self {
        BeliefState { h: vec![T::zero(); dim] }
    }

    pub fn as_tensor(&self) -> Tensor<T> {
        Tensor::new(&[1, self.h.len()], self.h.clone()).expect("belief is non-empty")
    }

    fn from_row(t: &Tensor<T>) -> Self {
        BeliefState { h: t.row(0).to_vec() }
    }
}

/// Stacks flat images into `[N, 1, S, S]`.
pub(crate) fn image_batch<T: Scalar>(side: usize, frames: &[&[f32]]) -> Result<Tensor<T>> {
    let px = side * side;
    let mut data = Vec::with_capacity(frames.len() * px);
    for f in frames {
        if f.len() != px {
            return Err(Error::Length(format!("frame has {} pixels, expected {px}", f.len())));
        }
        data.extend(f.iter().map(|&v| T::of(f64::from(v))));
    }
    Tensor::new(&[frames.len(), 1, side, side], data)
}

/// Standard-normal noise rows `[n, dim]`.
pub fn draw_noise<T: Scalar>(rng: &mut impl Rng, n: usize, dim: usize) -> Tensor<T> {
    Tensor::from_fn(&[n, dim], |_| T::of(rng.sample::<f64, _>(StandardNormal)))
}

fn check_rows<T: Scalar>(what: &str, t: &Tensor<T>, width: usize) -> Result<()> {
    if t.shape().len() != 2 || t.row_len() != width {
        return Err(Error::shape("paegan", format!("{what} must be [N, {width}], got {:?}", t.shape())));
    }
    Ok(())
}

/// Predictive autoencoder: encoder, GRU and decoder.
#[derive(Debug, Clone)]
pub struct PaeModel<T: Scalar = f32> {
    arch: ArchConfig,
    store: ParamStore<T>,
}

impl<T: Scalar> PaeModel<T> {
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        let store = arch.init_pae(&mut seed::rng_for(seed, tag::INIT, 0))?;
        Ok(PaeModel { arch, store })
    }

    pub fn from_store(arch: ArchConfig, store: ParamStore<T>) -> Result<Self> {
        let reference: ParamStore<T> = arch.init_pae(&mut seed::rng_for(0, tag::INIT, 0))?;
        store.check_layout(&reference)?;
        Ok(PaeModel { arch, store })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore<T> {
        self.store
    }

    pub fn cast<U: Scalar>(&self) -> PaeModel<U> {
        PaeModel {
            arch: self.arch.clone(),
            store: self.store.cast(),
        }
    }

    pub fn zero_belief(&self) -> BeliefState<T> {
        BeliefState::zeros(self.arch.hidden_dim)
    }

    pub fn zero_beliefs(&self, n: usize) -> Tensor<T> {
        Tensor::zeros(&[n, self.arch.hidden_dim])
    }

    /// Encoder features `[N, feature_dim]` of flat frames.
    pub fn encode_frames(&self, frames: &[&[f32]]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.store, Mode::Frozen)?;
        let x = g.constant(image_batch(self.arch.image_size, frames)?);
        let f = net::encode(&mut g, &p, x)?;
        Ok(g.value(f).clone())
    }

    /// One belief-propagation step for a batch; `None` is the null observation.
    pub fn propagate_batch(&self, h: &Tensor<T>, obs: &[Option<&[f32]>]) -> Result<Tensor<T>> {
        check_rows("belief batch", h, self.arch.hidden_dim)?;
        if obs.len() != h.rows() {
            return Err(Error::Length(format!("{} observations for {} beliefs", obs.len(), h.rows())));
        }
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.store, Mode::Frozen)?;
        let seen: Vec<&[f32]> = obs.iter().flatten().copied().collect();
        let null = vec![0.0f32; self.arch.pixels()];
        let mut frames = seen.clone();
        frames.push(&null);
        let x = g.constant(image_batch(self.arch.image_size, &frames)?);
        let feats = net::encode(&mut g, &p, x)?;
        let mut next = 0;
        let index: Vec<usize> = obs
            .iter()
            .map(|o| match o {
                Some(_) => {
                    next += 1;
                    next - 1
                }
                None => seen.len(),
            })
            .collect();
        let x = g.gather_rows(feats, index)?;
        let xp = net::gru_input(&mut g, &p, x)?;
        let h0 = g.constant(h.clone());
        let h1 = net::gru_step(&mut g, &p, xp, h0)?;
        Ok(g.value(h1).clone())
    }

    pub fn propagate(&self, bs: &BeliefState<T>, o: &Observation) -> Result<BeliefState<T>> {
        let frame = (!o.is_null).then_some(o.pixels.as_slice());
        Ok(BeliefState::from_row(&self.propagate_batch(&bs.as_tensor(), &[frame])?))
    }

    /// `steps` blind propagations of every row.
    pub fn blind_batch(&self, h: &Tensor<T>, steps: usize) -> Result<Tensor<T>> {
        let mut h = h.clone();
        let obs = vec![None; h.rows()];
        for _ in 0..steps {
            h = self.propagate_batch(&h, &obs)?;
        }
        Ok(h)
    }

    /// Decoded images `[N, S*S]`.
    pub fn decode_batch(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        check_rows("belief batch", h, self.arch.hidden_dim)?;
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.store, Mode::Frozen)?;
        let hv = g.constant(h.clone());
        let y = net::decode(&mut g, &p, &self.arch, hv)?;
        g.value(y).clone().reshape(&[h.rows(), self.arch.pixels()])
    }

    pub fn decode(&self, bs: &BeliefState<T>) -> Result<Observation> {
        let y = self.decode_batch(&bs.as_tensor())?;
        Observation::from_pixels(self.arch.image_size, y.to_f32_vec())
    }
}

/// MLP mapping a belief and a noise vector to a state sample.
#[derive(Debug, Clone)]
pub struct SamplerModel<T: Scalar = f32> {
    arch: ArchConfig,
    store: ParamStore<T>,
}

impl<T: Scalar> SamplerModel<T> {
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        let store = arch.init_sampler(&mut seed::rng_for(seed, tag::INIT, 1))?;
        Ok(SamplerModel { arch, store })
    }

    pub fn from_store(arch: ArchConfig, store: ParamStore<T>) -> Result<Self> {
        let reference: ParamStore<T> = arch.init_sampler(&mut seed::rng_for(0, tag::INIT, 1))?;
        store.check_layout(&reference)?;
        Ok(SamplerModel { arch, store })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn cast<U: Scalar>(&self) -> SamplerModel<U> {
        SamplerModel {
            arch: self.arch.clone(),
            store: self.store.cast(),
        }
    }

    pub fn sample_batch(&self, bs: &Tensor<T>, noise: &Tensor<T>) -> Result<Tensor<T>> {
        check_rows("belief batch", bs, self.arch.hidden_dim)?;
        check_rows("noise batch", noise, self.arch.noise_dim)?;
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.store, Mode::Frozen)?;
        let (b, n) = (g.constant(bs.clone()), g.constant(noise.clone()));
        let s = net::sampler(&mut g, &p, b, n)?;
        Ok(g.value(s).clone())
    }

    pub fn sample_state(&self, bs: &BeliefState<T>, noise: &[T]) -> Result<BeliefState<T>> {
        let noise = Tensor::new(&[1, noise.len()], noise.to_vec())?;
        Ok(BeliefState::from_row(&self.sample_batch(&bs.as_tensor(), &noise)?))
    }
}

/// DCGAN-style image classifier (real vs sampled observations).
#[derive(Debug, Clone)]
pub struct DiscriminatorModel<T: Scalar = f32> {
    arch: ArchConfig,
    store: ParamStore<T>,
}

impl<T: Scalar> DiscriminatorModel<T> {
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        let store = arch.init_discriminator(&mut seed::rng_for(seed, tag::INIT, 2))?;
        Ok(DiscriminatorModel { arch, store })
    }

    pub fn from_store(arch: ArchConfig, store: ParamStore<T>) -> Result<Self> {
        let reference: ParamStore<T> = arch.init_discriminator(&mut seed::rng_for(0, tag::INIT, 2))?;
        store.check_layout(&reference)?;
        Ok(DiscriminatorModel { arch, store })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn cast<U: Scalar>(&self) -> DiscriminatorModel<U> {
        DiscriminatorModel {
            arch: self.arch.clone(),
            store: self.store.cast(),
        }
    }

    /// Probability that each flat image `[N, S*S]` is real, using the
    /// running batch-norm statistics.
    pub fn probabilities(&self, images: &Tensor<T>) -> Result<Vec<f64>> {
        check_rows("image batch", images, self.arch.pixels())?;
        let s = self.arch.image_size;
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.store, Mode::Frozen)?;
        let x = g.constant(images.clone().reshape(&[images.rows(), 1, s, s])?);
        let (y, _) = net::discriminator(&mut g, &p, x, &Norm::Running(&self.store))?;
        Ok(g.value(y).data().iter().map(|v| v.f64()).collect())
    }

    /// [`Self::probabilities`] with batch-norm statistics taken from
    /// `images` itself, as during training.
    pub fn batch_probabilities(&self, images: &Tensor<T>) -> Result<Vec<f64>> {
        check_rows("image batch", images, self.arch.pixels())?;
        let s = self.arch.image_size;
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.store, Mode::Frozen)?;
        let x = g.constant(images.clone().reshape(&[images.rows(), 1, s, s])?);
        let (y, _) = net::discriminator(&mut g, &p, x, &Norm::Batch)?;
        Ok(g.value(y).data().iter().map(|v| v.f64()).collect())
    }
}

/// Mean of `n` decoded samples of `bs`, each propagated `horizon` blind
/// steps, clamped to `[0, 1]`.
pub fn expected_obs_via_samples<T: Scalar>(
    bs: &BeliefState<T>,
    n: usize,
    horizon: usize,
    sampler: &SamplerModel<T>,
    pae: &PaeModel<T>,
    rng: &mut impl Rng,
) -> Result<Observation> {
    if n == 0 {
        return Err(Error::Config("expected_obs_via_samples needs n >= 1".into()));
    }
    let noise = draw_noise(rng, n, sampler.arch().noise_dim);
    expected_obs_with_noise(bs, &noise, horizon, sampler, pae)
}

/// [`expected_obs_via_samples`] with explicit noise rows `[n, noise_dim]`.
pub fn expected_obs_with_noise<T: Scalar>(
    bs: &BeliefState<T>,
    noise: &Tensor<T>,
    horizon: usize,
    sampler: &SamplerModel<T>,
    pae: &PaeModel<T>,
) -> Result<Observation> {
    let n = noise.rows();
    let rows = Tensor::from_fn(&[n, bs.h.len()], |i| bs.h[i % bs.h.len()]);
    let s = sampler.sample_batch(&rows, noise)?;
    let s = pae.blind_batch(&s, horizon)?;
    let imgs = pae.decode_batch(&s)?;
    let px = imgs.row_len();
    let mut mean = vec![0.0f64; px];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(imgs.row(r)) {
            *m += v.f64() / n as f64;
        }
    }
    Observation::from_pixels(pae.arch().image_size, mean.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect())
}
