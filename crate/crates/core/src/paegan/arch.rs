use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnsub::{ParamStore, Scalar, Tensor};

/// Initial bias of the decoder's output logit. Frames are mostly
/// background, so the decoder starts near-black instead of mid-grey; from
/// mid-grey the first updates blow up the encoder and saturate the GRU.
pub const OUTPUT_BIAS_INIT: f64 = -4.0;

/// Layer sizes of the PAE, sampler and discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// Pixels per side; must be divisible by 4.
    pub image_size: usize,
    pub enc_channels: [usize; 3],
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub noise_dim: usize,
    pub sampler_hidden: usize,
    pub disc_channels: [usize; 3],
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            image_size: 28,
            enc_channels: [16, 32, 64],
            feature_dim: 128,
            hidden_dim: 256,
            noise_dim: 16,
            sampler_hidden: 256,
            disc_channels: [16, 32, 64],
        }
    }
}

impl ArchConfig {
    /// A few-parameter instance for tests and oracles.
    pub fn tiny() -> Self {
        ArchConfig {
            image_size: 4,
            enc_channels: [2, 3, 2],
            feature_dim: 3,
            hidden_dim: 4,
            noise_dim: 2,
            sampler_hidden: 5,
            disc_channels: [2, 2, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.feature_dim,
            self.hidden_dim,
            self.noise_dim,
            self.sampler_hidden,
        ];
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::Config(format!(
                "image_size must be a positive multiple of 4, got {}",
                self.image_size
            )));
        }
        if dims.contains(&0) || self.enc_channels.contains(&0) || self.disc_channels.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size
    }

    /// Side of the innermost encoder / first decoder feature map.
    pub fn code_side(&self) -> usize {
        self.image_size / 4
    }

    pub fn code_len(&self) -> usize {
        self.enc_channels[2] * self.code_side() * self.code_side()
    }

    /// Side of the last discriminator feature map.
    pub fn disc_side(&self) -> usize {
        (self.code_side() - 1) / 2 + 1
    }

    /// Fresh PAE parameters (encoder, GRU, decoder).
    pub fn init_pae<T: Scalar>(&self, rng: &mut impl Rng) -> Result<ParamStore<T>> {
        self.validate()?;
        let [c1, c2, c3] = self.enc_channels;
        let (f, h) = (self.feature_dim, self.hidden_dim);
        let mut s = ParamStore::new();
        conv(&mut s, "enc.c1", &[c1, 1, 4, 4], rng);
        conv(&mut s, "enc.c2", &[c2, c1, 4, 4], rng);
        conv(&mut s, "enc.c3", &[c3, c2, 3, 3], rng);
        dense(&mut s, "enc.fc", f, self.code_len(), rng);
        // GRU gates stacked as (z, r, candidate).
        s.init_uniform("gru.w", &[3 * h, f], h, rng);
        s.init_uniform("gru.b", &[3 * h], h, rng);
        s.init_uniform("gru.u_zr", &[2 * h, h], h, rng);
        s.init_uniform("gru.u_h", &[h, h], h, rng);
        dense(&mut s, "dec.fc", self.code_len(), h, rng);
        deconv(&mut s, "dec.d1", &[c3, c2, 3, 3], rng);
        deconv(&mut s, "dec.d2", &[c2, c1, 4, 4], rng);
        deconv(&mut s, "dec.d3", &[c1, 1, 4, 4], rng);
        s.set("dec.d3.b", Tensor::full(&[1], T::of(OUTPUT_BIAS_INIT)))?;
        Ok(s)
    }

    pub fn init_sampler<T: Scalar>(&self, rng: &mut impl Rng) -> Result<ParamStore<T>> {
        self.validate()?;
        let (h, m) = (self.hidden_dim, self.sampler_hidden);
        let mut s = ParamStore::new();
        dense(&mut s, "sampler.fc1", m, h + self.noise_dim, rng);
        dense(&mut s, "sampler.fc2", m, m, rng);
        dense(&mut s, "sampler.fc3", h, m, rng);
        Ok(s)
    }

    pub fn init_discriminator<T: Scalar>(&self, rng: &mut impl Rng) -> Result<ParamStore<T>> {
        self.validate()?;
        let [c1, c2, c3] = self.disc_channels;
        let mut s = ParamStore::new();
        conv(&mut s, "disc.c1", &[c1, 1, 4, 4], rng);
        s.init_uniform("disc.c2.w", &[c2, c1, 4, 4], c1 * 16, rng);
        batch_norm(&mut s, "disc.bn2", c2);
        s.init_uniform("disc.c3.w", &[c3, c2, 3, 3], c2 * 9, rng);
        batch_norm(&mut s, "disc.bn3", c3);
        let side = self.disc_side();
        dense(&mut s, "disc.fc", 1, c3 * side * side, rng);
        Ok(s)
    }
}

fn conv<T: Scalar>(s: &mut ParamStore<T>, name: &str, shape: &[usize], rng: &mut impl Rng) {
    let fan_in = shape[1] * shape[2] * shape[3];
    s.init_uniform(&format!("{name}.w"), shape, fan_in, rng);
    s.init_uniform(&format!("{name}.b"), &[shape[0]], fan_in, rng);
}

fn deconv<T: Scalar>(s: &mut ParamStore<T>, name: &str, shape: &[usize], rng: &mut impl Rng) {
    let fan_in = shape[0] * shape[2] * shape[3];
    s.init_uniform(&format!("{name}.w"), shape, fan_in, rng);
    s.init_uniform(&format!("{name}.b"), &[shape[1]], fan_in, rng);
}

fn dense<T: Scalar>(s: &mut ParamStore<T>, name: &str, out: usize, inp: usize, rng: &mut impl Rng) {
    s.init_uniform(&format!("{name}.w"), &[out, inp], inp, rng);
    s.init_uniform(&format!("{name}.b"), &[out], inp, rng);
}

fn batch_norm<T: Scalar>(s: &mut ParamStore<T>, name: &str, c: usize) {
    s.insert(&format!("{name}.gamma"), Tensor::full(&[c], T::one()), true);
    s.insert(&format!("{name}.beta"), Tensor::zeros(&[c]), true);
    s.insert(&format!("{name}.mean"), Tensor::zeros(&[c]), false);
    s.insert(&format!("{name}.var"), Tensor::full(&[c], T::one()), false);
}
