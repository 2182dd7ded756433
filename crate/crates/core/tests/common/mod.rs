//! Loop-level reference implementations of the PAEGAN networks and losses,
//! built only from the eager layer kernels.

#![allow(dead_code)]

use paegan::nnsub::kernels::{self, GruWeights, BN_EPS};
use paegan::nnsub::{ConvGeom, ParamStore, Tensor};
use paegan::paegan::ArchConfig;

pub struct Reference<'a> {
    pub arch: &'a ArchConfig,
    pub pae: &'a ParamStore<f64>,
    pub sampler: Option<&'a ParamStore<f64>>,
    pub disc: Option<&'a ParamStore<f64>>,
}

const S2P1: ConvGeom = ConvGeom { stride: 2, pad: 1 };
const S1P1: ConvGeom = ConvGeom { stride: 1, pad: 1 };

fn get<'s>(s: &'s ParamStore<f64>, k: &str) -> &'s Tensor<f64> {
    s.get(k).unwrap()
}

fn rows(t: &Tensor<f64>, from: usize, to: usize) -> Tensor<f64> {
    let r = t.row_len();
    let shape: Vec<usize> = if t.shape().len() == 1 { vec![to - from] } else { vec![to - from, r] };
    let data = if t.shape().len() == 1 { t.data()[from..to].to_vec() } else { t.data()[from * r..to * r].to_vec() };
    Tensor::new(&shape, data).unwrap()
}

impl Reference<'_> {
    pub fn encode(&self, img: &[f64]) -> Vec<f64> {
        let s = self.arch.image_size;
        let p = self.pae;
        let mut x = Tensor::new(&[1, 1, s, s], img.to_vec()).unwrap();
        for (name, geom) in [("enc.c1", S2P1), ("enc.c2", S2P1), ("enc.c3", S1P1)] {
            x = kernels::conv2d_forward(&x, get(p, &format!("{name}.w")), Some(get(p, &format!("{name}.b"))), geom)
                .unwrap();
            x = kernels::relu(&x);
        }
        let flat = Tensor::new(&[x.len()], x.into_data()).unwrap();
        kernels::linear_forward(&flat, get(p, "enc.fc.w"), Some(get(p, "enc.fc.b")))
            .unwrap()
            .into_data()
    }

    pub fn gru(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let p = self.pae;
        let hd = self.arch.hidden_dim;
        let (w, b, u) = (get(p, "gru.w"), get(p, "gru.b"), get(p, "gru.u_zr"));
        let (w_z, w_r, w_h) = (rows(w, 0, hd), rows(w, hd, 2 * hd), rows(w, 2 * hd, 3 * hd));
        let (b_z, b_r, b_h) = (rows(b, 0, hd), rows(b, hd, 2 * hd), rows(b, 2 * hd, 3 * hd));
        let (u_z, u_r) = (rows(u, 0, hd), rows(u, hd, 2 * hd));
        let weights = GruWeights {
            w_z: &w_z,
            u_z: &u_z,
            b_z: &b_z,
            w_r: &w_r,
            u_r: &u_r,
            b_r: &b_r,
            w_h: &w_h,
            u_h: get(p, "gru.u_h"),
            b_h: &b_h,
        };
        let x = Tensor::new(&[x.len()], x.to_vec()).unwrap();
        let h = Tensor::new(&[h.len()], h.to_vec()).unwrap();
        kernels::gru_cell(&x, &h, &weights).unwrap().into_data()
    }

    pub fn decode(&self, h: &[f64]) -> Vec<f64> {
        let p = self.pae;
        let a = self.arch;
        let hv = Tensor::new(&[h.len()], h.to_vec()).unwrap();
        let x = kernels::relu(&kernels::linear_forward(&hv, get(p, "dec.fc.w"), Some(get(p, "dec.fc.b"))).unwrap());
        let side = a.code_side();
        let mut x = Tensor::new(&[1, a.enc_channels[2], side, side], x.into_data()).unwrap();
        for (name, geom, last) in [("dec.d1", S1P1, false), ("dec.d2", S2P1, false), ("dec.d3", S2P1, true)] {
            x = kernels::deconv2d_forward(&x, get(p, &format!("{name}.w")), Some(get(p, &format!("{name}.b"))), geom)
                .unwrap();
            x = if last { kernels::sigmoid(&x) } else { kernels::relu(&x) };
        }
        x.into_data()
    }

    pub fn step(&self, h: &[f64], frame: Option<&[f64]>) -> Vec<f64> {
        let null = vec![0.0; self.arch.pixels()];
        self.gru(&self.encode(frame.unwrap_or(&null)), h)
    }

    pub fn blind(&self, h: &[f64], steps: usize) -> Vec<f64> {
        (0..steps).fold(h.to_vec(), |h, _| self.step(&h, None))
    }

    pub fn sample(&self, bs: &[f64], noise: &[f64]) -> Vec<f64> {
        let p = self.sampler.unwrap();
        let mut x: Vec<f64> = bs.iter().chain(noise).copied().collect();
        for (i, name) in ["sampler.fc1", "sampler.fc2", "sampler.fc3"].iter().enumerate() {
            let t = Tensor::new(&[x.len()], x).unwrap();
            let y = kernels::linear_forward(&t, get(p, &format!("{name}.w")), Some(get(p, &format!("{name}.b")))).unwrap();
            x = if i < 2 { kernels::relu(&y) } else { kernels::tanh(&y) }.into_data();
        }
        x
    }

    /// Discriminator probability with running batch-norm statistics.
    pub fn disc(&self, img: &[f64]) -> f64 {
        self.disc_impl(&[img.to_vec()], false)[0]
    }

    /// Discriminator probabilities of a batch normalized with its own
    /// per-channel statistics (biased variance).
    pub fn disc_batch(&self, imgs: &[Vec<f64>]) -> Vec<f64> {
        self.disc_impl(imgs, true)
    }

    fn disc_impl(&self, imgs: &[Vec<f64>], batch: bool) -> Vec<f64> {
        let p = self.disc.unwrap();
        let s = self.arch.image_size;
        let mut xs: Vec<Tensor<f64>> = imgs
            .iter()
            .map(|img| {
                let x = Tensor::new(&[1, 1, s, s], img.clone()).unwrap();
                kernels::leaky_relu(
                    &kernels::conv2d_forward(&x, get(p, "disc.c1.w"), Some(get(p, "disc.c1.b")), S2P1).unwrap(),
                    0.2,
                )
            })
            .collect();
        for (c, bn) in [("disc.c2.w", "disc.bn2"), ("disc.c3.w", "disc.bn3")] {
            let ys: Vec<Tensor<f64>> = xs.iter().map(|x| kernels::conv2d_forward(x, get(p, c), None, S2P1).unwrap()).collect();
            let gamma = get(p, &format!("{bn}.gamma")).data();
            let beta = get(p, &format!("{bn}.beta")).data();
            let ch = gamma.len();
            let plane = ys[0].len() / ch;
            let (mean, var) = if batch {
                let count = (ys.len() * plane) as f64;
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for y in &ys {
                    for k in 0..ch {
                        for v in &y.data()[k * plane..(k + 1) * plane] {
                            mean[k] += v / count;
                        }
                    }
                }
                for y in &ys {
                    for k in 0..ch {
                        for v in &y.data()[k * plane..(k + 1) * plane] {
                            var[k] += (v - mean[k]).powi(2) / count;
                        }
                    }
                }
                (mean, var)
            } else {
                (get(p, &format!("{bn}.mean")).data().to_vec(), get(p, &format!("{bn}.var")).data().to_vec())
            };
            xs = ys
                .into_iter()
                .map(|mut y| {
                    for k in 0..ch {
                        let scale = gamma[k] / (var[k] + BN_EPS).sqrt();
                        for v in &mut y.data_mut()[k * plane..(k + 1) * plane] {
                            *v = (*v - mean[k]) * scale + beta[k];
                        }
                    }
                    kernels::leaky_relu(&y, 0.2)
                })
                .collect();
        }
        xs.into_iter()
            .map(|x| {
                let flat = Tensor::new(&[x.len()], x.into_data()).unwrap();
                let logit = kernels::linear_forward(&flat, get(p, "disc.fc.w"), Some(get(p, "disc.fc.b"))).unwrap();
                1.0 / (1.0 + (-logit.data()[0]).exp())
            })
            .collect()
    }

    /// Summed squared prediction error over one episode with a mask.
    pub fn pae_loss(&self, frames: &[Vec<f64>], mask: &[bool]) -> f64 {
        let mut h = vec![0.0; self.arch.hidden_dim];
        let mut total = 0.0;
        for (t, f) in frames.iter().enumerate() {
            h = self.step(&h, (!mask[t]).then_some(f.as_slice()));
            let o = self.decode(&h);
            for (a, b) in o.iter().zip(f) {
                total += (a - b) * (a - b);
            }
        }
        total
    }

    pub fn averager_loss(&self, bs: &[f64], noises: &[Vec<f64>], horizon: usize) -> f64 {
        let target = self.decode(&self.blind(bs, horizon));
        let decoded: Vec<Vec<f64>> = noises
            .iter()
            .map(|nz| self.decode(&self.blind(&self.sample(bs, nz), horizon)))
            .collect();
        let n = noises.len() as f64;
        let mut total = 0.0;
        for (k, t) in target.iter().enumerate() {
            let mut mean = 0.0;
            for d in &decoded {
                mean += d[k];
            }
            mean /= n;
            total += (t - mean) * (t - mean);
        }
        total
    }

    /// Mean `-ln p` over a batch of samples, the discriminator using the
    /// batch's statistics.
    pub fn generator_loss(&self, bs: &[Vec<f64>], noise: &[Vec<f64>]) -> f64 {
        let imgs: Vec<Vec<f64>> = bs.iter().zip(noise).map(|(b, z)| self.decode(&self.sample(b, z))).collect();
        let p = self.disc_batch(&imgs);
        p.iter().map(|&p| -p.clamp(1e-7, 1.0 - 1e-7).ln()).sum::<f64>() / p.len() as f64
    }
}

pub mod oracles;
pub mod pf;
pub mod physics;
pub mod probe;
pub mod substrate;
