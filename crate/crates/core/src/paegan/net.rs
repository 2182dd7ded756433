//! Graph builders for every network, shared by inference and training.

use std::collections::BTreeMap;

use super::ArchConfig;
use crate::error::{Error, Result};
use crate::nnsub::kernels::BN_EPS;
use crate::nnsub::{ConvGeom, Graph, ParamStore, Scalar, Var};

pub(crate) const LRELU_SLOPE: f64 = 0.2;

const S2P1: ConvGeom = ConvGeom { stride: 2, pad: 1 };
const S1P1: ConvGeom = ConvGeom { stride: 1, pad: 1 };

/// How stored tensors enter a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    /// Trainable entries receive gradients.
    Train,
    /// Everything is a constant.
    Frozen,
}

/// Parameter nodes of one store bound into one graph.
pub(crate) struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, mode: Mode) -> Result<Self> {
        let keys: Vec<String> = store.keys().map(str::to_string).collect();
        let mut vars = BTreeMap::new();
        for k in keys {
            let v = match mode {
                Mode::Train => g.param(store, &k)?,
                Mode::Frozen => g.frozen(store, &k)?,
            };
            vars.insert(k, v);
        }
        Ok(Bound { vars })
    }

    pub fn get(&self, key: &str) -> Result<Var> {
        self.vars.get(key).copied().ok_or_else(|| Error::UnknownParam(key.to_string()))
    }

    fn wb(&self, name: &str) -> Result<(Var, Var)> {
        Ok((self.get(&format!("{name}.w"))?, self.get(&format!("{name}.b"))?))
    }
}

/// `[N, 1, S, S]` images to `[N, feature_dim]` features.
pub(crate) fn encode<T: Scalar>(g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
    let mut h = x;
    for (name, geom) in [("enc.c1", S2P1), ("enc.c2", S2P1), ("enc.c3", S1P1)] {
        let (w, b) = p.wb(name)?;
        h = g.conv2d(h, w, Some(b), geom)?;
        h = g.relu(h);
    }
    let (w, b) = p.wb("enc.fc")?;
    g.linear(h, w, Some(b))
}

/// Input-side gate pre-activations `[N, 3H]` for the GRU.
pub(crate) fn gru_input<T: Scalar>(g: &mut Graph<T>, p: &Bound, features: Var) -> Result<Var> {
    let (w, b) = p.wb("gru")?;
    g.linear(features, w, Some(b))
}

/// One GRU step from precomputed input projections `xp`.
pub(crate) fn gru_step<T: Scalar>(g: &mut Graph<T>, p: &Bound, xp: Var, h: Var) -> Result<Var> {
    let hd = g.value(h).row_len();
    let xp_zr = g.slice_cols(xp, 0, 2 * hd)?;
    let xp_c = g.slice_cols(xp, 2 * hd, hd)?;
    let u_zr = p.get("gru.u_zr")?;
    let hu = g.linear(h, u_zr, None)?;
    let pre = g.add(xp_zr, hu)?;
    let zr = g.sigmoid(pre);
    let z = g.slice_cols(zr, 0, hd)?;
    let r = g.slice_cols(zr, hd, hd)?;
    let rh = g.mul(r, h)?;
    let u_h = p.get("gru.u_h")?;
    let hu = g.linear(rh, u_h, None)?;
    let pre = g.add(xp_c, hu)?;
    let cand = g.tanh(pre);
    let delta = g.sub(cand, h)?;
    let step = g.mul(z, delta)?;
    g.add(h, step)
}

/// `[N, H]` beliefs to `[N, 1, S, S]` images in `[0, 1]`.
pub(crate) fn decode<T: Scalar>(g: &mut Graph<T>, p: &Bound, arch: &ArchConfig, h: Var) -> Result<Var> {
    let n = g.value(h).rows();
    let (w, b) = p.wb("dec.fc")?;
    let x = g.linear(h, w, Some(b))?;
    let x = g.relu(x);
    let side = arch.code_side();
    let mut x = g.reshape(x, &[n, arch.enc_channels[2], side, side])?;
    for (name, geom) in [("dec.d1", S1P1), ("dec.d2", S2P1)] {
        let (w, b) = p.wb(name)?;
        x = g.deconv2d(x, w, Some(b), geom)?;
        x = g.relu(x);
    }
    let (w, b) = p.wb("dec.d3")?;
    let x = g.deconv2d(x, w, Some(b), S2P1)?;
    Ok(g.sigmoid(x))
}

/// `(bs, noise)` to a state sample.
pub(crate) fn sampler<T: Scalar>(g: &mut Graph<T>, p: &Bound, bs: Var, noise: Var) -> Result<Var> {
    let mut x = g.concat_cols(bs, noise)?;
    for name in ["sampler.fc1", "sampler.fc2"] {
        let (w, b) = p.wb(name)?;
        x = g.linear(x, w, Some(b))?;
        x = g.relu(x);
    }
    let (w, b) = p.wb("sampler.fc3")?;
    let x = g.linear(x, w, Some(b))?;
    Ok(g.tanh(x))
}

/// Source of batch-norm statistics in the discriminator.
pub(crate) enum Norm<'a, T: Scalar> {
    /// Statistics of the current batch (discriminator training).
    Batch,
    /// Stored running statistics.
    Running(&'a ParamStore<T>),
}

/// Batch statistics of one normalization layer: (name, mean, var, count).
pub(crate) type BnBatch<T> = (&'static str, Vec<T>, Vec<T>, usize);

/// Images to real-probabilities `[N, 1]`.
pub(crate) fn discriminator<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound,
    x: Var,
    norm: &Norm<'_, T>,
) -> Result<(Var, Vec<BnBatch<T>>)> {
    let n = g.value(x).rows();
    let (w, b) = p.wb("disc.c1")?;
    let h = g.conv2d(x, w, Some(b), S2P1)?;
    let mut h = g.leaky_relu(h, LRELU_SLOPE);
    let mut stats = Vec::new();
    for (conv, bn, geom) in [
        ("disc.c2.w", "disc.bn2", S2P1),
        ("disc.c3.w", "disc.bn3", ConvGeom { stride: 2, pad: 1 }),
    ] {
        h = g.conv2d(h, p.get(conv)?, None, geom)?;
        let gamma = p.get(&format!("{bn}.gamma"))?;
        let beta = p.get(&format!("{bn}.beta"))?;
        h = match norm {
            Norm::Batch => {
                let count = g.value(h).len() / g.value(h).shape()[1];
                let (y, mean, var) = g.batch_norm(h, gamma, beta)?;
                stats.push((bn, mean, var, count));
                y
            }
            Norm::Running(store) => {
                let gm = store.get(&format!("{bn}.gamma"))?;
                let bt = store.get(&format!("{bn}.beta"))?;
                let mean = store.get(&format!("{bn}.mean"))?;
                let var = store.get(&format!("{bn}.var"))?;
                let scale: Vec<f64> = gm
                    .data()
                    .iter()
                    .zip(var.data())
                    .map(|(&gv, &v)| gv.f64() / (v.f64() + BN_EPS).sqrt())
                    .collect();
                let shift: Vec<f64> = bt
                    .data()
                    .iter()
                    .zip(mean.data())
                    .zip(&scale)
                    .map(|((&b, &m), &s)| b.f64() - s * m.f64())
                    .collect();
                g.channel_affine(h, &scale, &shift)?
            }
        };
        h = g.leaky_relu(h, LRELU_SLOPE);
    }
    let flat = g.value(h).len() / n;
    let h = g.reshape(h, &[n, flat])?;
    let (w, b) = p.wb("disc.fc")?;
    let logit = g.linear(h, w, Some(b))?;
    Ok((g.sigmoid(logit), stats))
}
