//! Eager forward/backward kernels for every layer type.
//!
//! Spatial tensors are `[C, H, W]` or batched `[N, C, H, W]`; vector inputs
//! to dense layers are `[D]` or batched `[N, ...]` (trailing dims flattened).
//! Convolution is cross-correlation (no kernel flip). Convolution weights are
//! `[C_out, C_in, K, K]`; transposed-convolution weights are
//! `[C_in, C_out, K, K]`, so the same buffer used as a transposed convolution
//! is the exact adjoint of the convolution.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const BCE_CLAMP: f64 = 1e-7;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

pub fn conv_out_size(input: usize, k: usize, g: ConvGeom) -> Result<usize> {
    if g.stride == 0 || input + 2 * g.pad < k {
        return Err(Error::shape(
            "conv2d",
            format!("input {input} with kernel {k}, stride {}, pad {}", g.stride, g.pad),
        ));
    }
    Ok((input + 2 * g.pad - k) / g.stride + 1)
}

pub fn deconv_out_size(input: usize, k: usize, g: ConvGeom) -> Result<usize> {
    let full = (input - 1) * g.stride + k;
    if g.stride == 0 || full <= 2 * g.pad {
        return Err(Error::shape(
            "deconv2d",
            format!("input {input} with kernel {k}, stride {}, pad {}", g.stride, g.pad),
        ));
    }
    Ok(full - 2 * g.pad)
}

/// Batched `[N, C, H, W]` view of a 3-D or 4-D tensor.
fn nchw<T: Scalar>(x: &Tensor<T>, op: &'static str) -> Result<[usize; 4]> {
    match *x.shape() {
        [c, h, w] => Ok([1, c, h, w]),
        [n, c, h, w] => Ok([n, c, h, w]),
        ref s => Err(Error::shape(op, format!("expected [C,H,W] or [N,C,H,W], got {s:?}"))),
    }
}

fn out_shape(batched: bool, n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if batched {
        vec![n, c, h, w]
    } else {
        vec![c, h, w]
    }
}

struct Patch {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
}

impl Patch {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Source pixel for output position `o` and kernel offset `kk`, or `None`
    /// when it falls in the zero padding.
    #[inline]
    fn src(&self, o: usize, kk: usize, stride: usize, len: usize) -> Option<usize> {
        let i = (o * stride + kk).checked_sub(self.g.pad)?;
        (i < len).then_some(i)
    }

    /// `cols[(c*K + ki)*K + kj, oy*Wo + ox] = img[c, oy*s + ki - p, ox*s + kj - p]`.
    fn im2col<T: Scalar>(&self, img: &[T], cols: &mut [T]) {
        let (k, s, hw) = (self.k, self.g.stride, self.cols());
        for c in 0..self.c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut cols[((c * k + ki) * k + kj) * hw..][..hw];
                    for oy in 0..self.ho {
                        let dst = &mut row[oy * self.wo..][..self.wo];
                        match self.src(oy, ki, s, self.h) {
                            None => dst.fill(T::zero()),
                            Some(iy) => {
                                let line = &img[(c * self.h + iy) * self.w..][..self.w];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = match self.src(ox, kj, s, self.w) {
                                        Some(ix) => line[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Patch::im2col`]: scatter-adds columns back into `img`.
    fn col2im<T: Scalar>(&self, cols: &[T], img: &mut [T]) {
        let (k, s, hw) = (self.k, self.g.stride, self.cols());
        for c in 0..self.c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = &cols[((c * k + ki) * k + kj) * hw..][..hw];
                    for oy in 0..self.ho {
                        let Some(iy) = self.src(oy, ki, s, self.h) else {
                            continue;
                        };
                        let line = &mut img[(c * self.h + iy) * self.w..][..self.w];
                        for (ox, &v) in row[oy * self.wo..][..self.wo].iter().enumerate() {
                            if let Some(ix) = self.src(ox, kj, s, self.w) {
                                line[ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_weight<T: Scalar>(
    op: &'static str,
    w: &Tensor<T>,
    lead: usize,
) -> Result<(usize, usize)> {
    match *w.shape() {
        [a, b, k1, k2] if a == lead && k1 == k2 => Ok((b, k1)),
        ref s => Err(Error::shape(
            op,
            format!("weight {s:?} incompatible with {lead} input channels"),
        )),
    }
}

fn check_bias<T: Scalar>(op: &'static str, b: Option<&Tensor<T>>, n: usize) -> Result<()> {
    match b {
        Some(b) if b.len() != n => Err(Error::shape(op, format!("bias of {} for {n} outputs", b.len()))),
        _ => Ok(()),
    }
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: Option<&Tensor<T>>, plane: usize) {
    if let Some(b) = bias {
        for (chan, &bv) in out.chunks_exact_mut(plane).zip(b.data().iter().cycle()) {
            for v in chan {
                *v += bv;
            }
        }
    }
}

fn channel_sums<T: Scalar>(g: &[T], channels: usize, plane: usize) -> Tensor<T> {
    let mut db = vec![T::zero(); channels];
    for (i, chan) in g.chunks_exact(plane).enumerate() {
        db[i % channels] += chan.iter().copied().sum();
    }
    Tensor::new(&[channels], db).expect("channels > 0")
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    g: ConvGeom,
) -> Result<Tensor<T>> {
    let [n, ci, h, wd] = nchw(x, "conv2d")?;
    let co = w.shape()[0];
    let (wci, k) = check_weight("conv2d", w, co)?;
    if wci != ci {
        return Err(Error::shape("conv2d", format!("weight expects {wci} input channels, got {ci}")));
    }
    check_bias("conv2d", b, co)?;
    let p = Patch {
        c: ci,
        h,
        w: wd,
        k,
        g,
        ho: conv_out_size(h, k, g)?,
        wo: conv_out_size(wd, k, g)?,
    };
    let (rows, cols) = (p.rows(), p.cols());
    let mut buf = vec![T::zero(); rows * cols];
    let mut out = vec![T::zero(); n * co * cols];
    for (xi, oi) in x.data().chunks_exact(ci * h * wd).zip(out.chunks_exact_mut(co * cols)) {
        p.im2col(xi, &mut buf);
        T::gemm_raw(co, rows, cols, T::one(), w.data(), (rows, 1), &buf, (cols, 1), T::zero(), oi, (cols, 1));
    }
    add_channel_bias(&mut out, b, cols);
    Tensor::new(&out_shape(x.shape().len() == 4, n, co, p.ho, p.wo), out)
}

#[derive(Debug, Clone)]
pub struct LayerGrads<T: Scalar> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

#[derive(Debug, Clone, Copy)]
pub struct Needs {
    pub input: bool,
    pub weight: bool,
    pub bias: bool,
}

impl Needs {
    pub const ALL: Needs = Needs {
        input: true,
        weight: true,
        bias: true,
    };
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    g: ConvGeom,
    needs: Needs,
) -> Result<LayerGrads<T>> {
    let [n, ci, h, wd] = nchw(x, "conv2d")?;
    let co = w.shape()[0];
    let (_, k) = check_weight("conv2d", w, co)?;
    let p = Patch {
        c: ci,
        h,
        w: wd,
        k,
        g,
        ho: conv_out_size(h, k, g)?,
        wo: conv_out_size(wd, k, g)?,
    };
    let (rows, cols) = (p.rows(), p.cols());
    if gout.len() != n * co * cols {
        return Err(Error::shape("conv2d backward", "output gradient size"));
    }
    let mut buf = vec![T::zero(); rows * cols];
    let mut dw = needs.weight.then(|| vec![T::zero(); w.len()]);
    let mut dx = needs.input.then(|| vec![T::zero(); x.len()]);
    for i in 0..n {
        let go = &gout.data()[i * co * cols..][..co * cols];
        if let Some(dw) = dw.as_mut() {
            p.im2col(&x.data()[i * ci * h * wd..][..ci * h * wd], &mut buf);
            T::gemm_raw(co, cols, rows, T::one(), go, (cols, 1), &buf, (1, cols), T::one(), dw, (rows, 1));
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm_raw(rows, co, cols, T::one(), w.data(), (1, rows), go, (cols, 1), T::zero(), &mut buf, (cols, 1));
            p.col2im(&buf, &mut dx[i * ci * h * wd..][..ci * h * wd]);
        }
    }
    Ok(LayerGrads {
        input: dx.map(|d| Tensor::new(x.shape(), d)).transpose()?,
        weight: dw.map(|d| Tensor::new(w.shape(), d)).transpose()?,
        bias: needs.bias.then(|| channel_sums(gout.data(), co, cols)),
    })
}

/// Transposed convolution; output side `(H - 1) * stride - 2 * pad + K`.
pub fn deconv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    g: ConvGeom,
) -> Result<Tensor<T>> {
    let [n, ci, h, wd] = nchw(x, "deconv2d")?;
    let (co, k) = check_weight("deconv2d", w, ci)?;
    check_bias("deconv2d", b, co)?;
    let (ho, wo) = (deconv_out_size(h, k, g)?, deconv_out_size(wd, k, g)?);
    let p = Patch {
        c: co,
        h: ho,
        w: wo,
        k,
        g,
        ho: h,
        wo: wd,
    };
    let (rows, cols) = (p.rows(), p.cols());
    let mut buf = vec![T::zero(); rows * cols];
    let mut out = vec![T::zero(); n * co * ho * wo];
    for (xi, oi) in x.data().chunks_exact(ci * cols).zip(out.chunks_exact_mut(co * ho * wo)) {
        T::gemm_raw(rows, ci, cols, T::one(), w.data(), (1, rows), xi, (cols, 1), T::zero(), &mut buf, (cols, 1));
        p.col2im(&buf, oi);
    }
    add_channel_bias(&mut out, b, ho * wo);
    Tensor::new(&out_shape(x.shape().len() == 4, n, co, ho, wo), out)
}

pub fn deconv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    g: ConvGeom,
    needs: Needs,
) -> Result<LayerGrads<T>> {
    let [n, ci, h, wd] = nchw(x, "deconv2d")?;
    let (co, k) = check_weight("deconv2d", w, ci)?;
    let (ho, wo) = (deconv_out_size(h, k, g)?, deconv_out_size(wd, k, g)?);
    let p = Patch {
        c: co,
        h: ho,
        w: wo,
        k,
        g,
        ho: h,
        wo: wd,
    };
    let (rows, cols) = (p.rows(), p.cols());
    if gout.len() != n * co * ho * wo {
        return Err(Error::shape("deconv2d backward", "output gradient size"));
    }
    let mut buf = vec![T::zero(); rows * cols];
    let mut dw = needs.weight.then(|| vec![T::zero(); w.len()]);
    let mut dx = needs.input.then(|| vec![T::zero(); x.len()]);
    if dw.is_some() || dx.is_some() {
        for i in 0..n {
            p.im2col(&gout.data()[i * co * ho * wo..][..co * ho * wo], &mut buf);
            if let Some(dx) = dx.as_mut() {
                T::gemm_raw(ci, rows, cols, T::one(), w.data(), (rows, 1), &buf, (cols, 1), T::zero(), &mut dx[i * ci * cols..][..ci * cols], (cols, 1));
            }
            if let Some(dw) = dw.as_mut() {
                let xi = &x.data()[i * ci * cols..][..ci * cols];
                T::gemm_raw(ci, cols, rows, T::one(), xi, (cols, 1), &buf, (1, cols), T::one(), dw, (rows, 1));
            }
        }
    }
    Ok(LayerGrads {
        input: dx.map(|d| Tensor::new(x.shape(), d)).transpose()?,
        weight: dw.map(|d| Tensor::new(w.shape(), d)).transpose()?,
        bias: needs.bias.then(|| channel_sums(gout.data(), co, ho * wo)),
    })
}

/// `(rows, features)` of a dense-layer input.
fn dense_dims<T: Scalar>(x: &Tensor<T>) -> (usize, usize) {
    if x.shape().len() == 1 {
        (1, x.len())
    } else {
        (x.rows(), x.row_len())
    }
}

/// `y = x W^T + b` with `W: [D_out, D_in]`.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (rows, din) = dense_dims(x);
    let (dout, wdin) = match *w.shape() {
        [o, i] => (o, i),
        ref s => return Err(Error::shape("linear", format!("weight must be 2-D, got {s:?}"))),
    };
    if wdin != din {
        return Err(Error::shape("linear", format!("weight expects {wdin} inputs, got {din}")));
    }
    check_bias("linear", b, dout)?;
    let mut y = vec![T::zero(); rows * dout];
    T::gemm_raw(rows, din, dout, T::one(), x.data(), (din, 1), w.data(), (1, din), T::zero(), &mut y, (dout, 1));
    if let Some(b) = b {
        for row in y.chunks_exact_mut(dout) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    let shape = if x.shape().len() == 1 { vec![dout] } else { vec![rows, dout] };
    Tensor::new(&shape, y)
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    needs: Needs,
) -> Result<LayerGrads<T>> {
    let (rows, din) = dense_dims(x);
    let dout = w.shape()[0];
    if gout.len() != rows * dout {
        return Err(Error::shape("linear backward", "output gradient size"));
    }
    let input = needs
        .input
        .then(|| {
            let mut dx = vec![T::zero(); rows * din];
            T::gemm_raw(rows, dout, din, T::one(), gout.data(), (dout, 1), w.data(), (din, 1), T::zero(), &mut dx, (din, 1));
            Tensor::new(x.shape(), dx)
        })
        .transpose()?;
    let weight = needs.weight.then(|| {
        let mut dw = Tensor::zeros(w.shape());
        T::gemm_raw(dout, rows, din, T::one(), gout.data(), (1, dout), x.data(), (din, 1), T::zero(), dw.data_mut(), (din, 1));
        dw
    });
    let bias = needs.bias.then(|| {
        let mut db = vec![T::zero(); dout];
        for row in gout.data().chunks_exact(dout) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        Tensor::new(&[dout], db).expect("dout > 0")
    });
    Ok(LayerGrads { input, weight, bias })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { slope * v })
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Parameters of one GRU cell; `w_*: [H, D_in]`, `u_*: [H, H]`, `b_*: [H]`.
pub struct GruWeights<'a, T: Scalar> {
    pub w_z: &'a Tensor<T>,
    pub u_z: &'a Tensor<T>,
    pub b_z: &'a Tensor<T>,
    pub w_r: &'a Tensor<T>,
    pub u_r: &'a Tensor<T>,
    pub b_r: &'a Tensor<T>,
    pub w_h: &'a Tensor<T>,
    pub u_h: &'a Tensor<T>,
    pub b_h: &'a Tensor<T>,
}

/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 - z) ⊙ h + z ⊙ h̃`.
pub fn gru_cell<T: Scalar>(x: &Tensor<T>, h: &Tensor<T>, p: &GruWeights<'_, T>) -> Result<Tensor<T>> {
    if dense_dims(x).0 != dense_dims(h).0 {
        return Err(Error::shape("gru_cell", "input and hidden batch sizes differ"));
    }
    let gate = |wx: &Tensor<T>, uh: &Tensor<T>, b: &Tensor<T>, hh: &Tensor<T>| -> Result<Tensor<T>> {
        let a = linear_forward(x, wx, Some(b))?;
        let c = linear_forward(hh, uh, None)?;
        if a.shape() != c.shape() {
            return Err(Error::shape("gru_cell", "gate dimension mismatch"));
        }
        Ok(a.zip_map(&c, |p, q| p + q))
    };
    let z = sigmoid(&gate(p.w_z, p.u_z, p.b_z, h)?);
    let r = sigmoid(&gate(p.w_r, p.u_r, p.b_r, h)?);
    let rh = r.zip_map(h, |a, b| a * b);
    let cand = tanh(&gate(p.w_h, p.u_h, p.b_h, &rh)?);
    let keep = z.zip_map(h, |zv, hv| (T::one() - zv) * hv);
    Ok(keep.zip_map(&z.zip_map(&cand, |zv, cv| zv * cv), |a, b| a + b))
}

/// Sum of squared differences (no averaging).
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape("mse_loss", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| {
            let d = a.f64() - b.f64();
            d * d
        })
        .sum())
}

/// Binary cross-entropy with `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(p: f64, label: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// `[N, C, H, W]` or `[N, C]` as `(N, C, plane)`.
fn bn_dims<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [n, c] => Ok((n, c, 1)),
        [n, c, h, w] => Ok((n, c, h * w)),
        ref s => Err(Error::shape("batch_norm", format!("expected [N,C] or [N,C,H,W], got {s:?}"))),
    }
}

#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub invstd: Vec<T>,
    /// Biased batch variance per channel.
    pub var: Vec<T>,
}

/// Per-channel batch normalization using the batch's own statistics.
pub fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, BatchStats<T>)> {
    let (n, c, plane) = bn_dims(x)?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape("batch_norm", "affine parameters per channel"));
    }
    let count = T::of((n * plane) as f64);
    let eps = T::of(BN_EPS);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for (i, chan) in x.data().chunks_exact(plane).enumerate() {
        mean[i % c] += chan.iter().copied().sum();
    }
    mean.iter_mut().for_each(|m| *m = *m / count);
    for (i, chan) in x.data().chunks_exact(plane).enumerate() {
        let m = mean[i % c];
        var[i % c] += chan.iter().map(|&v| (v - m) * (v - m)).sum();
    }
    var.iter_mut().for_each(|v| *v = *v / count);
    let invstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut y = x.clone();
    for (i, chan) in y.data_mut().chunks_exact_mut(plane).enumerate() {
        let ch = i % c;
        let (m, s, gm, bt) = (mean[ch], invstd[ch], gamma.data()[ch], beta.data()[ch]);
        for v in chan {
            *v = gm * (*v - m) * s + bt;
        }
    }
    Ok((y, BatchStats { mean, invstd, var }))
}

/// Batch normalization with fixed (running) statistics.
pub fn batch_norm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (_, c, plane) = bn_dims(x)?;
    if [gamma.len(), beta.len(), running_mean.len(), running_var.len()] != [c; 4] {
        return Err(Error::shape("batch_norm", "per-channel parameter length"));
    }
    let eps = T::of(BN_EPS);
    let mut y = x.clone();
    for (i, chan) in y.data_mut().chunks_exact_mut(plane).enumerate() {
        let ch = i % c;
        let s = gamma.data()[ch] / (running_var.data()[ch] + eps).sqrt();
        let (m, bt) = (running_mean.data()[ch], beta.data()[ch]);
        for v in chan {
            *v = (*v - m) * s + bt;
        }
    }
    Ok(y)
}

pub fn batch_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &BatchStats<T>,
    gout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, plane) = bn_dims(x)?;
    let count = T::of((n * plane) as f64);
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for (i, (xc, gc)) in x.data().chunks_exact(plane).zip(gout.data().chunks_exact(plane)).enumerate() {
        let ch = i % c;
        let (m, s) = (stats.mean[ch], stats.invstd[ch]);
        for (&xv, &g) in xc.iter().zip(gc) {
            sum_dy[ch] += g;
            sum_dy_xhat[ch] += g * (xv - m) * s;
        }
    }
    let mut dx = x.clone();
    for (i, (dc, gc)) in dx.data_mut().chunks_exact_mut(plane).zip(gout.data().chunks_exact(plane)).enumerate() {
        let ch = i % c;
        let (m, s, gm) = (stats.mean[ch], stats.invstd[ch], gamma.data()[ch]);
        let (a, b) = (sum_dy[ch] / count, sum_dy_xhat[ch] / count);
        for (v, &g) in dc.iter_mut().zip(gc) {
            let xhat = (*v - m) * s;
            *v = gm * s * (g - a - xhat * b);
        }
    }
    let dgamma = Tensor::new(&[c], sum_dy_xhat)?;
    let dbeta = Tensor::new(&[c], sum_dy)?;
    Ok((dx, dgamma, dbeta))
}
