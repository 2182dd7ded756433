//! Randomized central-difference checks of every nnsub layer, shared by the
//! substrate test and the acceptance run.

use paegan::nnsub::kernels::{self, GruWeights};
use paegan::nnsub::{ConvGeom, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-4;
pub const INSTANCES: usize = 20;

/// Non-differentiable layer settings.
#[derive(Clone, Default)]
pub struct Extra {
    pub geom: Option<ConvGeom>,
    pub labels: Vec<f64>,
}

pub struct LayerReport {
    pub layer: &'static str,
    pub instances: usize,
    pub worst_rel_err: f64,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Uniform values kept at least `gap` away from zero (for kinked activations).
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(gap..1.0);
        if rng.random::<bool>() { m } else { -m }
    })
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Worst relative error between backprop and central differences of the
/// squared error of the output against a random target.
fn check_instance<F>(rng: &mut ChaCha8Rng, inputs: &[Tensor<f64>], extra: &Extra, build: &F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var], &Extra) -> Var,
{
    let run = |ins: &[Tensor<f64>], c: Option<&Tensor<f64>>| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars, extra);
        let shape = g.value(out).shape().to_vec();
        let loss = match c {
            Some(c) if g.value(out).len() > 1 => {
                let t = g.constant(c.clone());
                g.sum_squared_error(out, t).unwrap()
            }
            _ => out,
        };
        (g, vars, loss, shape)
    };
    let (_, _, _, shape) = run(inputs, None);
    let c = uniform(rng, &shape);
    let (mut g, vars, loss, _) = run(inputs, Some(&c));
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let f = |ins: &[Tensor<f64>]| {
        let (g, _, loss, _) = run(ins, Some(&c));
        g.value(loss).item()
    };
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic[k].data()[i], numeric));
        }
    }
    worst
}

fn layer<G, F>(name: &'static str, seed: u64, mut gen: G, build: F) -> LayerReport
where
    G: FnMut(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Extra),
    F: Fn(&mut Graph<f64>, &[Var], &Extra) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let (inputs, extra) = gen(&mut rng);
        worst = worst.max(check_instance(&mut rng, &inputs, &extra, &build));
    }
    LayerReport { layer: name, instances: INSTANCES, worst_rel_err: worst }
}

fn geom(rng: &mut ChaCha8Rng) -> (ConvGeom, usize) {
    let stride = rng.random_range(1..3);
    let k = rng.random_range(stride..4);
    let pad = rng.random_range(0..=(k - 1) / 2);
    (ConvGeom { stride, pad }, k)
}

/// The GRU cell on the graph, with the gate layout of `kernels::gru_cell`.
/// Inputs: x, h, w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h.
fn gru_graph(g: &mut Graph<f64>, v: &[Var]) -> Var {
    let (x, h) = (v[0], v[1]);
    let gate = |g: &mut Graph<f64>, w: Var, u: Var, b: Var, hh: Var| {
        let a = g.linear(x, w, Some(b)).unwrap();
        let c = g.linear(hh, u, None).unwrap();
        g.add(a, c).unwrap()
    };
    let zp = gate(g, v[2], v[3], v[4], h);
    let z = g.sigmoid(zp);
    let rp = gate(g, v[5], v[6], v[7], h);
    let r = g.sigmoid(rp);
    let rh = g.mul(r, h).unwrap();
    let cp = gate(g, v[8], v[9], v[10], rh);
    let cand = g.tanh(cp);
    let delta = g.sub(cand, h).unwrap();
    let step = g.mul(z, delta).unwrap();
    g.add(h, step).unwrap()
}

fn gru_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let (n, din, dh) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let mut v = vec![uniform(rng, &[n, din]), uniform(rng, &[n, dh])];
    for _ in 0..3 {
        v.push(uniform(rng, &[dh, din]));
        v.push(uniform(rng, &[dh, dh]));
        v.push(uniform(rng, &[dh]));
    }
    v
}

/// Max abs difference between the graph GRU and the eager kernel.
pub fn gru_graph_matches_kernel() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let v = gru_inputs(&mut rng);
        let mut g = Graph::new();
        let vars: Vec<Var> = v.iter().map(|t| g.input(t.clone())).collect();
        let out = gru_graph(&mut g, &vars);
        let p = GruWeights {
            w_z: &v[2],
            u_z: &v[3],
            b_z: &v[4],
            w_r: &v[5],
            u_r: &v[6],
            b_r: &v[7],
            w_h: &v[8],
            u_h: &v[9],
            b_h: &v[10],
        };
        let want = kernels::gru_cell(&v[0], &v[1], &p).unwrap();
        for (a, b) in g.value(out).data().iter().zip(want.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn plain(v: Vec<Tensor<f64>>) -> (Vec<Tensor<f64>>, Extra) {
    (v, Extra::default())
}

fn with_geom(v: Vec<Tensor<f64>>, geom: ConvGeom) -> (Vec<Tensor<f64>>, Extra) {
    (v, Extra { geom: Some(geom), labels: Vec::new() })
}

pub fn gradient_reports() -> Vec<LayerReport> {
    let gap = 10.0 * H;
    vec![
        layer(
            "linear",
            1,
            |r| {
                let (n, i, o) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..5));
                plain(vec![uniform(r, &[n, i]), uniform(r, &[o, i]), uniform(r, &[o])])
            },
            |g, v, _| g.linear(v[0], v[1], Some(v[2])).unwrap(),
        ),
        layer(
            "conv2d",
            2,
            |r| {
                let (gm, k) = geom(r);
                let s = r.random_range(k.max(2)..7);
                let (n, ci, co) = (r.random_range(1..3), r.random_range(1..3), r.random_range(1..3));
                with_geom(vec![uniform(r, &[n, ci, s, s]), uniform(r, &[co, ci, k, k]), uniform(r, &[co])], gm)
            },
            |g, v, e| g.conv2d(v[0], v[1], Some(v[2]), e.geom.unwrap()).unwrap(),
        ),
        layer(
            "deconv2d",
            3,
            |r| {
                let (gm, k) = geom(r);
                let s = r.random_range(2..5);
                let (n, ci, co) = (r.random_range(1..3), r.random_range(1..3), r.random_range(1..3));
                with_geom(vec![uniform(r, &[n, ci, s, s]), uniform(r, &[ci, co, k, k]), uniform(r, &[co])], gm)
            },
            |g, v, e| g.deconv2d(v[0], v[1], Some(v[2]), e.geom.unwrap()).unwrap(),
        ),
        layer("gru_cell", 4, |r| plain(gru_inputs(r)), |g, v, _| gru_graph(g, v)),
        layer(
            "relu",
            5,
            move |r| {
                let n = r.random_range(1..12);
                plain(vec![off_zero(r, &[n], gap)])
            },
            |g, v, _| g.relu(v[0]),
        ),
        layer(
            "leaky_relu",
            6,
            move |r| {
                let n = r.random_range(1..12);
                plain(vec![off_zero(r, &[n], gap)])
            },
            |g, v, _| g.leaky_relu(v[0], 0.2),
        ),
        layer(
            "sigmoid",
            7,
            |r| {
                let n = r.random_range(1..12);
                plain(vec![uniform(r, &[n]).map(|x| 3.0 * x)])
            },
            |g, v, _| g.sigmoid(v[0]),
        ),
        layer(
            "tanh",
            8,
            |r| {
                let n = r.random_range(1..12);
                plain(vec![uniform(r, &[n]).map(|x| 3.0 * x)])
            },
            |g, v, _| g.tanh(v[0]),
        ),
        layer(
            "batch_norm",
            9,
            |r| {
                let (n, c, s) = (r.random_range(2..4), r.random_range(1..3), r.random_range(1..3));
                plain(vec![uniform(r, &[n, c, s, s]), uniform(r, &[c]), uniform(r, &[c])])
            },
            |g, v, _| g.batch_norm(v[0], v[1], v[2]).unwrap().0,
        ),
        layer(
            "mse",
            10,
            |r| {
                let n = r.random_range(1..10);
                plain(vec![uniform(r, &[n]), uniform(r, &[n])])
            },
            |g, v, _| g.sum_squared_error(v[0], v[1]).unwrap(),
        ),
        layer(
            "bce",
            11,
            |r| {
                let n = r.random_range(1..8);
                let p = Tensor::from_fn(&[n], |_| r.random_range(0.05..0.95));
                let labels = (0..n).map(|_| f64::from(u8::from(r.random::<bool>()))).collect();
                (vec![p], Extra { geom: None, labels })
            },
            |g, v, e| g.mean_bce(v[0], &e.labels).unwrap(),
        ),
    ]
}

/// Worst relative gap of `<conv(x; w), y>` against `<x, deconv(y; w)>` on
/// geometries where the convolution tiles its input exactly.
pub fn adjoint_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let (gm, k) = geom(&mut rng);
        let out = rng.random_range(1..5);
        let s = (out - 1) * gm.stride + k - 2 * gm.pad;
        let (n, ci, co) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let x = uniform(&mut rng, &[n, ci, s, s]);
        let w = uniform(&mut rng, &[co, ci, k, k]);
        let cx = kernels::conv2d_forward(&x, &w, None, gm).unwrap();
        let y = uniform(&mut rng, cx.shape());
        let dy = kernels::deconv2d_forward(&y, &w, None, gm).unwrap();
        assert_eq!(dy.shape(), x.shape());
        let lhs = cx.dot(&y);
        worst = worst.max((lhs - x.dot(&dy)).abs() / lhs.abs().max(1.0));
    }
    worst
}
