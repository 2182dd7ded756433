//! Central-difference checks of every differentiable graph operation (f64).

use paegan::nnsub::{ConvGeom, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-6;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Builds the graph with `inputs` as differentiable leaves and reduces the
/// output to a scalar via squared error against a fixed random target.
fn check<F>(name: &str, inputs: Vec<Tensor<f64>>, build: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let eval = |ins: &[Tensor<f64>], target: Option<&Tensor<f64>>| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars);
        let out_shape = g.value(out).shape().to_vec();
        let loss = if g.value(out).len() == 1 {
            out
        } else {
            let t = g.constant(target.cloned().unwrap_or_else(|| Tensor::zeros(&out_shape)));
            g.sum_squared_error(out, t).unwrap()
        };
        (g, vars, loss, out_shape)
    };
    let (_, _, _, out_shape) = eval(&inputs, None);
    let target = rand_tensor(&mut rng, &out_shape);

    let (mut g, vars, loss, _) = eval(&inputs, Some(&target));
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(&inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let f = |ins: &[Tensor<f64>]| {
        let (g, _, loss, _) = eval(ins, Some(&target));
        g.value(loss).item()
    };
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += EPS;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= EPS;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * EPS);
            let a = analytic[k].data()[i];
            let err = (a - numeric).abs() / (1.0 + numeric.abs());
            assert!(err < TOL, "{name}: input {k}[{i}] analytic {a} numeric {numeric}");
        }
    }
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

#[test]
fn linear() {
    let mut r = rng();
    let ins = vec![rand_tensor(&mut r, &[3, 4]), rand_tensor(&mut r, &[2, 4]), rand_tensor(&mut r, &[2])];
    check("linear", ins, |g, v| g.linear(v[0], v[1], Some(v[2])).unwrap());
}

#[test]
fn conv_stride_two_padded() {
    let mut r = rng();
    let ins = vec![rand_tensor(&mut r, &[2, 2, 6, 6]), rand_tensor(&mut r, &[3, 2, 4, 4]), rand_tensor(&mut r, &[3])];
    let geom = ConvGeom { stride: 2, pad: 1 };
    check("conv", ins, move |g, v| g.conv2d(v[0], v[1], Some(v[2]), geom).unwrap());
}

#[test]
fn deconv_stride_two_padded() {
    let mut r = rng();
    let ins = vec![rand_tensor(&mut r, &[2, 3, 3, 3]), rand_tensor(&mut r, &[3, 2, 4, 4]), rand_tensor(&mut r, &[2])];
    let geom = ConvGeom { stride: 2, pad: 1 };
    check("deconv", ins, move |g, v| g.deconv2d(v[0], v[1], Some(v[2]), geom).unwrap());
}

#[test]
fn deconv_stride_one() {
    let mut r = rng();
    let ins = vec![rand_tensor(&mut r, &[1, 2, 4, 4]), rand_tensor(&mut r, &[2, 3, 3, 3]), rand_tensor(&mut r, &[3])];
    let geom = ConvGeom { stride: 1, pad: 1 };
    check("deconv1", ins, move |g, v| g.deconv2d(v[0], v[1], Some(v[2]), geom).unwrap());
}

#[test]
fn activations() {
    let mut r = rng();
    // Keep relu inputs away from the kink.
    let x = Tensor::from_fn(&[10], |i| (i as f64 - 4.5) * 0.3 + 0.01);
    check("relu", vec![x.clone()], |g, v| g.relu(v[0]));
    check("lrelu", vec![x.clone()], |g, v| g.leaky_relu(v[0], 0.2));
    check("sigmoid", vec![rand_tensor(&mut r, &[7])], |g, v| g.sigmoid(v[0]));
    check("tanh", vec![rand_tensor(&mut r, &[7])], |g, v| g.tanh(v[0]));
    check("affine", vec![rand_tensor(&mut r, &[7])], |g, v| g.affine(v[0], -1.5, 0.25));
}

#[test]
fn elementwise_binary() {
    let mut r = rng();
    let ins = vec![rand_tensor(&mut r, &[2, 3]), rand_tensor(&mut r, &[2, 3])];
    check("add", ins.clone(), |g, v| g.add(v[0], v[1]).unwrap());
    check("sub", ins.clone(), |g, v| g.sub(v[0], v[1]).unwrap());
    check("mul", ins.clone(), |g, v| g.mul(v[0], v[1]).unwrap());
    check("add_n", ins, |g, v| {
        let m = g.mul(v[0], v[1]).unwrap();
        g.add_n(&[v[0], m, v[1]]).unwrap()
    });
}

#[test]
fn reshaping_and_routing() {
    let mut r = rng();
    check("reshape", vec![rand_tensor(&mut r, &[2, 6])], |g, v| g.reshape(v[0], &[3, 4]).unwrap());
    check("concat_cols", vec![rand_tensor(&mut r, &[3, 2]), rand_tensor(&mut r, &[3, 4])], |g, v| {
        g.concat_cols(v[0], v[1]).unwrap()
    });
    check("concat_rows", vec![rand_tensor(&mut r, &[1, 2, 2]), rand_tensor(&mut r, &[3, 2, 2])], |g, v| {
        g.concat_rows(&[v[0], v[1], v[0]]).unwrap()
    });
    check("gather_rows", vec![rand_tensor(&mut r, &[3, 2])], |g, v| {
        g.gather_rows(v[0], vec![2, 0, 2, 1, 2]).unwrap()
    });
    check("slice_rows", vec![rand_tensor(&mut r, &[5, 2])], |g, v| {
        let a = g.slice_rows(v[0], 1, 3).unwrap();
        let b = g.slice_rows(v[0], 3, 2).unwrap();
        g.concat_rows(&[a, b]).unwrap()
    });
    check("slice_cols", vec![rand_tensor(&mut r, &[3, 5])], |g, v| {
        let a = g.slice_cols(v[0], 0, 3).unwrap();
        let b = g.slice_cols(v[0], 2, 3).unwrap();
        g.mul(a, b).unwrap()
    });
    check("group_mean", vec![rand_tensor(&mut r, &[6, 3])], |g, v| g.group_mean(v[0], 3).unwrap());
}

#[test]
fn batch_norm() {
    let mut r = rng();
    let ins = vec![rand_tensor(&mut r, &[3, 2, 2, 2]), rand_tensor(&mut r, &[2]), rand_tensor(&mut r, &[2])];
    check("bn4", ins, |g, v| g.batch_norm(v[0], v[1], v[2]).unwrap().0);
    check("channel_affine", vec![rand_tensor(&mut r, &[2, 3, 2, 2])], |g, v| {
        g.channel_affine(v[0], &[0.5, -2.0, 1.5], &[0.1, 0.2, -0.3]).unwrap()
    });
    let ins = vec![rand_tensor(&mut r, &[5, 3]), rand_tensor(&mut r, &[3]), rand_tensor(&mut r, &[3])];
    check("bn2", ins, |g, v| g.batch_norm(v[0], v[1], v[2]).unwrap().0);
}

#[test]
fn losses() {
    let mut r = rng();
    check("sse", vec![rand_tensor(&mut r, &[4]), rand_tensor(&mut r, &[4])], |g, v| {
        g.sum_squared_error(v[0], v[1]).unwrap()
    });
    let p = Tensor::new(&[4], vec![0.1, 0.5, 0.8, 0.3]).unwrap();
    check("bce", vec![p], |g, v| g.mean_bce(v[0], &[1.0, 0.0, 1.0, 0.0]).unwrap());
    check("bce_of_sigmoid", vec![rand_tensor(&mut r, &[5])], |g, v| {
        let p = g.sigmoid(v[0]);
        g.mean_bce(p, &[1.0, 1.0, 0.0, 0.0, 1.0]).unwrap()
    });
}

#[test]
fn gru_composition() {
    // z = σ(Wx + Uh), h' = (1 - z) h + z tanh(W2 x + U2 h)
    let mut r = rng();
    let ins = vec![
        rand_tensor(&mut r, &[2, 3]),
        rand_tensor(&mut r, &[2, 4]),
        rand_tensor(&mut r, &[4, 3]),
        rand_tensor(&mut r, &[4, 4]),
    ];
    check("gru_like", ins, |g, v| {
        let a = g.linear(v[0], v[2], None).unwrap();
        let b = g.linear(v[1], v[3], None).unwrap();
        let s = g.add(a, b).unwrap();
        let z = g.sigmoid(s);
        let c = g.tanh(s);
        let omz = g.affine(z, -1.0, 1.0);
        let keep = g.mul(omz, v[1]).unwrap();
        let new = g.mul(z, c).unwrap();
        g.add(keep, new).unwrap()
    });
}
