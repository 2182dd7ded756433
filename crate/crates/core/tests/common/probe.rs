//! Ridge-regression probe from features to targets.

/// Fits `y ~ W x + b` by ridge regression on standardized features and
/// returns the pooled held-out R² over all target columns.
pub fn ridge_r2(train_x: &[Vec<f64>], train_y: &[Vec<f64>], test_x: &[Vec<f64>], test_y: &[Vec<f64>], alpha: f64) -> f64 {
    let d = train_x[0].len();
    let k = train_y[0].len();
    let n = train_x.len() as f64;
    let mut mu = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for x in train_x {
        for j in 0..d {
            mu[j] += x[j] / n;
        }
    }
    for x in train_x {
        for j in 0..d {
            sd[j] += (x[j] - mu[j]).powi(2) / n;
        }
    }
    let sd: Vec<f64> = sd.iter().map(|v| v.sqrt().max(1e-8)).collect();
    let z = |x: &[f64]| -> Vec<f64> { (0..d).map(|j| (x[j] - mu[j]) / sd[j]).collect() };
    let mut ymu = vec![0.0; k];
    for y in train_y {
        for c in 0..k {
            ymu[c] += y[c] / n;
        }
    }

    // Normal equations (Z'Z + alpha I) W = Z'(y - ymu).
    let mut a = vec![0.0; d * d];
    let mut rhs = vec![0.0; d * k];
    for (x, y) in train_x.iter().zip(train_y) {
        let zx = z(x);
        for i in 0..d {
            for j in 0..=i {
                a[i * d + j] += zx[i] * zx[j];
            }
            for c in 0..k {
                rhs[i * k + c] += zx[i] * (y[c] - ymu[c]);
            }
        }
    }
    for i in 0..d {
        a[i * d + i] += alpha;
    }
    let w = cholesky_solve(&mut a, d, &rhs, k);

    let mut sse = 0.0;
    let mut sst = 0.0;
    let mut tmu = vec![0.0; k];
    for y in test_y {
        for c in 0..k {
            tmu[c] += y[c] / test_y.len() as f64;
        }
    }
    for (x, y) in test_x.iter().zip(test_y) {
        let zx = z(x);
        for c in 0..k {
            let pred = ymu[c] + (0..d).map(|i| zx[i] * w[i * k + c]).sum::<f64>();
            sse += (y[c] - pred).powi(2);
            sst += (y[c] - tmu[c]).powi(2);
        }
    }
    1.0 - sse / sst
}

/// Solves `A X = B` for symmetric positive definite `A` (lower triangle
/// filled, overwritten by its factor).
fn cholesky_solve(a: &mut [f64], d: usize, b: &[f64], k: usize) -> Vec<f64> {
    for j in 0..d {
        let mut s = a[j * d + j];
        for p in 0..j {
            s -= a[j * d + p] * a[j * d + p];
        }
        let l = s.sqrt();
        a[j * d + j] = l;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for p in 0..j {
                s -= a[i * d + p] * a[j * d + p];
            }
            a[i * d + j] = s / l;
        }
    }
    let mut x = b.to_vec();
    for c in 0..k {
        for i in 0..d {
            let mut s = x[i * k + c];
            for p in 0..i {
                s -= a[i * d + p] * x[p * k + c];
            }
            x[i * k + c] = s / a[i * d + i];
        }
        for i in (0..d).rev() {
            let mut s = x[i * k + c];
            for p in i + 1..d {
                s -= a[p * d + i] * x[p * k + c];
            }
            x[i * k + c] = s / a[i * d + i];
        }
    }
    x
}
