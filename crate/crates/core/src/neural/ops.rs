//! Dense kernels for the encoders, double precision, with hand-written
//! backward passes. Everything operates on flat row-major slices.

pub const LN_EPS: f64 = 1e-5;

/// c[m,n] += a[m,k] · b[k,n]
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    matmul_acc(a, b, &mut c, m, k, n);
    c
}

/// y[t,dout] = x[t,din] · w[din,dout] + bias
pub fn linear_forward(x: &[f64], w: &[f64], bias: &[f64], t: usize, din: usize, dout: usize) -> Vec<f64> {
    let mut y = matmul(x, w, t, din, dout);
    for row in y.chunks_mut(dout) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    y
}

/// Given dL/dy, accumulate dL/dw and dL/dbias and return dL/dx.
pub fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    t: usize,
    din: usize,
    dout: usize,
    dw: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    // dw[i,j] += sum_t x[t,i] * dy[t,j]
    for ti in 0..t {
        let xrow = &x[ti * din..(ti + 1) * din];
        let dyrow = &dy[ti * dout..(ti + 1) * dout];
        for (i, &xv) in xrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let dwrow = &mut dw[i * dout..(i + 1) * dout];
            for (dwv, &dyv) in dwrow.iter_mut().zip(dyrow) {
                *dwv += xv * dyv;
            }
        }
        for (dbv, &dyv) in dbias.iter_mut().zip(dyrow) {
            *dbv += dyv;
        }
    }
    // dx[t,i] = sum_j dy[t,j] * w[i,j]
    let mut dx = vec![0.0; t * din];
    for ti in 0..t {
        let dyrow = &dy[ti * dout..(ti + 1) * dout];
        let dxrow = &mut dx[ti * din..(ti + 1) * din];
        for (i, dxv) in dxrow.iter_mut().enumerate() {
            let wrow = &w[i * dout..(i + 1) * dout];
            let mut acc = 0.0;
            for (&wv, &dyv) in wrow.iter().zip(dyrow) {
                acc += wv * dyv;
            }
            *dxv = acc;
        }
    }
    dx
}

/// Row-wise layer norm. Returns (y, xhat, rstd); xhat and rstd feed backward.
pub fn layernorm_forward(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    t: usize,
    d: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; t * d];
    let mut xhat = vec![0.0; t * d];
    let mut rstd = vec![0.0; t];
    for ti in 0..t {
        let row = &x[ti * d..(ti + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[ti] = r;
        for i in 0..d {
            let xh = (row[i] - mean) * r;
            xhat[ti * d + i] = xh;
            y[ti * d + i] = gain[i] * xh + bias[i];
        }
    }
    (y, xhat, rstd)
}

pub fn layernorm_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gain: &[f64],
    t: usize,
    d: usize,
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; t * d];
    for ti in 0..t {
        let dyrow = &dy[ti * d..(ti + 1) * d];
        let xhrow = &xhat[ti * d..(ti + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for i in 0..d {
            let dxh = dyrow[i] * gain[i];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhrow[i];
            dgain[i] += dyrow[i] * xhrow[i];
            dbias[i] += dyrow[i];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let dxrow = &mut dx[ti * d..(ti + 1) * d];
        for i in 0..d {
            let dxh = dyrow[i] * gain[i];
            dxrow[i] = rstd[ti] * (dxh - mean_dxhat - xhrow[i] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let th = u.tanh();
    let sech2 = 1.0 - th * th;
    0.5 * (1.0 + th) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// In-place softmax over one row, max-subtracted.
pub fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Backward of y = softmax(s) given dL/dy and y: dL/ds = y ⊙ (dy − Σ dy⊙y).
pub fn softmax_backward(dy: &[f64], y: &[f64], ds: &mut [f64]) {
    let dot: f64 = dy.iter().zip(y).map(|(a, b)| a * b).sum();
    for i in 0..y.len() {
        ds[i] = y[i] * (dy[i] - dot);
    }
}

/// Standard normal via Box–Muller, scaled by `std`.
pub fn normal_sample(rng: &mut impl rand::Rng, std: f64) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * std
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn matmul_hand_example() {
        // [1 2; 3 4] · [5 6; 7 8] = [19 22; 43 50]
        let c = matmul(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], 2, 2, 2);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (t, din, dout) = (3, 4, 5);
        let x = rand_vec(&mut rng, t * din);
        let w = rand_vec(&mut rng, din * dout);
        let b = rand_vec(&mut rng, dout);
        // Scalar loss: sum of squares of outputs.
        let loss = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
            linear_forward(x, w, b, t, din, dout).iter().map(|v| v * v).sum()
        };
        let y = linear_forward(&x, &w, &b, t, din, dout);
        let dy: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let mut dw = vec![0.0; din * dout];
        let mut db = vec![0.0; dout];
        let dx = linear_backward(&x, &w, &dy, t, din, dout, &mut dw, &mut db);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let num = (loss(&xp, &w, &b) - loss(&xm, &w, &b)) / (2.0 * h);
            assert!((num - dx[i]).abs() < 1e-6, "dx[{i}]: {num} vs {}", dx[i]);
        }
        for i in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            let num = (loss(&x, &wp, &b) - loss(&x, &wm, &b)) / (2.0 * h);
            assert!((num - dw[i]).abs() < 1e-6);
        }
        for i in 0..b.len() {
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp[i] += h;
            bm[i] -= h;
            let num = (loss(&x, &w, &bp) - loss(&x, &w, &bm)) / (2.0 * h);
            assert!((num - db[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn layernorm_forward_normalizes() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let g = vec![1.0; 4];
        let b = vec![0.0; 4];
        let (y, _, _) = layernorm_forward(&x, &g, &b, 1, 4);
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4); // eps slightly shrinks variance
    }

    #[test]
    fn layernorm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (t, d) = (2, 6);
        let x = rand_vec(&mut rng, t * d);
        let g = rand_vec(&mut rng, d);
        let b = rand_vec(&mut rng, d);
        let loss = |x: &[f64], g: &[f64], b: &[f64]| -> f64 {
            let (y, _, _) = layernorm_forward(x, g, b, t, d);
            y.iter().enumerate().map(|(i, v)| v * v * (i as f64 * 0.1 + 1.0)).sum()
        };
        let (y, xhat, rstd) = layernorm_forward(&x, &g, &b, t, d);
        let dy: Vec<f64> = y
            .iter()
            .enumerate()
            .map(|(i, v)| 2.0 * v * (i as f64 * 0.1 + 1.0))
            .collect();
        let mut dg = vec![0.0; d];
        let mut db = vec![0.0; d];
        let dx = layernorm_backward(&dy, &xhat, &rstd, &g, t, d, &mut dg, &mut db);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let num = (loss(&xp, &g, &b) - loss(&xm, &g, &b)) / (2.0 * h);
            assert!((num - dx[i]).abs() < 1e-5, "dx[{i}]: {num} vs {}", dx[i]);
        }
        for i in 0..d {
            let mut gp = g.clone();
            let mut gm = g.clone();
            gp[i] += h;
            gm[i] -= h;
            let num = (loss(&x, &gp, &b) - loss(&x, &gm, &b)) / (2.0 * h);
            assert!((num - dg[i]).abs() < 1e-5);
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp[i] += h;
            bm[i] -= h;
            let numb = (loss(&x, &g, &bp) - loss(&x, &g, &bm)) / (2.0 * h);
            assert!((numb - db[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        // gelu(1) with the tanh approximation ~ 0.841192
        assert!((gelu(1.0) - 0.8411919906082768).abs() < 1e-12);
        // Large |x|: approaches identity / zero.
        assert!((gelu(10.0) - 10.0).abs() < 1e-9);
        assert!(gelu(-10.0).abs() < 1e-9);
    }

    #[test]
    fn gelu_grad_matches_finite_differences() {
        let h = 1e-6;
        for &x in &[-3.0, -1.0, -0.1, 0.0, 0.5, 2.0, 4.0] {
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8, "at {x}");
        }
    }

    #[test]
    fn softmax_row_properties() {
        let mut row = vec![1.0, 2.0, 3.0];
        softmax_inplace(&mut row);
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(row[2] > row[1] && row[1] > row[0]);
        // Shift invariance.
        let mut shifted = vec![1001.0, 1002.0, 1003.0];
        softmax_inplace(&mut shifted);
        for (a, b) in row.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let s = vec![0.3, -0.5, 0.9, 0.1];
        let weights = [1.0, 2.0, -1.0, 0.5];
        let loss = |s: &[f64]| -> f64 {
            let mut y = s.to_vec();
            softmax_inplace(&mut y);
            y.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let mut y = s.clone();
        softmax_inplace(&mut y);
        let dy: Vec<f64> = weights.to_vec();
        let mut ds = vec![0.0; 4];
        softmax_backward(&dy, &y, &mut ds);
        let h = 1e-6;
        for i in 0..4 {
            let mut sp = s.clone();
            let mut sm = s.clone();
            sp[i] += h;
            sm[i] -= h;
            let num = (loss(&sp) - loss(&sm)) / (2.0 * h);
            assert!((num - ds[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn normal_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20000;
        let xs: Vec<f64> = (0..n).map(|_| normal_sample(&mut rng, 1.0)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
