//! Dense f64 tensors and the forward/backward kernels the network is built
//! from. Everything is plain row-major loops: deterministic, allocation-lean,
//! and friendly to auto-vectorization.

/// Row-major 2-D tensor (vectors are 1 x cols).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// y = x @ w + b for `n` rows of width w.rows; y has width w.cols.
pub fn linear_forward(x: &[f64], n: usize, w: &Tensor, b: &Tensor, y: &mut [f64]) {
    let (din, dout) = (w.rows, w.cols);
    debug_assert_eq!(x.len(), n * din);
    debug_assert_eq!(y.len(), n * dout);
    debug_assert_eq!(b.cols, dout);
    for r in 0..n {
        let yr = &mut y[r * dout..(r + 1) * dout];
        yr.copy_from_slice(&b.data);
        let xr = &x[r * din..(r + 1) * din];
        for (i, &xv) in xr.iter().enumerate() {
            let wrow = &w.data[i * dout..(i + 1) * dout];
            for (yo, &wv) in yr.iter_mut().zip(wrow) {
                *yo += xv * wv;
            }
        }
    }
}

/// Backward of `linear_forward`: writes dx, accumulates dw and db.
pub fn linear_backward(
    x: &[f64],
    n: usize,
    w: &Tensor,
    dy: &[f64],
    dx: &mut [f64],
    dw: &mut Tensor,
    db: &mut Tensor,
) {
    let (din, dout) = (w.rows, w.cols);
    for r in 0..n {
        let dyr = &dy[r * dout..(r + 1) * dout];
        let xr = &x[r * din..(r + 1) * din];
        let dxr = &mut dx[r * din..(r + 1) * din];
        for i in 0..din {
            let wrow = &w.data[i * dout..(i + 1) * dout];
            let mut acc = 0.0;
            for (o, &dyv) in dyr.iter().enumerate() {
                acc += dyv * wrow[o];
            }
            dxr[i] = acc;
            let dwrow = &mut dw.data[i * dout..(i + 1) * dout];
            let xv = xr[i];
            for (dwv, &dyv) in dwrow.iter_mut().zip(dyr) {
                *dwv += xv * dyv;
            }
        }
        for (dbv, &dyv) in db.data.iter_mut().zip(dyr) {
            *dbv += dyv;
        }
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-approximated GELU, applied elementwise.
pub fn gelu_forward(x: &[f64], y: &mut [f64]) {
    for (yo, &xv) in y.iter_mut().zip(x) {
        let inner = GELU_C * (xv + GELU_A * xv * xv * xv);
        *yo = 0.5 * xv * (1.0 + inner.tanh());
    }
}

pub fn gelu_backward(x: &[f64], dy: &[f64], dx: &mut [f64]) {
    for ((dxo, &xv), &dyv) in dx.iter_mut().zip(x).zip(dy) {
        let inner = GELU_C * (xv + GELU_A * xv * xv * xv);
        let t = inner.tanh();
        let sech2 = 1.0 - t * t;
        let dinner = GELU_C * (1.0 + 3.0 * GELU_A * xv * xv);
        *dxo = dyv * (0.5 * (1.0 + t) + 0.5 * xv * sech2 * dinner);
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm with scale/offset; caches per-row mean and 1/std.
pub fn layernorm_forward(
    x: &[f64],
    n: usize,
    d: usize,
    gamma: &Tensor,
    beta: &Tensor,
    y: &mut [f64],
    mean: &mut [f64],
    rstd: &mut [f64],
) {
    for r in 0..n {
        let xr = &x[r * d..(r + 1) * d];
        let m = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        mean[r] = m;
        rstd[r] = rs;
        let yr = &mut y[r * d..(r + 1) * d];
        for i in 0..d {
            yr[i] = (xr[i] - m) * rs * gamma.data[i] + beta.data[i];
        }
    }
}

/// Backward of `layernorm_forward`: accumulates into dx, dgamma, dbeta.
#[allow(clippy::too_many_arguments)]
pub fn layernorm_backward(
    x: &[f64],
    n: usize,
    d: usize,
    gamma: &Tensor,
    mean: &[f64],
    rstd: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    dgamma: &mut Tensor,
    dbeta: &mut Tensor,
) {
    for r in 0..n {
        let xr = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let (m, rs) = (mean[r], rstd[r]);
        let mut sum_dg = 0.0;
        let mut sum_dgx = 0.0;
        for i in 0..d {
            let xhat = (xr[i] - m) * rs;
            let g = dyr[i] * gamma.data[i];
            sum_dg += g;
            sum_dgx += g * xhat;
            dgamma.data[i] += dyr[i] * xhat;
            dbeta.data[i] += dyr[i];
        }
        let dxr = &mut dx[r * d..(r + 1) * d];
        for i in 0..d {
            let xhat = (xr[i] - m) * rs;
            let g = dyr[i] * gamma.data[i];
            dxr[i] += rs * (g - (sum_dg + xhat * sum_dgx) / d as f64);
        }
    }
}

/// Row-wise softmax in place.
pub fn softmax_rows(x: &mut [f64], n: usize, d: usize) {
    for r in 0..n {
        let xr = &mut x[r * d..(r + 1) * d];
        let max = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in xr.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in xr.iter_mut() {
            *v /= sum;
        }
    }
}

/// dS = P * (dP - rowsum(dP * P)), the softmax Jacobian product.
pub fn softmax_backward_rows(p: &[f64], dp: &[f64], n: usize, d: usize, ds: &mut [f64]) {
    for r in 0..n {
        let pr = &p[r * d..(r + 1) * d];
        let dpr = &dp[r * d..(r + 1) * d];
        let dot: f64 = pr.iter().zip(dpr).map(|(&a, &b)| a * b).sum();
        let dsr = &mut ds[r * d..(r + 1) * d];
        for i in 0..d {
            dsr[i] = pr[i] * (dpr[i] - dot);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    #[test]
    fn linear_matches_finite_difference() {
        let w = Tensor {
            rows: 3,
            cols: 2,
            data: vec![0.5, -0.2, 0.1, 0.8, -0.3, 0.4],
        };
        let b = Tensor {
            rows: 1,
            cols: 2,
            data: vec![0.05, -0.1],
        };
        let x = vec![0.3, -0.7, 0.2, 0.9, 0.1, -0.5];
        let objective = |xv: &[f64]| {
            let mut y = vec![0.0; 4];
            linear_forward(xv, 2, &w, &b, &mut y);
            y.iter().map(|v| v * v).sum::<f64>()
        };
        let mut y = vec![0.0; 4];
        linear_forward(&x, 2, &w, &b, &mut y);
        let dy: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let mut dx = vec![0.0; 6];
        let mut dw = w.zeros_like();
        let mut db = b.zeros_like();
        linear_backward(&x, 2, &w, &dy, &mut dx, &mut dw, &mut db);
        let fd = finite_diff(objective, &x, 1e-6);
        for (a, f) in dx.iter().zip(&fd) {
            assert!((a - f).abs() < 1e-8, "{a} vs {f}");
        }
    }

    #[test]
    fn gelu_matches_finite_difference() {
        let x = vec![-1.5, -0.3, 0.0, 0.4, 2.0];
        let mut y = vec![0.0; 5];
        gelu_forward(&x, &mut y);
        let dy = vec![1.0; 5];
        let mut dx = vec![0.0; 5];
        gelu_backward(&x, &dy, &mut dx);
        let f = |xv: &[f64]| {
            let mut yv = vec![0.0; xv.len()];
            gelu_forward(xv, &mut yv);
            yv.iter().sum::<f64>()
        };
        let fd = finite_diff(f, &x, 1e-6);
        for (a, b) in dx.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn layernorm_matches_finite_difference() {
        let d = 4;
        let x = vec![0.2, -0.5, 1.3, 0.7, -0.9, 0.4, 0.0, 2.1];
        let gamma = Tensor {
            rows: 1,
            cols: d,
            data: vec![1.1, 0.9, 1.3, 0.7],
        };
        let beta = Tensor {
            rows: 1,
            cols: d,
            data: vec![0.1, -0.2, 0.0, 0.3],
        };
        let objective = |xv: &[f64]| {
            let mut y = vec![0.0; 8];
            let mut mean = vec![0.0; 2];
            let mut rstd = vec![0.0; 2];
            layernorm_forward(xv, 2, d, &gamma, &beta, &mut y, &mut mean, &mut rstd);
            y.iter().enumerate().map(|(i, v)| v * (i as f64 + 1.0)).sum::<f64>()
        };
        let mut y = vec![0.0; 8];
        let mut mean = vec![0.0; 2];
        let mut rstd = vec![0.0; 2];
        layernorm_forward(&x, 2, d, &gamma, &beta, &mut y, &mut mean, &mut rstd);
        let dy: Vec<f64> = (0..8).map(|i| i as f64 + 1.0).collect();
        let mut dx = vec![0.0; 8];
        let mut dgamma = gamma.zeros_like();
        let mut dbeta = beta.zeros_like();
        layernorm_backward(&x, 2, d, &gamma, &mean, &rstd, &dy, &mut dx, &mut dgamma, &mut dbeta);
        let fd = finite_diff(objective, &x, 1e-6);
        for (a, b) in dx.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0];
        softmax_rows(&mut x, 2, 3);
        for r in 0..2 {
            let s: f64 = x[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
