use crate::nn::Matrix;

pub const LAYER_NORM_EPSILON: f64 = 1e-5;

/// Row-wise layer normalization with the values needed for its gradient.
#[derive(Debug, Clone)]
pub(crate) struct LayerNormCache {
    pub out: Matrix,
    pub x_hat: Matrix,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm(x: &Matrix, gamma: &[f64], beta: &[f64], eps: f64) -> LayerNormCache {
    let (n, d) = x.shape();
    let mut x_hat = Matrix::zeros(n, d);
    let mut out = Matrix::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        let xh = x_hat.row_mut(r);
        for (h, &v) in xh.iter_mut().zip(row) {
            *h = (v - mean) * inv;
        }
        let xh = x_hat.row(r);
        for ((o, &h), (&g, &b)) in out.row_mut(r).iter_mut().zip(xh).zip(gamma.iter().zip(beta)) {
            *o = g * h + b;
        }
    }
    LayerNormCache { out, x_hat, inv_std }
}

/// Returns `dx` and accumulates into `dgamma`, `dbeta`.
pub(crate) fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &[f64],
    upstream: &Matrix,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Matrix {
    let (n, d) = upstream.shape();
    let mut dx = Matrix::zeros(n, d);
    let mut dxh = vec![0.0; d];
    for r in 0..n {
        let g = upstream.row(r);
        let xh = cache.x_hat.row(r);
        let mut sum = 0.0;
        let mut dot = 0.0;
        for c in 0..d {
            dgamma[c] += g[c] * xh[c];
            dbeta[c] += g[c];
            dxh[c] = g[c] * gamma[c];
            sum += dxh[c];
            dot += dxh[c] * xh[c];
        }
        let inv = cache.inv_std[r];
        let df = d as f64;
        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = inv / df * (df * dxh[c] - sum - xh[c] * dot);
        }
    }
    dx
}
