use crate::error::{ensure_finite, Error, Result};
use crate::nn::matrix::gemm_raw;
use crate::nn::Matrix;

/// Per-head `T × T` attention distributions; every row sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub heads: Vec<Matrix>,
}

impl AttentionWeights {
    /// Largest deviation of any row sum from one.
    pub fn max_row_sum_error(&self) -> f64 {
        self.heads
            .iter()
            .flat_map(|h| (0..h.rows()).map(move |r| (h.row(r).iter().sum::<f64>() - 1.0).abs()))
            .fold(0.0, f64::max)
    }
}

/// Multi-head scaled dot-product attention over one sequence. Column block
/// `h` of each input belongs to head `h`; scores are scaled by
/// `1/sqrt(d / num_heads)`. Returns the concatenated head outputs (before any
/// output projection) and the attention weights.
pub fn attention(
    queries: &Matrix,
    keys: &Matrix,
    values: &Matrix,
    num_heads: usize,
) -> Result<(Matrix, AttentionWeights)> {
    let (t, d) = queries.shape();
    if keys.shape() != (t, d) || values.shape() != (t, d) {
        return Err(Error::shape(format!(
            "queries {:?}, keys {:?} and values {:?} must share one shape",
            queries.shape(),
            keys.shape(),
            values.shape()
        )));
    }
    if num_heads == 0 || d % num_heads != 0 {
        return Err(Error::shape(format!("width {d} is not divisible by {num_heads} heads")));
    }
    for m in [queries, keys, values] {
        ensure_finite(m.data())?;
    }
    let mut qkv = Matrix::zeros(t, 3 * d);
    for r in 0..t {
        let row = qkv.row_mut(r);
        row[..d].copy_from_slice(queries.row(r));
        row[d..2 * d].copy_from_slice(keys.row(r));
        row[2 * d..].copy_from_slice(values.row(r));
    }
    let mut probs = vec![0.0; num_heads * t * t];
    let mut out = Matrix::zeros(t, d);
    attention_forward(qkv.data(), t, d, num_heads, &mut probs, out.data_mut());
    let heads = probs
        .chunks_exact(t * t)
        .map(|p| Matrix::from_vec(t, t, p.to_vec()).expect("t x t block"))
        .collect();
    Ok((out, AttentionWeights { heads }))
}

/// Forward kernel over a fused `T × 3d` query/key/value block.
/// `probs` receives `heads × T × T` weights and `out` the `T × d` result.
pub(crate) fn attention_forward(
    qkv: &[f64],
    t: usize,
    d: usize,
    heads: usize,
    probs: &mut [f64],
    out: &mut [f64],
) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let rs = 3 * d as isize;
    for h in 0..heads {
        let p = &mut probs[h * t * t..(h + 1) * t * t];
        let q = &qkv[h * dh..];
        let k = &qkv[d + h * dh..];
        let v = &qkv[2 * d + h * dh..];
        // scores = scale · Q Kᵀ
        gemm_raw(t, dh, t, scale, (q, rs, 1), (k, 1, rs), 0.0, (p, t as isize, 1));
        for row in p.chunks_exact_mut(t) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            let inv = 1.0 / sum;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        gemm_raw(t, t, dh, 1.0, (p, t as isize, 1), (v, rs, 1), 0.0, (&mut out[h * dh..], d as isize, 1));
    }
}

/// Reverse kernel. Writes the gradient with respect to the fused block into
/// `d_qkv` (`T × 3d`, overwritten).
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward(
    qkv: &[f64],
    probs: &[f64],
    d_out: &[f64],
    t: usize,
    d: usize,
    heads: usize,
    d_qkv: &mut [f64],
    scratch: &mut Vec<f64>,
) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let rs = 3 * d as isize;
    scratch.resize(t * t, 0.0);
    for h in 0..heads {
        let p = &probs[h * t * t..(h + 1) * t * t];
        let d_o = &d_out[h * dh..];
        let q = &qkv[h * dh..];
        let k = &qkv[d + h * dh..];
        let v = &qkv[2 * d + h * dh..];
        let dp = &mut scratch[..];
        // dP = dO Vᵀ
        gemm_raw(t, dh, t, 1.0, (d_o, d as isize, 1), (v, 1, rs), 0.0, (dp, t as isize, 1));
        // dV = Pᵀ dO
        gemm_raw(t, t, dh, 1.0, (p, 1, t as isize), (d_o, d as isize, 1), 0.0, (&mut d_qkv[2 * d + h * dh..], rs, 1));
        // dS = P ⊙ (dP − rowsum(dP ⊙ P))
        for (dpr, pr) in dp.chunks_exact_mut(t).zip(p.chunks_exact(t)) {
            let dot: f64 = dpr.iter().zip(pr).map(|(a, b)| a * b).sum();
            for (x, &pv) in dpr.iter_mut().zip(pr) {
                *x = pv * (*x - dot);
            }
        }
        let ds = &scratch[..];
        // dQ = scale · dS K,  dK = scale · dSᵀ Q
        gemm_raw(t, t, dh, scale, (ds, t as isize, 1), (k, rs, 1), 0.0, (&mut d_qkv[h * dh..], rs, 1));
        gemm_raw(t, t, dh, scale, (ds, 1, t as isize), (q, rs, 1), 0.0, (&mut d_qkv[d + h * dh..], rs, 1));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: usize, cols: usize, seed: f64) -> Matrix {
        let data = (0..rows * cols).map(|i| ((i as f64 + seed) * 0.731).sin()).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn zero_queries_average_values() {
        let v = sample(5, 4, 1.0);
        let (out, w) = attention(&Matrix::zeros(5, 4), &sample(5, 4, 2.0), &v, 2).unwrap();
        let means = v.column_means();
        for r in 0..5 {
            for c in 0..4 {
                assert!((out.get(r, c) - means[c]).abs() < 1e-12);
            }
        }
        assert!(w.max_row_sum_error() < 1e-12);
    }

    #[test]
    fn single_step_returns_value_row() {
        let v = sample(1, 6, 3.0);
        let (out, _) = attention(&sample(1, 6, 0.0), &sample(1, 6, 5.0), &v, 3).unwrap();
        for (a, b) in out.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors() {
        let a = Matrix::zeros(3, 4);
        assert!(attention(&a, &Matrix::zeros(2, 4), &a, 2).is_err());
        assert!(attention(&a, &a, &a, 3).is_err());
    }
}
