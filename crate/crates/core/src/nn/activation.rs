use super::matrix::Matrix;
use crate::error::{ensure_finite, Error, Result};

pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.01;

/// Elementwise leaky ReLU. Rejects non-finite input.
pub fn leaky_relu(x: &Matrix, negative_slope: f64) -> Result<Matrix> {
    if !(negative_slope > 0.0 && negative_slope < 1.0) {
        return Err(Error::invalid(format!(
            "negative slope {negative_slope} outside (0, 1)"
        )));
    }
    ensure_finite(x.data())?;
    Ok(leaky_relu_unchecked(x, negative_slope))
}

#[inline]
pub(crate) fn leaky_relu_unchecked(x: &Matrix, slope: f64) -> Matrix {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}

/// Gradient through leaky ReLU given the layer input.
pub(crate) fn leaky_relu_backward(input: &Matrix, upstream: Matrix, slope: f64) -> Matrix {
    let mut g = upstream;
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        *gv *= if x < 0.0 { slope } else { 1.0 };
    }
    g
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    gelu_with(x, gelu_tanh(x))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    gelu_grad_with(x, gelu_tanh(x))
}

/// `tanh(sqrt(2/pi) (x + 0.044715 x^3))` through a single `exp`.
#[inline]
pub(crate) fn gelu_tanh(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    1.0 - 2.0 / ((2.0 * inner).exp() + 1.0)
}

#[inline]
pub(crate) fn gelu_with(x: f64, t: f64) -> f64 {
    0.5 * x * (1.0 + t)
}

#[inline]
pub(crate) fn gelu_grad_with(x: f64, t: f64) -> f64 {
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> f64 {
        leaky_relu(&Matrix::row_vector(&[v]), 0.01).unwrap().get(0, 0)
    }

    #[test]
    fn leaky_relu_examples() {
        assert_eq!(one(2.0), 2.0);
        assert!((one(-3.0) + 0.03).abs() < 1e-15);
        assert_eq!(one(0.0), 0.0);
    }

    #[test]
    fn leaky_relu_rejects_non_finite() {
        let x = Matrix::row_vector(&[1.0, 2.0, f64::INFINITY]);
        assert!(matches!(
            leaky_relu(&x, 0.01),
            Err(Error::NonFinite { index: 2 })
        ));
    }

    #[test]
    fn leaky_relu_rejects_bad_slope() {
        let x = Matrix::row_vector(&[1.0]);
        assert!(leaky_relu(&x, 0.0).is_err());
        assert!(leaky_relu(&x, 1.0).is_err());
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.3, 2.0] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
