use crate::error::{Error, Result};

pub const BCE_CLAMP: f64 = 1e-12;

/// Quantile (pinball) loss `max(a·(y−ŷ), (a−1)·(y−ŷ))`.
pub fn pinball_loss(y: f64, y_hat: f64, level: f64) -> Result<f64> {
    check_level(level)?;
    Ok(pinball_unchecked(y, y_hat, level))
}

pub(crate) fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("quantile level {level} outside (0, 1)")))
    }
}

#[inline]
pub(crate) fn pinball_unchecked(y: f64, y_hat: f64, level: f64) -> f64 {
    let r = y - y_hat;
    (level * r).max((level - 1.0) * r)
}

/// Subgradient with respect to the prediction; zero at `y == ŷ`.
#[inline]
pub fn pinball_grad(y: f64, y_hat: f64, level: f64) -> f64 {
    if y > y_hat {
        -level
    } else if y < y_hat {
        1.0 - level
    } else {
        0.0
    }
}

/// Binary cross-entropy with the probability clamped to `[1e-12, 1−1e-12]`.
pub fn bce_loss(p: f64, y: f64) -> Result<f64> {
    if y != 0.0 && y != 1.0 {
        return Err(Error::invalid(format!("label {y} is not 0 or 1")));
    }
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    Ok(-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
}

/// BCE evaluated from a logit, stable for large magnitudes.
pub(crate) fn bce_from_logit(z: f64, y: f64) -> f64 {
    // log(1 + e^z) - y z
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    softplus - y * z
}
