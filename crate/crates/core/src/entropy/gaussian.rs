use candle_core::Tensor;

use super::quantize::LatentTensor;
use crate::error::{NvcError, Result};

/// Lower bound on every predicted standard deviation.
pub const SIGMA_MIN: f64 = 0.01;
/// Upper clamp on the predicted `log sigma`.
pub const LOG_SIGMA_MAX: f64 = 7.0;
/// Probability floor keeping every code length finite (2^-16).
pub const P_MIN: f64 = 1.0 / 65536.0;

/// Per-element `(mu, sigma)` of the single-Gaussian entropy model.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    pub mu: Tensor,
    pub sigma: Tensor,
}

impl GaussianParams {
    /// Builds params from a raw `log sigma` head: `sigma = exp(clamp(log_sigma))`.
    pub fn from_log_sigma(mu: Tensor, log_sigma: &Tensor) -> Result<Self> {
        let sigma = log_sigma.clamp(SIGMA_MIN.ln(), LOG_SIGMA_MAX)?.exp()?;
        Ok(Self { mu, sigma })
    }

    pub fn mu_vec(&self) -> Result<Vec<f32>> {
        Ok(self.mu.flatten_all()?.to_dtype(candle_core::DType::F32)?.to_vec1()?)
    }

    pub fn sigma_vec(&self) -> Result<Vec<f32>> {
        Ok(self
            .sigma
            .flatten_all()?
            .to_dtype(candle_core::DType::F32)?
            .to_vec1()?)
    }
}

/// Standard normal CDF through the complementary error function.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability of integer bin `symbol` under `N(mu, sigma^2)`, floored at [`P_MIN`].
///
/// Evaluated on the left tail (the pmf is symmetric about `mu`) so that
/// far-tail bins do not cancel catastrophically.
pub fn gaussian_pmf(symbol: f64, mu: f64, sigma: f64) -> f64 {
    let d = (symbol - mu).abs();
    let upper = std_normal_cdf((0.5 - d) / sigma);
    let lower = std_normal_cdf((-0.5 - d) / sigma);
    (upper - lower).clamp(P_MIN, 1.0)
}

/// Differentiable rate estimate `sum -log2 p(latent)` in bits.
pub fn estimate_bits(latent: &LatentTensor, params: &GaussianParams) -> Result<Tensor> {
    let shape = latent.values.shape();
    if params.mu.shape() != shape || params.sigma.shape() != shape {
        return Err(NvcError::Shape(format!(
            "latent {:?} vs mu {:?} / sigma {:?}",
            shape,
            params.mu.shape(),
            params.sigma.shape()
        )));
    }
    let d = (&latent.values - &params.mu)?.abs()?;
    let scale = (&params.sigma * std::f64::consts::SQRT_2)?;
    let upper = ((d.affine(-1.0, 0.5)?) / &scale)?.erf()?;
    let lower = ((d.affine(-1.0, -0.5)?) / &scale)?.erf()?;
    // Phi(a) - Phi(b) = (erf(a/sqrt2) - erf(b/sqrt2)) / 2
    let p = ((upper - lower)? * 0.5)?.maximum(P_MIN)?;
    let bits = (p.log()?.sum_all()? * (-1.0 / std::f64::consts::LN_2))?;
    Ok(bits)
}

/// Non-differentiable rate estimate over plain buffers, same model as the coder.
pub fn estimate_bits_exact(symbols: &[i32], mu: &[f32], sigma: &[f32]) -> Result<f64> {
    if symbols.len() != mu.len() || symbols.len() != sigma.len() {
        return Err(NvcError::Shape(format!(
            "{} symbols vs {} mu / {} sigma",
            symbols.len(),
            mu.len(),
            sigma.len()
        )));
    }
    Ok(symbols
        .iter()
        .zip(mu.iter().zip(sigma))
        .map(|(&s, (&m, &sd))| -gaussian_pmf(s as f64, m as f64, sd as f64).log2())
        .sum())
}
