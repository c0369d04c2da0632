//! Quality metrics: PSNR and multiscale SSIM.
//!
//! MS-SSIM uses the standard constants: five scales with exponents
//! `[0.0448, 0.2856, 0.3001, 0.2363, 0.1333]`, an 11x11 Gaussian window with
//! sigma 1.5, `K1 = 0.01`, `K2 = 0.03` and 2x2 average downsampling. When a
//! scale is smaller than the window, the window shrinks to the image size and
//! sigma shrinks proportionally. Channels are evaluated separately and
//! averaged. Negative per-scale terms are floored at a tiny positive value so
//! the product and its gradient stay finite.

use candle_core::{DType, Tensor};

use crate::error::{NvcError, Result};

pub const PSNR_CAP: f64 = 100.0;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const FLOOR: f64 = 1e-6;

/// Mean squared error between equally shaped tensors.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(NvcError::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok((a.to_dtype(DType::F64)? - b.to_dtype(DType::F64)?)?
        .sqr()?
        .mean_all()?
        .to_scalar::<f64>()?)
}

/// `10 log10(peak^2 / mse)` from an MSE, capped at 100 dB.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
}

/// PSNR in dB for signals with the given peak value.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

fn gaussian_window(size: usize, sigma: f64, dtype: DType) -> Result<Tensor> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    let mut k = Vec::with_capacity(size * size);
    for y in &g {
        for x in &g {
            k.push(y * x / (s * s));
        }
    }
    Ok(Tensor::from_vec(k, (1, 1, size, size), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

/// `(ssim, contrast-structure)` means for `(N, 1, H, W)` inputs with data range 1.
fn ssim_terms(a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, _, h, w) = a.dims4()?;
    let size = WINDOW.min(h).min(w);
    let win = gaussian_window(size, SIGMA * size as f64 / WINDOW as f64, a.dtype())?;
    let filt = |x: &Tensor| -> Result<Tensor> { Ok(x.conv2d(&win, 0, 1, 1, 1)?) };
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mu_a = filt(a)?;
    let mu_b = filt(b)?;
    let mu_aa = mu_a.sqr()?;
    let mu_bb = mu_b.sqr()?;
    let mu_ab = (&mu_a * &mu_b)?;
    let s_aa = (filt(&a.sqr()?)? - &mu_aa)?;
    let s_bb = (filt(&b.sqr()?)? - &mu_bb)?;
    let s_ab = (filt(&(a * b)?)? - &mu_ab)?;
    let cs = ((s_ab * 2.0)? + c2)?.div(&((&s_aa + &s_bb)? + c2)?)?;
    let lum = ((mu_ab * 2.0)? + c1)?.div(&((mu_aa + mu_bb)? + c1)?)?;
    let ssim = (&lum * &cs)?;
    // per-channel means, shape (N,)
    Ok((ssim.mean((1, 2, 3))?, cs.mean((1, 2, 3))?))
}

/// Differentiable MS-SSIM of `(1, C, H, W)` images in `[0, 1]`; returns a scalar tensor.
pub fn ms_ssim_tensor(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(NvcError::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let (n, c, h, w) = a.dims4()?;
    let mut x = a.reshape((n * c, 1, h, w))?;
    let mut y = b.to_dtype(a.dtype())?.reshape((n * c, 1, h, w))?;
    let mut result: Option<Tensor> = None;
    for (s, &wt) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (ssim, cs) = ssim_terms(&x, &y)?;
        let term = if s + 1 == MS_SSIM_WEIGHTS.len() { ssim } else { cs };
        let term = term.clamp(FLOOR, f64::MAX)?.powf(wt)?;
        result = Some(match result {
            None => term,
            Some(r) => (r * term)?,
        });
        if s + 1 < MS_SSIM_WEIGHTS.len() {
            let (_, _, hh, ww) = x.dims4()?;
            if hh < 2 || ww < 2 {
                return Err(NvcError::Shape(format!("image {h}x{w} too small for 5-scale MS-SSIM")));
            }
            x = x.avg_pool2d(2)?;
            y = y.avg_pool2d(2)?;
        }
    }
    Ok(result.expect("five scales").mean_all()?)
}

/// MS-SSIM in `[0, 1]` of `(1, C, H, W)` images in `[0, 1]`.
pub fn ms_ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    let v = ms_ssim_tensor(&a.to_dtype(DType::F64)?, &b.to_dtype(DType::F64)?)?.to_scalar::<f64>()?;
    Ok(v.clamp(0.0, 1.0))
}
