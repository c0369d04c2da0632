//! Training objectives.

use candle_core::Tensor;

use crate::error::{NvcError, Result};
use crate::metrics::ms_ssim_tensor;
use crate::motion::FLOW_SCALES;

/// Scale weights `alpha_s = 4^s`.
pub fn scale_weight(s: usize) -> f64 {
    4f64.powi(s as i32)
}

/// `sum_s 4^s * mean|pred_s - target_s|` over the five scales.
pub fn multiscale_prediction_loss(preds: &[Tensor], targets: &[Tensor]) -> Result<Tensor> {
    if preds.len() != FLOW_SCALES || targets.len() != FLOW_SCALES {
        return Err(NvcError::Shape(format!(
            "expected {FLOW_SCALES} scales, got {} predictions and {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut total: Option<Tensor> = None;
    for (s, (p, t)) in preds.iter().zip(targets).enumerate() {
        if p.shape() != t.shape() {
            return Err(NvcError::Shape(format!("scale {s}: {:?} vs {:?}", p.dims(), t.dims())));
        }
        let term = ((p - t)?.abs()?.mean_all()? * scale_weight(s))?;
        total = Some(match total {
            None => term,
            Some(acc) => (acc + term)?,
        });
    }
    Ok(total.expect("five scales"))
}

/// Distortion measure for reconstruction losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distortion {
    Mse,
    MsSsim,
}

/// `MSE` or `1 - MS-SSIM` on `[0, 1]` images.
pub fn distortion(kind: Distortion, recon: &Tensor, target: &Tensor) -> Result<Tensor> {
    match kind {
        Distortion::Mse => Ok((recon - target)?.sqr()?.mean_all()?),
        Distortion::MsSsim => Ok(ms_ssim_tensor(recon, target)?.affine(-1.0, 1.0)?),
    }
}

/// `J = bits / pixels + lambda * D`.
pub fn rd_loss(distortion: &Tensor, bits: &Tensor, lambda: f64, pixels: usize) -> Result<Tensor> {
    if lambda < 0.0 || pixels == 0 {
        return Err(NvcError::Config("lambda must be >= 0 and pixels > 0".into()));
    }
    let rate = (bits / pixels as f64)?;
    Ok((rate + (distortion * lambda)?)?)
}
