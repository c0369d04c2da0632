//! Residual coding: `r = x - pred`, coded with an [`ImageCodec`] in the
//! residual role, then `x_hat = clamp(pred + r_hat, 0, 1)`.

use candle_core::Tensor;

use crate::error::{NvcError, Result};
use crate::intra::{EncodedImage, ImageCodec, ImageRole};

/// Codes `r` (values in `[-1, 1]`); the returned `recon` field is `r_hat`.
pub fn encode_residual(r: &Tensor, codec: &ImageCodec) -> Result<EncodedImage> {
    if codec.role() != ImageRole::Residual {
        return Err(NvcError::Config("residual coding needs a residual-role codec".into()));
    }
    codec.encode(r)
}

/// Final reconstruction `clamp(pred + r_hat, 0, 1)`.
pub fn reconstruct(pred: &Tensor, r_hat: &Tensor) -> Result<Tensor> {
    Ok((pred + r_hat)?.clamp(0.0, 1.0)?)
}
