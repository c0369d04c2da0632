use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NvcError, Result};

/// Quantizer behaviour: dithered rounding while training, plain rounding when coding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    Train,
    Infer,
}

/// The network bottleneck a latent tensor came out of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bottleneck {
    IntraHyper,
    IntraMain,
    MotionHyper,
    MotionMain,
    ResHyper,
    ResMain,
}

impl Bottleneck {
    pub fn tag(self) -> u8 {
        match self {
            Bottleneck::IntraHyper => 0,
            Bottleneck::IntraMain => 1,
            Bottleneck::MotionHyper => 2,
            Bottleneck::MotionMain => 3,
            Bottleneck::ResHyper => 4,
            Bottleneck::ResMain => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Bottleneck::IntraHyper,
            1 => Bottleneck::IntraMain,
            2 => Bottleneck::MotionHyper,
            3 => Bottleneck::MotionMain,
            4 => Bottleneck::ResHyper,
            5 => Bottleneck::ResMain,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Bottleneck::IntraHyper => "intra_hyper",
            Bottleneck::IntraMain => "intra_main",
            Bottleneck::MotionHyper => "motion_hyper",
            Bottleneck::MotionMain => "motion_main",
            Bottleneck::ResHyper => "res_hyper",
            Bottleneck::ResMain => "res_main",
        }
    }
}

/// Quantized feature grid of shape `(1, C, H', W')`.
///
/// In [`QuantMode::Infer`] every element is an exact integer.
#[derive(Debug, Clone)]
pub struct LatentTensor {
    pub values: Tensor,
    pub source: Bottleneck,
}

impl LatentTensor {
    /// `(C, H', W')` of the latent grid.
    pub fn grid(&self) -> Result<(usize, usize, usize)> {
        let (_, c, h, w) = self.values.dims4()?;
        Ok((c, h, w))
    }

    /// Integer symbols in channel-major raster order. Fails if any element is
    /// not an exact integer.
    pub fn symbols(&self) -> Result<Vec<i32>> {
        let v = self
            .values
            .flatten_all()?
            .to_dtype(DType::F64)?
            .to_vec1::<f64>()?;
        v.iter()
            .map(|&x| {
                if x.fract() != 0.0 || !x.is_finite() {
                    Err(NvcError::Shape(format!(
                        "{} latent holds non-integer value {x}",
                        self.source.name()
                    )))
                } else {
                    Ok(x as i32)
                }
            })
            .collect()
    }
}

/// Rounding with ties away from zero; the single rounding rule used on both
/// sides of the codec.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// `R(x + u) - u` for one scalar and a given dither `u`.
pub fn universal_quantize_scalar(x: f64, u: f64) -> f64 {
    round_half_away(x + u) - u
}

/// Universal quantization with a pass-through derivative.
///
/// Training mode draws one dither `u ~ U(-1/2, 1/2)` for the whole tensor from
/// `noise_seed`; inference mode uses `u = 0`. The forward value is
/// `R(x + u) - u` while the derivative w.r.t. `x` is exactly 1.
pub fn universal_quantize(
    x: &Tensor,
    mode: QuantMode,
    noise_seed: u64,
    source: Bottleneck,
) -> Result<LatentTensor> {
    let finite = x
        .flatten_all()?
        .to_dtype(DType::F64)?
        .to_vec1::<f64>()?
        .iter()
        .all(|v| v.is_finite());
    if !finite {
        return Err(NvcError::NonFinite {
            layer: source.name().to_string(),
        });
    }
    let u = match mode {
        QuantMode::Train => ChaCha8Rng::seed_from_u64(noise_seed).gen_range(-0.5..0.5),
        QuantMode::Infer => 0.0,
    };
    let detached = x.detach();
    let q = if u == 0.0 {
        detached.round()?
    } else {
        ((detached + u)?.round()? - u)?
    };
    // x + (q - x) keeps the pass-through gradient; for |x - q| <= 1/2 the
    // subtraction is exact, so inference values stay exact integers.
    let values = (x + (q - x.detach())?.detach())?;
    Ok(LatentTensor { values, source })
}
