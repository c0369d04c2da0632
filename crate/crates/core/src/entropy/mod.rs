//! Shared compression substrate: quantization, Gaussian probability
//! modeling, bit estimation and a streaming range coder.

mod gaussian;
mod pmf;
mod quantize;
mod range_coder;

pub use gaussian::{
    estimate_bits, estimate_bits_exact, gaussian_pmf, std_normal_cdf, GaussianParams, LOG_SIGMA_MAX,
    P_MIN, SIGMA_MIN,
};
pub use pmf::{build_pmf_table, PmfTable, DEFAULT_PRECISION};
pub use quantize::{
    round_half_away, universal_quantize, universal_quantize_scalar, Bottleneck, LatentTensor,
    QuantMode,
};
pub use range_coder::{range_decode, range_encode, RangeDecoder, RangeEncoder, FLUSH_BYTES};
