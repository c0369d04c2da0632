//! Image-domain VAE codec used for I-frames and, with independent weights
//! and a `[-1, 1]` output range, for inter residuals.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::backbone::{check_padded, MainDecoder, MainEncoder, VaeConfig, MAIN_DOWNSAMPLE};
use crate::bitstream::Chunk;
use crate::entropy::{Bottleneck, QuantMode};
use crate::error::Result;
use crate::latent::{LatentCodec, LatentForward};
use crate::nn::Scope;

/// Which signal an [`ImageCodec`] codes; fixes chunk kinds and output range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageRole {
    Intra,
    Residual,
}

impl ImageRole {
    pub fn range(self) -> (f64, f64) {
        match self {
            ImageRole::Intra => (0.0, 1.0),
            ImageRole::Residual => (-1.0, 1.0),
        }
    }

    fn kinds(self) -> (Bottleneck, Bottleneck) {
        match self {
            ImageRole::Intra => (Bottleneck::IntraHyper, Bottleneck::IntraMain),
            ImageRole::Residual => (Bottleneck::ResHyper, Bottleneck::ResMain),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageForward {
    /// Unclamped synthesis output (keeps gradients at the range limits).
    pub recon: Tensor,
    pub latent: LatentForward,
}

impl ImageForward {
    pub fn bits(&self) -> Result<Tensor> {
        self.latent.bits()
    }
}

#[derive(Debug, Clone)]
pub struct EncodedImage {
    /// Hyper chunk then main chunk.
    pub chunks: Vec<Chunk>,
    /// Clamped reconstruction, identical to what the decoder produces.
    pub recon: Tensor,
    pub estimated_main_bits: f64,
}

#[derive(Debug, Clone)]
pub struct ImageCodec {
    pub encoder: MainEncoder,
    pub decoder: MainDecoder,
    pub latent: LatentCodec,
    role: ImageRole,
}

impl ImageCodec {
    pub fn new(s: &Scope, cfg: &VaeConfig, role: ImageRole) -> Result<Self> {
        let (hk, mk) = role.kinds();
        Ok(Self {
            encoder: MainEncoder::new(&s.pp("enc"), cfg)?,
            decoder: MainDecoder::new(&s.pp("dec"), cfg)?,
            latent: LatentCodec::new(s, cfg, 0, hk, mk)?,
            role,
        })
    }

    pub fn role(&self) -> ImageRole {
        self.role
    }

    /// Differentiable forward pass with universal quantization.
    pub fn forward(&self, x: &Tensor, mode: QuantMode, seed: u64) -> Result<ImageForward> {
        let y = self.encoder.forward(x)?;
        let latent = self.latent.forward(&y, mode, seed, None)?;
        let recon = self.decoder.forward(&latent.y_hat)?;
        Ok(ImageForward { recon, latent })
    }

    fn synthesize(&self, y_hat: &Tensor) -> Result<Tensor> {
        let (lo, hi) = self.role.range();
        Ok(self.decoder.forward(y_hat)?.clamp(lo, hi)?)
    }

    /// Codes a padded image `(1, C, H, W)`.
    pub fn encode(&self, x: &Tensor) -> Result<EncodedImage> {
        check_padded(x)?;
        let y = self.encoder.forward(x)?;
        let coded = self.latent.encode(&y, None)?;
        let recon = self.synthesize(&coded.y_hat)?;
        let [hyper, main] = coded.chunks;
        Ok(EncodedImage {
            chunks: vec![hyper, main],
            recon,
            estimated_main_bits: coded.estimated_main_bits,
        })
    }

    /// Decodes chunks produced by [`Self::encode`] for a padded `height x width` image.
    pub fn decode(&self, chunks: &[Chunk], height: usize, width: usize, dtype: DType) -> Result<Tensor> {
        let y_hat = self
            .latent
            .decode(chunks, height / MAIN_DOWNSAMPLE, width / MAIN_DOWNSAMPLE, dtype, None)?;
        self.synthesize(&y_hat)
    }
}

/// I-frame encode: chunks plus the encoder-side reconstruction in `[0, 1]`.
pub fn encode_intra(frame: &Tensor, codec: &ImageCodec) -> Result<EncodedImage> {
    codec.encode(frame)
}

pub fn decode_intra(chunks: &[Chunk], codec: &ImageCodec, height: usize, width: usize, dtype: DType) -> Result<Tensor> {
    codec.decode(chunks, height, width, dtype)
}
