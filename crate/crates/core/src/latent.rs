//! Hyperprior + context-model coding of one main latent.
//!
//! Shared by the intra, motion and residual codecs: hyper analysis and
//! synthesis, the factorized prior for the hyper latent and the prior
//! aggregation for the main latent.

use candle_core::{DType, Tensor};

use crate::backbone::{HyperDecoder, HyperEncoder, VaeConfig, HYPER_DOWNSAMPLE};
use crate::bitstream::Chunk;
use crate::context::{decode_with_context, encode_with_context, ContextConfig, ContextEvaluator, FactorizedPrior, PriorAggregation};
use crate::entropy::{estimate_bits, universal_quantize, Bottleneck, GaussianParams, LatentTensor, QuantMode};
use crate::error::{NvcError, Result};
use crate::nn::Scope;

/// Differentiable outputs of the training path.
#[derive(Debug, Clone)]
pub struct LatentForward {
    /// Quantized (or dithered) main latent.
    pub y_hat: Tensor,
    pub bits_main: Tensor,
    pub bits_hyper: Tensor,
    pub params: GaussianParams,
}

impl LatentForward {
    pub fn bits(&self) -> Result<Tensor> {
        Ok((&self.bits_main + &self.bits_hyper)?)
    }
}

/// Result of coding one latent.
#[derive(Debug, Clone)]
pub struct CodedLatent {
    /// Hyper chunk then main chunk.
    pub chunks: [Chunk; 2],
    /// Dequantized main latent, rebuilt from the coded symbols.
    pub y_hat: Tensor,
    /// Model estimate of the main chunk's cost in bits.
    pub estimated_main_bits: f64,
}

#[derive(Debug, Clone)]
pub struct LatentCodec {
    pub hyper_enc: HyperEncoder,
    pub hyper_dec: HyperDecoder,
    pub hyper_prior: FactorizedPrior,
    pub context: PriorAggregation,
    hyper_kind: Bottleneck,
    main_kind: Bottleneck,
    latent_channels: usize,
    hyper_channels: usize,
}

fn symbols_to_tensor(symbols: &[i32], shape: (usize, usize, usize, usize), dtype: DType) -> Result<Tensor> {
    let v: Vec<f32> = symbols.iter().map(|&s| s as f32).collect();
    Ok(Tensor::from_vec(v, shape, &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

impl LatentCodec {
    pub fn new(
        s: &Scope,
        cfg: &VaeConfig,
        temporal_features: usize,
        hyper_kind: Bottleneck,
        main_kind: Bottleneck,
    ) -> Result<Self> {
        let ctx = ContextConfig {
            latent_channels: cfg.latent_channels,
            spatial_features: cfg.context_features,
            hyper_features: cfg.prior_features,
            temporal_features,
            fusion_width: cfg.fusion_width,
        };
        Ok(Self {
            hyper_enc: HyperEncoder::new(&s.pp("hyper_enc"), cfg)?,
            hyper_dec: HyperDecoder::new(&s.pp("hyper_dec"), cfg)?,
            hyper_prior: FactorizedPrior::new(&s.pp("hyper_prior"), cfg.hyper_channels)?,
            context: PriorAggregation::new(&s.pp("context"), ctx)?,
            hyper_kind,
            main_kind,
            latent_channels: cfg.latent_channels,
            hyper_channels: cfg.hyper_channels,
        })
    }

    pub fn main_kind(&self) -> Bottleneck {
        self.main_kind
    }

    pub fn hyper_kind(&self) -> Bottleneck {
        self.hyper_kind
    }

    /// Training/estimation path. `h_prev` feeds the temporal branch if present.
    pub fn forward(&self, y: &Tensor, mode: QuantMode, seed: u64, h_prev: Option<&Tensor>) -> Result<LatentForward> {
        let z = self.hyper_enc.forward(y)?;
        let z_hat = universal_quantize(&z, mode, seed ^ 0x9e37_79b9_7f4a_7c15, self.hyper_kind)?;
        let y_hat = universal_quantize(y, mode, seed, self.main_kind)?;
        let hyper = self.hyper_dec.forward(&z_hat.values)?;
        let params = self.context.params(&y_hat.values, &hyper, h_prev)?;
        let bits_main = estimate_bits(&y_hat, &params)?;
        let hyper_params = self.hyper_prior.params_like(&z_hat.values)?;
        let bits_hyper = estimate_bits(&z_hat, &hyper_params)?;
        Ok(LatentForward {
            y_hat: y_hat.values,
            bits_main,
            bits_hyper,
            params,
        })
    }

    /// Per-element coding model for a main latent given the decoded hyper latent.
    pub fn evaluator(&self, z_hat: &Tensor, grid: (usize, usize, usize), h_prev: Option<&Tensor>) -> Result<ContextEvaluator> {
        let hyper = self.hyper_dec.forward(z_hat)?;
        let temporal = match h_prev {
            Some(h) => self.context.temporal_features(h)?,
            None => None,
        };
        self.context.evaluator(grid, &hyper, temporal.as_ref())
    }

    /// Quantizes and range-codes `y` of shape `(1, N, h, w)`.
    pub fn encode(&self, y: &Tensor, h_prev: Option<&Tensor>) -> Result<CodedLatent> {
        let (_, n, h, w) = y.dims4()?;
        let dtype = y.dtype();
        let z = self.hyper_enc.forward(y)?;
        let z_q = universal_quantize(&z, QuantMode::Infer, 0, self.hyper_kind)?;
        let z_syms = z_q.symbols()?;
        let (_, hc, hh, hw) = z.dims4()?;
        let hyper_chunk = self.hyper_prior.encode(self.hyper_kind, &z_syms, hh * hw)?;
        let z_hat = symbols_to_tensor(&z_syms, (1, hc, hh, hw), dtype)?;
        let y_syms = LatentTensor {
            values: y.detach().round()?,
            source: self.main_kind,
        }
        .symbols()?;
        let eval = self.evaluator(&z_hat, (n, h, w), h_prev)?;
        let (main_chunk, tables) = encode_with_context(self.main_kind, &y_syms, &eval)?;
        let estimated_main_bits = y_syms
            .iter()
            .zip(&tables)
            .map(|(&s, t)| {
                let (_, freq) = t.interval(s).expect("symbol in table");
                -(freq as f64 / t.total() as f64).log2()
            })
            .sum();
        Ok(CodedLatent {
            chunks: [hyper_chunk, main_chunk],
            y_hat: symbols_to_tensor(&y_syms, (1, n, h, w), dtype)?,
            estimated_main_bits,
        })
    }

    /// Inverse of [`Self::encode`] for a main latent grid of `h x w`.
    pub fn decode(&self, chunks: &[Chunk], h: usize, w: usize, dtype: DType, h_prev: Option<&Tensor>) -> Result<Tensor> {
        let [hyper_chunk, main_chunk] = chunks else {
            return Err(NvcError::CorruptStream(format!("expected 2 chunks, found {}", chunks.len())));
        };
        if hyper_chunk.kind != self.hyper_kind || main_chunk.kind != self.main_kind {
            return Err(NvcError::ChunkOrder(format!(
                "expected {} then {}",
                self.hyper_kind.name(),
                self.main_kind.name()
            )));
        }
        if h % HYPER_DOWNSAMPLE != 0 || w % HYPER_DOWNSAMPLE != 0 {
            return Err(NvcError::Shape(format!("latent grid {h}x{w} not divisible by {HYPER_DOWNSAMPLE}")));
        }
        let (hh, hw) = (h / HYPER_DOWNSAMPLE, w / HYPER_DOWNSAMPLE);
        let z_syms = self.hyper_prior.decode(hyper_chunk, hh * hw)?;
        let z_hat = symbols_to_tensor(&z_syms, (1, self.hyper_channels, hh, hw), dtype)?;
        let n = self.latent_channels;
        let eval = self.evaluator(&z_hat, (n, h, w), h_prev)?;
        let (y_syms, _) = decode_with_context(main_chunk, &eval)?;
        symbols_to_tensor(&y_syms, (1, n, h, w), dtype)
    }
}
