//! Prior aggregation: fuses masked 3-D spatial context, hyper priors and
//! (for motion) temporal priors into per-element Gaussian parameters, plus the
//! factorized prior used for hyper latents.
//!
//! Latent elements are ordered channel-major, then row, then column. The
//! 5x5x5 masked kernel is shared by all channels; it sees the two previous
//! channels completely and the current channel strictly before the element.
//! Later channels (depth offsets +1, +2) are always masked out.
//!
//! Training uses batched convolutions; coding uses [`ContextEvaluator`],
//! which evaluates one element at a time in a fixed summation order so that
//! encoder and decoder derive bit-identical tables.

use candle_core::{DType, IndexOp, Tensor};

use crate::bitstream::Chunk;
use crate::entropy::{
    build_pmf_table, Bottleneck, GaussianParams, PmfTable, RangeDecoder, RangeEncoder,
    LOG_SIGMA_MAX, SIGMA_MIN,
};
use crate::error::{NvcError, Result};
use crate::nn::{Conv2d, Init, Scope};

pub const CONTEXT_KERNEL: usize = 5;
const TAPS: usize = CONTEXT_KERNEL * CONTEXT_KERNEL;
const HALF: isize = (CONTEXT_KERNEL / 2) as isize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ContextConfig {
    pub latent_channels: usize,
    /// Features produced by the masked 3-D convolution.
    pub spatial_features: usize,
    /// Hyper-decoder features per latent channel.
    pub hyper_features: usize,
    /// Temporal features per latent channel; 0 disables the temporal branch.
    pub temporal_features: usize,
    /// Width of the hidden 1x1x1 fusion layers.
    pub fusion_width: usize,
}

/// Causal-mask value for in-channel tap `(dy, dx)`.
fn in_channel_causal(dy: isize, dx: isize) -> bool {
    dy < 0 || (dy == 0 && dx < 0)
}

/// Prior-aggregation network (also the STHAM when the temporal branch is on).
#[derive(Debug, Clone)]
pub struct PriorAggregation {
    cfg: ContextConfig,
    /// `(3, K, 1, 5, 5)`: kernels for channel offsets -2, -1 and 0 (masked).
    kernels: Tensor,
    kernel_bias: Tensor,
    causal_mask: Tensor,
    temporal: Option<Conv2d>,
    fusion: Vec<Conv2d>,
}

impl PriorAggregation {
    pub fn new(s: &Scope, cfg: ContextConfig) -> Result<Self> {
        let k = cfg.spatial_features;
        let bound = 1.0 / ((3 * TAPS) as f64).sqrt();
        let kernels = s.var("context.weight", &[3, k, 1, CONTEXT_KERNEL, CONTEXT_KERNEL], Init::Uniform(bound))?;
        let kernel_bias = s.var("context.bias", &[k], Init::Uniform(bound))?;
        let mask: Vec<f64> = (0..TAPS)
            .map(|t| {
                let dy = (t / CONTEXT_KERNEL) as isize - HALF;
                let dx = (t % CONTEXT_KERNEL) as isize - HALF;
                if in_channel_causal(dy, dx) { 1.0 } else { 0.0 }
            })
            .collect();
        let causal_mask = Tensor::from_vec(mask, (1, 1, CONTEXT_KERNEL, CONTEXT_KERNEL), s.device())?
            .to_dtype(s.dtype())?;
        let temporal = if cfg.temporal_features > 0 {
            Some(Conv2d::new(
                &s.pp("temporal"),
                cfg.latent_channels,
                cfg.latent_channels * cfg.temporal_features,
                3,
                1,
            )?)
        } else {
            None
        };
        let fin = k + cfg.hyper_features + cfg.temporal_features;
        let fusion = vec![
            Conv2d::new(&s.pp("fuse0"), fin, cfg.fusion_width, 1, 1)?,
            Conv2d::new(&s.pp("fuse1"), cfg.fusion_width, cfg.fusion_width, 1, 1)?,
            Conv2d::new(&s.pp("fuse2"), cfg.fusion_width, 2, 1, 1)?,
        ];
        Ok(Self {
            cfg,
            kernels,
            kernel_bias,
            causal_mask,
            temporal,
            fusion,
        })
    }

    pub fn config(&self) -> ContextConfig {
        self.cfg
    }

    fn masked_kernel(&self, offset: usize) -> Result<Tensor> {
        let k = self.kernels.i(offset)?;
        if offset == 2 {
            Ok(k.broadcast_mul(&self.causal_mask)?)
        } else {
            Ok(k)
        }
    }

    /// Spatial context features `(N, K, H, W)` of a latent `(1, N, H, W)`.
    pub fn spatial_context(&self, y: &Tensor) -> Result<Tensor> {
        let (_, n, h, w) = y.dims4()?;
        let x = y.reshape((n, 1, h, w))?;
        let shifted = |k: usize| -> Result<Tensor> {
            let zeros = Tensor::zeros((k.min(n), 1, h, w), y.dtype(), y.device())?;
            if k >= n {
                Ok(Tensor::zeros((n, 1, h, w), y.dtype(), y.device())?)
            } else {
                Ok(Tensor::cat(&[&zeros, &x.narrow(0, 0, n - k)?], 0)?)
            }
        };
        let pad = CONTEXT_KERNEL / 2;
        let c2 = shifted(2)?.conv2d(&self.masked_kernel(0)?, pad, 1, 1, 1)?;
        let c1 = shifted(1)?.conv2d(&self.masked_kernel(1)?, pad, 1, 1, 1)?;
        let c0 = x.conv2d(&self.masked_kernel(2)?, pad, 1, 1, 1)?;
        let kf = self.cfg.spatial_features;
        Ok(((c2 + c1)? + c0)?.broadcast_add(&self.kernel_bias.reshape((1, kf, 1, 1))?)?)
    }

    /// Temporal features `(1, N * Kt, H, W)` from the previous hidden state.
    pub fn temporal_features(&self, h_prev: &Tensor) -> Result<Option<Tensor>> {
        match &self.temporal {
            Some(conv) => Ok(Some(conv.forward(h_prev)?)),
            None => Ok(None),
        }
    }

    /// Gaussian parameters for every element of `y` (training path).
    ///
    /// `hyper` is `(1, N * Kh, H, W)`; `h_prev` must be given iff the temporal
    /// branch exists (pass zeros to sever it).
    pub fn params(&self, y: &Tensor, hyper: &Tensor, h_prev: Option<&Tensor>) -> Result<GaussianParams> {
        let (_, n, h, w) = y.dims4()?;
        if n != self.cfg.latent_channels {
            return Err(NvcError::Shape(format!(
                "latent has {n} channels, context expects {}",
                self.cfg.latent_channels
            )));
        }
        let mut parts = vec![self.spatial_context(y)?];
        parts.push(hyper.reshape((n, self.cfg.hyper_features, h, w))?);
        match (&self.temporal, h_prev) {
            (Some(_), Some(hp)) => {
                let t = self.temporal_features(hp)?.expect("temporal branch");
                parts.push(t.reshape((n, self.cfg.temporal_features, h, w))?);
            }
            (None, None) => {}
            _ => {
                return Err(NvcError::Config(
                    "temporal prior supplied to a model without a temporal branch (or missing)".into(),
                ))
            }
        }
        let mut z = Tensor::cat(&parts, 1)?;
        for (i, layer) in self.fusion.iter().enumerate() {
            z = layer.forward(&z)?;
            if i + 1 < self.fusion.len() {
                z = z.relu()?;
            }
        }
        let mu = z.i((.., 0..1))?.reshape((1, n, h, w))?;
        let log_sigma = z.i((.., 1..2))?.reshape((1, n, h, w))?;
        GaussianParams::from_log_sigma(mu, &log_sigma)
    }

    /// Builds the per-element evaluator used by the range coder.
    pub fn evaluator(
        &self,
        grid: (usize, usize, usize),
        hyper: &Tensor,
        temporal: Option<&Tensor>,
    ) -> Result<ContextEvaluator> {
        let (n, h, w) = grid;
        let to_vec = |t: &Tensor| -> Result<Vec<f64>> {
            Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
        };
        let kf = self.cfg.spatial_features;
        let mut kernels = Vec::with_capacity(3);
        for off in 0..3 {
            kernels.push(to_vec(&self.masked_kernel(off)?)?);
        }
        let hyper_v = to_vec(hyper)?;
        if hyper_v.len() != n * self.cfg.hyper_features * h * w {
            return Err(NvcError::Shape("hyper features do not match latent grid".into()));
        }
        let temporal_v = match (temporal, &self.temporal) {
            (Some(t), Some(_)) => {
                let v = to_vec(t)?;
                if v.len() != n * self.cfg.temporal_features * h * w {
                    return Err(NvcError::Shape("temporal features do not match latent grid".into()));
                }
                Some(v)
            }
            (None, None) => None,
            _ => return Err(NvcError::Config("temporal features mismatch".into())),
        };
        let mut layers = Vec::with_capacity(self.fusion.len());
        for l in &self.fusion {
            let (out, inp, _, _) = l.weight.dims4()?;
            layers.push(DenseLayer {
                weight: to_vec(&l.weight)?,
                bias: to_vec(&l.bias)?,
                out,
                inp,
            });
        }
        Ok(ContextEvaluator {
            n,
            h,
            w,
            kf,
            kh: self.cfg.hyper_features,
            kt: self.cfg.temporal_features * temporal_v.is_some() as usize,
            kernels,
            kernel_bias: to_vec(&self.kernel_bias)?,
            hyper: hyper_v,
            temporal: temporal_v,
            layers,
        })
    }
}

#[derive(Debug, Clone)]
struct DenseLayer {
    weight: Vec<f64>,
    bias: Vec<f64>,
    out: usize,
    inp: usize,
}

/// Element-at-a-time evaluation of [`PriorAggregation`] for entropy coding.
#[derive(Debug, Clone)]
pub struct ContextEvaluator {
    n: usize,
    h: usize,
    w: usize,
    kf: usize,
    kh: usize,
    kt: usize,
    kernels: Vec<Vec<f64>>,
    kernel_bias: Vec<f64>,
    hyper: Vec<f64>,
    temporal: Option<Vec<f64>>,
    layers: Vec<DenseLayer>,
}

impl ContextEvaluator {
    pub fn len(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(mu, sigma)` of raster element `index`, reading only the causal
    /// prefix `decoded[..index]`.
    pub fn params_at(&self, decoded: &[f64], index: usize) -> (f64, f64) {
        let (h, w) = (self.h, self.w);
        let c = index / (h * w);
        let y = (index / w) % h;
        let x = index % w;
        let mut feats = Vec::with_capacity(self.kf + self.kh + self.kt);
        for k in 0..self.kf {
            let mut acc = self.kernel_bias[k];
            for (off, kern) in self.kernels.iter().enumerate() {
                let dc = off as isize - 2;
                let cc = c as isize + dc;
                if cc < 0 {
                    continue;
                }
                let cc = cc as usize;
                for t in 0..TAPS {
                    let dy = (t / CONTEXT_KERNEL) as isize - HALF;
                    let dx = (t % CONTEXT_KERNEL) as isize - HALF;
                    if dc == 0 && !in_channel_causal(dy, dx) {
                        continue;
                    }
                    let yy = y as isize + dy;
                    let xx = x as isize + dx;
                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                        continue;
                    }
                    let j = (cc * h + yy as usize) * w + xx as usize;
                    debug_assert!(j < index);
                    acc += kern[k * TAPS + t] * decoded[j];
                }
            }
            feats.push(acc);
        }
        let pos = y * w + x;
        for k in 0..self.kh {
            feats.push(self.hyper[(c * self.kh + k) * h * w + pos]);
        }
        if let Some(t) = &self.temporal {
            for k in 0..self.kt {
                feats.push(t[(c * self.kt + k) * h * w + pos]);
            }
        }
        let mut act = feats;
        for (li, l) in self.layers.iter().enumerate() {
            let mut next = Vec::with_capacity(l.out);
            for o in 0..l.out {
                let mut acc = l.bias[o];
                for i in 0..l.inp {
                    acc += l.weight[o * l.inp + i] * act[i];
                }
                if li + 1 < self.layers.len() {
                    acc = acc.max(0.0);
                }
                next.push(acc);
            }
            act = next;
        }
        let mu = act[0];
        let sigma = libm::exp(act[1].clamp(SIGMA_MIN.ln(), LOG_SIGMA_MAX));
        (mu, sigma)
    }

    /// Parameters for all elements given the complete latent.
    pub fn all_params(&self, symbols: &[i32]) -> (Vec<f64>, Vec<f64>) {
        let decoded: Vec<f64> = symbols.iter().map(|&s| s as f64).collect();
        (0..self.len()).map(|i| self.params_at(&decoded, i)).unzip()
    }
}

fn symbol_range(symbols: &[i32]) -> (i32, i32) {
    let lo = symbols.iter().copied().min().unwrap_or(0);
    let hi = symbols.iter().copied().max().unwrap_or(0);
    (lo.saturating_sub(1), hi.saturating_add(1))
}

/// Range-codes a main latent with context-adaptive tables.
pub fn encode_with_context(
    kind: Bottleneck,
    symbols: &[i32],
    eval: &ContextEvaluator,
) -> Result<(Chunk, Vec<PmfTable>)> {
    if symbols.len() != eval.len() {
        return Err(NvcError::Shape("symbol count does not match latent grid".into()));
    }
    let (lo, hi) = symbol_range(symbols);
    let decoded: Vec<f64> = symbols.iter().map(|&s| s as f64).collect();
    let mut enc = RangeEncoder::new();
    let mut tables = Vec::with_capacity(symbols.len());
    for (i, &s) in symbols.iter().enumerate() {
        let (mu, sigma) = eval.params_at(&decoded, i);
        let t = build_pmf_table(mu, sigma, lo, hi)?;
        enc.encode(s, &t)?;
        tables.push(t);
    }
    Ok((
        Chunk {
            kind,
            symbol_min: lo,
            symbol_max: hi,
            payload: enc.finish(),
        },
        tables,
    ))
}

/// Sequential inverse of [`encode_with_context`]; also returns the tables used.
pub fn decode_with_context(chunk: &Chunk, eval: &ContextEvaluator) -> Result<(Vec<i32>, Vec<PmfTable>)> {
    if chunk.symbol_min > chunk.symbol_max {
        return Err(NvcError::CorruptStream("inverted symbol range".into()));
    }
    let mut dec = RangeDecoder::new(&chunk.payload)?;
    let mut decoded = vec![0.0f64; eval.len()];
    let mut out = Vec::with_capacity(eval.len());
    let mut tables = Vec::with_capacity(eval.len());
    for i in 0..eval.len() {
        let (mu, sigma) = eval.params_at(&decoded, i);
        let t = build_pmf_table(mu, sigma, chunk.symbol_min, chunk.symbol_max)?;
        let s = dec.decode(&t)?;
        decoded[i] = s as f64;
        out.push(s);
        tables.push(t);
    }
    dec.finish()?;
    Ok((out, tables))
}

/// Non-adaptive per-channel Gaussian prior for hyper latents.
#[derive(Debug, Clone)]
pub struct FactorizedPrior {
    pub mu: Tensor,
    pub log_sigma: Tensor,
}

impl FactorizedPrior {
    pub fn new(s: &Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            mu: s.var("mu", &[channels], Init::Const(0.0))?,
            log_sigma: s.var("log_sigma", &[channels], Init::Const(0.0))?,
        })
    }

    pub fn params_like(&self, z: &Tensor) -> Result<GaussianParams> {
        let (b, c, h, w) = z.dims4()?;
        let mu = self.mu.reshape((1, c, 1, 1))?.broadcast_as((b, c, h, w))?.contiguous()?;
        let ls = self.log_sigma.reshape((1, c, 1, 1))?.broadcast_as((b, c, h, w))?.contiguous()?;
        GaussianParams::from_log_sigma(mu, &ls)
    }

    fn channel_tables(&self, lo: i32, hi: i32) -> Result<Vec<PmfTable>> {
        let mu: Vec<f64> = self.mu.to_dtype(DType::F64)?.to_vec1()?;
        let ls: Vec<f64> = self.log_sigma.to_dtype(DType::F64)?.to_vec1()?;
        mu.iter()
            .zip(&ls)
            .map(|(&m, &l)| build_pmf_table(m, libm::exp(l.clamp(SIGMA_MIN.ln(), LOG_SIGMA_MAX)), lo, hi))
            .collect()
    }

    /// Codes `symbols` laid out as `(C, h, w)` in raster order.
    pub fn encode(&self, kind: Bottleneck, symbols: &[i32], plane: usize) -> Result<Chunk> {
        let (lo, hi) = symbol_range(symbols);
        let tables = self.channel_tables(lo, hi)?;
        if plane == 0 || symbols.len() != tables.len() * plane {
            return Err(NvcError::Shape("hyper symbols do not match channel count".into()));
        }
        let mut enc = RangeEncoder::new();
        for (i, &s) in symbols.iter().enumerate() {
            enc.encode(s, &tables[i / plane])?;
        }
        Ok(Chunk {
            kind,
            symbol_min: lo,
            symbol_max: hi,
            payload: enc.finish(),
        })
    }

    pub fn decode(&self, chunk: &Chunk, plane: usize) -> Result<Vec<i32>> {
        if chunk.symbol_min > chunk.symbol_max {
            return Err(NvcError::CorruptStream("inverted symbol range".into()));
        }
        let tables = self.channel_tables(chunk.symbol_min, chunk.symbol_max)?;
        let mut dec = RangeDecoder::new(&chunk.payload)?;
        let mut out = Vec::with_capacity(tables.len() * plane);
        for t in &tables {
            for _ in 0..plane {
                out.push(dec.decode(t)?);
            }
        }
        dec.finish()?;
        Ok(out)
    }
}
