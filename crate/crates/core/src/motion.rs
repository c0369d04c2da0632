//! One-stage motion codec.
//!
//! The main encoder maps `concat(reference, current)` to motion features;
//! a pyramid decoder turns the quantized features into five flow fields, one
//! per scale. Motion features are entropy coded with spatial, hyper and
//! temporal priors; the temporal prior is the hidden state of a ConvLSTM
//! updated from each frame's decoded features.

use candle_core::{DType, Tensor};

use crate::backbone::{check_padded, MainEncoder, VaeConfig, MAIN_DOWNSAMPLE};
use crate::bitstream::Chunk;
use crate::entropy::{Bottleneck, QuantMode};
use crate::error::{NvcError, Result};
use crate::latent::{LatentCodec, LatentForward};
use crate::nn::{AttentionBlock, AttentionKind, Block, BlockKind, Conv2d, ConvLstmCell, Scope, Upsample2};

pub const FLOW_SCALES: usize = 5;

/// Flow pyramid `f^s`, `s = 0..4`; `f^s` is `(1, 2, H/2^s, W/2^s)` in pixels
/// of scale `s`, channel 0 horizontal and channel 1 vertical.
#[derive(Debug, Clone)]
pub struct MultiscaleFlow {
    pub flows: Vec<Tensor>,
}

impl MultiscaleFlow {
    pub fn scale(&self, s: usize) -> &Tensor {
        &self.flows[s]
    }

    pub fn zeros(h: usize, w: usize, dtype: DType) -> Result<Self> {
        let flows = (0..FLOW_SCALES)
            .map(|s| Tensor::zeros((1, 2, h >> s, w >> s), dtype, &candle_core::Device::Cpu))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Self { flows })
    }

    /// Mean absolute displacement at scale 0, in pixels.
    pub fn mean_abs(&self) -> Result<f64> {
        Ok(self.flows[0]
            .abs()?
            .mean_all()?
            .to_dtype(DType::F64)?
            .to_scalar::<f64>()?)
    }

    pub fn check_finite(&self) -> Result<()> {
        for (s, f) in self.flows.iter().enumerate() {
            let v = f.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(NvcError::NonFinite {
                    layer: format!("flow scale {s}"),
                });
            }
        }
        Ok(())
    }
}

/// ConvLSTM state `(h, c)` on the motion-latent grid.
#[derive(Debug, Clone)]
pub struct TemporalState {
    pub h: Tensor,
    pub c: Tensor,
}

impl TemporalState {
    pub fn zeros(channels: usize, h: usize, w: usize, dtype: DType) -> Result<Self> {
        let z = Tensor::zeros((1, channels, h, w), dtype, &candle_core::Device::Cpu)?;
        Ok(Self { h: z.clone(), c: z })
    }

    pub fn detach(&self) -> Self {
        Self {
            h: self.h.detach(),
            c: self.c.detach(),
        }
    }
}

#[derive(Debug, Clone)]
struct FlowHead {
    c1: Conv2d,
    c2: Conv2d,
}

impl FlowHead {
    fn new(s: &Scope, ch: usize) -> Result<Self> {
        Ok(Self {
            c1: Conv2d::new(&s.pp("c1"), ch, ch, 3, 1)?,
            c2: Conv2d::new(&s.pp("c2"), ch, 2, 3, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.c2.forward(&self.c1.forward(x)?.relu()?)
    }
}

#[derive(Debug, Clone)]
struct FlowStage {
    blocks: Vec<Block>,
    up: Upsample2,
}

/// Shared LAM trunk with a flow head after the bottleneck and after every
/// upsampling stage.
#[derive(Debug, Clone)]
pub struct PyramidFlowDecoder {
    attention: AttentionBlock,
    stages: Vec<FlowStage>,
    /// Heads for scales 4, 3, 2, 1, 0.
    heads: Vec<FlowHead>,
}

impl PyramidFlowDecoder {
    pub fn new(s: &Scope, cfg: &VaeConfig) -> Result<Self> {
        let mut stages = Vec::with_capacity(4);
        let mut heads = vec![FlowHead::new(&s.pp("head4"), cfg.latent_channels)?];
        let mut cin = cfg.latent_channels;
        for i in 0..4 {
            let st = s.pp(format!("stage{i}"));
            let blocks = (0..cfg.blocks_per_stage)
                .map(|b| Block::new(&st.pp(format!("block{b}")), cin, BlockKind::LocalAttention, cfg.attention_depth))
                .collect::<Result<Vec<_>>>()?;
            stages.push(FlowStage {
                blocks,
                up: Upsample2::new(&st.pp("up"), cin, cfg.base_width, 3)?,
            });
            heads.push(FlowHead::new(&s.pp(format!("head{}", 3 - i)), cfg.base_width)?);
            cin = cfg.base_width;
        }
        Ok(Self {
            attention: AttentionBlock::new(&s.pp("attention"), cfg.latent_channels, AttentionKind::Lam, cfg.attention_depth)?,
            stages,
            heads,
        })
    }

    pub fn forward(&self, y_hat: &Tensor) -> Result<MultiscaleFlow> {
        let mut h = self.attention.forward(y_hat)?;
        let mut coarse_to_fine = vec![self.heads[0].forward(&h)?];
        for (st, head) in self.stages.iter().zip(&self.heads[1..]) {
            for b in &st.blocks {
                h = b.forward(&h)?;
            }
            h = st.up.forward(&h)?;
            coarse_to_fine.push(head.forward(&h)?);
        }
        coarse_to_fine.reverse();
        Ok(MultiscaleFlow { flows: coarse_to_fine })
    }
}

/// Motion codec configuration: a LAM-based VAE on 6 input channels.
pub fn motion_vae_config(base: &VaeConfig) -> VaeConfig {
    VaeConfig {
        in_channels: 6,
        out_channels: 2,
        block_kind: BlockKind::LocalAttention,
        attention: AttentionKind::Lam,
        ..base.clone()
    }
}

#[derive(Debug, Clone)]
pub struct MotionForward {
    pub flows: MultiscaleFlow,
    pub latent: LatentForward,
    pub state: TemporalState,
}

#[derive(Debug, Clone)]
pub struct EncodedMotion {
    pub chunks: Vec<Chunk>,
    pub flows: MultiscaleFlow,
    pub state: TemporalState,
    pub estimated_main_bits: f64,
}

#[derive(Debug, Clone)]
pub struct MotionCodec {
    pub encoder: MainEncoder,
    pub flow_decoder: PyramidFlowDecoder,
    pub latent: LatentCodec,
    pub tum: ConvLstmCell,
    latent_channels: usize,
    /// When false the temporal prior input is severed (fed zeros).
    pub temporal_priors: bool,
}

impl MotionCodec {
    /// `cfg` must be a motion configuration (see [`motion_vae_config`]).
    pub fn new(s: &Scope, cfg: &VaeConfig, temporal_features: usize, temporal_priors: bool) -> Result<Self> {
        if cfg.in_channels != 6 {
            return Err(NvcError::Config("motion codec takes 6 input channels".into()));
        }
        if temporal_features == 0 {
            return Err(NvcError::Config("motion codec needs temporal features".into()));
        }
        Ok(Self {
            encoder: MainEncoder::new(&s.pp("enc"), cfg)?,
            flow_decoder: PyramidFlowDecoder::new(&s.pp("flow_dec"), cfg)?,
            latent: LatentCodec::new(s, cfg, temporal_features, Bottleneck::MotionHyper, Bottleneck::MotionMain)?,
            tum: ConvLstmCell::new(&s.pp("tum"), cfg.latent_channels, cfg.latent_channels)?,
            latent_channels: cfg.latent_channels,
            temporal_priors,
        })
    }

    /// Zero state for a padded `height x width` frame (GOP start).
    pub fn initial_state(&self, height: usize, width: usize, dtype: DType) -> Result<TemporalState> {
        TemporalState::zeros(self.latent_channels, height / MAIN_DOWNSAMPLE, width / MAIN_DOWNSAMPLE, dtype)
    }

    /// Temporal prior actually fed to the context model.
    fn prior_input(&self, state: &TemporalState) -> Result<Tensor> {
        if self.temporal_priors {
            Ok(state.h.clone())
        } else {
            Ok(state.h.zeros_like()?)
        }
    }

    pub fn pyramid_flow_decode(&self, y_hat: &Tensor) -> Result<MultiscaleFlow> {
        self.flow_decoder.forward(y_hat)
    }

    /// ConvLSTM update from this frame's finalized motion latent.
    pub fn tum_update(&self, y_hat: &Tensor, state: &TemporalState) -> Result<TemporalState> {
        let (h, c) = self.tum.step(y_hat, &state.h, &state.c)?;
        Ok(TemporalState { h, c })
    }

    /// Differentiable training path.
    pub fn forward(
        &self,
        reference: &Tensor,
        current: &Tensor,
        state: &TemporalState,
        mode: QuantMode,
        seed: u64,
    ) -> Result<MotionForward> {
        let y = self.encoder.forward(&Tensor::cat(&[reference, current], 1)?)?;
        let h_prev = self.prior_input(state)?;
        let latent = self.latent.forward(&y, mode, seed, Some(&h_prev))?;
        let flows = self.pyramid_flow_decode(&latent.y_hat)?;
        let state = self.tum_update(&latent.y_hat, state)?;
        Ok(MotionForward { flows, latent, state })
    }

    pub fn encode_motion(&self, reference: &Tensor, current: &Tensor, state: &TemporalState) -> Result<EncodedMotion> {
        check_padded(current)?;
        let y = self.encoder.forward(&Tensor::cat(&[reference, current], 1)?)?;
        let h_prev = self.prior_input(state)?;
        let coded = self.latent.encode(&y, Some(&h_prev))?;
        let flows = self.pyramid_flow_decode(&coded.y_hat)?;
        let state = self.tum_update(&coded.y_hat, state)?;
        let [hyper, main] = coded.chunks;
        Ok(EncodedMotion {
            chunks: vec![hyper, main],
            flows,
            state,
            estimated_main_bits: coded.estimated_main_bits,
        })
    }

    /// Decoder side: flows and the next state from motion chunks.
    pub fn decode_motion(
        &self,
        chunks: &[Chunk],
        height: usize,
        width: usize,
        state: &TemporalState,
    ) -> Result<(MultiscaleFlow, TemporalState)> {
        let h_prev = self.prior_input(state)?;
        let dtype = state.h.dtype();
        let y_hat = self
            .latent
            .decode(chunks, height / MAIN_DOWNSAMPLE, width / MAIN_DOWNSAMPLE, dtype, Some(&h_prev))?;
        let flows = self.pyramid_flow_decode(&y_hat)?;
        let state = self.tum_update(&y_hat, state)?;
        Ok((flows, state))
    }
}
