//! VAE compression skeleton: main and hyper analysis/synthesis transforms.
//!
//! The main encoder runs four stages of (5x5 stride-2 convolution + residual
//! blocks) and gates the bottleneck with an attention module, for an overall
//! 16x downsampling. The hyper encoder adds two more stride-2 layers (4x
//! relative to the main latent). Decoders mirror their encoders with sub-pixel
//! x2 upsampling.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{NvcError, Result};
use crate::nn::{AttentionBlock, AttentionKind, Block, BlockKind, Conv2d, Scope, Upsample2};

/// Total spatial reduction of the hyper latent; inputs are padded to a multiple of this.
pub const PAD_MULTIPLE: usize = 64;
pub const MAIN_DOWNSAMPLE: usize = 16;
pub const HYPER_DOWNSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub latent_channels: usize,
    pub hyper_channels: usize,
    pub base_width: usize,
    pub blocks_per_stage: usize,
    /// Residual blocks inside every attention mask branch.
    pub attention_depth: usize,
    /// Attention used at the main and hyper bottlenecks.
    pub attention: AttentionKind,
    /// Kind of the per-stage blocks.
    pub block_kind: BlockKind,
    /// Hyper-decoder output features per main-latent channel.
    pub prior_features: usize,
    /// Features of the masked spatial-context convolution.
    pub context_features: usize,
    /// Hidden width of the prior-aggregation fusion layers.
    pub fusion_width: usize,
}

impl VaeConfig {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            latent_channels: 192,
            hyper_channels: 192,
            base_width: 192,
            blocks_per_stage: 3,
            attention_depth: 3,
            attention: AttentionKind::Nlam,
            block_kind: BlockKind::Residual,
            prior_features: 2,
            context_features: 8,
            fusion_width: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.hyper_channels == 0 || self.base_width == 0 {
            return Err(NvcError::Config("channel counts must be positive".into()));
        }
        if self.in_channels == 0
            || self.out_channels == 0
            || self.prior_features == 0
            || self.context_features == 0
            || self.fusion_width == 0
        {
            return Err(NvcError::Config("io channels must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_padded(x: &Tensor) -> Result<(usize, usize)> {
    let (_, _, h, w) = x.dims4()?;
    if h % PAD_MULTIPLE != 0 || w % PAD_MULTIPLE != 0 || h == 0 || w == 0 {
        return Err(NvcError::Shape(format!(
            "input {h}x{w} is not padded to a multiple of {PAD_MULTIPLE}"
        )));
    }
    Ok((h, w))
}

#[derive(Debug, Clone)]
struct DownStage {
    down: Conv2d,
    blocks: Vec<Block>,
}

/// Main analysis transform `x -> y`, `(C_in, H, W) -> (N, H/16, W/16)`.
#[derive(Debug, Clone)]
pub struct MainEncoder {
    stages: Vec<DownStage>,
    attention: AttentionBlock,
}

impl MainEncoder {
    pub fn new(s: &Scope, cfg: &VaeConfig) -> Result<Self> {
        cfg.validate()?;
        let mut stages = Vec::with_capacity(4);
        let mut cin = cfg.in_channels;
        for i in 0..4 {
            let cout = if i == 3 { cfg.latent_channels } else { cfg.base_width };
            let st = s.pp(format!("stage{i}"));
            let blocks = (0..cfg.blocks_per_stage)
                .map(|b| Block::new(&st.pp(format!("block{b}")), cout, cfg.block_kind, cfg.attention_depth))
                .collect::<Result<Vec<_>>>()?;
            stages.push(DownStage {
                down: Conv2d::new(&st.pp("down"), cin, cout, 5, 2)?,
                blocks,
            });
            cin = cout;
        }
        Ok(Self {
            stages,
            attention: AttentionBlock::new(
                &s.pp("attention"),
                cfg.latent_channels,
                cfg.attention,
                cfg.attention_depth,
            )?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_padded(x)?;
        let mut h = x.clone();
        for st in &self.stages {
            h = st.down.forward(&h)?;
            for b in &st.blocks {
                h = b.forward(&h)?;
            }
        }
        self.attention.forward(&h)
    }
}

#[derive(Debug, Clone)]
struct UpStage {
    blocks: Vec<Block>,
    up: Upsample2,
}

/// Main synthesis transform `y_hat -> x_hat`, the mirror of [`MainEncoder`].
#[derive(Debug, Clone)]
pub struct MainDecoder {
    attention: AttentionBlock,
    stages: Vec<UpStage>,
}

impl MainDecoder {
    pub fn new(s: &Scope, cfg: &VaeConfig) -> Result<Self> {
        cfg.validate()?;
        let mut stages = Vec::with_capacity(4);
        let mut cin = cfg.latent_channels;
        for i in 0..4 {
            let cout = if i == 3 { cfg.out_channels } else { cfg.base_width };
            let st = s.pp(format!("stage{i}"));
            let blocks = (0..cfg.blocks_per_stage)
                .map(|b| Block::new(&st.pp(format!("block{b}")), cin, cfg.block_kind, cfg.attention_depth))
                .collect::<Result<Vec<_>>>()?;
            stages.push(UpStage {
                blocks,
                up: Upsample2::new(&st.pp("up"), cin, cout, 3)?,
            });
            cin = cout;
        }
        Ok(Self {
            attention: AttentionBlock::new(
                &s.pp("attention"),
                cfg.latent_channels,
                cfg.attention,
                cfg.attention_depth,
            )?,
            stages,
        })
    }

    pub fn forward(&self, y: &Tensor) -> Result<Tensor> {
        let mut h = self.attention.forward(y)?;
        for st in &self.stages {
            for b in &st.blocks {
                h = b.forward(&h)?;
            }
            h = st.up.forward(&h)?;
        }
        Ok(h)
    }
}

/// Two-layer hyper analysis transform `y -> z`, `(N, h, w) -> (C_h, h/4, w/4)`.
#[derive(Debug, Clone)]
pub struct HyperEncoder {
    c1: Conv2d,
    c2: Conv2d,
    attention: AttentionBlock,
}

impl HyperEncoder {
    pub fn new(s: &Scope, cfg: &VaeConfig) -> Result<Self> {
        Ok(Self {
            c1: Conv2d::new(&s.pp("c1"), cfg.latent_channels, cfg.hyper_channels, 3, 2)?,
            c2: Conv2d::new(&s.pp("c2"), cfg.hyper_channels, cfg.hyper_channels, 3, 2)?,
            attention: AttentionBlock::new(
                &s.pp("attention"),
                cfg.hyper_channels,
                cfg.attention,
                cfg.attention_depth,
            )?,
        })
    }

    pub fn forward(&self, y: &Tensor) -> Result<Tensor> {
        let h = self.c2.forward(&self.c1.forward(y)?.relu()?)?;
        self.attention.forward(&h)
    }
}

/// Hyper synthesis transform: `z_hat -> (N * prior_features, h, w)` features
/// aligned with the main latent grid, channel-major per latent channel.
#[derive(Debug, Clone)]
pub struct HyperDecoder {
    attention: AttentionBlock,
    up1: Upsample2,
    up2: Upsample2,
}

impl HyperDecoder {
    pub fn new(s: &Scope, cfg: &VaeConfig) -> Result<Self> {
        Ok(Self {
            attention: AttentionBlock::new(
                &s.pp("attention"),
                cfg.hyper_channels,
                cfg.attention,
                cfg.attention_depth,
            )?,
            up1: Upsample2::new(&s.pp("up1"), cfg.hyper_channels, cfg.hyper_channels, 3)?,
            up2: Upsample2::new(
                &s.pp("up2"),
                cfg.hyper_channels,
                cfg.latent_channels * cfg.prior_features,
                3,
            )?,
        })
    }

    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let h = self.attention.forward(z)?;
        let h = self.up1.forward(&h)?.relu()?;
        self.up2.forward(&h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::VarStore;
    use candle_core::{DType, Device};

    fn small(base: usize) -> VaeConfig {
        VaeConfig {
            latent_channels: 12,
            hyper_channels: 6,
            base_width: base,
            blocks_per_stage: 1,
            attention_depth: 1,
            ..VaeConfig::new(3, 3)
        }
    }

    #[test]
    fn encode_decode_shapes() {
        let vs = VarStore::new(0, DType::F32);
        let cfg = small(8);
        let enc = MainEncoder::new(&vs.root().pp("enc"), &cfg).unwrap();
        let dec = MainDecoder::new(&vs.root().pp("dec"), &cfg).unwrap();
        let henc = HyperEncoder::new(&vs.root().pp("henc"), &cfg).unwrap();
        let hdec = HyperDecoder::new(&vs.root().pp("hdec"), &cfg).unwrap();
        for (h, w) in [(64, 64), (128, 64)] {
            let x = Tensor::zeros((1, 3, h, w), DType::F32, &Device::Cpu).unwrap();
            let y = enc.forward(&x).unwrap();
            assert_eq!(y.dims4().unwrap(), (1, 12, h / 16, w / 16));
            let z = henc.forward(&y).unwrap();
            assert_eq!(z.dims4().unwrap(), (1, 6, h / 64, w / 64));
            let f = hdec.forward(&z).unwrap();
            assert_eq!(f.dims4().unwrap(), (1, 24, h / 16, w / 16));
            let xr = dec.forward(&y).unwrap();
            assert_eq!(xr.dims4().unwrap(), (1, 3, h, w));
            let v = xr.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert!(v.iter().all(|a| a.is_finite()));
        }
    }

    #[test]
    fn base_width_does_not_change_latent_shape() {
        for base in [4, 8] {
            let vs = VarStore::new(0, DType::F32);
            let enc = MainEncoder::new(&vs.root(), &small(base)).unwrap();
            let x = Tensor::ones((1, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
            assert_eq!(enc.forward(&x).unwrap().dims4().unwrap(), (1, 12, 4, 4));
        }
    }

    #[test]
    fn unpadded_input_rejected() {
        let vs = VarStore::new(0, DType::F32);
        let enc = MainEncoder::new(&vs.root(), &small(4)).unwrap();
        let x = Tensor::ones((1, 3, 48, 64), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(enc.forward(&x), Err(NvcError::Shape(_))));
    }

    #[test]
    fn decode_is_deterministic() {
        let vs = VarStore::new(5, DType::F32);
        let dec = MainDecoder::new(&vs.root(), &small(8)).unwrap();
        let y = Tensor::randn(0f32, 2.0, (1, 12, 4, 4), &Device::Cpu).unwrap().round().unwrap();
        let a = dec.forward(&y).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = dec.forward(&y).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
    }
}
