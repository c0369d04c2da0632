//! Motion compensation networks.
//!
//! The multiscale network decomposes the reference into a feature pyramid,
//! warps every scale with the matching flow and aggregates coarse to fine:
//! `up_{s-1} = U(concat(F^s_w, up_s))`, starting from `U(F^4_w)`. A fusion
//! layer maps `concat(F^0_w, up_0)` to the predicted frame. The single-scale
//! baseline warps the reference pixels with `f^0` and refines the result.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{NvcError, Result};
use crate::motion::{MultiscaleFlow, FLOW_SCALES};
use crate::nn::{Conv2d, Scope, Upsample2};
use crate::warp::warp;

pub const DEFAULT_WIDTHS: [usize; FLOW_SCALES] = [32, 64, 96, 128, 192];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McnKind {
    Multiscale,
    SingleScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McnConfig {
    pub kind: McnKind,
    pub widths: [usize; FLOW_SCALES],
}

impl McnConfig {
    /// Default widths scaled by `multiplier` (at least 1 channel per scale).
    pub fn scaled(kind: McnKind, multiplier: f64) -> Self {
        let widths = DEFAULT_WIDTHS.map(|w| ((w as f64 * multiplier).round() as usize).max(1));
        Self { kind, widths }
    }
}

/// Reference-frame features `F^s`, `s = 0..4`.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub features: Vec<Tensor>,
}

#[derive(Debug, Clone)]
struct Fusion {
    c1: Conv2d,
    c2: Conv2d,
}

impl Fusion {
    fn new(s: &Scope, cin: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            c1: Conv2d::new(&s.pp("c1"), cin, hidden, 1, 1)?,
            c2: Conv2d::new(&s.pp("c2"), hidden, 3, 3, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.c2.forward(&self.c1.forward(x)?.relu()?)
    }
}

#[derive(Debug, Clone)]
struct UpBlock {
    up: Upsample2,
    conv: Conv2d,
}

impl UpBlock {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.conv.forward(&self.up.forward(x)?.relu()?)
    }
}

#[derive(Debug, Clone)]
pub struct MsMcn {
    stem: Conv2d,
    /// `(3x3, 5x5 stride 2)` producing scales 1..4.
    downs: Vec<(Conv2d, Conv2d)>,
    /// Upsamplers from scale 4, 3, 2, 1.
    ups: Vec<UpBlock>,
    fusion: Fusion,
}

impl MsMcn {
    pub fn new(s: &Scope, widths: [usize; FLOW_SCALES]) -> Result<Self> {
        let stem = Conv2d::new(&s.pp("stem"), 3, widths[0], 3, 1)?;
        let mut downs = Vec::new();
        for sc in 1..FLOW_SCALES {
            let p = s.pp(format!("down{sc}"));
            downs.push((
                Conv2d::new(&p.pp("c1"), widths[sc - 1], widths[sc - 1], 3, 1)?,
                Conv2d::new(&p.pp("c2"), widths[sc - 1], widths[sc], 5, 2)?,
            ));
        }
        let mut ups = Vec::new();
        for sc in (1..FLOW_SCALES).rev() {
            let cin = if sc == FLOW_SCALES - 1 { widths[sc] } else { 2 * widths[sc] };
            let p = s.pp(format!("up{sc}"));
            ups.push(UpBlock {
                up: Upsample2::new(&p.pp("up"), cin, widths[sc - 1], 5)?,
                conv: Conv2d::new(&p.pp("conv"), widths[sc - 1], widths[sc - 1], 3, 1)?,
            });
        }
        Ok(Self {
            stem,
            downs,
            ups,
            fusion: Fusion::new(&s.pp("fusion"), 2 * widths[0], widths[0])?,
        })
    }

    pub fn pyramid_decompose(&self, reference: &Tensor) -> Result<FeaturePyramid> {
        let mut f = self.stem.forward(reference)?;
        let mut features = vec![f.clone()];
        for (c1, c2) in &self.downs {
            f = c2.forward(&c1.forward(&f)?.relu()?)?;
            features.push(f.clone());
        }
        Ok(FeaturePyramid { features })
    }

    pub fn aggregate_and_predict(&self, pyramid: &FeaturePyramid, flows: &MultiscaleFlow) -> Result<Tensor> {
        check_scales(pyramid, flows)?;
        let warped = pyramid
            .features
            .iter()
            .zip(&flows.flows)
            .map(|(f, fl)| warp(f, fl))
            .collect::<Result<Vec<_>>>()?;
        let mut up = self.ups[0].forward(&warped[FLOW_SCALES - 1])?;
        for (i, sc) in (1..FLOW_SCALES - 1).rev().enumerate() {
            up = self.ups[i + 1].forward(&Tensor::cat(&[&warped[sc], &up], 1)?)?;
        }
        self.fusion.forward(&Tensor::cat(&[&warped[0], &up], 1)?)
    }
}

fn check_scales(pyramid: &FeaturePyramid, flows: &MultiscaleFlow) -> Result<()> {
    if pyramid.features.len() != FLOW_SCALES || flows.flows.len() != FLOW_SCALES {
        return Err(NvcError::Shape("pyramid and flows need 5 scales".into()));
    }
    for (s, (f, fl)) in pyramid.features.iter().zip(&flows.flows).enumerate() {
        let (_, _, h, w) = f.dims4()?;
        let (_, _, fh, fw) = fl.dims4()?;
        if (h, w) != (fh, fw) {
            return Err(NvcError::Shape(format!(
                "scale {s}: features {h}x{w} vs flow {fh}x{fw}"
            )));
        }
    }
    Ok(())
}

/// Single-scale baseline: warp pixels with `f^0`, then a small refinement net.
#[derive(Debug, Clone)]
pub struct SsMcn {
    c1: Conv2d,
    c2: Conv2d,
    fusion: Fusion,
}

impl SsMcn {
    pub fn new(s: &Scope, width: usize) -> Result<Self> {
        Ok(Self {
            c1: Conv2d::new(&s.pp("c1"), 3, width, 3, 1)?,
            c2: Conv2d::new(&s.pp("c2"), width, width, 3, 1)?,
            fusion: Fusion::new(&s.pp("fusion"), width, width)?,
        })
    }

    pub fn predict(&self, reference: &Tensor, flows: &MultiscaleFlow) -> Result<Tensor> {
        let w = warp(reference, flows.scale(0))?;
        let h = self.c2.forward(&self.c1.forward(&w)?.relu()?)?.relu()?;
        self.fusion.forward(&h)
    }
}

/// Either compensation network behind one interface.
#[derive(Debug, Clone)]
pub enum MotionCompensation {
    Multiscale(MsMcn),
    SingleScale(SsMcn),
}

impl MotionCompensation {
    pub fn new(s: &Scope, cfg: &McnConfig) -> Result<Self> {
        Ok(match cfg.kind {
            McnKind::Multiscale => MotionCompensation::Multiscale(MsMcn::new(s, cfg.widths)?),
            McnKind::SingleScale => MotionCompensation::SingleScale(SsMcn::new(s, cfg.widths[0])?),
        })
    }

    /// Unclamped prediction used during training.
    pub fn predict(&self, reference: &Tensor, flows: &MultiscaleFlow) -> Result<Tensor> {
        match self {
            MotionCompensation::Multiscale(m) => m.aggregate_and_predict(&m.pyramid_decompose(reference)?, flows),
            MotionCompensation::SingleScale(m) => m.predict(reference, flows),
        }
    }

    /// Prediction clamped to `[0, 1]`, as used by the codec.
    pub fn predict_frame(&self, reference: &Tensor, flows: &MultiscaleFlow) -> Result<Tensor> {
        Ok(self.predict(reference, flows)?.clamp(0.0, 1.0)?)
    }
}

/// Average-pool pyramid `X^s`, `s = 0..4`.
pub fn pooled_pyramid(x: &Tensor) -> Result<Vec<Tensor>> {
    let mut out = vec![x.clone()];
    for _ in 1..FLOW_SCALES {
        let last = out.last().unwrap();
        out.push(crate::nn::pool2(last)?);
    }
    Ok(out)
}

/// Reference pyramid warped with each scale's flow (the Step-0 prediction).
pub fn warped_pyramid(reference: &Tensor, flows: &MultiscaleFlow) -> Result<Vec<Tensor>> {
    pooled_pyramid(reference)?
        .iter()
        .zip(&flows.flows)
        .map(|(r, f)| warp(r, f))
        .collect()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::intra::tests::noise_image;
    use crate::nn::VarStore;
    use candle_core::DType;

    #[test]
    fn pyramid_and_prediction_shapes() {
        let vs = VarStore::new(3, DType::F32);
        let cfg = McnConfig::scaled(McnKind::Multiscale, 0.125);
        assert_eq!(cfg.widths, [4, 8, 12, 16, 24]);
        let m = MsMcn::new(&vs.root(), cfg.widths).unwrap();
        let x = noise_image(1, 64, 96);
        let p = m.pyramid_decompose(&x).unwrap();
        let dims: Vec<(usize, usize)> = p.features.iter().map(|t| (t.dim(2).unwrap(), t.dim(3).unwrap())).collect();
        assert_eq!(dims, vec![(64, 96), (32, 48), (16, 24), (8, 12), (4, 6)]);
        let again = m.pyramid_decompose(&x).unwrap();
        assert_eq!(
            p.features[4].flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            again.features[4].flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
        let flows = MultiscaleFlow::zeros(64, 96, DType::F32).unwrap();
        let pred = m.aggregate_and_predict(&p, &flows).unwrap();
        assert_eq!(pred.dims(), &[1, 3, 64, 96]);
        let bad = MultiscaleFlow::zeros(64, 64, DType::F32).unwrap();
        assert!(m.aggregate_and_predict(&p, &bad).is_err());
    }

    #[test]
    fn pooled_pyramid_hand_example() {
        let v: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let x = Tensor::from_vec(v, (1, 1, 4, 4), &candle_core::Device::Cpu).unwrap();
        let p = crate::nn::pool2(&x).unwrap();
        assert_eq!(p.flatten_all().unwrap().to_vec1::<f32>().unwrap(), vec![2.5, 4.5, 10.5, 12.5]);
        let pp = crate::nn::pool2(&p).unwrap();
        assert_eq!(pp.flatten_all().unwrap().to_vec1::<f32>().unwrap(), vec![7.5]);
    }
}
