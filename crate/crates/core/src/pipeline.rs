//! GOP orchestration: one I-frame per GOP, then motion, compensation and
//! residual coding for every P-frame with the previous reconstruction as
//! reference.

use std::path::PathBuf;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::bitstream::{FrameRecord, FrameType, NvcBitstream, StreamHeader};
use crate::entropy::Bottleneck;
use crate::error::{NvcError, Result};
use crate::frame::{crop, pad_frame};
use crate::metrics::{ms_ssim, psnr};
use crate::model::NvcModel;
use crate::motion::MultiscaleFlow;
use crate::residual::{encode_residual, reconstruct};
use crate::train::Distortion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub lambda_intra: f64,
    /// Must equal `lambda_intra / 4` when given.
    pub lambda_inter: Option<f64>,
    pub distortion: Distortion,
    pub gop_size: usize,
    /// Code every frame as an I-frame.
    pub intra_only: bool,
    pub model: Option<PathBuf>,
    pub model_id: u32,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            lambda_intra: 256.0,
            lambda_inter: None,
            distortion: Distortion::Mse,
            gop_size: 10,
            intra_only: false,
            model: None,
            model_id: 0,
        }
    }
}

impl CodecConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: CodecConfig = toml::from_str(text).map_err(|e| NvcError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_intra > 0.0) {
            return Err(NvcError::Config("lambda_intra must be positive".into()));
        }
        if let Some(inter) = self.lambda_inter {
            if (inter - self.lambda_intra / 4.0).abs() > 1e-9 * self.lambda_intra {
                return Err(NvcError::Config(format!(
                    "lambda_inter {inter} must equal lambda_intra / 4 = {}",
                    self.lambda_intra / 4.0
                )));
            }
        }
        if self.gop_size == 0 {
            return Err(NvcError::Config("gop_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lambda_inter(&self) -> f64 {
        self.lambda_intra / 4.0
    }

    /// GOP length written to the stream header.
    pub fn effective_gop(&self) -> usize {
        if self.intra_only {
            1
        } else {
            self.gop_size
        }
    }
}

/// Frame type at position `index` for a GOP of `gop_size`.
pub fn frame_type_at(index: usize, gop_size: usize) -> FrameType {
    if gop_size <= 1 || index % gop_size == 0 {
        FrameType::I
    } else {
        FrameType::P
    }
}

/// Per-frame encoder statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameStats {
    pub index: usize,
    pub frame_type: FrameType,
    pub bytes: usize,
    pub motion_bytes: usize,
    pub estimated_main_bits: f64,
}

#[derive(Debug, Clone)]
pub struct EncodedSequence {
    pub bitstream: NvcBitstream,
    /// Encoder-side reconstructions, cropped to the source size.
    pub recon: Vec<Tensor>,
    pub stats: Vec<FrameStats>,
    /// Decoded flows per P-frame (`None` for I-frames).
    pub flows: Vec<Option<MultiscaleFlow>>,
}

fn check_dims(frames: &[Tensor]) -> Result<(usize, usize)> {
    let first = frames.first().ok_or_else(|| NvcError::Shape("empty sequence".into()))?;
    let (b, c, h, w) = first.dims4()?;
    if b != 1 || c != 3 || h == 0 || w == 0 {
        return Err(NvcError::Shape(format!("frames must be (1, 3, H, W), got {:?}", first.dims())));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.dims() != first.dims() {
            return Err(NvcError::Shape(format!("dimension change: got {:?}, expected {:?}", f.dims(), first.dims()))
                .in_frame(i));
        }
    }
    Ok((h, w))
}

/// Codes a sequence of `(1, 3, H, W)` frames in `[0, 1]`.
pub fn encode_sequence(model: &NvcModel, frames: &[Tensor], cfg: &CodecConfig) -> Result<EncodedSequence> {
    cfg.validate()?;
    let (h, w) = check_dims(frames)?;
    let gop = cfg.effective_gop();
    let dtype = model.dtype();
    let mut records = Vec::with_capacity(frames.len());
    let mut recon = Vec::with_capacity(frames.len());
    let mut stats = Vec::with_capacity(frames.len());
    let mut flows_out = Vec::with_capacity(frames.len());
    let mut reference: Option<Tensor> = None;
    let mut state = None;
    for (i, f) in frames.iter().enumerate() {
        let mut run = || -> Result<(FrameRecord, Tensor, f64, usize, Option<MultiscaleFlow>)> {
            let x = pad_frame(&f.to_dtype(dtype)?)?;
            let (_, _, ph, pw) = x.dims4()?;
            match frame_type_at(i, gop) {
                FrameType::I => {
                    let enc = model.intra.encode(&x)?;
                    state = Some(model.motion.initial_state(ph, pw, dtype)?);
                    let record = FrameRecord {
                        frame_type: FrameType::I,
                        chunks: enc.chunks,
                    };
                    Ok((record, enc.recon, enc.estimated_main_bits, 0, None))
                }
                FrameType::P => {
                    let r = reference.as_ref().expect("P-frame follows an I-frame");
                    let st = state.as_ref().expect("state set at GOP start");
                    let m = model.motion.encode_motion(r, &x, st)?;
                    let pred = model.mcn.predict_frame(r, &m.flows)?;
                    let res = encode_residual(&(&x - &pred)?, &model.residual)?;
                    let rec = reconstruct(&pred, &res.recon)?;
                    let motion_bytes = m.chunks.iter().map(|c| c.coded_len()).sum();
                    let est = m.estimated_main_bits + res.estimated_main_bits;
                    let flows = m.flows.clone();
                    state = Some(m.state);
                    let mut chunks = m.chunks;
                    chunks.extend(res.chunks);
                    let record = FrameRecord {
                        frame_type: FrameType::P,
                        chunks,
                    };
                    Ok((record, rec, est, motion_bytes, Some(flows)))
                }
            }
        };
        let (record, rec, est, motion_bytes, flow0) = run().map_err(|e| e.in_frame(i))?;
        stats.push(FrameStats {
            index: i,
            frame_type: record.frame_type,
            bytes: record.coded_len(),
            motion_bytes,
            estimated_main_bits: est,
        });
        recon.push(crop(&rec, h, w)?);
        flows_out.push(flow0);
        reference = Some(rec);
        records.push(record);
    }
    let header = StreamHeader {
        width: w as u32,
        height: h as u32,
        gop_size: gop as u32,
        model_id: cfg.model_id,
        frame_count: frames.len() as u32,
    };
    Ok(EncodedSequence {
        bitstream: NvcBitstream { header, frames: records },
        recon,
        stats,
        flows: flows_out,
    })
}

/// Decoder output.
#[derive(Debug, Clone)]
pub struct DecodedSequence {
    pub frames: Vec<Tensor>,
    pub flows: Vec<Option<MultiscaleFlow>>,
}

/// Decodes every frame; errors name the failing frame index.
pub fn decode_sequence(model: &NvcModel, stream: &NvcBitstream) -> Result<DecodedSequence> {
    let h = stream.header.height as usize;
    let w = stream.header.width as usize;
    let ph = crate::frame::round_up(h, crate::backbone::PAD_MULTIPLE);
    let pw = crate::frame::round_up(w, crate::backbone::PAD_MULTIPLE);
    let dtype: DType = model.dtype();
    if stream.frames.len() != stream.header.frame_count as usize {
        return Err(NvcError::CorruptStream(format!(
            "header declares {} frames, stream holds {}",
            stream.header.frame_count,
            stream.frames.len()
        )));
    }
    let mut out = Vec::with_capacity(stream.frames.len());
    let mut flows = Vec::with_capacity(stream.frames.len());
    let mut reference: Option<Tensor> = None;
    let mut state = None;
    for (i, record) in stream.frames.iter().enumerate() {
        let mut run = || -> Result<(Tensor, Option<MultiscaleFlow>)> {
            let chunk = |k: Bottleneck| {
                record
                    .chunk(k)
                    .cloned()
                    .ok_or_else(|| NvcError::ChunkOrder(format!("missing {} chunk", k.name())))
            };
            match record.frame_type {
                FrameType::I => {
                    let chunks = [chunk(Bottleneck::IntraHyper)?, chunk(Bottleneck::IntraMain)?];
                    state = Some(model.motion.initial_state(ph, pw, dtype)?);
                    Ok((model.intra.decode(&chunks, ph, pw, dtype)?, None))
                }
                FrameType::P => {
                    let r = reference
                        .as_ref()
                        .ok_or_else(|| NvcError::ChunkOrder("P-frame without a preceding I-frame".into()))?;
                    let st = state.as_ref().expect("state set with the reference");
                    let mc = [chunk(Bottleneck::MotionHyper)?, chunk(Bottleneck::MotionMain)?];
                    let (fl, next) = model.motion.decode_motion(&mc, ph, pw, st)?;
                    let pred = model.mcn.predict_frame(r, &fl)?;
                    let rc = [chunk(Bottleneck::ResHyper)?, chunk(Bottleneck::ResMain)?];
                    let r_hat = model.residual.decode(&rc, ph, pw, dtype)?;
                    state = Some(next);
                    Ok((reconstruct(&pred, &r_hat)?, Some(fl)))
                }
            }
        };
        let (rec, fl) = run().map_err(|e| e.in_frame(i))?;
        out.push(crop(&rec, h, w)?);
        flows.push(fl);
        reference = Some(rec);
    }
    Ok(DecodedSequence { frames: out, flows })
}

/// Rate and quality of one coded sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub bpp: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub frame_bpp: Vec<f64>,
    pub frame_psnr: Vec<f64>,
    pub frame_ms_ssim: Vec<f64>,
}

/// PSNR and MS-SSIM per frame against `frames`, with bpp from the stream
/// size (header bytes spread over all frames).
pub fn rd_point(frames: &[Tensor], stream: &NvcBitstream, recon: &[Tensor]) -> Result<RdPoint> {
    if frames.len() != recon.len() || frames.len() != stream.frames.len() {
        return Err(NvcError::Shape(format!(
            "{} source frames, {} reconstructions, {} coded frames",
            frames.len(),
            recon.len(),
            stream.frames.len()
        )));
    }
    let pixels = stream.header.width as f64 * stream.header.height as f64;
    let header_share = crate::bitstream::HEADER_BYTES as f64 / frames.len().max(1) as f64;
    let mut p = RdPoint {
        bpp: stream.bits_per_pixel(),
        psnr: 0.0,
        ms_ssim: 0.0,
        frame_bpp: Vec::new(),
        frame_psnr: Vec::new(),
        frame_ms_ssim: Vec::new(),
    };
    for ((x, y), rec) in frames.iter().zip(recon).zip(&stream.frames) {
        p.frame_bpp.push(8.0 * (rec.coded_len() as f64 + header_share) / pixels);
        p.frame_psnr.push(psnr(x, y, 1.0)?);
        p.frame_ms_ssim.push(ms_ssim(x, y)?);
    }
    let n = frames.len().max(1) as f64;
    p.psnr = p.frame_psnr.iter().sum::<f64>() / n;
    p.ms_ssim = p.frame_ms_ssim.iter().sum::<f64>() / n;
    Ok(p)
}
