//! Sequence evaluation: RD tables, the motion-free baseline and paired
//! ablation runs summarized with BD metrics.

use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::bd::{bd_quality, bd_rate, RdCurve};
use crate::bitstream::{FrameRecord, FrameType, HEADER_BYTES};
use crate::error::{NvcError, Result};
use crate::frame::{crop, pad_frame};
use crate::metrics::{ms_ssim, psnr};
use crate::model::NvcModel;
use crate::pipeline::{encode_sequence, frame_type_at, CodecConfig};
use crate::residual::{encode_residual, reconstruct};

/// How P-frames are coded during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCodec {
    /// Full codec: motion, compensation and residual.
    Nvc,
    /// Every frame intra-coded.
    IntraOnly,
    /// Residual against the previous reconstruction, no motion.
    MotionFree,
}

impl EvalCodec {
    pub fn name(self) -> &'static str {
        match self {
            EvalCodec::Nvc => "nvc",
            EvalCodec::IntraOnly => "intra_only",
            EvalCodec::MotionFree => "motion_free",
        }
    }
}

/// One coded sequence at one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdRow {
    pub codec: String,
    /// Operating point label, typically the lambda.
    pub label: String,
    pub sequence: String,
    pub frames: usize,
    pub bpp: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub motion_bpp: f64,
}

/// Per-frame results of one evaluated sequence.
#[derive(Debug, Clone)]
pub struct SequenceEval {
    pub row: RdRow,
    pub recon: Vec<Tensor>,
    pub frame_bytes: Vec<usize>,
    pub motion_bytes: Vec<usize>,
    pub frame_psnr: Vec<f64>,
}

/// Codes `frames` (`(1, 3, H, W)` in `[0, 1]`) with a P-frame strategy.
pub fn evaluate_sequence(
    model: &NvcModel,
    frames: &[Tensor],
    codec: EvalCodec,
    gop_size: usize,
    label: &str,
    sequence: &str,
) -> Result<SequenceEval> {
    let (recon, frame_bytes, motion_bytes) = match codec {
        EvalCodec::Nvc | EvalCodec::IntraOnly => {
            let cfg = CodecConfig {
                gop_size,
                intra_only: codec == EvalCodec::IntraOnly,
                ..Default::default()
            };
            let enc = encode_sequence(model, frames, &cfg)?;
            let bytes = enc.stats.iter().map(|s| s.bytes).collect();
            let motion = enc.stats.iter().map(|s| s.motion_bytes).collect();
            (enc.recon, bytes, motion)
        }
        EvalCodec::MotionFree => {
            let (r, b) = encode_motion_free(model, frames, gop_size)?;
            let n = b.len();
            (r, b, vec![0; n])
        }
    };
    let (_, _, h, w) = frames[0].dims4()?;
    let pixels = (h * w * frames.len()) as f64;
    let total = (HEADER_BYTES + frame_bytes.iter().sum::<usize>()) as f64;
    let mut frame_psnr = Vec::with_capacity(frames.len());
    let mut ssim = 0.0;
    for (x, y) in frames.iter().zip(&recon) {
        frame_psnr.push(psnr(x, y, 1.0)?);
        ssim += ms_ssim(x, y)?;
    }
    let n = frames.len() as f64;
    let row = RdRow {
        codec: codec.name().into(),
        label: label.into(),
        sequence: sequence.into(),
        frames: frames.len(),
        bpp: 8.0 * total / pixels,
        psnr: frame_psnr.iter().sum::<f64>() / n,
        ms_ssim: ssim / n,
        motion_bpp: 8.0 * motion_bytes.iter().sum::<usize>() as f64 / pixels,
    };
    Ok(SequenceEval {
        row,
        recon,
        frame_bytes,
        motion_bytes,
        frame_psnr,
    })
}

/// Motion-free baseline: each P-frame codes `x - previous reconstruction`
/// with the residual codec. Returns reconstructions and coded bytes per
/// frame, counted like stream records.
pub fn encode_motion_free(model: &NvcModel, frames: &[Tensor], gop_size: usize) -> Result<(Vec<Tensor>, Vec<usize>)> {
    let (_, _, h, w) = frames
        .first()
        .ok_or_else(|| NvcError::Shape("empty sequence".into()))?
        .dims4()?;
    let mut recon = Vec::with_capacity(frames.len());
    let mut bytes = Vec::with_capacity(frames.len());
    let mut reference: Option<Tensor> = None;
    for (i, f) in frames.iter().enumerate() {
        let x = pad_frame(&f.to_dtype(model.dtype())?)?;
        let (record, rec) = match (frame_type_at(i, gop_size), &reference) {
            (FrameType::P, Some(r)) => {
                let res = encode_residual(&(&x - r)?, &model.residual).map_err(|e| e.in_frame(i))?;
                let rec = reconstruct(r, &res.recon)?;
                let record = FrameRecord {
                    frame_type: FrameType::P,
                    chunks: res.chunks,
                };
                (record, rec)
            }
            _ => {
                let enc = model.intra.encode(&x).map_err(|e| e.in_frame(i))?;
                let record = FrameRecord {
                    frame_type: FrameType::I,
                    chunks: enc.chunks,
                };
                (record, enc.recon)
            }
        };
        bytes.push(record.coded_len());
        recon.push(crop(&rec, h, w)?);
        reference = Some(rec);
    }
    Ok((recon, bytes))
}

/// Rows for one codec over several operating points and sequences.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RdTable {
    pub rows: Vec<RdRow>,
}

/// Quality measure used to build curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Psnr,
    MsSsim,
}

impl Quality {
    pub fn name(self) -> &'static str {
        match self {
            Quality::Psnr => "psnr",
            Quality::MsSsim => "ms_ssim",
        }
    }
}

impl RdTable {
    /// Evaluates each `(label, model)` operating point on every clip.
    pub fn evaluate(
        models: &[(String, &NvcModel)],
        clips: &[(String, Vec<Tensor>)],
        codec: EvalCodec,
        gop_size: usize,
    ) -> Result<Self> {
        let mut rows = Vec::new();
        for (label, model) in models {
            for (name, frames) in clips {
                rows.push(evaluate_sequence(model, frames, codec, gop_size, label, name)?.row);
            }
        }
        Ok(Self { rows })
    }

    /// Averages bpp and quality per label for one codec, one point per label.
    pub fn curve(&self, codec: &str, quality: Quality) -> Result<RdCurve> {
        let mut labels: Vec<&str> = Vec::new();
        for r in self.rows.iter().filter(|r| r.codec == codec) {
            if !labels.contains(&r.label.as_str()) {
                labels.push(&r.label);
            }
        }
        let points = labels
            .iter()
            .map(|l| {
                let rows: Vec<&RdRow> = self.rows.iter().filter(|r| r.codec == codec && r.label == *l).collect();
                let n = rows.len() as f64;
                let bpp = rows.iter().map(|r| r.bpp).sum::<f64>() / n;
                let q = rows
                    .iter()
                    .map(|r| match quality {
                        Quality::Psnr => r.psnr,
                        Quality::MsSsim => r.ms_ssim,
                    })
                    .sum::<f64>()
                    / n;
                (bpp, q)
            })
            .collect();
        RdCurve::new(points, quality.name(), codec)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<RdRow>, _>>()?;
        Ok(Self { rows })
    }
}

/// BD summary of a test curve against an anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdSummary {
    pub anchor: String,
    pub test: String,
    pub metric: String,
    /// Percent rate change at equal quality (negative is better).
    pub bd_rate: f64,
    /// Quality change at equal rate.
    pub bd_quality: f64,
}

impl BdSummary {
    pub fn compute(anchor: &RdCurve, test: &RdCurve) -> Result<Self> {
        Ok(Self {
            anchor: anchor.tag.clone(),
            test: test.tag.clone(),
            metric: anchor.metric.clone(),
            bd_rate: bd_rate(anchor, test)?,
            bd_quality: bd_quality(anchor, test)?,
        })
    }
}

impl std::fmt::Display for BdSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let unit = if self.metric == "psnr" { " dB" } else { "" };
        write!(
            f,
            "{} vs {} ({}): BD-rate {:+.2}%  BD-{} {:+.4}{}",
            self.test, self.anchor, self.metric, self.bd_rate, self.metric, self.bd_quality, unit
        )
    }
}

/// Configuration delta of an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Motion context model without the temporal prior.
    NoTemporalPriors,
    /// Single-scale warp-and-fuse compensation instead of the multiscale network.
    SingleScaleMcn,
    /// P-frame models refined with two-frame instead of four-frame unrolling.
    TwoFrameTraining,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoTemporalPriors => "no_temporal_priors",
            Ablation::SingleScaleMcn => "single_scale_mcn",
            Ablation::TwoFrameTraining => "two_frame_training",
        }
    }
}

/// Paired curves of an ablation on the same clips.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub ablation: Ablation,
    pub reference: RdTable,
    pub ablated: RdTable,
    /// Ablated against reference; `None` when curves are too short or disjoint.
    pub summary: Option<BdSummary>,
}

/// Evaluates a reference model ladder and its ablated counterpart on the
/// same clips. The two ladders must be trained at the same operating points.
pub fn run_ablation(
    ablation: Ablation,
    reference: &[(String, &NvcModel)],
    ablated: &[(String, &NvcModel)],
    clips: &[(String, Vec<Tensor>)],
    gop_size: usize,
) -> Result<AblationReport> {
    if reference.len() != ablated.len() {
        return Err(NvcError::Config("ablation ladders differ in length".into()));
    }
    let reference = RdTable::evaluate(reference, clips, EvalCodec::Nvc, gop_size)?;
    let mut ablated = RdTable::evaluate(ablated, clips, EvalCodec::Nvc, gop_size)?;
    for r in &mut ablated.rows {
        r.codec = ablation.name().into();
    }
    let summary = match (reference.curve("nvc", Quality::Psnr), ablated.curve(ablation.name(), Quality::Psnr)) {
        (Ok(a), Ok(b)) => BdSummary::compute(&a, &b).ok(),
        _ => None,
    };
    Ok(AblationReport {
        ablation,
        reference,
        ablated,
        summary,
    })
}
