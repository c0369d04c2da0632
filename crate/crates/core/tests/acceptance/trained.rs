//! Directional checks on toy models trained from scratch on synthetic clips.

use std::time::Instant;

use candle_core::Tensor;
use nvc::bd::bd_rate;
use nvc::entropy::QuantMode;
use nvc::eval::{EvalCodec, Quality, RdTable};
use nvc::mcn::{McnConfig, McnKind};
use nvc::metrics::psnr;
use nvc::model::{ModelConfig, NvcModel, INTRA, MOTION, RES};
use nvc::pipeline::{encode_sequence, CodecConfig};
use nvc::train::data::{generate_clip, ClipSpec, MotionKind, SyntheticSource};
use nvc::train::{run_stage, stage_loss, zero_state, LrSchedule, Stage, TrainConfig};
use nvc::Result;

use super::Outcome;

const SIZE: usize = 64;
const LR: f64 = 1e-3;

/// Step counts of the shared recipe.
const INTRA_STEPS: u64 = 600;
const MOTION_PRETRAIN_STEPS: u64 = 400;
const MOTION_RD_STEPS: u64 = 200;
const MCN_STEPS: u64 = 400;
const JOINT_STEPS: u64 = 300;
const RES_STEPS: u64 = 400;
const MULTIFRAME_STEPS: u64 = 150;
const LADDER_INTRA_STEPS: u64 = 200;
const LADDER_MULTIFRAME_STEPS: u64 = 100;
const STATIC_STEPS: u64 = 300;

fn config(steps: u64, frames: usize, lambda_index: usize) -> TrainConfig {
    TrainConfig {
        steps,
        intra_crop: SIZE,
        inter_crop: SIZE,
        frames_per_sample: frames,
        lambda_index,
        lr: LrSchedule {
            initial: LR,
            ..LrSchedule::default()
        },
        log_every: 0,
        ..TrainConfig::default()
    }
}

fn train(model: &mut NvcModel, stage: Stage, cfg: &TrainConfig, data: &SyntheticSource) -> Result<()> {
    let t = Instant::now();
    let report = run_stage(model, stage, cfg, data, &mut std::io::sink())?;
    let (head, tail) = report.head_tail(20);
    eprintln!(
        "  trained {:14} {:4} steps  loss {head:9.4} -> {tail:9.4}  ({:.0} s)",
        stage.name(),
        cfg.steps,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

fn clips(kind: MotionKind, count: usize, frames: usize, seed: u64) -> Result<Vec<Vec<Tensor>>> {
    (0..count as u64)
        .map(|i| Ok(generate_clip(&ClipSpec::new(kind, SIZE, frames, seed + i))?.frames))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Least-squares slope of `y` against its index.
fn slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = mean(y);
    let num: f64 = y.iter().enumerate().map(|(i, v)| (i as f64 - mx) * (v - my)).sum();
    let den: f64 = (0..y.len()).map(|i| (i as f64 - mx).powi(2)).sum();
    num / den
}

/// Mean motion-pretraining loss over held-out clips.
fn held_out_loss(model: &NvcModel, stage: Stage, eval: &[Vec<Tensor>]) -> Result<f64> {
    let cfg = config(1, 2, 0);
    let losses = eval
        .iter()
        .enumerate()
        .map(|(i, f)| Ok(stage_loss(model, stage, &cfg, f, 9000 + i as u64)?.distortion))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(&losses))
}

/// Mean prediction PSNR of the compensation network from true references.
fn prediction_psnr(model: &NvcModel, eval: &[Vec<Tensor>]) -> Result<f64> {
    let mut out = Vec::new();
    for f in eval {
        let state = zero_state(model, SIZE, SIZE)?;
        let m = model.motion.forward(&f[0], &f[1], &state, QuantMode::Infer, 0)?;
        let pred = model.mcn.predict_frame(&f[0], &m.flows)?;
        out.push(psnr(&pred, &f[1], 1.0)?);
    }
    Ok(mean(&out))
}

/// Coded motion bytes of frames `t >= 2`, true references, state carried.
fn late_motion_bytes(model: &NvcModel, eval: &[Vec<Tensor>]) -> Result<usize> {
    let mut total = 0;
    for f in eval {
        let mut state = zero_state(model, SIZE, SIZE)?;
        for t in 1..f.len() {
            let enc = model.motion.encode_motion(&f[t - 1], &f[t], &state)?;
            if t >= 2 {
                total += enc.chunks.iter().map(|c| c.coded_len()).sum::<usize>();
            }
            state = enc.state;
        }
    }
    Ok(total)
}

/// Mean per-frame PSNR slope over P-frames of a single GOP.
fn gop_decay(model: &NvcModel, eval: &[Vec<Tensor>]) -> Result<f64> {
    let cfg = CodecConfig {
        gop_size: eval[0].len(),
        ..CodecConfig::default()
    };
    let mut slopes = Vec::new();
    for f in eval {
        let enc = encode_sequence(model, f, &cfg)?;
        let p = f
            .iter()
            .zip(&enc.recon)
            .skip(1)
            .map(|(x, y)| psnr(x, y, 1.0))
            .collect::<Result<Vec<f64>>>()?;
        slopes.push(slope(&p));
    }
    Ok(mean(&slopes))
}

fn suite(frames: usize) -> Result<Vec<(String, Vec<Tensor>)>> {
    let mut out = Vec::new();
    for kind in [MotionKind::Translation, MotionKind::Rotation, MotionKind::Zoom, MotionKind::Occlusion] {
        for (i, f) in clips(kind, 2, frames, 7000)?.into_iter().enumerate() {
            out.push((format!("{}_{i}", kind.name()), f));
        }
    }
    Ok(out)
}

pub fn run() -> Result<Vec<Outcome>> {
    let mut out = Vec::new();
    let start = Instant::now();

    // (a) Motion pretraining on static content learns zero motion.
    {
        let mut model = NvcModel::new(ModelConfig::toy())?;
        let eval = clips(MotionKind::Static, 8, 2, 500)?;
        let before = held_out_loss(&model, Stage::MotionPretrain, &eval)?;
        let data = SyntheticSource::new(vec![MotionKind::Static], 3);
        train(&mut model, Stage::MotionPretrain, &config(STATIC_STEPS, 2, 0), &data)?;
        let after = held_out_loss(&model, Stage::MotionPretrain, &eval)?;
        out.push(Outcome::new(
            "7a",
            after < 0.05 * before,
            format!("static motion loss {before:.4} -> {after:.4} (need < 5%)"),
        ));
    }

    let data = SyntheticSource::new(
        vec![
            MotionKind::Translation,
            MotionKind::Rotation,
            MotionKind::Zoom,
            MotionKind::Occlusion,
            MotionKind::Static,
        ],
        7,
    );
    let mut base = NvcModel::new(ModelConfig::toy())?;
    train(&mut base, Stage::Intra, &config(INTRA_STEPS, 2, 0), &data)?;
    train(&mut base, Stage::MotionPretrain, &config(MOTION_PRETRAIN_STEPS, 2, 0), &data)?;

    // (c) Same start, same data, motion RD training with and without temporal priors.
    let mut no_priors = base.duplicate()?;
    no_priors.set_temporal_priors(false);
    train(&mut base, Stage::MotionRd, &config(MOTION_RD_STEPS, 4, 0), &data)?;
    train(&mut no_priors, Stage::MotionRd, &config(MOTION_RD_STEPS, 4, 0), &data)?;
    {
        let eval = clips(MotionKind::Translation, 6, 6, 600)?;
        let with = late_motion_bytes(&base, &eval)?;
        let without = late_motion_bytes(&no_priors, &eval)?;
        out.push(Outcome::new(
            "7c",
            with <= without,
            format!("motion bytes on frames >= 2: {with} with temporal priors, {without} without"),
        ));
    }
    drop(no_priors);

    // (b) Multiscale against single-scale compensation on the same motion network.
    let single_cfg = ModelConfig {
        mcn: McnConfig::scaled(McnKind::SingleScale, 0.25),
        ..base.config.clone()
    };
    let mut single = base.variant(single_cfg, &[INTRA, MOTION, RES])?;
    train(&mut base, Stage::McnPretrain, &config(MCN_STEPS, 2, 0), &data)?;
    train(&mut single, Stage::McnPretrain, &config(MCN_STEPS, 2, 0), &data)?;
    {
        let eval = clips(MotionKind::Translation, 8, 2, 700)?;
        let ms = prediction_psnr(&base, &eval)?;
        let ss = prediction_psnr(&single, &eval)?;
        out.push(Outcome::new(
            "7b",
            ms >= ss,
            format!("prediction PSNR on translation: multiscale {ms:.2} dB, single-scale {ss:.2} dB"),
        ));
    }
    drop(single);

    train(&mut base, Stage::Joint2, &config(JOINT_STEPS, 2, 0), &data)?;
    train(&mut base, Stage::ResPretrain, &config(RES_STEPS, 2, 0), &data)?;

    // (d) Four-frame against two-frame refinement, equal step counts.
    let mut two = base.duplicate()?;
    train(&mut base, Stage::Multiframe4, &config(MULTIFRAME_STEPS, 4, 0), &data)?;
    train(&mut two, Stage::Multiframe4, &config(MULTIFRAME_STEPS, 2, 0), &data)?;
    {
        let eval: Vec<Vec<Tensor>> = suite(10)?.into_iter().map(|(_, f)| f).collect();
        let four = gop_decay(&base, &eval)?;
        let two = gop_decay(&two, &eval)?;
        out.push(Outcome::new(
            "7d",
            four >= two,
            format!("P-frame PSNR slope over a 10-frame GOP: 4-frame {four:+.4} dB/frame, 2-frame {two:+.4} dB/frame"),
        ));
    }
    drop(two);

    // (e) Lambda ladder by fine-tuning, against the motion-free baseline.
    {
        let mut ladder = Vec::new();
        let n = TrainConfig::default().lambda_ladder.len();
        for idx in 1..n {
            let mut m = base.duplicate()?;
            train(&mut m, Stage::Intra, &config(LADDER_INTRA_STEPS, 2, idx), &data)?;
            train(&mut m, Stage::Multiframe4, &config(LADDER_MULTIFRAME_STEPS, 4, idx), &data)?;
            ladder.push(m);
        }
        let lambdas = TrainConfig::default().lambda_ladder;
        let mut models: Vec<(String, &NvcModel)> = vec![(format!("{}", lambdas[0]), &base)];
        for (i, m) in ladder.iter().enumerate() {
            models.push((format!("{}", lambdas[i + 1]), m));
        }
        let clips = suite(6)?;
        let gop = 6;
        let nvc = RdTable::evaluate(&models, &clips, EvalCodec::Nvc, gop)?;
        let free = RdTable::evaluate(&models, &clips, EvalCodec::MotionFree, gop)?;
        let curves = free
            .curve(EvalCodec::MotionFree.name(), Quality::Psnr)
            .and_then(|a| Ok((a, nvc.curve(EvalCodec::Nvc.name(), Quality::Psnr)?)));
        for (f, n) in free.rows.iter().zip(&nvc.rows).filter(|(r, _)| r.sequence.ends_with("_0")) {
            eprintln!(
                "  rd {:>6} {:14} motion-free {:.4} bpp {:.2} dB   nvc {:.4} bpp {:.2} dB",
                f.label, f.sequence, f.bpp, f.psnr, n.bpp, n.psnr
            );
        }
        out.push(match curves.and_then(|(a, b)| bd_rate(&a, &b)) {
            Ok(bd) => Outcome::new("7e", bd < 0.0, format!("BD-rate of NVC against the motion-free baseline: {bd:+.2}%")),
            Err(e) => Outcome::new("7e", false, format!("no BD-rate: {e}")),
        });
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    eprintln!("  trained checks took {:.0} s", start.elapsed().as_secs_f64());
    Ok(out)
}
