//! Staged training.
//!
//! | stage             | trains              | loss                                              |
//! |-------------------|---------------------|---------------------------------------------------|
//! | `intra`           | intra               | `R + l_intra * D`                                 |
//! | `motion_pretrain` | motion              | multiscale l1 of the warped reference pyramid      |
//! | `motion_rd`       | motion              | `R_motion + l_inter * (same l1)`, state unrolled   |
//! | `mcn_pretrain`    | mcn (motion frozen) | multiscale l1 of the pooled prediction             |
//! | `joint2`          | motion + mcn        | `R_motion + l_inter * l1`, intra-coded reference   |
//! | `res_pretrain`    | res (others frozen) | `R_res + l_inter * D`                              |
//! | `multiframe4`     | motion + mcn + res  | `sum R + l_inter * sum D` over unrolled P-frames   |

pub mod adam;
pub mod data;
pub mod loss;

use std::io::Write;
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::entropy::QuantMode;
use crate::error::{NvcError, Result};
use crate::mcn::{pooled_pyramid, warped_pyramid};
use crate::metrics::psnr_from_mse;
use crate::model::{CheckpointExtras, NvcModel, INTRA, MCN, MOTION, RES};
use crate::motion::TemporalState;
use crate::residual::reconstruct;
use adam::Adam;
use data::FrameSource;
pub use loss::{distortion, multiscale_prediction_loss, rd_loss, scale_weight, Distortion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Intra,
    MotionPretrain,
    MotionRd,
    McnPretrain,
    Joint2,
    ResPretrain,
    Multiframe4,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Intra,
        Stage::MotionPretrain,
        Stage::MotionRd,
        Stage::McnPretrain,
        Stage::Joint2,
        Stage::ResPretrain,
        Stage::Multiframe4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Intra => "intra",
            Stage::MotionPretrain => "motion_pretrain",
            Stage::MotionRd => "motion_rd",
            Stage::McnPretrain => "mcn_pretrain",
            Stage::Joint2 => "joint2",
            Stage::ResPretrain => "res_pretrain",
            Stage::Multiframe4 => "multiframe4",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| NvcError::Config(format!("unknown stage '{name}'")))
    }

    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Intra | Stage::MotionPretrain => &[],
            Stage::MotionRd => &[Stage::MotionPretrain],
            Stage::McnPretrain => &[Stage::MotionRd],
            Stage::Joint2 => &[Stage::McnPretrain, Stage::Intra],
            Stage::ResPretrain => &[Stage::Joint2],
            Stage::Multiframe4 => &[Stage::Joint2, Stage::ResPretrain],
        }
    }

    /// Parameter prefixes updated by this stage.
    pub fn trainable(self) -> &'static [&'static str] {
        match self {
            Stage::Intra => &[INTRA],
            Stage::MotionPretrain | Stage::MotionRd => &[MOTION],
            Stage::McnPretrain => &[MCN],
            Stage::Joint2 => &[MOTION, MCN],
            Stage::ResPretrain => &[RES],
            Stage::Multiframe4 => &[MOTION, MCN, RES],
        }
    }

    /// Motion stages always use the multiscale l1 prediction loss.
    pub fn is_motion_stage(self) -> bool {
        matches!(self, Stage::MotionPretrain | Stage::MotionRd | Stage::McnPretrain | Stage::Joint2)
    }

    pub fn check_prerequisites(self, model: &NvcModel) -> Result<()> {
        for p in self.prerequisites() {
            if !model.completed.contains(p) {
                return Err(NvcError::MissingPrerequisite {
                    stage: self.name().into(),
                    missing: p.name().into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub halve_every_epochs: u64,
    pub floor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-4,
            halve_every_epochs: 10,
            floor: 1e-5,
        }
    }
}

impl LrSchedule {
    pub fn at_epoch(&self, epoch: u64) -> f64 {
        let halvings = epoch.checked_div(self.halve_every_epochs).unwrap_or(0);
        (self.initial * 0.5f64.powi(halvings.min(1000) as i32)).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Intra lambda ladder; inter lambdas are a quarter of these.
    pub lambda_ladder: Vec<f64>,
    /// Optional explicit inter ladder, validated against `lambda_ladder / 4`.
    pub lambda_inter_ladder: Option<Vec<f64>>,
    pub lambda_index: usize,
    pub distortion: Distortion,
    pub steps: u64,
    pub steps_per_epoch: u64,
    pub lr: LrSchedule,
    pub intra_crop: usize,
    pub inter_crop: usize,
    /// Frames per inter sample (first is intra-coded in joint stages).
    pub frames_per_sample: usize,
    pub batch_size: usize,
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Write metrics every this many steps.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_ladder: vec![256.0, 512.0, 1024.0, 2048.0],
            lambda_inter_ladder: None,
            lambda_index: 0,
            distortion: Distortion::Mse,
            steps: 1000,
            steps_per_epoch: 1000,
            lr: LrSchedule::default(),
            intra_crop: 256,
            inter_crop: 192,
            frames_per_sample: 4,
            batch_size: 1,
            grad_clip: None,
            seed: 0,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| NvcError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_ladder.is_empty() || self.lambda_ladder.iter().any(|l| !(*l > 0.0)) {
            return Err(NvcError::Config("lambda ladder must be non-empty and positive".into()));
        }
        if self.lambda_index >= self.lambda_ladder.len() {
            return Err(NvcError::Config(format!(
                "lambda_index {} out of range for a ladder of {}",
                self.lambda_index,
                self.lambda_ladder.len()
            )));
        }
        if let Some(inter) = &self.lambda_inter_ladder {
            let ok = inter.len() == self.lambda_ladder.len()
                && inter.iter().zip(&self.lambda_ladder).all(|(i, l)| (i - l / 4.0).abs() <= 1e-9 * l);
            if !ok {
                return Err(NvcError::Config("lambda_inter must equal lambda_intra / 4 at every rung".into()));
            }
        }
        for (name, c) in [("intra_crop", self.intra_crop), ("inter_crop", self.inter_crop)] {
            if c == 0 || c % crate::backbone::PAD_MULTIPLE != 0 {
                return Err(NvcError::Config(format!("{name} must be a positive multiple of 64")));
            }
        }
        if self.frames_per_sample < 2 {
            return Err(NvcError::Config("frames_per_sample must be at least 2".into()));
        }
        if self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(NvcError::Config("batch_size and steps_per_epoch must be positive".into()));
        }
        Ok(())
    }

    /// Rejects an MS-SSIM distortion for motion stages.
    pub fn validate_for(&self, stage: Stage) -> Result<()> {
        self.validate()?;
        if stage.is_motion_stage() && self.distortion == Distortion::MsSsim {
            return Err(NvcError::Config(format!(
                "stage {} cannot use MS-SSIM: motion stages use the l1 prediction loss",
                stage.name()
            )));
        }
        Ok(())
    }

    pub fn lambda_intra(&self) -> f64 {
        self.lambda_ladder[self.lambda_index]
    }

    pub fn lambda_inter(&self) -> f64 {
        self.lambda_intra() / 4.0
    }
}

/// Loss terms of one sample.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub loss: Tensor,
    /// Estimated bits of all coded latents.
    pub bits: f64,
    pub pixels: usize,
    /// Distortion in the stage's own measure.
    pub distortion: f64,
    /// Mean squared error of the final output, when the stage has one.
    pub mse: Option<f64>,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Deterministic per-(step, sample, slot) seed.
pub fn noise_seed(seed: u64, step: u64, sample: u64, slot: u64) -> u64 {
    let mut x = seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ sample.wrapping_mul(0xbf58_476d_1ce4_e5b9) ^ slot.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x.wrapping_mul(0xd6e8_feb8_6659_fd93)
}

/// Per P-frame outputs of an unrolled inter pass.
#[derive(Debug, Clone)]
pub struct InterFrame {
    pub prediction: Tensor,
    pub recon: Tensor,
    pub motion_bits: Tensor,
    pub residual_bits: Tensor,
    pub distortion: Tensor,
}

/// Intra-codes `frames[0]` (quantized, detached), then codes each following
/// frame with motion, compensation and residual, feeding every
/// reconstruction forward as the next reference. `ref_hook` may alter each
/// reference before use (probe tests).
pub fn inter_unroll(
    model: &NvcModel,
    frames: &[Tensor],
    metric: Distortion,
    mode: QuantMode,
    seed: u64,
    ref_hook: Option<&dyn Fn(usize, &Tensor) -> Result<Tensor>>,
) -> Result<Vec<InterFrame>> {
    let (_, _, h, w) = frames[0].dims4()?;
    let intra = model.intra.forward(&frames[0], QuantMode::Infer, seed)?;
    let mut reference = intra.recon.clamp(0.0, 1.0)?.detach();
    let mut state = model.motion.initial_state(h, w, model.dtype())?;
    let mut out = Vec::with_capacity(frames.len() - 1);
    for (t, cur) in frames.iter().enumerate().skip(1) {
        if let Some(hook) = ref_hook {
            reference = hook(t, &reference)?;
        }
        let m = model.motion.forward(&reference, cur, &state, mode, seed.wrapping_add(2 * t as u64))?;
        let prediction = model.mcn.predict(&reference, &m.flows)?;
        let r = (cur - &prediction)?;
        let res = model.residual.forward(&r, mode, seed.wrapping_add(2 * t as u64 + 1))?;
        let recon = reconstruct(&prediction, &res.recon)?;
        let d = distortion(metric, &recon, cur)?;
        out.push(InterFrame {
            prediction,
            recon: recon.clone(),
            motion_bits: m.latent.bits()?,
            residual_bits: res.bits()?,
            distortion: d,
        });
        state = m.state;
        reference = recon;
    }
    Ok(out)
}

/// Computes the stage loss for one sample.
pub fn stage_loss(model: &NvcModel, stage: Stage, cfg: &TrainConfig, frames: &[Tensor], seed: u64) -> Result<LossTerms> {
    let (_, _, h, w) = frames[0].dims4()?;
    let pixels = h * w;
    let train = QuantMode::Train;
    match stage {
        Stage::Intra => {
            let x = &frames[0];
            let f = model.intra.forward(x, train, seed)?;
            let d = distortion(cfg.distortion, &f.recon, x)?;
            let bits = f.bits()?;
            let mse = scalar(&(&f.recon - x)?.sqr()?.mean_all()?)?;
            Ok(LossTerms {
                loss: rd_loss(&d, &bits, cfg.lambda_intra(), pixels)?,
                bits: scalar(&bits)?,
                pixels,
                distortion: scalar(&d)?,
                mse: Some(mse),
            })
        }
        Stage::MotionPretrain | Stage::MotionRd => {
            let mut state = model.motion.initial_state(h, w, model.dtype())?;
            let pairs = if stage == Stage::MotionPretrain { 1 } else { frames.len() - 1 };
            let mut loss: Option<Tensor> = None;
            let (mut bits_total, mut d_total) = (0.0, 0.0);
            for t in 1..=pairs {
                let m = model.motion.forward(&frames[t - 1], &frames[t], &state, train, seed.wrapping_add(t as u64))?;
                let pred = warped_pyramid(&frames[t - 1], &m.flows)?;
                let d = multiscale_prediction_loss(&pred, &pooled_pyramid(&frames[t])?)?;
                let term = if stage == Stage::MotionPretrain {
                    d.clone()
                } else {
                    rd_loss(&d, &m.latent.bits()?, cfg.lambda_inter(), pixels)?
                };
                bits_total += scalar(&m.latent.bits()?)?;
                d_total += scalar(&d)?;
                loss = Some(match loss {
                    None => term,
                    Some(l) => (l + term)?,
                });
                state = m.state;
            }
            Ok(LossTerms {
                loss: loss.expect("at least one pair"),
                bits: bits_total,
                pixels: pixels * pairs,
                distortion: d_total / pairs as f64,
                mse: None,
            })
        }
        Stage::McnPretrain => {
            let state = model.motion.initial_state(h, w, model.dtype())?;
            let m = model.motion.forward(&frames[0], &frames[1], &state, QuantMode::Infer, seed)?;
            let flows = crate::motion::MultiscaleFlow {
                flows: m.flows.flows.iter().map(|f| f.detach()).collect(),
            };
            let pred = model.mcn.predict(&frames[0], &flows)?;
            let d = multiscale_prediction_loss(&pooled_pyramid(&pred)?, &pooled_pyramid(&frames[1])?)?;
            let mse = scalar(&(&pred - &frames[1])?.sqr()?.mean_all()?)?;
            Ok(LossTerms {
                bits: scalar(&m.latent.bits()?)?,
                distortion: scalar(&d)?,
                loss: d,
                pixels,
                mse: Some(mse),
            })
        }
        Stage::Joint2 => {
            let intra = model.intra.forward(&frames[0], QuantMode::Infer, seed)?;
            let reference = intra.recon.clamp(0.0, 1.0)?.detach();
            let state = model.motion.initial_state(h, w, model.dtype())?;
            let m = model.motion.forward(&reference, &frames[1], &state, train, seed.wrapping_add(1))?;
            let pred = model.mcn.predict(&reference, &m.flows)?;
            let d = multiscale_prediction_loss(&pooled_pyramid(&pred)?, &pooled_pyramid(&frames[1])?)?;
            let bits = m.latent.bits()?;
            let mse = scalar(&(&pred - &frames[1])?.sqr()?.mean_all()?)?;
            Ok(LossTerms {
                loss: rd_loss(&d, &bits, cfg.lambda_inter(), pixels)?,
                bits: scalar(&bits)?,
                pixels,
                distortion: scalar(&d)?,
                mse: Some(mse),
            })
        }
        Stage::ResPretrain => {
            let intra = model.intra.forward(&frames[0], QuantMode::Infer, seed)?;
            let reference = intra.recon.clamp(0.0, 1.0)?.detach();
            let state = model.motion.initial_state(h, w, model.dtype())?;
            let m = model.motion.forward(&reference, &frames[1], &state, QuantMode::Infer, seed)?;
            let pred = model.mcn.predict(&reference, &m.flows)?.detach();
            let r = (&frames[1] - &pred)?;
            let res = model.residual.forward(&r, train, seed.wrapping_add(1))?;
            let recon = reconstruct(&pred, &res.recon)?;
            let d = distortion(cfg.distortion, &recon, &frames[1])?;
            let bits = res.bits()?;
            let mse = scalar(&(&recon - &frames[1])?.sqr()?.mean_all()?)?;
            Ok(LossTerms {
                loss: rd_loss(&d, &bits, cfg.lambda_inter(), pixels)?,
                bits: scalar(&bits)?,
                pixels,
                distortion: scalar(&d)?,
                mse: Some(mse),
            })
        }
        Stage::Multiframe4 => {
            let n = cfg.frames_per_sample.min(frames.len());
            let out = inter_unroll(model, &frames[..n], cfg.distortion, train, seed, None)?;
            let mut bits: Option<Tensor> = None;
            let mut dist: Option<Tensor> = None;
            let mut mse = 0.0;
            for (f, cur) in out.iter().zip(&frames[1..n]) {
                let b = (&f.motion_bits + &f.residual_bits)?;
                bits = Some(match bits {
                    None => b,
                    Some(x) => (x + b)?,
                });
                dist = Some(match dist {
                    None => f.distortion.clone(),
                    Some(x) => (x + &f.distortion)?,
                });
                mse += scalar(&(&f.recon - cur)?.sqr()?.mean_all()?)?;
            }
            let (bits, dist) = (bits.expect("P-frames"), dist.expect("P-frames"));
            let p = out.len();
            Ok(LossTerms {
                loss: rd_loss(&dist, &bits, cfg.lambda_inter(), pixels)?,
                bits: scalar(&bits)?,
                pixels: pixels * p,
                distortion: scalar(&dist)? / p as f64,
                mse: Some(mse / p as f64),
            })
        }
    }
}

/// Metrics of one optimizer step, emitted as a JSON line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetrics {
    pub stage: String,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub bpp: f64,
    pub distortion: f64,
    pub psnr: Option<f64>,
    pub grad_norm: f64,
}

/// Resumable state of one stage.
#[derive(Debug, Clone)]
pub struct StageSession {
    pub stage: Stage,
    pub step: u64,
    pub adam: Adam,
}

impl StageSession {
    pub fn new(model: &NvcModel, stage: Stage, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate_for(stage)?;
        stage.check_prerequisites(model)?;
        Ok(Self {
            stage,
            step: 0,
            adam: Adam::default(),
        })
    }

    /// Runs `steps` optimizer steps, logging JSON lines to `log`.
    pub fn run(
        &mut self,
        model: &NvcModel,
        cfg: &TrainConfig,
        data: &dyn FrameSource,
        steps: u64,
        log: &mut dyn Write,
    ) -> Result<Vec<StepMetrics>> {
        let vars = model.store.vars_under(self.stage.trainable());
        let (frames, crop) = match self.stage {
            Stage::Intra => (1, cfg.intra_crop),
            Stage::MotionPretrain | Stage::McnPretrain | Stage::Joint2 | Stage::ResPretrain => (2, cfg.inter_crop),
            Stage::MotionRd | Stage::Multiframe4 => (cfg.frames_per_sample, cfg.inter_crop),
        };
        let mut history = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let step = self.step;
            let lr = cfg.lr.at_epoch(step / cfg.steps_per_epoch);
            let mut acc: Option<candle_core::backprop::GradStore> = None;
            let (mut loss_sum, mut bits, mut px, mut dist, mut mse, mut mse_n) = (0.0, 0.0, 0usize, 0.0, 0.0, 0usize);
            for b in 0..cfg.batch_size as u64 {
                let sample_index = step * cfg.batch_size as u64 + b;
                let sample = data.sample(cfg.seed ^ sample_index, frames, crop)?;
                let terms = stage_loss(model, self.stage, cfg, &sample, noise_seed(cfg.seed, step, b, 0))?;
                let scaled = (&terms.loss / cfg.batch_size as f64)?;
                let grads = scaled.backward()?;
                loss_sum += scalar(&terms.loss)?;
                bits += terms.bits;
                px += terms.pixels;
                dist += terms.distortion;
                if let Some(m) = terms.mse {
                    mse += m;
                    mse_n += 1;
                }
                acc = Some(match acc {
                    None => grads,
                    Some(mut a) => {
                        for (_, v) in &vars {
                            if let Some(g) = grads.get(v.as_tensor()) {
                                let sum = match a.get(v.as_tensor()) {
                                    Some(prev) => (prev + g)?,
                                    None => g.clone(),
                                };
                                a.insert(v.as_tensor(), sum);
                            }
                        }
                        a
                    }
                });
            }
            let grads = acc.expect("batch_size >= 1");
            let grad_norm = self.adam.update(&vars, &grads, lr, cfg.grad_clip)?;
            let bsz = cfg.batch_size as f64;
            let metrics = StepMetrics {
                stage: self.stage.name().into(),
                step,
                lr,
                loss: loss_sum / bsz,
                bpp: bits / px.max(1) as f64,
                distortion: dist / bsz,
                psnr: (mse_n > 0).then(|| psnr_from_mse(mse / mse_n as f64, 1.0)),
                grad_norm,
            };
            if !metrics.loss.is_finite() {
                return Err(NvcError::NonFinite {
                    layer: format!("{} loss at step {step}", self.stage.name()),
                });
            }
            if cfg.log_every > 0 && step % cfg.log_every == 0 {
                writeln!(log, "{}", serde_json::to_string(&metrics)?)?;
            }
            history.push(metrics);
            self.step += 1;
        }
        Ok(history)
    }

    /// Saves model and optimizer state so the stage can continue later.
    pub fn save(&self, model: &NvcModel, path: &Path) -> Result<()> {
        let mut extras = CheckpointExtras {
            tensors: self.adam.state_tensors(),
            ..Default::default()
        };
        extras.metadata.insert("train_stage".into(), self.stage.name().into());
        extras.metadata.insert("train_step".into(), self.step.to_string());
        model.save_with(path, &extras)
    }

    /// Loads a model and, if the checkpoint holds an in-progress `stage`, its session.
    pub fn resume(path: &Path, stage: Stage, cfg: &TrainConfig) -> Result<(NvcModel, Self)> {
        let (model, extras) = NvcModel::load_with(path)?;
        let same = extras.metadata.get("train_stage").map(String::as_str) == Some(stage.name());
        let session = if same {
            let step: u64 = extras
                .metadata
                .get("train_step")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| NvcError::Checkpoint("missing train_step".into()))?;
            cfg.validate_for(stage)?;
            Self {
                stage,
                step,
                adam: Adam::from_state(step, &extras.tensors),
            }
        } else {
            Self::new(&model, stage, cfg)?
        };
        Ok((model, session))
    }
}

/// Summary of a completed stage.
#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: Stage,
    pub history: Vec<StepMetrics>,
}

impl StageReport {
    /// Mean loss over the first / last `n` steps.
    pub fn head_tail(&self, n: usize) -> (f64, f64) {
        let n = n.min(self.history.len()).max(1);
        let mean = |s: &[StepMetrics]| s.iter().map(|m| m.loss).sum::<f64>() / s.len().max(1) as f64;
        (mean(&self.history[..n]), mean(&self.history[self.history.len() - n..]))
    }
}

/// Runs a full stage (`cfg.steps` steps) and marks it completed.
pub fn run_stage(
    model: &mut NvcModel,
    stage: Stage,
    cfg: &TrainConfig,
    data: &dyn FrameSource,
    log: &mut dyn Write,
) -> Result<StageReport> {
    let mut session = StageSession::new(model, stage, cfg)?;
    let history = session.run(model, cfg, data, cfg.steps, log)?;
    model.completed.insert(stage);
    Ok(StageReport { stage, history })
}

/// Temporal state helper for callers that unroll motion manually.
pub fn zero_state(model: &NvcModel, h: usize, w: usize) -> Result<TemporalState> {
    model.motion.initial_state(h, w, model.dtype())
}
