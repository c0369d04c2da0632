//! The complete codec model and its checkpoint format.
//!
//! Checkpoints are safetensors files. Parameters are stored under their
//! module path (`intra.*`, `motion.*`, `mcn.*`, `res.*`); optimizer state, if
//! any, under `optim.*`. The header metadata holds `format = "nvc"`, a format
//! `version`, the model `config` as JSON and the list of completed training
//! `stages` as JSON; other keys are free-form.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::backbone::VaeConfig;
use crate::error::{NvcError, Result};
use crate::intra::{ImageCodec, ImageRole};
use crate::mcn::{McnConfig, McnKind, MotionCompensation};
use crate::motion::{motion_vae_config, MotionCodec};
use crate::nn::VarStore;
use crate::train::Stage;

pub const CHECKPOINT_FORMAT: &str = "nvc";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameter-path prefixes of the four sub-networks.
pub const INTRA: &str = "intra";
pub const MOTION: &str = "motion";
pub const MCN: &str = "mcn";
pub const RES: &str = "res";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub intra: VaeConfig,
    /// Motion VAE; input/output channels and block kinds are fixed by the codec.
    pub motion: VaeConfig,
    pub residual: VaeConfig,
    pub mcn: McnConfig,
    /// Temporal prior features per motion-latent channel.
    pub temporal_features: usize,
    /// Feed the ConvLSTM hidden state into the motion entropy model.
    pub temporal_priors: bool,
    pub seed: u64,
}

impl ModelConfig {
    /// Published-scale layout (192 latent channels, 3 blocks per stage).
    pub fn full() -> Self {
        let base = VaeConfig::new(3, 3);
        Self {
            intra: base.clone(),
            motion: motion_vae_config(&base),
            residual: base,
            mcn: McnConfig::scaled(McnKind::Multiscale, 1.0),
            temporal_features: 2,
            temporal_priors: true,
            seed: 0,
        }
    }

    /// Desk-scale layout used by tests and examples.
    pub fn toy() -> Self {
        let base = VaeConfig {
            latent_channels: 16,
            hyper_channels: 8,
            base_width: 16,
            blocks_per_stage: 1,
            attention_depth: 1,
            prior_features: 2,
            context_features: 4,
            fusion_width: 16,
            ..VaeConfig::new(3, 3)
        };
        Self {
            intra: base.clone(),
            motion: motion_vae_config(&base),
            residual: base,
            mcn: McnConfig::scaled(McnKind::Multiscale, 0.25),
            temporal_features: 2,
            temporal_priors: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intra.validate()?;
        self.motion.validate()?;
        self.residual.validate()?;
        if self.mcn.widths.contains(&0) {
            return Err(NvcError::Config("mcn widths must be positive".into()));
        }
        if self.temporal_features == 0 {
            return Err(NvcError::Config("temporal_features must be positive".into()));
        }
        Ok(())
    }
}

/// Intra, motion, compensation and residual networks sharing one store.
pub struct NvcModel {
    pub config: ModelConfig,
    pub store: VarStore,
    pub intra: ImageCodec,
    pub motion: MotionCodec,
    pub mcn: MotionCompensation,
    pub residual: ImageCodec,
    pub completed: BTreeSet<Stage>,
}

/// Non-parameter contents of a checkpoint.
#[derive(Debug, Clone, Default)]
pub struct CheckpointExtras {
    pub tensors: HashMap<String, Tensor>,
    pub metadata: HashMap<String, String>,
}

impl NvcModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let store = VarStore::new(config.seed, DType::F32);
        let root = store.root();
        let motion_cfg = motion_vae_config(&config.motion);
        let intra = ImageCodec::new(&root.pp(INTRA), &config.intra, ImageRole::Intra)?;
        let motion = MotionCodec::new(&root.pp(MOTION), &motion_cfg, config.temporal_features, config.temporal_priors)?;
        let mcn = MotionCompensation::new(&root.pp(MCN), &config.mcn)?;
        let residual = ImageCodec::new(&root.pp(RES), &config.residual, ImageRole::Residual)?;
        Ok(Self {
            config,
            store,
            intra,
            motion,
            mcn,
            residual,
            completed: BTreeSet::new(),
        })
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Toggles the temporal-prior input without touching any weights.
    pub fn set_temporal_priors(&mut self, on: bool) {
        self.config.temporal_priors = on;
        self.motion.temporal_priors = on;
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_with(path, &CheckpointExtras::default())
    }

    pub fn save_with(&self, path: &Path, extras: &CheckpointExtras) -> Result<()> {
        let mut tensors: Vec<(String, Tensor)> = self
            .store
            .vars()
            .into_iter()
            .map(|(k, v)| (k, v.as_tensor().clone()))
            .collect();
        for (k, t) in &extras.tensors {
            tensors.push((format!("optim.{k}"), t.clone()));
        }
        let mut meta = extras.metadata.clone();
        meta.insert("format".into(), CHECKPOINT_FORMAT.into());
        meta.insert("version".into(), CHECKPOINT_VERSION.to_string());
        meta.insert("config".into(), serde_json::to_string(&self.config)?);
        let stages: Vec<&str> = self.completed.iter().map(|s| s.name()).collect();
        meta.insert("stages".into(), serde_json::to_string(&stages)?);
        let bytes = safetensors::serialize(tensors, Some(meta))
            .map_err(|e| NvcError::Checkpoint(format!("serialize: {e}")))?;
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        // Write then rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::load_with(path)?.0)
    }

    pub fn load_with(path: &Path) -> Result<(Self, CheckpointExtras)> {
        let bytes = std::fs::read(path)?;
        let (_, header) = safetensors::SafeTensors::read_metadata(&bytes)
            .map_err(|e| NvcError::Checkpoint(format!("{}: {e}", path.display())))?;
        let mut meta = header.metadata().clone().unwrap_or_default();
        if meta.get("format").map(String::as_str) != Some(CHECKPOINT_FORMAT) {
            return Err(NvcError::Checkpoint(format!("{} is not an nvc checkpoint", path.display())));
        }
        let version: u32 = meta.get("version").and_then(|v| v.parse().ok()).unwrap_or(0);
        if version != CHECKPOINT_VERSION {
            return Err(NvcError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let config: ModelConfig = serde_json::from_str(
            meta.get("config").ok_or_else(|| NvcError::Checkpoint("missing config".into()))?,
        )?;
        let stage_names: Vec<String> = serde_json::from_str(meta.get("stages").map(String::as_str).unwrap_or("[]"))?;
        let mut model = Self::new(config)?;
        for name in stage_names {
            model.completed.insert(Stage::from_name(&name)?);
        }
        let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
        let mut extras = CheckpointExtras::default();
        let mut missing: Vec<String> = Vec::new();
        for (name, var) in model.store.vars() {
            match tensors.get(&name) {
                Some(t) => {
                    if t.shape() != var.shape() {
                        return Err(NvcError::Checkpoint(format!(
                            "{name}: shape {:?} vs model {:?}",
                            t.dims(),
                            var.dims()
                        )));
                    }
                    var.set(&t.to_dtype(var.dtype())?)?;
                }
                None => missing.push(name),
            }
        }
        if !missing.is_empty() {
            return Err(NvcError::Checkpoint(format!("missing parameters: {}", missing.join(", "))));
        }
        for (k, t) in tensors {
            if let Some(rest) = k.strip_prefix("optim.") {
                extras.tensors.insert(rest.to_string(), t);
            }
        }
        for k in ["format", "version", "config", "stages"] {
            meta.remove(k);
        }
        extras.metadata = meta;
        Ok((model, extras))
    }

    /// Copies every parameter of `other` whose path starts with one of `prefixes`.
    pub fn copy_from(&self, other: &NvcModel, prefixes: &[&str]) -> Result<()> {
        for (name, var) in self.store.vars_under(prefixes) {
            let src = other
                .store
                .get(&name)
                .ok_or_else(|| NvcError::Checkpoint(format!("source lacks {name}")))?;
            var.set(src.as_tensor())?;
        }
        Ok(())
    }

    /// A model with `config` whose `prefixes` sub-networks are copied from
    /// `self`. Completed stages carry over when every network they train was
    /// copied.
    pub fn variant(&self, config: ModelConfig, prefixes: &[&str]) -> Result<NvcModel> {
        let mut out = NvcModel::new(config)?;
        out.copy_from(self, prefixes)?;
        out.completed = self
            .completed
            .iter()
            .copied()
            .filter(|s| s.trainable().iter().all(|p| prefixes.contains(p)))
            .collect();
        Ok(out)
    }

    /// Deep copy of weights, configuration and training progress.
    pub fn duplicate(&self) -> Result<NvcModel> {
        self.variant(self.config.clone(), &[INTRA, MOTION, MCN, RES])
    }
}
