//! Run configuration: a flat TOML table whose defaults are the published
//! training settings.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::patch::AugmentConfig;
use crate::error::{Error, Result};
use crate::mask::{PATCH_SIZE, SCAN_STRIDE};
use crate::model::ModelKind;
use crate::net::{Architecture, InitConfig};
use crate::optim::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub arch: Architecture,
    /// Weight of the hole in the training loss; `1 - lambda` goes to the context.
    pub lambda: f64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub init_sigma: f64,
    pub batch_size: usize,
    /// Number of optimizer steps.
    pub batches: usize,
    pub seed: u64,
    pub augment_rotation: bool,
    pub augment_flip: bool,
    pub augment_scale: bool,
    pub augment_brightness: bool,
    pub train_dir: PathBuf,
    pub val_dir: PathBuf,
    pub test_dir: PathBuf,
    pub stride: usize,
    pub out_dir: PathBuf,
    /// Write `ckpt_<batch>.icad` every this many batches; 0 disables.
    pub checkpoint_every: usize,
    /// Evaluate the validation loss every this many batches; 0 disables.
    pub validate_every: usize,
    /// Fixed held-out patches used for the validation loss.
    pub val_patches: usize,
    /// Windows per forward pass while scanning.
    pub scan_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let aug = AugmentConfig::default();
        Self {
            model: ModelKind::Completion,
            arch: Architecture::Canonical,
            lambda: 0.9,
            alpha: adam.alpha,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            init_sigma: InitConfig::default().sigma,
            batch_size: 128,
            batches: 100_000,
            seed: 0,
            augment_rotation: aug.rotation,
            augment_flip: aug.flip,
            augment_scale: aug.scale,
            augment_brightness: aug.brightness,
            train_dir: PathBuf::from("data/train"),
            val_dir: PathBuf::from("data/val"),
            test_dir: PathBuf::from("data/test"),
            stride: SCAN_STRIDE,
            out_dir: PathBuf::from("runs/default"),
            checkpoint_every: 1000,
            validate_every: 500,
            val_patches: 64,
            scan_batch: 8,
        }
    }
}

impl RunConfig {
    /// Quartered channels and a budget of about ten minutes on one CPU core.
    ///
    /// The short schedule needs a larger step and an init scaled to the
    /// narrow layers (roughly `1/sqrt(fan_in)`); with the full-size settings
    /// the loss barely moves in this many batches.
    pub fn desk() -> Self {
        Self {
            arch: Architecture::Desk,
            alpha: 1e-3,
            init_sigma: 0.08,
            batch_size: 8,
            batches: 500,
            checkpoint_every: 100,
            validate_every: 50,
            val_patches: 16,
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            alpha: self.alpha,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            rotation: self.augment_rotation,
            flip: self.augment_flip,
            scale: self.augment_scale,
            brightness: self.augment_brightness,
        }
    }

    pub fn init(&self) -> InitConfig {
        InitConfig {
            sigma: self.init_sigma,
        }
    }

    pub fn patch_size(&self) -> usize {
        PATCH_SIZE
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return fail(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.init_sigma > 0.0 && self.init_sigma.is_finite()) {
            return fail(format!("init_sigma must be positive, got {}", self.init_sigma));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.stride == 0 {
            return fail("stride must be at least 1".into());
        }
        if self.scan_batch == 0 {
            return fail("scan_batch must be at least 1".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
