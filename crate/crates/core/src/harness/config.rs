use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::denoiser::{Architecture, Preset};
use crate::diffusion::FrameShape;
use crate::objective::{ObjectiveConfig, Variant};
use crate::proximity::Floors;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        }
    }
}

impl FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(Error::Config(format!("unknown optimizer `{s}`"))),
        }
    }
}

/// Everything that determines a training run. Output locations are not part
/// of the config, so two runs of the same config write identical bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub seed: u64,
    pub dataset: PathBuf,
    /// Held-out clips for validation desk-FID; optional.
    pub val_dataset: Option<PathBuf>,
    pub epochs: u64,
    /// Total parameter updates; overrides `epochs` when non-zero.
    pub steps: u64,
    /// Windows (or single frames) per step; `None` picks 128 for windowed
    /// variants and 256 otherwise.
    pub batch_size: Option<usize>,
    pub lr: f64,
    pub lambda: f64,
    pub lambda_disp: f64,
    pub temperature: f64,
    pub ema_decay: f64,
    pub k: usize,
    pub dt: usize,
    pub delta: f64,
    pub eps_w: f64,
    pub preset: Preset,
    /// Hidden widths replacing the preset's; `None` keeps the preset.
    pub hidden: Option<Vec<usize>>,
    pub optimizer: Optimizer,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub checkpoint_interval: u64,
    pub log_interval: u64,
    /// Generated samples per desk-FID evaluation; 0 disables evaluation
    /// during training.
    pub sample_count: usize,
    pub ddim_steps: usize,
    pub feature_seed: u64,
    /// Fixed windows the checkpoint analysis is measured on.
    pub probe_windows: usize,
    pub probe_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Baseline,
            seed: 0,
            dataset: PathBuf::from("data/train.tdv"),
            val_dataset: None,
            epochs: 1,
            steps: 0,
            batch_size: None,
            lr: 1e-4,
            lambda: 0.1,
            lambda_disp: 0.005,
            temperature: 0.5,
            ema_decay: 0.9995,
            k: 3,
            dt: 50,
            delta: 1e-3,
            eps_w: 1e-3,
            preset: Preset::Base,
            hidden: None,
            optimizer: Optimizer::Sgd,
            diffusion_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            checkpoint_interval: 500,
            log_interval: 50,
            sample_count: 500,
            ddim_steps: 100,
            feature_seed: crate::metrics::DEFAULT_FEATURE_SEED,
            probe_windows: 4,
            probe_seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl RunConfig {
    pub const KEYS: [&'static str; 30] = [
        "variant",
        "seed",
        "dataset",
        "val_dataset",
        "epochs",
        "steps",
        "batch_size",
        "lr",
        "lambda",
        "lambda_disp",
        "temperature",
        "ema_decay",
        "k",
        "dt",
        "delta",
        "eps_w",
        "preset",
        "hidden",
        "optimizer",
        "diffusion_steps",
        "beta_start",
        "beta_end",
        "checkpoint_interval",
        "log_interval",
        "sample_count",
        "ddim_steps",
        "feature_seed",
        "probe_windows",
        "probe_seed",
        "batch_size_resolved",
    ];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "variant" => self.variant = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "dataset" => self.dataset = PathBuf::from(v),
            "val_dataset" => self.val_dataset = (!v.is_empty() && v != "none").then(|| PathBuf::from(v)),
            "epochs" => self.epochs = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "batch_size" => self.batch_size = if v == "auto" { None } else { Some(parse(key, v)?) },
            "lr" => self.lr = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "lambda_disp" => self.lambda_disp = parse(key, v)?,
            "temperature" => self.temperature = parse(key, v)?,
            "ema_decay" => self.ema_decay = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "dt" => self.dt = parse(key, v)?,
            "delta" => self.delta = parse(key, v)?,
            "eps_w" => self.eps_w = parse(key, v)?,
            "preset" => self.preset = v.parse()?,
            "hidden" => {
                self.hidden = if v.is_empty() || v == "preset" {
                    None
                } else {
                    Some(v.split(',').map(|w| parse(key, w.trim())).collect::<Result<_>>()?)
                }
            }
            "optimizer" => self.optimizer = v.parse()?,
            "diffusion_steps" => self.diffusion_steps = parse(key, v)?,
            "beta_start" => self.beta_start = parse(key, v)?,
            "beta_end" => self.beta_end = parse(key, v)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, v)?,
            "log_interval" => self.log_interval = parse(key, v)?,
            "sample_count" => self.sample_count = parse(key, v)?,
            "ddim_steps" => self.ddim_steps = parse(key, v)?,
            "feature_seed" => self.feature_seed = parse(key, v)?,
            "probe_windows" => self.probe_windows = parse(key, v)?,
            "probe_seed" => self.probe_seed = parse(key, v)?,
            // informational, written by `to_text`
            "batch_size_resolved" => {}
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text. Blank lines and `#` comments are
    /// skipped; later keys win.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(if self.variant.is_windowed() { 128 } else { 256 })
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig { lambda: self.lambda, lambda_disp: self.lambda_disp, temperature: self.temperature }
    }

    pub fn floors(&self) -> Floors {
        Floors { flow: self.delta, divergence: self.eps_w }
    }

    /// Model layout for frames of `shape`.
    pub fn architecture(&self, shape: FrameShape) -> Architecture {
        let mut arch = self.preset.architecture(shape);
        if let Some(h) = &self.hidden {
            arch.hidden = h.clone();
        }
        arch
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.hidden.as_ref().is_some_and(|h| h.is_empty() || h.contains(&0)) {
            return bad("hidden widths must be positive".into());
        }
        if self.batch_size() == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.variant == Variant::Dispersive && self.batch_size() < 2 {
            return bad("the dispersive variant needs batches of at least two frames".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        for (name, v) in [("lambda", self.lambda), ("lambda_disp", self.lambda_disp)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay must lie in [0, 1], got {}", self.ema_decay));
        }
        if self.k < 2 && self.variant.is_windowed() {
            return bad("windowed variants need k >= 2".into());
        }
        if self.dt == 0 || self.dt >= self.diffusion_steps {
            return bad(format!("dt must lie in 1..{}", self.diffusion_steps));
        }
        if !(self.delta > 0.0 && self.eps_w > 0.0) {
            return bad("delta and eps_w must be positive".into());
        }
        if self.steps == 0 && self.epochs == 0 {
            return bad("either steps or epochs must be positive".into());
        }
        if self.checkpoint_interval == 0 || self.log_interval == 0 {
            return bad("checkpoint_interval and log_interval must be positive".into());
        }
        if self.ddim_steps == 0 || self.ddim_steps > self.diffusion_steps {
            return bad(format!("ddim_steps must lie in 1..={}", self.diffusion_steps));
        }
        if self.sample_count > 0 && self.sample_count < crate::metrics::MIN_FID_SAMPLES {
            return bad(format!(
                "sample_count must be 0 or at least {} for desk-FID",
                crate::metrics::MIN_FID_SAMPLES
            ));
        }
        if self.probe_windows == 0 {
            return bad("probe_windows must be positive".into());
        }
        Ok(())
    }

    /// Canonical `key = value` form, every field in a fixed order.
    pub fn to_text(&self) -> String {
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let values: [String; 30] = [
            self.variant.to_string(),
            self.seed.to_string(),
            self.dataset.display().to_string(),
            opt_path(&self.val_dataset),
            self.epochs.to_string(),
            self.steps.to_string(),
            self.batch_size.map_or("auto".to_string(), |b| b.to_string()),
            self.lr.to_string(),
            self.lambda.to_string(),
            self.lambda_disp.to_string(),
            self.temperature.to_string(),
            self.ema_decay.to_string(),
            self.k.to_string(),
            self.dt.to_string(),
            self.delta.to_string(),
            self.eps_w.to_string(),
            self.preset.name().to_string(),
            self.hidden.as_ref().map_or("preset".to_string(), |h| h.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")),
            self.optimizer.name().to_string(),
            self.diffusion_steps.to_string(),
            self.beta_start.to_string(),
            self.beta_end.to_string(),
            self.checkpoint_interval.to_string(),
            self.log_interval.to_string(),
            self.sample_count.to_string(),
            self.ddim_steps.to_string(),
            self.feature_seed.to_string(),
            self.probe_windows.to_string(),
            self.probe_seed.to_string(),
            self.batch_size().to_string(),
        ];
        Self::KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex::encode(&digest[..8])
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
