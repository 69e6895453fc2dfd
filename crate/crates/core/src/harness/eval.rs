use std::path::Path;

use crate::denoiser::{Checkpoint, DenoiserModel};
use crate::diffusion::{ddim_sample, DdimConfig, Frame, NoiseSchedule};
use crate::metrics::{diversity, frechet_distance, FeatureExtractor, GaussianFit, MIN_FID_SAMPLES};
use crate::rng::{derive_seed, Stream};
use crate::synthgen::Dataset;
use crate::{Error, Result};

/// Desk-FID against the train and validation splits, plus diversity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub fid_train: f64,
    pub fid_val: Option<f64>,
    pub diversity: f64,
}

/// Feature statistics of the reference splits, computed once.
pub struct Evaluator {
    extractor: FeatureExtractor,
    train: GaussianFit,
    val: Option<GaussianFit>,
    feature_seed: u64,
}

fn fit_frames(extractor: &FeatureExtractor, frames: &[Frame], what: &str) -> Result<GaussianFit> {
    if frames.len() < MIN_FID_SAMPLES {
        return Err(Error::Config(format!(
            "{what} split has {} frames; desk-FID needs at least {MIN_FID_SAMPLES}",
            frames.len()
        )));
    }
    GaussianFit::from_features(&extractor.feature_matrix(frames)?)
}

impl Evaluator {
    pub fn new(train: &Dataset, val: Option<&Dataset>, feature_seed: u64) -> Result<Self> {
        let shape = train.frame_shape().ok_or_else(|| Error::Config("empty reference split".into()))?;
        let extractor = FeatureExtractor::new(shape.channels, feature_seed)?;
        let train_frames: Vec<Frame> = train.all_frames().cloned().collect();
        let train = fit_frames(&extractor, &train_frames, "train")?;
        let val = match val {
            Some(v) => Some(fit_frames(&extractor, &v.all_frames().cloned().collect::<Vec<_>>(), "validation")?),
            None => None,
        };
        Ok(Self { extractor, train, val, feature_seed })
    }

    pub fn evaluate(&self, samples: &[Frame]) -> Result<EvalResult> {
        if samples.len() < MIN_FID_SAMPLES {
            return Err(Error::arg(format!("{} samples, need at least {MIN_FID_SAMPLES}", samples.len())));
        }
        let fit = GaussianFit::from_features(&self.extractor.feature_matrix(samples)?)?;
        Ok(EvalResult {
            fid_train: frechet_distance(&fit, &self.train)?,
            fid_val: self.val.as_ref().map(|v| frechet_distance(&fit, v)).transpose()?,
            diversity: diversity(samples, &self.extractor, self.feature_seed)?,
        })
    }
}

/// DDIM samples from a model; seeds are derived from `seed`.
pub fn sample_frames(model: &DenoiserModel, sched: &NoiseSchedule, ddim_steps: usize, n: usize, seed: u64) -> Result<Vec<Frame>> {
    let cfg = DdimConfig { steps: ddim_steps, ..DdimConfig::default() };
    ddim_sample(model, sched, &cfg, derive_seed(seed, Stream::Sampling, 0, 0), n)
}

/// Samples `n` frames from the checkpoint's EMA parameters and writes them as
/// single-frame clips in the dataset format.
pub fn sample(checkpoint: &Path, n: usize, seed: u64, ddim_steps: usize, sched: &NoiseSchedule, out: &Path) -> Result<Dataset> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let frames = sample_frames(&ckpt.ema_model(), sched, ddim_steps, n, seed)?;
    let ds = Dataset::from_frames(frames)?;
    ds.save(out)?;
    Ok(ds)
}

/// Desk-FID of a sample file against the reference splits.
pub fn evaluate(samples: &Dataset, train: &Dataset, val: Option<&Dataset>, feature_seed: u64) -> Result<EvalResult> {
    let frames: Vec<Frame> = samples.all_frames().cloned().collect();
    Evaluator::new(train, val, feature_seed)?.evaluate(&frames)
}
