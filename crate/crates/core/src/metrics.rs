//! Sample-quality metrics on a fixed random feature map.
//!
//! Real FID needs a pretrained Inception network; here the embedding is a
//! seeded random convolution (3x3, 16 filters, ReLU) average-pooled over the
//! four frame quadrants, giving 64 features for any frame size. It is frozen
//! by its seed, so distances are comparable across runs that share it.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::diffusion::Frame;
use crate::linalg::psd_sqrt;
use crate::rng::{keyed_rng, Stream};
use crate::{Error, Result};

pub const FEATURE_DIM: usize = 64;
pub const DEFAULT_FEATURE_SEED: u64 = 0x5EED_FEA7;
pub const MIN_FID_SAMPLES: usize = 500;
pub const MIN_DIVERSITY_SAMPLES: usize = 100;
pub const DIVERSITY_PAIRS: usize = 1000;

const FILTERS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    channels: usize,
    /// `FILTERS x channels x 3 x 3`, flattened.
    kernels: Vec<f64>,
    bias: Vec<f64>,
}

impl FeatureExtractor {
    pub fn new(channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::arg("feature extractor needs at least one channel"));
        }
        let mut rng = keyed_rng(seed, Stream::Features, channels as u64, 0);
        let bound = 1.0 / ((channels * 9) as f64).sqrt();
        let kernels = (0..FILTERS * channels * 9).map(|_| rng.random_range(-bound..bound)).collect();
        let bias = (0..FILTERS).map(|_| rng.random_range(-0.1..0.1)).collect();
        Ok(Self { channels, kernels, bias })
    }

    pub fn features(&self, frame: &Frame) -> Result<Array1<f64>> {
        let s = frame.shape();
        if s.channels != self.channels {
            return Err(Error::shape(self.channels, s.channels));
        }
        if s.height < 2 || s.width < 2 {
            return Err(Error::arg(format!("frame {s} too small for quadrant pooling")));
        }
        let (h, w) = (s.height as isize, s.width as isize);
        let mut out = Array1::zeros(FEATURE_DIM);
        let mut counts = [0usize; 4];
        for y in 0..h {
            for x in 0..w {
                let q = 2 * usize::from(y >= h / 2) + usize::from(x >= w / 2);
                counts[q] += 1;
            }
        }
        for f in 0..FILTERS {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = self.bias[f];
                    for c in 0..self.channels {
                        for ky in -1..=1isize {
                            for kx in -1..=1isize {
                                let (yy, xx) = (y + ky, x + kx);
                                if yy < 0 || yy >= h || xx < 0 || xx >= w {
                                    continue;
                                }
                                let k = ((f * self.channels + c) * 3 + (ky + 1) as usize) * 3 + (kx + 1) as usize;
                                acc += self.kernels[k] * frame.at(c, yy as usize, xx as usize);
                            }
                        }
                    }
                    let q = 2 * usize::from(y >= h / 2) + usize::from(x >= w / 2);
                    out[f * 4 + q] += acc.max(0.0) / counts[q] as f64;
                }
            }
        }
        Ok(out)
    }

    /// One feature row per frame.
    pub fn feature_matrix(&self, frames: &[Frame]) -> Result<Array2<f64>> {
        let mut m = Array2::zeros((frames.len(), FEATURE_DIM));
        for (i, f) in frames.iter().enumerate() {
            m.row_mut(i).assign(&self.features(f)?);
        }
        Ok(m)
    }
}

/// Mean and (unbiased) covariance of a feature cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

impl GaussianFit {
    pub fn from_features(features: &Array2<f64>) -> Result<Self> {
        let n = features.nrows();
        if n < 2 {
            return Err(Error::arg("need at least two samples to fit a covariance"));
        }
        let mean = features.mean_axis(Axis(0)).expect("non-empty");
        let centered = features - &mean;
        let cov = centered.t().dot(&centered) / (n - 1) as f64;
        Ok(Self { mean, cov })
    }
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.mean.len() != b.mean.len() || a.cov.dim() != b.cov.dim() {
        return Err(Error::shape(a.mean.len(), b.mean.len()));
    }
    let dm = &a.mean - &b.mean;
    let root_a = psd_sqrt(a.cov.view())?;
    let inner = root_a.dot(&b.cov).dot(&root_a);
    let cross = psd_sqrt(inner.view())?;
    let value = dm.dot(&dm) + a.cov.diag().sum() + b.cov.diag().sum() - 2.0 * cross.diag().sum();
    // rounding can push identical distributions slightly below zero
    Ok(value.max(0.0))
}

/// Fréchet distance between feature Gaussians of two frame sets, each with
/// at least [`MIN_FID_SAMPLES`] frames.
pub fn desk_fid(samples: &[Frame], reference: &[Frame], extractor: &FeatureExtractor) -> Result<f64> {
    for (what, set) in [("samples", samples), ("reference", reference)] {
        if set.len() < MIN_FID_SAMPLES {
            return Err(Error::arg(format!("{what}: {} frames, need at least {MIN_FID_SAMPLES}", set.len())));
        }
    }
    let fa = GaussianFit::from_features(&extractor.feature_matrix(samples)?)?;
    let fb = GaussianFit::from_features(&extractor.feature_matrix(reference)?)?;
    frechet_distance(&fa, &fb)
}

/// Mean feature distance over [`DIVERSITY_PAIRS`] seeded pairs of distinct samples.
pub fn diversity(samples: &[Frame], extractor: &FeatureExtractor, seed: u64) -> Result<f64> {
    if samples.len() < MIN_DIVERSITY_SAMPLES {
        return Err(Error::arg(format!("{} samples, need at least {MIN_DIVERSITY_SAMPLES}", samples.len())));
    }
    let feats = extractor.feature_matrix(samples)?;
    let mut rng = keyed_rng(seed, Stream::Diversity, samples.len() as u64, 0);
    let n = samples.len();
    let mut total = 0.0;
    for _ in 0..DIVERSITY_PAIRS {
        let i = rng.random_range(0..n);
        let j = (i + rng.random_range(1..n)) % n;
        let d = &feats.row(i) - &feats.row(j);
        total += d.dot(&d).sqrt();
    }
    Ok(total / DIVERSITY_PAIRS as f64)
}
