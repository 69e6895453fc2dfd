use ndarray::{Array2, ArrayView2, Axis};

use super::{Frame, FrameShape, NoiseSchedule};
use crate::rng::{keyed_rng, standard_normal_vec, Stream};
use crate::{Error, Result};

/// Anything that maps a batch of noisy frames (one per row) and their
/// timesteps to predicted noise of the same shape.
pub trait NoisePredictor {
    fn frame_shape(&self) -> FrameShape;
    fn predict(&self, noisy: ArrayView2<'_, f64>, timesteps: &[usize]) -> Array2<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdimConfig {
    pub steps: usize,
    /// Clamp the intermediate clean-image estimate into `[0, 1]` and continue
    /// with the noise estimate implied by the clamped value.
    pub clip_denoised: bool,
    /// Rows evaluated per model call.
    pub chunk: usize,
}

impl Default for DdimConfig {
    fn default() -> Self {
        Self { steps: 100, clip_denoised: true, chunk: 256 }
    }
}

/// Descending visit order `T-1, T-1-s, ..., T-1-(steps-1)s` with stride `s = T / steps`.
pub fn ddim_timesteps(schedule_len: usize, steps: usize) -> Result<Vec<usize>> {
    if steps < 1 || steps > schedule_len {
        return Err(Error::arg(format!(
            "DDIM needs 1 <= steps <= {schedule_len}, got {steps}"
        )));
    }
    let stride = schedule_len / steps;
    Ok((0..steps).map(|i| schedule_len - 1 - i * stride).collect())
}

/// Deterministic (eta = 0) DDIM from pure noise. Sample `i` starts from noise
/// keyed by `(seed, i)`, so the result does not depend on `chunk`.
pub fn ddim_sample<M: NoisePredictor + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    cfg: &DdimConfig,
    seed: u64,
    n: usize,
) -> Result<Vec<Frame>> {
    let timesteps = ddim_timesteps(sched.len(), cfg.steps)?;
    let shape = model.frame_shape();
    let d = shape.len();
    let mut out = Vec::with_capacity(n);
    let chunk = cfg.chunk.max(1);
    let mut start = 0;
    while start < n {
        let rows = chunk.min(n - start);
        let mut x = Array2::<f64>::zeros((rows, d));
        for (r, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
            let mut rng = keyed_rng(seed, Stream::Sampling, (start + r) as u64, 0);
            for (dst, v) in row.iter_mut().zip(standard_normal_vec(&mut rng, d)) {
                *dst = v;
            }
        }
        denoise_from(model, sched, &timesteps, cfg.clip_denoised, &mut x);
        out.extend(x.axis_iter(Axis(0)).map(|row| Frame::from_raw(shape, row.to_vec())));
        start += rows;
    }
    Ok(out)
}

/// Runs the DDIM recursion in place over `timesteps` (descending).
pub(crate) fn denoise_from<M: NoisePredictor + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    timesteps: &[usize],
    clip: bool,
    x: &mut Array2<f64>,
) {
    let ab = sched.alpha_bar();
    for (k, &t) in timesteps.iter().enumerate() {
        let ts = vec![t; x.nrows()];
        let eps = model.predict(x.view(), &ts);
        let a_t = ab[t];
        let a_prev = timesteps.get(k + 1).map_or(1.0, |&p| ab[p]);
        let (sa, sn) = (a_t.sqrt(), (1.0 - a_t).sqrt());
        let (pa, pn) = (a_prev.sqrt(), (1.0 - a_prev).sqrt());
        ndarray::Zip::from(&mut *x).and(&eps).for_each(|xv, &e| {
            let x0 = (*xv - sn * e) / sa;
            if clip {
                // keep the step consistent with the clipped estimate
                let x0c = x0.clamp(0.0, 1.0);
                let ec = (*xv - sa * x0c) / sn;
                *xv = pa * x0c + pn * ec;
            } else {
                *xv = pa * x0 + pn * e;
            }
        });
    }
}
