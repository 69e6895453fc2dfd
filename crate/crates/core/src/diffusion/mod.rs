//! Noise schedule, forward corruption and deterministic sampling.

mod ddim;
mod frame;
mod schedule;

pub use ddim::{ddim_sample, ddim_timesteps, DdimConfig, NoisePredictor};
pub use frame::{Frame, FrameShape};
pub use schedule::{build_schedule, NoiseSchedule};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::rng::standard_normal_vec;
use crate::{Error, Result};

/// `sqrt(alpha_bar[t]) * x + sqrt(1 - alpha_bar[t]) * eps`, elementwise.
pub fn corrupt_independent(
    frame: &Frame,
    t: usize,
    eps: &Frame,
    sched: &NoiseSchedule,
) -> Result<Frame> {
    if frame.shape() != eps.shape() {
        return Err(Error::shape(frame.shape(), eps.shape()));
    }
    let (signal, noise) = sched.coefficients(t)?;
    let pixels = frame
        .pixels()
        .iter()
        .zip(eps.pixels())
        .map(|(&x, &e)| signal * x + noise * e)
        .collect();
    Ok(Frame::from_raw(frame.shape(), pixels))
}

/// The `(tau, eps)` pair shared by every frame of a window and the frames it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    pub tau: usize,
    pub eps: Frame,
    pub noisy: Vec<Frame>,
}

/// `K` consecutive clean frames, optionally carrying their shared corruption.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameWindow {
    pub frames: Vec<Frame>,
    pub corruption: Option<Corruption>,
}

impl FrameWindow {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::arg("window needs at least one frame"));
        };
        let shape = first.shape();
        if let Some(bad) = frames.iter().find(|f| f.shape() != shape) {
            return Err(Error::shape(shape, bad.shape()));
        }
        Ok(Self { frames, corruption: None })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> FrameShape {
        self.frames[0].shape()
    }
}

/// Applies an explicit `(tau, eps)` pair to every frame of the window.
pub fn corrupt_window_with(
    window: &FrameWindow,
    tau: usize,
    eps: Frame,
    sched: &NoiseSchedule,
) -> Result<FrameWindow> {
    let noisy = window
        .frames
        .iter()
        .map(|f| corrupt_independent(f, tau, &eps, sched))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameWindow {
        frames: window.frames.clone(),
        corruption: Some(Corruption { tau, eps, noisy }),
    })
}

/// Draws one `tau ~ U{0..T-1}` and one `eps ~ N(0, I)` from `seed` and shares
/// them across the whole window.
pub fn corrupt_window(window: &FrameWindow, sched: &NoiseSchedule, seed: u64) -> Result<FrameWindow> {
    if window.is_empty() {
        return Err(Error::arg("window needs at least one frame"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tau, eps) = draw_pair(&mut rng, sched, window.shape());
    corrupt_window_with(window, tau, eps, sched)
}

pub(crate) fn draw_pair(rng: &mut ChaCha8Rng, sched: &NoiseSchedule, shape: FrameShape) -> (usize, Frame) {
    let tau = rng.random_range(0..sched.len());
    let eps = Frame::from_raw(shape, standard_normal_vec(rng, shape.len()));
    (tau, eps)
}
