//! Scalar proximity between adjacent frames and its Laplacian edge weight.
//!
//! Two estimators are provided: mean squared block-matching flow magnitude,
//! and the finite-difference rate at which two shared-noise forward
//! trajectories drift apart. Both map to a positive, decreasing weight.

use crate::diffusion::{corrupt_independent, Frame, NoiseSchedule};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowMethod {
    BlockMatch,
}

/// Per-pixel motion `(dx, dy)` from frame `i` to frame `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub vectors: Vec<(f64, f64)>,
    pub method: FlowMethod,
}

impl FlowField {
    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        self.vectors[y * self.width + x]
    }

    pub fn mean(&self) -> (f64, f64) {
        let n = self.vectors.len() as f64;
        let (sx, sy) = self.vectors.iter().fold((0.0, 0.0), |(a, b), v| (a + v.0, b + v.1));
        (sx / n, sy / n)
    }

    /// `(1 / HW) sum_p |F(p)|^2`.
    pub fn mean_squared_magnitude(&self) -> f64 {
        self.vectors.iter().map(|(dx, dy)| dx * dx + dy * dy).sum::<f64>() / self.vectors.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowConfig {
    pub block: usize,
    pub radius: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { block: 4, radius: 3 }
    }
}

/// Exhaustive SSD block matching over integer displacements. Candidates that
/// would read outside `frame_j` are skipped. Ties go to the smaller
/// displacement, then to the lexicographically smaller `(dy, dx)`.
pub fn estimate_flow(frame_i: &Frame, frame_j: &Frame, cfg: FlowConfig) -> Result<FlowField> {
    let shape = frame_i.shape();
    if shape != frame_j.shape() {
        return Err(Error::shape(shape, frame_j.shape()));
    }
    let (h, w, b) = (shape.height, shape.width, cfg.block);
    if b == 0 || h % b != 0 || w % b != 0 {
        return Err(Error::arg(format!("block size {b} must divide {h}x{w}")));
    }
    let r = cfg.radius as isize;
    let mut candidates: Vec<(isize, isize)> =
        (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dy, dx))).collect();
    candidates.sort_by_key(|&(dy, dx)| (dy * dy + dx * dx, dy, dx));

    let mut vectors = vec![(0.0, 0.0); h * w];
    for by in (0..h).step_by(b) {
        for bx in (0..w).step_by(b) {
            let mut best: Option<(f64, (isize, isize))> = None;
            for &(dy, dx) in &candidates {
                let (y0, x0) = (by as isize + dy, bx as isize + dx);
                if y0 < 0 || x0 < 0 || y0 as usize + b > h || x0 as usize + b > w {
                    continue;
                }
                let mut ssd = 0.0;
                for c in 0..shape.channels {
                    for yy in 0..b {
                        for xx in 0..b {
                            let a = frame_i.at(c, by + yy, bx + xx);
                            let q = frame_j.at(c, y0 as usize + yy, x0 as usize + xx);
                            ssd += (a - q) * (a - q);
                        }
                    }
                }
                if best.is_none_or(|(s, _)| ssd < s) {
                    best = Some((ssd, (dy, dx)));
                }
            }
            let (dy, dx) = best.map_or((0, 0), |(_, v)| v);
            for yy in 0..b {
                for xx in 0..b {
                    vectors[(by + yy) * w + bx + xx] = (dx as f64, dy as f64);
                }
            }
        }
    }
    Ok(FlowField { height: h, width: w, vectors, method: FlowMethod::BlockMatch })
}

/// Mean squared flow magnitude from `frame_i` to `frame_j`.
pub fn pi_flow(frame_i: &Frame, frame_j: &Frame, cfg: FlowConfig) -> Result<f64> {
    Ok(estimate_flow(frame_i, frame_j, cfg)?.mean_squared_magnitude())
}

/// Normalised squared distance of the two frames after shared-noise
/// corruption at step `s`.
fn noisy_distance(frame_i: &Frame, frame_j: &Frame, s: usize, eps: &Frame, sched: &NoiseSchedule) -> Result<f64> {
    let a = corrupt_independent(frame_i, s, eps, sched)?;
    let b = corrupt_independent(frame_j, s, eps, sched)?;
    Ok(a.squared_distance(&b) / a.shape().len() as f64)
}

/// Finite-difference rate of change of the shared-noise distance around step
/// `t`. Steps outside `[0, T-1]` are clamped to the boundary and the
/// difference is taken over the actual gap.
pub fn pi_divergence(
    frame_i: &Frame,
    frame_j: &Frame,
    t: usize,
    dt: usize,
    eps: &Frame,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let steps = sched.len();
    if dt == 0 || dt >= steps {
        return Err(Error::arg(format!("need 0 < dt < {steps}, got {dt}")));
    }
    sched.check_step(t)?;
    if frame_i.shape() != frame_j.shape() {
        return Err(Error::shape(frame_i.shape(), frame_j.shape()));
    }
    let lo = t.saturating_sub(dt);
    let hi = (t + dt).min(steps - 1);
    let d_hi = noisy_distance(frame_i, frame_j, hi, eps, sched)?;
    let d_lo = noisy_distance(frame_i, frame_j, lo, eps, sched)?;
    Ok((d_hi - d_lo) / (hi - lo) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProximityKind {
    Flow,
    Divergence,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Floors {
    /// `delta` in `1 / (pi + delta)`.
    pub flow: f64,
    /// `eps` in `1 / (eps + sqrt|pi|)`.
    pub divergence: f64,
}

impl Default for Floors {
    fn default() -> Self {
        Self { flow: 1e-3, divergence: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProximityWeight {
    pub pi: f64,
    pub w: f64,
    pub kind: ProximityKind,
}

/// `phi(pi)`: `1/(pi + delta)` for flow, `1/(eps + |pi|^(1/2))` for
/// divergence, `1` for uniform.
pub fn weight(pi: f64, kind: ProximityKind, floors: Floors) -> Result<ProximityWeight> {
    if !pi.is_finite() {
        return Err(Error::arg(format!("proximity must be finite, got {pi}")));
    }
    if !(floors.flow > 0.0 && floors.divergence > 0.0) {
        return Err(Error::Config("weight floors must be positive".into()));
    }
    let w = match kind {
        ProximityKind::Flow => {
            if pi < 0.0 {
                return Err(Error::arg(format!("flow proximity must be non-negative, got {pi}")));
            }
            1.0 / (pi + floors.flow)
        }
        ProximityKind::Divergence => 1.0 / (floors.divergence + pi.abs().sqrt()),
        ProximityKind::Uniform => 1.0,
    };
    Ok(ProximityWeight { pi, w, kind })
}
