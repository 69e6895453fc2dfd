//! Composite training loss: denoising MSE, proximity-weighted temporal
//! regularizer and the dispersive baseline term.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::denoiser::tape::Tape;
use crate::denoiser::{DenoiserModel, NoisyBatch};
use crate::diffusion::{Frame, FrameWindow};
use crate::proximity::{ProximityKind, ProximityWeight};
use crate::synthgen::IterMode;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    SeqPreserving,
    AdjacentUniform,
    Dispersive,
    Flow,
    Divergence,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Baseline,
        Variant::SeqPreserving,
        Variant::AdjacentUniform,
        Variant::Dispersive,
        Variant::Flow,
        Variant::Divergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::SeqPreserving => "seq_preserving",
            Variant::AdjacentUniform => "adjacent_uniform",
            Variant::Dispersive => "dispersive",
            Variant::Flow => "flow",
            Variant::Divergence => "divergence",
        }
    }

    /// Variants trained on shared-noise windows with the temporal regularizer.
    pub fn is_windowed(self) -> bool {
        matches!(self, Variant::AdjacentUniform | Variant::Flow | Variant::Divergence)
    }

    pub fn iter_mode(self) -> IterMode {
        match self {
            Variant::SeqPreserving => IterMode::SequencePreserving,
            v if v.is_windowed() => IterMode::Windowed,
            _ => IterMode::IidFrames,
        }
    }

    pub fn proximity(self) -> Option<ProximityKind> {
        match self {
            Variant::AdjacentUniform => Some(ProximityKind::Uniform),
            Variant::Flow => Some(ProximityKind::Flow),
            Variant::Divergence => Some(ProximityKind::Divergence),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_mse: f64,
    pub l_reg: f64,
    pub l_disp: f64,
    pub lambda: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub lambda_disp: f64,
    pub temperature: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { lambda: 0.1, lambda_disp: 0.005, temperature: 0.5 }
    }
}

fn check_same_shape(a: &Frame, b: &Frame) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    Ok(())
}

/// Mean over the window of `|eps - pred_i|^2 / (C H W)`.
pub fn loss_mse(predictions: &[Frame], eps: &Frame) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::arg("no predictions"));
    }
    let mut total = 0.0;
    for p in predictions {
        check_same_shape(p, eps)?;
        total += p.squared_distance(eps) / p.shape().len() as f64;
    }
    Ok(total / predictions.len() as f64)
}

/// `sum_i w_{i,i+1} |pred_i - pred_{i+1}|^2 / (C H W)`.
pub fn loss_reg(predictions: &[Frame], weights: &[ProximityWeight]) -> Result<f64> {
    if predictions.len() < 2 {
        return Err(Error::arg("temporal regularizer needs at least two frames"));
    }
    if weights.len() != predictions.len() - 1 {
        return Err(Error::shape(predictions.len() - 1, weights.len()));
    }
    let mut total = 0.0;
    for (pair, w) in predictions.windows(2).zip(weights) {
        check_same_shape(&pair[0], &pair[1])?;
        total += w.w * pair[0].squared_distance(&pair[1]) / pair[0].shape().len() as f64;
    }
    Ok(total)
}

/// `log( mean_{i != j} exp(-|h_i - h_j|^2 / temperature) )`, evaluated with a
/// max shift so it stays finite for far-apart activations.
pub fn loss_dispersive(hidden: &[Vec<f64>], temperature: f64) -> Result<f64> {
    if hidden.len() < 2 {
        return Err(Error::arg("dispersive loss needs at least two activations"));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let mut logits = Vec::with_capacity(hidden.len() * (hidden.len() - 1));
    for (i, a) in hidden.iter().enumerate() {
        for (j, b) in hidden.iter().enumerate() {
            if i != j {
                let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                logits.push(-d / temperature);
            }
        }
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    Ok(max + (sum / logits.len() as f64).ln())
}

/// One regularizer edge between two batch rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub w: f64,
}

/// A training step's worth of corrupted frames. Rows of the same window are
/// contiguous; `edges` couple adjacent rows of a window.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub noisy: NoisyBatch,
    pub edges: Vec<Edge>,
    pub n_windows: usize,
}

impl TrainBatch {
    /// Stacks corrupted windows; `weights[k]` holds the `K-1` edge weights of
    /// window `k` (ignored for single-frame windows).
    pub fn from_windows(windows: &[FrameWindow], weights: &[Vec<f64>]) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::arg("empty batch"));
        }
        if weights.len() != windows.len() {
            return Err(Error::shape(windows.len(), weights.len()));
        }
        let d = windows[0].shape().len();
        let rows: usize = windows.iter().map(FrameWindow::len).sum();
        let mut inputs = Array2::zeros((rows, d));
        let mut targets = Array2::zeros((rows, d));
        let mut timesteps = Vec::with_capacity(rows);
        let mut edges = Vec::new();
        let mut r = 0;
        for (win, ws) in windows.iter().zip(weights) {
            let c = win.corruption.as_ref().ok_or_else(|| Error::arg("window is not corrupted"))?;
            if win.shape().len() != d {
                return Err(Error::shape(d, win.shape().len()));
            }
            if win.len() > 1 && ws.len() != win.len() - 1 {
                return Err(Error::shape(win.len() - 1, ws.len()));
            }
            for (i, noisy) in c.noisy.iter().enumerate() {
                inputs.row_mut(r + i).assign(&ndarray::ArrayView1::from(noisy.pixels()));
                targets.row_mut(r + i).assign(&ndarray::ArrayView1::from(c.eps.pixels()));
                timesteps.push(c.tau);
                if i + 1 < win.len() {
                    edges.push(Edge { a: r + i, b: r + i + 1, w: ws[i] });
                }
            }
            r += win.len();
        }
        Ok(Self { noisy: NoisyBatch { inputs, timesteps, targets }, edges, n_windows: windows.len() })
    }
}

/// Loss terms and the exact gradient of `l_total` for one batch.
///
/// * `baseline`, `seq_preserving`: MSE only.
/// * `adjacent_uniform`, `flow`, `divergence`: MSE plus `lambda` times the
///   regularizer averaged over windows, using the batch's edge weights.
/// * `dispersive`: MSE plus `lambda_disp` times the dispersive loss on the
///   first hidden layer of every row.
pub fn loss_total(
    variant: Variant,
    batch: &TrainBatch,
    model: &DenoiserModel,
    cfg: &ObjectiveConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    batch.noisy.validate()?;
    let rows = batch.noisy.len();
    if rows == 0 {
        return Err(Error::arg("empty batch"));
    }
    let d = batch.noisy.inputs.ncols() as f64;
    let mut tape = Tape::new();
    let trace = model.forward_on(&mut tape, batch.noisy.inputs.view(), &batch.noisy.timesteps);

    let target = tape.constant(batch.noisy.targets.clone());
    let resid = tape.sub(target, trace.output);
    let sq = tape.square(resid);
    let sum = tape.sum(sq);
    let mse = tape.scale(sum, 1.0 / (rows as f64 * d));
    let mut total = mse;

    let mut l_reg = 0.0;
    let mut lambda = 0.0;
    if variant.is_windowed() && !batch.edges.is_empty() {
        lambda = cfg.lambda;
        let pairs = batch.edges.iter().map(|e| (e.a, e.b)).collect();
        let diffs = tape.row_diff(trace.output, pairs);
        let weighted = tape.row_scale(diffs, batch.edges.iter().map(|e| e.w.sqrt()).collect());
        let sq = tape.square(weighted);
        let s = tape.sum(sq);
        let reg = tape.scale(s, 1.0 / (batch.n_windows as f64 * d));
        l_reg = tape.scalar(reg);
        let scaled = tape.scale(reg, lambda);
        total = tape.add(total, scaled);
    }

    let mut l_disp = 0.0;
    if variant == Variant::Dispersive {
        if rows < 2 {
            return Err(Error::arg("dispersive loss needs at least two rows"));
        }
        let disp = tape.pairwise_log_mean_exp(trace.hidden[0], cfg.temperature);
        l_disp = tape.scalar(disp);
        let scaled = tape.scale(disp, cfg.lambda_disp);
        total = tape.add(total, scaled);
    }

    let l_total = tape.scalar(total);
    let breakdown = LossBreakdown { l_mse: tape.scalar(mse), l_reg, l_disp, lambda, l_total };
    if !l_total.is_finite() {
        return Ok((breakdown, vec![f64::NAN; model.param_count()]));
    }
    let grad = tape.param_gradient(&tape.backward_scalar(total), model.param_count());
    Ok((breakdown, grad))
}
