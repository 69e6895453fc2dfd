use std::fmt;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::tape::{Tape, Var};
use crate::diffusion::{Frame, FrameShape, NoisePredictor};
use crate::rng::{keyed_rng, Stream};
use crate::{Error, Result};

/// `flatten(frame) ++ time_embedding(t) -> [affine -> silu]* -> affine`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub shape: FrameShape,
    pub time_dim: usize,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Under 5k parameters at 16x16x1; small enough for full Jacobians.
    Tiny,
    /// Default training model, about 87k parameters at 16x16x1.
    Base,
}

impl Preset {
    pub fn architecture(self, shape: FrameShape) -> Architecture {
        match self {
            Preset::Tiny => Architecture { shape, time_dim: 16, hidden: vec![8, 8] },
            Preset::Base => Architecture { shape, time_dim: 32, hidden: vec![128, 128] },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Tiny => "tiny",
            Preset::Base => "base",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "base" => Ok(Preset::Base),
            other => Err(Error::Config(format!("unknown model preset `{other}`"))),
        }
    }
}

/// Location of one affine layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: usize,
    pub bias: usize,
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        self.shape.len() + self.time_dim
    }

    pub fn layers(&self) -> Vec<LayerSlot> {
        let mut dims = vec![self.input_dim()];
        dims.extend(&self.hidden);
        dims.push(self.shape.len());
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let slot = LayerSlot {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight: offset,
                    bias: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                slot
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.fan_in * l.fan_out + l.fan_out).sum()
    }

    /// Parses the string produced by `Display`.
    pub fn parse(desc: &str) -> Result<Self> {
        let bad = || Error::Format { what: "architecture descriptor", detail: desc.to_string() };
        let mut parts = desc.split(';');
        if parts.next() != Some("mlp-silu") {
            return Err(bad());
        }
        let mut field = |key: &str| -> Result<String> {
            parts
                .next()
                .and_then(|p| p.strip_prefix(key))
                .map(str::to_string)
                .ok_or_else(bad)
        };
        let dims: Vec<usize> = field("frame=")?
            .split('x')
            .map(|v| v.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let time_dim = field("temb=")?.parse().map_err(|_| bad())?;
        let hidden = field("hidden=")?
            .split(',')
            .map(|v| v.parse().map_err(|_| bad()))
            .collect::<Result<Vec<usize>>>()?;
        if dims.len() != 3 || hidden.is_empty() || time_dim % 2 != 0 {
            return Err(bad());
        }
        Ok(Self { shape: FrameShape::new(dims[0], dims[1], dims[2]), time_dim, hidden })
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        write!(f, "mlp-silu;frame={};temb={};hidden={}", self.shape, self.time_dim, hidden.join(","))
    }
}

/// Sinusoidal embedding: `sin(t w_k)` then `cos(t w_k)`, `w_k = 10000^(-k / half)`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
    out
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Epsilon-prediction MLP with a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    arch: Architecture,
    params: Vec<f64>,
}

/// Handles into a recorded forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub output: Var,
    /// Post-activation hidden layers, first layer first.
    pub hidden: Vec<Var>,
}

impl DenoiserModel {
    /// Uniform fan-in initialisation `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for
    /// weights and biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        if !arch.time_dim.is_multiple_of(2) || arch.hidden.is_empty() || arch.shape.is_empty() {
            return Err(Error::Config(format!("unsupported architecture {arch}")));
        }
        let mut params = vec![0.0; arch.param_count()];
        for (i, layer) in arch.layers().iter().enumerate() {
            let mut rng = keyed_rng(seed, Stream::Init, i as u64, 0);
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            let end = layer.bias + layer.fan_out;
            for p in &mut params[layer.weight..end] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::shape(arch.param_count(), params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::arg("parameters must be finite"));
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn embed_inputs(&self, noisy: ArrayView2<'_, f64>, timesteps: &[usize]) -> (Array2<f64>, Array2<f64>) {
        assert_eq!(noisy.nrows(), timesteps.len(), "one timestep per row");
        assert_eq!(noisy.ncols(), self.arch.shape.len(), "frame width");
        let mut emb = Array2::zeros((timesteps.len(), self.arch.time_dim));
        for (mut row, &t) in emb.axis_iter_mut(Axis(0)).zip(timesteps) {
            row.assign(&ndarray::Array1::from(time_embedding(t, self.arch.time_dim)));
        }
        (noisy.to_owned(), emb)
    }

    /// Records the forward pass of a batch on `tape`.
    pub fn forward_on(&self, tape: &mut Tape, noisy: ArrayView2<'_, f64>, timesteps: &[usize]) -> Trace {
        let (x, emb) = self.embed_inputs(noisy, timesteps);
        let x = tape.constant(x);
        let emb = tape.constant(emb);
        let mut h = tape.concat_cols(x, emb);
        let layers = self.arch.layers();
        let mut hidden = Vec::with_capacity(layers.len() - 1);
        for (i, l) in layers.iter().enumerate() {
            let w = tape.param(&self.params, l.weight, l.fan_out, l.fan_in);
            let b = tape.param(&self.params, l.bias, 1, l.fan_out);
            h = tape.affine(h, w, b);
            if i + 1 < layers.len() {
                h = tape.silu(h);
                hidden.push(h);
            }
        }
        Trace { output: h, hidden }
    }

    /// Batched forward without recording. Also returns the first hidden layer.
    pub fn forward_batch(&self, noisy: ArrayView2<'_, f64>, timesteps: &[usize]) -> (Array2<f64>, Array2<f64>) {
        let (x, emb) = self.embed_inputs(noisy, timesteps);
        let mut h = ndarray::concatenate(Axis(1), &[x.view(), emb.view()]).expect("rows agree");
        let layers = self.arch.layers();
        let mut first = None;
        for (i, l) in layers.iter().enumerate() {
            let w = ArrayView2::from_shape((l.fan_out, l.fan_in), &self.params[l.weight..l.bias])
                .expect("weight block");
            let b = ArrayView2::from_shape((1, l.fan_out), &self.params[l.bias..l.bias + l.fan_out])
                .expect("bias block");
            let mut y = h.dot(&w.t());
            y += &b;
            if i + 1 < layers.len() {
                y.mapv_inplace(silu);
                if first.is_none() {
                    first = Some(y.clone());
                }
            }
            h = y;
        }
        (h, first.expect("at least one hidden layer"))
    }

    /// Predicted noise for one frame.
    pub fn forward(&self, noisy: &Frame, t: usize) -> Result<Frame> {
        if noisy.shape() != self.arch.shape {
            return Err(Error::shape(self.arch.shape, noisy.shape()));
        }
        let row = ArrayView2::from_shape((1, noisy.shape().len()), noisy.pixels()).expect("row");
        let (out, _) = self.forward_batch(row, &[t]);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: 0, detail: "non-finite activation in forward pass".into() });
        }
        Ok(Frame::from_raw(self.arch.shape, out.into_raw_vec_and_offset().0))
    }
}

impl NoisePredictor for DenoiserModel {
    fn frame_shape(&self) -> FrameShape {
        self.arch.shape
    }

    fn predict(&self, noisy: ArrayView2<'_, f64>, timesteps: &[usize]) -> Array2<f64> {
        self.forward_batch(noisy, timesteps).0
    }
}
