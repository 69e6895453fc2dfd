use ndarray::{Array2, ArrayView2, Axis};

use super::model::DenoiserModel;
use super::tape::Tape;
use crate::{Error, Result};

/// Default cap on `d * P` for Jacobian extraction (256 outputs x 5k params).
pub const DEFAULT_JACOBIAN_BUDGET: usize = 256 * 5_000;

/// Noisy inputs, their timesteps and the noise each row should predict.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyBatch {
    pub inputs: Array2<f64>,
    pub timesteps: Vec<usize>,
    pub targets: Array2<f64>,
}

impl NoisyBatch {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.dim() != self.targets.dim() {
            return Err(Error::shape(format!("{:?}", self.inputs.dim()), format!("{:?}", self.targets.dim())));
        }
        if self.timesteps.len() != self.inputs.nrows() {
            return Err(Error::shape(self.inputs.nrows(), self.timesteps.len()));
        }
        Ok(())
    }

    pub fn row(&self, i: usize) -> NoisyBatch {
        NoisyBatch {
            inputs: self.inputs.row(i).to_owned().insert_axis(Axis(0)),
            timesteps: vec![self.timesteps[i]],
            targets: self.targets.row(i).to_owned().insert_axis(Axis(0)),
        }
    }
}

/// Per-sample quantities for one batch.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    /// `u_i = grad_theta l_i` with `l_i = |eps_i - f_i|^2 / d`.
    pub per_sample_grads: Vec<Vec<f64>>,
    pub mean_grad: Vec<f64>,
    /// `f_i`, one row per sample.
    pub outputs: Array2<f64>,
    /// `J_i` (`d x P`), only when requested.
    pub jacobians: Option<Vec<Array2<f64>>>,
}

impl GradientBundle {
    /// `(1/N) sum_i |u_i - mean|^2`.
    pub fn variance(&self) -> f64 {
        gradient_variance(&self.per_sample_grads)
    }
}

pub fn gradient_variance(grads: &[Vec<f64>]) -> f64 {
    if grads.is_empty() {
        return 0.0;
    }
    let mean = mean_vector(grads);
    grads
        .iter()
        .map(|u| u.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / grads.len() as f64
}

pub(crate) fn mean_vector(vs: &[Vec<f64>]) -> Vec<f64> {
    let mut mean = vec![0.0; vs[0].len()];
    for v in vs {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = vs.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Gradient of `mean_i |eps_i - f_i|^2 / d` and its value.
pub fn mse_gradient(model: &DenoiserModel, batch: &NoisyBatch) -> Result<(f64, Vec<f64>)> {
    batch.validate()?;
    let mut tape = Tape::new();
    let tr = model.forward_on(&mut tape, batch.inputs.view(), &batch.timesteps);
    let target = tape.constant(batch.targets.clone());
    let diff = tape.sub(target, tr.output);
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    let loss = tape.scale(total, 1.0 / batch.inputs.len() as f64);
    let grads = tape.backward_scalar(loss);
    Ok((tape.scalar(loss), tape.param_gradient(&grads, model.param_count())))
}

/// One reverse pass per row; rows are reduced in index order.
pub fn per_sample_gradients(model: &DenoiserModel, batch: &NoisyBatch, with_jacobians: bool) -> Result<GradientBundle> {
    batch.validate()?;
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let mut per_sample_grads = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        per_sample_grads.push(mse_gradient(model, &batch.row(i))?.1);
    }
    let mean_grad = mean_vector(&per_sample_grads);
    let (outputs, _) = model.forward_batch(batch.inputs.view(), &batch.timesteps);
    let jacobians = if with_jacobians {
        Some(
            (0..batch.len())
                .map(|i| jacobian(model, batch.inputs.row(i).insert_axis(Axis(0)), batch.timesteps[i], DEFAULT_JACOBIAN_BUDGET))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(GradientBundle { per_sample_grads, mean_grad, outputs, jacobians })
}

/// `J^T v` for the prediction at one input, i.e. `grad_theta (v . f)`.
pub fn vjp(model: &DenoiserModel, noisy: ArrayView2<'_, f64>, t: usize, v: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let tr = model.forward_on(&mut tape, noisy, &[t]);
    let seed = Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("cotangent row");
    let grads = tape.backward(tr.output, seed);
    tape.param_gradient(&grads, model.param_count())
}

/// Full `d x P` Jacobian of the prediction at one input, one reverse pass per
/// output coordinate.
pub fn jacobian(model: &DenoiserModel, noisy: ArrayView2<'_, f64>, t: usize, budget: usize) -> Result<Array2<f64>> {
    let d = model.architecture().shape.len();
    let p = model.param_count();
    if d.saturating_mul(p) > budget {
        return Err(Error::Config(format!(
            "Jacobian of {d} x {p} exceeds the budget of {budget} entries; use the tiny preset"
        )));
    }
    if noisy.nrows() != 1 {
        return Err(Error::shape(1, noisy.nrows()));
    }
    let mut tape = Tape::new();
    let tr = model.forward_on(&mut tape, noisy, &[t]);
    let mut jac = Array2::zeros((d, p));
    for k in 0..d {
        let mut seed = Array2::zeros((1, d));
        seed[[0, k]] = 1.0;
        let grads = tape.backward(tr.output, seed);
        let row = tape.param_gradient(&grads, p);
        jac.row_mut(k).assign(&ndarray::Array1::from(row));
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{Architecture, Preset};
    use crate::diffusion::FrameShape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> Architecture {
        Architecture { shape: FrameShape::new(1, 3, 3), time_dim: 4, hidden: vec![5, 4] }
    }

    fn random_batch(n: usize, d: usize, seed: u64) -> NoisyBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NoisyBatch {
            inputs: Array2::from_shape_fn((n, d), |_| rng.random_range(-1.5..1.5)),
            timesteps: (0..n).map(|_| rng.random_range(0..1000)).collect(),
            targets: Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0)),
        }
    }

    fn loss_at(model: &DenoiserModel, batch: &NoisyBatch) -> f64 {
        let (pred, _) = model.forward_batch(batch.inputs.view(), &batch.timesteps);
        (&pred - &batch.targets).mapv(|v| v * v).sum() / pred.len() as f64
    }

    #[test]
    fn mse_gradient_matches_central_differences() {
        let model = DenoiserModel::init(small_arch(), 2).unwrap();
        let batch = random_batch(3, 9, 4);
        let (_, g) = mse_gradient(&model, &batch).unwrap();
        let h = 1e-5;
        for k in 0..model.param_count() {
            let mut plus = model.clone();
            plus.params_mut()[k] += h;
            let mut minus = model.clone();
            minus.params_mut()[k] -= h;
            let fd = (loss_at(&plus, &batch) - loss_at(&minus, &batch)) / (2.0 * h);
            let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-7);
            assert!(rel < 1e-4, "coord {k}: {} vs {fd}", g[k]);
        }
    }

    #[test]
    fn linear_head_quadratic_loss_closed_form() {
        // Loss |f|^2 with only the head free: grad_W = 2 f h^T, grad_b = 2 f.
        let model = DenoiserModel::init(small_arch(), 7).unwrap();
        let batch = random_batch(1, 9, 8);
        let (f, h1) = model.forward_batch(batch.inputs.view(), &batch.timesteps);
        let _ = h1;
        let mut tape = Tape::new();
        let tr = model.forward_on(&mut tape, batch.inputs.view(), &batch.timesteps);
        let last_hidden = tape.value(*tr.hidden.last().unwrap()).clone();
        let sq = tape.square(tr.output);
        let l = tape.sum(sq);
        let g = tape.param_gradient(&tape.backward_scalar(l), model.param_count());
        let head = *model.architecture().layers().last().unwrap();
        for o in 0..head.fan_out {
            assert!((g[head.bias + o] - 2.0 * f[[0, o]]).abs() < 1e-14);
            for k in 0..head.fan_in {
                let want = 2.0 * f[[0, o]] * last_hidden[[0, k]];
                assert!((g[head.weight + o * head.fan_in + k] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn scaling_loss_scales_gradient_exactly() {
        let model = DenoiserModel::init(small_arch(), 1).unwrap();
        let batch = random_batch(2, 9, 2);
        let grad = |c: f64| {
            let mut tape = Tape::new();
            let tr = model.forward_on(&mut tape, batch.inputs.view(), &batch.timesteps);
            let sq = tape.square(tr.output);
            let s = tape.sum(sq);
            let l = tape.scale(s, c);
            tape.param_gradient(&tape.backward_scalar(l), model.param_count())
        };
        let g1 = grad(1.0);
        let g4 = grad(4.0);
        for (a, b) in g1.iter().zip(&g4) {
            assert_eq!(4.0 * a, *b);
        }
    }

    #[test]
    fn per_sample_mean_matches_batch_gradient() {
        let model = DenoiserModel::init(small_arch(), 3).unwrap();
        let batch = random_batch(5, 9, 6);
        let bundle = per_sample_gradients(&model, &batch, false).unwrap();
        let (_, g) = mse_gradient(&model, &batch).unwrap();
        let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in bundle.mean_grad.iter().zip(&g) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn degenerate_batch_has_zero_variance() {
        let model = DenoiserModel::init(small_arch(), 3).unwrap();
        let one = random_batch(1, 9, 6);
        let batch = NoisyBatch {
            inputs: ndarray::concatenate(Axis(0), &[one.inputs.view(); 4]).unwrap(),
            timesteps: vec![one.timesteps[0]; 4],
            targets: ndarray::concatenate(Axis(0), &[one.targets.view(); 4]).unwrap(),
        };
        let bundle = per_sample_gradients(&model, &batch, false).unwrap();
        assert!(bundle.per_sample_grads.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(bundle.variance(), 0.0);
    }

    #[test]
    fn variance_matches_loop_oracle() {
        let model = DenoiserModel::init(small_arch(), 4).unwrap();
        let batch = random_batch(4, 9, 10);
        let bundle = per_sample_gradients(&model, &batch, false).unwrap();
        let u = &bundle.per_sample_grads;
        let p = u[0].len();
        let mut oracle = 0.0;
        for k in 0..p {
            let m = (u[0][k] + u[1][k] + u[2][k] + u[3][k]) / 4.0;
            for ui in u {
                oracle += (ui[k] - m).powi(2);
            }
        }
        oracle /= 4.0;
        assert!((bundle.variance() - oracle).abs() <= 1e-12 * oracle);
    }

    #[test]
    fn jacobian_columns_match_finite_differences() {
        let model = DenoiserModel::init(small_arch(), 9).unwrap();
        let batch = random_batch(1, 9, 12);
        let jac = jacobian(&model, batch.inputs.view(), batch.timesteps[0], usize::MAX).unwrap();
        let h = 1e-5;
        for k in 0..model.param_count() {
            let mut plus = model.clone();
            plus.params_mut()[k] += h;
            let mut minus = model.clone();
            minus.params_mut()[k] -= h;
            let fp = plus.forward_batch(batch.inputs.view(), &batch.timesteps).0;
            let fm = minus.forward_batch(batch.inputs.view(), &batch.timesteps).0;
            for o in 0..9 {
                let fd = (fp[[0, o]] - fm[[0, o]]) / (2.0 * h);
                let an = jac[[o, k]];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
                assert!(rel < 1e-4, "J[{o},{k}] {an} vs {fd}");
            }
        }
    }

    #[test]
    fn jacobian_transpose_vector_matches_vjp() {
        let model = DenoiserModel::init(Preset::Tiny.architecture(FrameShape::new(1, 16, 16)), 2).unwrap();
        let batch = random_batch(1, 256, 3);
        let jac = jacobian(&model, batch.inputs.view(), batch.timesteps[0], DEFAULT_JACOBIAN_BUDGET).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let jtv = jac.t().dot(&ndarray::Array1::from(v.clone()));
        let direct = vjp(&model, batch.inputs.view(), batch.timesteps[0], &v);
        for (a, b) in jtv.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_head_jacobian_rows_are_penultimate_activations() {
        let arch = small_arch();
        let mut model = DenoiserModel::init(arch, 13).unwrap();
        let head = *model.architecture().layers().last().unwrap();
        model.params_mut()[head.weight..].fill(0.0);
        let batch = random_batch(1, 9, 14);
        let mut tape = Tape::new();
        let tr = model.forward_on(&mut tape, batch.inputs.view(), &batch.timesteps);
        let act = tape.value(*tr.hidden.last().unwrap()).clone();
        let jac = jacobian(&model, batch.inputs.view(), batch.timesteps[0], usize::MAX).unwrap();
        for o in 0..head.fan_out {
            for k in 0..head.fan_in {
                assert_eq!(jac[[o, head.weight + o * head.fan_in + k]], act[[0, k]]);
            }
            // everything below the head is cut off by the zero weights
            assert!(jac.row(o).slice(ndarray::s![..head.weight]).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn jacobian_budget_enforced() {
        let model = DenoiserModel::init(Preset::Base.architecture(FrameShape::new(1, 16, 16)), 0).unwrap();
        let x = Array2::zeros((1, 256));
        assert!(matches!(jacobian(&model, x.view(), 0, DEFAULT_JACOBIAN_BUDGET), Err(Error::Config(_))));
    }
}
