use ndarray::{Array2, ArrayView2, Axis};

use super::graph::{lambda2, LocalGraph};
use crate::denoiser::{gradient_variance, per_sample_gradients, DenoiserModel, NoisyBatch};
use crate::linalg::spectral_norm;
use crate::{Error, Result};

/// Relative slack allowed when comparing the two sides of an inequality.
const BOUND_RTOL: f64 = 1e-9;
/// Absolute slack for bounds that are exactly zero in exact arithmetic.
const ABS_TOL: f64 = 1e-24;

/// `l(f) = scale * |f - target|^2`; the per-sample training loss uses
/// `scale = 1/d` and the noise as target.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredErrorLoss {
    pub target: Vec<f64>,
    pub scale: f64,
}

impl SquaredErrorLoss {
    /// `dl/df = 2 * scale * (f - target)`.
    pub fn output_gradient(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.target).map(|(a, b)| 2.0 * self.scale * (a - b)).collect()
    }
}

/// Residuals of two forms of the pairwise gradient decomposition.
///
/// `literal` measures `u_i - u_j - (J_i^T s_ij + D_ij^T f_j)` with
/// `s_ij = f_i - f_j`, which is exact only for `l = |f|^2 / 2`.
/// `applicable` replaces the outputs by the loss gradients `g = dl/df`:
/// `u_i - u_j - (J_i^T (g_i - g_j) + D_ij^T g_j)`, an identity for any
/// loss of the form `u = J^T g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionResidual {
    pub literal: f64,
    pub applicable: f64,
    /// `|u_i - u_j|`, for judging the residuals relative to the difference.
    pub diff_norm: f64,
}

/// One side-by-side inequality check `lhs <= rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        let holds = lhs <= rhs + BOUND_RTOL * rhs.abs().max(lhs.abs()) + ABS_TOL;
        Self { lhs, rhs, holds }
    }

    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn jt_times(j: ArrayView2<'_, f64>, v: &[f64]) -> Result<Vec<f64>> {
    if j.nrows() != v.len() {
        return Err(Error::shape(j.nrows(), v.len()));
    }
    Ok(j.t().dot(&ndarray::ArrayView1::from(v)).to_vec())
}

/// `E_S = 1/2 sum_E w |f_i - f_j|^2` over rows of `outputs`, and
/// `E_G = 1/2 sum_E w |J_i - J_j|_F^2` when Jacobians are given.
pub fn dirichlet_energies(
    outputs: ArrayView2<'_, f64>,
    jacobians: Option<&[Array2<f64>]>,
    graph: &LocalGraph,
) -> Result<(f64, Option<f64>)> {
    if outputs.nrows() != graph.n() {
        return Err(Error::shape(graph.n(), outputs.nrows()));
    }
    if let Some(js) = jacobians {
        if js.len() != graph.n() {
            return Err(Error::shape(graph.n(), js.len()));
        }
    }
    let mut e_s = 0.0;
    let mut e_g = jacobians.map(|_| 0.0);
    for &(i, j, w) in graph.edges() {
        let d = &outputs.row(i) - &outputs.row(j);
        e_s += 0.5 * w * d.dot(&d);
        if let (Some(js), Some(acc)) = (jacobians, e_g.as_mut()) {
            if js[i].dim() != js[j].dim() {
                return Err(Error::shape(format!("{:?}", js[i].dim()), format!("{:?}", js[j].dim())));
            }
            let dj = &js[i] - &js[j];
            *acc += 0.5 * w * dj.iter().map(|x| x * x).sum::<f64>();
        }
    }
    Ok((e_s, e_g))
}

#[allow(clippy::too_many_arguments)]
pub fn verify_decomposition(
    u_i: &[f64],
    u_j: &[f64],
    j_i: ArrayView2<'_, f64>,
    j_j: ArrayView2<'_, f64>,
    f_i: &[f64],
    f_j: &[f64],
    loss: &SquaredErrorLoss,
) -> Result<DecompositionResidual> {
    if j_i.dim() != j_j.dim() {
        return Err(Error::shape(format!("{:?}", j_i.dim()), format!("{:?}", j_j.dim())));
    }
    if u_i.len() != j_i.ncols() || u_j.len() != j_i.ncols() {
        return Err(Error::shape(j_i.ncols(), u_i.len()));
    }
    if f_i.len() != f_j.len() || f_i.len() != loss.target.len() {
        return Err(Error::shape(loss.target.len(), f_i.len()));
    }
    let du: Vec<f64> = u_i.iter().zip(u_j).map(|(a, b)| a - b).collect();
    let d_ij = &j_i - &j_j;

    let s: Vec<f64> = f_i.iter().zip(f_j).map(|(a, b)| a - b).collect();
    let lit_a = jt_times(j_i, &s)?;
    let lit_b = jt_times(d_ij.view(), f_j)?;
    let literal: Vec<f64> = du.iter().zip(lit_a.iter().zip(&lit_b)).map(|(d, (a, b))| d - a - b).collect();

    let (g_i, g_j) = (loss.output_gradient(f_i), loss.output_gradient(f_j));
    let sg: Vec<f64> = g_i.iter().zip(&g_j).map(|(a, b)| a - b).collect();
    let app_a = jt_times(j_i, &sg)?;
    let app_b = jt_times(d_ij.view(), &g_j)?;
    let applicable: Vec<f64> = du.iter().zip(app_a.iter().zip(&app_b)).map(|(d, (a, b))| d - a - b).collect();

    Ok(DecompositionResidual { literal: norm(&literal), applicable: norm(&applicable), diff_norm: norm(&du) })
}

/// `|u_i - u_j|^2 <= 2 G^2 |s|^2 + 2 F^2 |D_ij|_F^2`, where `s` is the
/// difference of the loss gradients w.r.t. the outputs, `G` bounds the
/// spectral norm of `J_i` and `F` bounds `|dl/df|`.
pub fn verify_pairwise_bound(
    u_i: &[f64],
    u_j: &[f64],
    s: &[f64],
    d_ij: ArrayView2<'_, f64>,
    g_sup: f64,
    f_sup: f64,
) -> Result<BoundCheck> {
    if u_i.len() != u_j.len() {
        return Err(Error::shape(u_i.len(), u_j.len()));
    }
    if !(g_sup >= 0.0 && f_sup >= 0.0) {
        return Err(Error::arg("suprema must be non-negative"));
    }
    let lhs = sq_dist(u_i, u_j);
    let d_fro: f64 = d_ij.iter().map(|x| x * x).sum();
    let rhs = 2.0 * g_sup * g_sup * s.iter().map(|x| x * x).sum::<f64>() + 2.0 * f_sup * f_sup * d_fro;
    Ok(BoundCheck::new(lhs, rhs))
}

/// `(1/N) sum_i |u_i - mean|^2 <= (1/(N l2)) sum_E w |u_i - u_j|^2`.
pub fn verify_poincare(grads: &[Vec<f64>], graph: &LocalGraph) -> Result<BoundCheck> {
    if grads.len() != graph.n() {
        return Err(Error::shape(graph.n(), grads.len()));
    }
    let conn = lambda2(graph)?;
    if !conn.connected || conn.lambda2 <= 0.0 {
        return Err(Error::Disconnected);
    }
    let lhs = gradient_variance(grads);
    let edge_sum: f64 = graph.edges().iter().map(|&(i, j, w)| w * sq_dist(&grads[i], &grads[j])).sum();
    Ok(BoundCheck::new(lhs, edge_sum / (graph.n() as f64 * conn.lambda2)))
}

/// A fixed corrupted window and the graph its frames are coupled by.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeWindow {
    pub batch: NoisyBatch,
    pub graph: LocalGraph,
}

impl ProbeWindow {
    pub fn new(batch: NoisyBatch, graph: LocalGraph) -> Result<Self> {
        batch.validate()?;
        if batch.len() != graph.n() {
            return Err(Error::shape(graph.n(), batch.len()));
        }
        Ok(Self { batch, graph })
    }
}

/// Everything measured on one probe window. Jacobian-dependent fields are
/// `None` when Jacobians were not extracted.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub n: usize,
    pub lambda2: f64,
    /// Dirichlet energy of the predictions.
    pub e_s: f64,
    /// Dirichlet energy of the loss gradients w.r.t. the predictions.
    pub e_s_loss: f64,
    pub e_g: Option<f64>,
    /// `max_i |J_i|_2`.
    pub g_sup: Option<f64>,
    /// `max_i |dl_i/df_i|`.
    pub f_sup: f64,
    /// `max_i |f_i|`.
    pub output_sup: f64,
    pub grad_variance: f64,
    /// `|mean_i u_i|`.
    pub grad_norm: f64,
    pub poincare: BoundCheck,
    /// `(4/(N l2)) (G^2 E_S + F^2 E_G)` with the loss-gradient energy.
    pub bound_rhs: Option<f64>,
    pub bound_holds: Option<bool>,
    /// Mean `|J_i - J_j|_F` over edges.
    pub mean_d_ij: Option<f64>,
    pub decomposition: Vec<DecompositionResidual>,
    pub pairwise: Vec<BoundCheck>,
}

/// Per-sample gradients, energies and every bound in the chain for one window.
pub fn analyze_window(model: &DenoiserModel, probe: &ProbeWindow, with_jacobians: bool) -> Result<AnalysisReport> {
    let batch = &probe.batch;
    let graph = &probe.graph;
    let n = batch.len();
    let d = batch.inputs.ncols();
    let bundle = per_sample_gradients(model, batch, with_jacobians)?;
    let conn = lambda2(graph)?;
    if !conn.connected {
        return Err(Error::Disconnected);
    }

    let losses: Vec<SquaredErrorLoss> = (0..n)
        .map(|i| SquaredErrorLoss { target: batch.targets.row(i).to_vec(), scale: 1.0 / d as f64 })
        .collect();
    let outputs: Vec<Vec<f64>> = bundle.outputs.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    let loss_grads: Vec<Vec<f64>> = outputs.iter().zip(&losses).map(|(f, l)| l.output_gradient(f)).collect();
    let loss_grad_rows = Array2::from_shape_vec((n, d), loss_grads.concat()).expect("n x d");

    let jacs = bundle.jacobians.as_deref();
    let (e_s, e_g) = dirichlet_energies(bundle.outputs.view(), jacs, graph)?;
    let (e_s_loss, _) = dirichlet_energies(loss_grad_rows.view(), None, graph)?;
    let f_sup = loss_grads.iter().map(|g| norm(g)).fold(0.0, f64::max);
    let output_sup = outputs.iter().map(|f| norm(f)).fold(0.0, f64::max);
    let grad_variance = bundle.variance();
    let grad_norm = norm(&bundle.mean_grad);
    let poincare = verify_poincare(&bundle.per_sample_grads, graph)?;

    let mut decomposition = Vec::new();
    let mut pairwise = Vec::new();
    let (mut g_sup, mut bound_rhs, mut bound_holds, mut mean_d_ij) = (None, None, None, None);
    if let (Some(js), Some(e_g)) = (jacs, e_g) {
        let g = js.iter().map(|j| spectral_norm(j.view())).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
        let mut d_sum = 0.0;
        for &(i, j, _) in graph.edges() {
            let (ui, uj) = (&bundle.per_sample_grads[i], &bundle.per_sample_grads[j]);
            decomposition.push(verify_decomposition(ui, uj, js[i].view(), js[j].view(), &outputs[i], &outputs[j], &losses[i])?);
            let d_ij = &js[i] - &js[j];
            d_sum += d_ij.iter().map(|x| x * x).sum::<f64>().sqrt();
            let s: Vec<f64> = loss_grads[i].iter().zip(&loss_grads[j]).map(|(a, b)| a - b).collect();
            pairwise.push(verify_pairwise_bound(ui, uj, &s, d_ij.view(), g, f_sup)?);
        }
        let rhs = 4.0 / (n as f64 * conn.lambda2) * (g * g * e_s_loss + f_sup * f_sup * e_g);
        g_sup = Some(g);
        bound_rhs = Some(rhs);
        bound_holds = Some(BoundCheck::new(grad_variance, rhs).holds);
        mean_d_ij = Some(if graph.edges().is_empty() { 0.0 } else { d_sum / graph.edges().len() as f64 });
    }

    Ok(AnalysisReport {
        n,
        lambda2: conn.lambda2,
        e_s,
        e_s_loss,
        e_g,
        g_sup,
        f_sup,
        output_sup,
        grad_variance,
        grad_norm,
        poincare,
        bound_rhs,
        bound_holds,
        mean_d_ij,
        decomposition,
        pairwise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{jacobian, vjp, Architecture, DEFAULT_JACOBIAN_BUDGET};
    use crate::diffusion::FrameShape;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64) -> DenoiserModel {
        let arch = Architecture { shape: FrameShape::new(1, 3, 3), time_dim: 4, hidden: vec![5] };
        DenoiserModel::init(arch, seed).unwrap()
    }

    fn window(seed: u64, n: usize) -> NoisyBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
        let eps: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut inputs = Array2::zeros((n, 9));
        for i in 0..n {
            for k in 0..9 {
                inputs[[i, k]] = base[k] + 0.2 * rng.random_range(-1.0..1.0);
            }
        }
        let targets = Array2::from_shape_fn((n, 9), |(_, k)| eps[k]);
        NoisyBatch { inputs, timesteps: vec![300; n], targets }
    }

    #[test]
    fn energies_by_hand() {
        let g = LocalGraph::path(&[2.0, 0.5]).unwrap();
        let f = array![[0.0, 0.0], [1.0, 0.0], [1.0, 2.0]];
        let js = vec![Array2::zeros((1, 2)), Array2::ones((1, 2)), Array2::ones((1, 2))];
        let (e_s, e_g) = dirichlet_energies(f.view(), Some(&js), &g).unwrap();
        assert!((e_s - (0.5 * 2.0 * 1.0 + 0.5 * 0.5 * 4.0)).abs() < 1e-15);
        assert!((e_g.unwrap() - 0.5 * 2.0 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn applicable_decomposition_is_exact() {
        let model = tiny_model(3);
        let batch = window(5, 3);
        let bundle = per_sample_gradients(&model, &batch, true).unwrap();
        let js = bundle.jacobians.as_ref().unwrap();
        let loss = SquaredErrorLoss { target: batch.targets.row(0).to_vec(), scale: 1.0 / 9.0 };
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            let r = verify_decomposition(
                &bundle.per_sample_grads[i],
                &bundle.per_sample_grads[j],
                js[i].view(),
                js[j].view(),
                &bundle.outputs.row(i).to_vec(),
                &bundle.outputs.row(j).to_vec(),
                &loss,
            )
            .unwrap();
            assert!(r.applicable <= 1e-10 * (1.0 + r.diff_norm), "{r:?}");
            assert!(r.literal > r.applicable);
        }
    }

    #[test]
    fn literal_form_is_exact_for_half_squared_norm() {
        // with l = |f|^2 / 2 the loss gradient is f itself
        let model = tiny_model(9);
        let batch = window(2, 2);
        let mut u = Vec::new();
        let mut js = Vec::new();
        let mut fs = Vec::new();
        for i in 0..2 {
            let x = batch.inputs.row(i).insert_axis(Axis(0));
            let (f, _) = model.forward_batch(x, &[300]);
            let f = f.row(0).to_vec();
            u.push(vjp(&model, x, 300, &f));
            js.push(jacobian(&model, x, 300, DEFAULT_JACOBIAN_BUDGET).unwrap());
            fs.push(f);
        }
        let loss = SquaredErrorLoss { target: vec![0.0; 9], scale: 0.5 };
        let r = verify_decomposition(&u[0], &u[1], js[0].view(), js[1].view(), &fs[0], &fs[1], &loss).unwrap();
        assert!(r.literal < 1e-12 && r.applicable < 1e-12, "{r:?}");
    }

    #[test]
    fn identical_frames_are_degenerate() {
        let model = tiny_model(1);
        let mut batch = window(8, 3);
        let first = batch.inputs.row(0).to_owned();
        for mut r in batch.inputs.rows_mut() {
            r.assign(&first);
        }
        let probe = ProbeWindow::new(batch, LocalGraph::path(&[1.0, 1.0]).unwrap()).unwrap();
        let rep = analyze_window(&model, &probe, true).unwrap();
        assert_eq!(rep.e_s, 0.0);
        assert_eq!(rep.e_g, Some(0.0));
        // the mean of identical vectors may differ from them in the last bit
        assert!(rep.grad_variance < 1e-28);
        assert_eq!(rep.bound_rhs, Some(0.0));
        assert_eq!(rep.bound_holds, Some(true));
    }

    #[test]
    fn full_chain_holds_on_random_windows() {
        for seed in 0..6 {
            let model = tiny_model(seed);
            let n = 3 + (seed as usize % 3);
            let weights: Vec<f64> = (0..n - 1).map(|k| 0.3 + k as f64).collect();
            let probe = ProbeWindow::new(window(100 + seed, n), LocalGraph::path(&weights).unwrap()).unwrap();
            let rep = analyze_window(&model, &probe, true).unwrap();
            assert!(rep.poincare.holds, "{:?}", rep.poincare);
            assert!(rep.pairwise.iter().all(|c| c.holds));
            assert_eq!(rep.bound_holds, Some(true));
            assert!(rep.poincare.rhs <= rep.bound_rhs.unwrap() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn without_jacobians_skips_dependent_fields() {
        let probe = ProbeWindow::new(window(4, 3), LocalGraph::path(&[1.0, 1.0]).unwrap()).unwrap();
        let rep = analyze_window(&tiny_model(2), &probe, false).unwrap();
        assert!(rep.e_g.is_none() && rep.bound_rhs.is_none() && rep.mean_d_ij.is_none());
        assert!(rep.decomposition.is_empty());
        assert!(rep.poincare.holds);
    }

    #[test]
    fn poincare_rejects_disconnected() {
        let g = LocalGraph::new(3, vec![(0, 1, 1.0)]).unwrap();
        let grads = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert!(matches!(verify_poincare(&grads, &g), Err(Error::Disconnected)));
    }

    proptest! {
        #[test]
        fn poincare_holds_for_any_vectors(
            vals in prop::collection::vec(-10.0f64..10.0, 12),
            w in prop::collection::vec(0.01f64..10.0, 3),
        ) {
            let grads: Vec<Vec<f64>> = vals.chunks(3).map(<[f64]>::to_vec).collect();
            let g = LocalGraph::path(&w).unwrap();
            prop_assert!(verify_poincare(&grads, &g).unwrap().holds);
        }

        #[test]
        fn pairwise_holds_for_linear_maps(
            ji in prop::collection::vec(-2.0f64..2.0, 6),
            jj in prop::collection::vec(-2.0f64..2.0, 6),
            gi in prop::collection::vec(-2.0f64..2.0, 2),
            gj in prop::collection::vec(-2.0f64..2.0, 2),
        ) {
            let ji = Array2::from_shape_vec((2, 3), ji).unwrap();
            let jj = Array2::from_shape_vec((2, 3), jj).unwrap();
            let ui = jt_times(ji.view(), &gi).unwrap();
            let uj = jt_times(jj.view(), &gj).unwrap();
            let g_sup = spectral_norm(ji.view()).unwrap().max(spectral_norm(jj.view()).unwrap());
            let f_sup = norm(&gi).max(norm(&gj));
            let s: Vec<f64> = gi.iter().zip(&gj).map(|(a, b)| a - b).collect();
            let d = &ji - &jj;
            prop_assert!(verify_pairwise_bound(&ui, &uj, &s, d.view(), g_sup, f_sup).unwrap().holds);
        }
    }
}
