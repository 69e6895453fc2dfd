use super::bounds::{analyze_window, ProbeWindow};
use crate::denoiser::DenoiserModel;
use crate::{Error, Result};

/// `|theta - theta_0|`.
pub fn param_travel(theta: &[f64], theta0: &[f64]) -> Result<f64> {
    if theta.len() != theta0.len() {
        return Err(Error::shape(theta0.len(), theta.len()));
    }
    Ok(theta.iter().zip(theta0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// Probe-averaged quantities at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsPoint {
    pub step: u64,
    pub grad_norm: f64,
    pub param_travel: f64,
    pub grad_variance: f64,
    pub mean_d_ij: Option<f64>,
}

/// Evaluates every checkpoint on the same probe windows. The first
/// checkpoint must be the initialization (step 0); travel is measured from it.
pub fn track_dynamics(
    checkpoints: &[(u64, DenoiserModel)],
    probes: &[ProbeWindow],
    with_jacobians: bool,
) -> Result<Vec<DynamicsPoint>> {
    let Some((first_step, first)) = checkpoints.first() else {
        return Err(Error::arg("no checkpoints to track"));
    };
    if *first_step != 0 {
        return Err(Error::arg(format!("initial checkpoint missing; earliest is step {first_step}")));
    }
    if probes.is_empty() {
        return Err(Error::arg("no probe windows"));
    }
    if checkpoints.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::arg("checkpoints are not in increasing step order"));
    }
    let theta0 = first.params();
    let m = probes.len() as f64;
    checkpoints
        .iter()
        .map(|(step, model)| {
            let mut point =
                DynamicsPoint { step: *step, grad_norm: 0.0, param_travel: param_travel(model.params(), theta0)?, grad_variance: 0.0, mean_d_ij: None };
            for probe in probes {
                let rep = analyze_window(model, probe, with_jacobians)?;
                point.grad_norm += rep.grad_norm / m;
                point.grad_variance += rep.grad_variance / m;
                if let Some(d) = rep.mean_d_ij {
                    *point.mean_d_ij.get_or_insert(0.0) += d / m;
                }
            }
            Ok(point)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::LocalGraph;
    use crate::denoiser::{Architecture, NoisyBatch};
    use crate::diffusion::FrameShape;
    use ndarray::Array2;

    #[test]
    fn straight_line_travel_adds_up() {
        // k unit-rate steps along a fixed direction with gradient norm g
        let g = 0.37;
        let dir = [0.6, 0.0, -0.8];
        let theta0 = vec![1.0, 2.0, 3.0];
        let mut theta = theta0.clone();
        for k in 1..=25 {
            for (t, d) in theta.iter_mut().zip(dir) {
                *t -= g * d;
            }
            assert!((param_travel(&theta, &theta0).unwrap() - k as f64 * g).abs() < 1e-12);
        }
    }

    #[test]
    fn requires_initial_checkpoint() {
        let arch = Architecture { shape: FrameShape::new(1, 2, 2), time_dim: 2, hidden: vec![3] };
        let m = DenoiserModel::init(arch, 1).unwrap();
        let batch = NoisyBatch { inputs: Array2::zeros((2, 4)), timesteps: vec![5, 5], targets: Array2::ones((2, 4)) };
        let probe = ProbeWindow::new(batch, LocalGraph::path(&[1.0]).unwrap()).unwrap();
        assert!(track_dynamics(&[(10, m.clone())], std::slice::from_ref(&probe), true).is_err());
        assert!(track_dynamics(&[], std::slice::from_ref(&probe), true).is_err());
        let pts = track_dynamics(&[(0, m.clone()), (5, m)], &[probe], true).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].param_travel, 0.0);
        assert_eq!(pts[0].grad_variance, 0.0);
        assert_eq!(pts[0].mean_d_ij, Some(0.0));
    }
}
