//! Local-graph analysis of per-sample gradients.
//!
//! A window of `N` frames is a weighted graph whose edges carry the
//! regularizer weights. On that graph this module evaluates the Laplacian and
//! its algebraic connectivity, the Dirichlet energies of outputs and
//! Jacobians, and checks the chain
//! `Var(grad) <= (1/(N l2)) sum_E w |u_i - u_j|^2 <= (4/(N l2)) (G^2 E_S + F^2 E_G)`.

mod bounds;
mod dynamics;
mod graph;

pub use bounds::{
    analyze_window, dirichlet_energies, verify_decomposition, verify_pairwise_bound, verify_poincare,
    AnalysisReport, BoundCheck, DecompositionResidual, ProbeWindow, SquaredErrorLoss,
};
pub use dynamics::{param_travel, track_dynamics, DynamicsPoint};
pub use graph::{lambda2, laplacian, Connectivity, LocalGraph};
