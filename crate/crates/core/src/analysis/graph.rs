use ndarray::Array2;

use crate::linalg::jacobi_eigen;
use crate::{Error, Result};

/// Undirected weighted graph on nodes `0..n`, each pair stored once.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGraph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl LocalGraph {
    pub fn new(n: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for &(i, j, w) in &edges {
            if i >= n || j >= n {
                return Err(Error::arg(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            if i == j {
                return Err(Error::arg(format!("self-loop at node {i}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::arg(format!("edge ({i}, {j}) has weight {w}")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::arg(format!("edge ({i}, {j}) listed twice")));
            }
        }
        Ok(Self { n, edges })
    }

    /// Path `0 - 1 - ... - (n-1)` with the given consecutive weights.
    pub fn path(weights: &[f64]) -> Result<Self> {
        Self::new(weights.len() + 1, weights.iter().enumerate().map(|(i, &w)| (i, i + 1, w)).collect())
    }

    pub fn complete(n: usize, w: f64) -> Result<Self> {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j, w))).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut components = self.n;
        for &(i, j, _) in &self.edges {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a] = b;
                components -= 1;
            }
        }
        components == 1
    }
}

/// `L = D - W`.
pub fn laplacian(graph: &LocalGraph) -> Array2<f64> {
    let mut l = Array2::zeros((graph.n, graph.n));
    for &(i, j, w) in &graph.edges {
        l[[i, j]] -= w;
        l[[j, i]] -= w;
        l[[i, i]] += w;
        l[[j, j]] += w;
    }
    l
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Connectivity {
    pub lambda2: f64,
    pub connected: bool,
}

/// Second-smallest Laplacian eigenvalue. Disconnected graphs report exactly
/// zero with `connected == false`.
pub fn lambda2(graph: &LocalGraph) -> Result<Connectivity> {
    if graph.n < 2 {
        return Err(Error::arg("algebraic connectivity needs at least two nodes"));
    }
    if !graph.is_connected() {
        return Ok(Connectivity { lambda2: 0.0, connected: false });
    }
    let eig = jacobi_eigen(laplacian(graph).view())?;
    Ok(Connectivity { lambda2: eig.values[1], connected: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn path_three_laplacian() {
        let g = LocalGraph::path(&[1.0, 1.0]).unwrap();
        assert_eq!(laplacian(&g), array![[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]]);
    }

    #[test]
    fn quadratic_form_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.random_range(2..9);
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random_bool(0.5) {
                        edges.push((i, j, rng.random_range(0.1..5.0)));
                    }
                }
            }
            let g = LocalGraph::new(n, edges).unwrap();
            let l = laplacian(&g);
            assert!(l.rows().into_iter().all(|r| r.sum().abs() < 1e-12));
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let xv = ndarray::Array1::from(x.clone());
            let quad = xv.dot(&l.dot(&xv));
            let direct: f64 = g.edges().iter().map(|&(i, j, w)| w * (x[i] - x[j]).powi(2)).sum();
            assert!((quad - direct).abs() <= 1e-12 * (1.0 + direct));
        }
    }

    #[test]
    fn known_spectra() {
        let p3 = lambda2(&LocalGraph::path(&[1.0, 1.0]).unwrap()).unwrap();
        assert!((p3.lambda2 - 1.0).abs() < 1e-10);
        let k4 = lambda2(&LocalGraph::complete(4, 1.0).unwrap()).unwrap();
        assert!((k4.lambda2 - 4.0).abs() < 1e-10);
        let split = lambda2(&LocalGraph::new(2, vec![]).unwrap()).unwrap();
        assert_eq!(split, Connectivity { lambda2: 0.0, connected: false });
    }

    #[test]
    fn rejects_malformed_graphs() {
        assert!(LocalGraph::new(3, vec![(0, 0, 1.0)]).is_err());
        assert!(LocalGraph::new(3, vec![(0, 1, 0.0)]).is_err());
        assert!(LocalGraph::new(3, vec![(0, 1, 1.0), (1, 0, 2.0)]).is_err());
        assert!(LocalGraph::new(3, vec![(0, 3, 1.0)]).is_err());
        assert!(lambda2(&LocalGraph::new(1, vec![]).unwrap()).is_err());
    }
}
