//! Dense symmetric eigensolver and the few matrix helpers built on it.

use ndarray::{Array1, Array2, ArrayView2};

use crate::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix, eigenvalues ascending; `vectors`
/// holds the matching unit eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

/// Cyclic Jacobi rotations until the off-diagonal mass is negligible
/// relative to the matrix norm.
pub fn jacobi_eigen(a: ArrayView2<'_, f64>) -> Result<SymmetricEigen> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::shape(format!("{n}x{n}"), format!("{n}x{}", a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("matrix has non-finite entries"));
    }
    let mut m = a.to_owned();
    // symmetrize; callers hand us matrices that are symmetric up to rounding
    for p in 0..n {
        for q in p + 1..n {
            let s = 0.5 * (m[[p, q]] + m[[q, p]]);
            m[[p, q]] = s;
            m[[q, p]] = s;
        }
    }
    let mut v = Array2::<f64>::eye(n);
    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = f64::EPSILON * scale.max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (kp, kq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * kp - s * kq;
                    m[[k, q]] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * pk - s * qk;
                    m[[q, k]] = s * pk + c * qk;
                }
                m[[p, q]] = 0.0;
                m[[q, p]] = 0.0;
                for k in 0..n {
                    let (kp, kq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * kp - s * kq;
                    v[[k, q]] = s * kp + c * kq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].total_cmp(&m[[j, j]]));
    let values = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Principal square root of a symmetric positive semidefinite matrix.
/// Eigenvalues below zero (rounding) are clipped.
pub fn psd_sqrt(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let eig = jacobi_eigen(a)?;
    let roots = eig.values.mapv(|l| l.max(0.0).sqrt());
    let scaled = &eig.vectors * &roots;
    Ok(scaled.dot(&eig.vectors.t()))
}

/// Largest singular value of `m`, from the eigenvalues of the smaller Gram matrix.
pub fn spectral_norm(m: ArrayView2<'_, f64>) -> Result<f64> {
    let gram = if m.nrows() <= m.ncols() { m.dot(&m.t()) } else { m.t().dot(&m) };
    let eig = jacobi_eigen(gram.view())?;
    Ok(eig.values.iter().copied().fold(0.0, f64::max).sqrt())
}

/// All singular values of `m`, descending.
pub fn singular_values(m: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let gram = if m.nrows() <= m.ncols() { m.dot(&m.t()) } else { m.t().dot(&m) };
    let eig = jacobi_eigen(gram.view())?;
    Ok(eig.values.iter().rev().map(|l| l.max(0.0).sqrt()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random_range(-1.0..1.0);
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        a
    }

    #[test]
    fn diagonal_is_fixed_point() {
        let a = array![[3.0, 0.0], [0.0, -1.0]];
        let e = jacobi_eigen(a.view()).unwrap();
        assert_eq!(e.values.to_vec(), vec![-1.0, 3.0]);
    }

    #[test]
    fn reconstructs_random_matrices() {
        for (n, seed) in [(1, 1), (2, 2), (5, 3), (17, 4), (40, 5)] {
            let a = random_symmetric(n, seed);
            let e = jacobi_eigen(a.view()).unwrap();
            let back = (&e.vectors * &e.values).dot(&e.vectors.t());
            let err = (&back - &a).iter().map(|x| x.abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "n={n} err={err:e}");
            let ortho = e.vectors.t().dot(&e.vectors) - Array2::<f64>::eye(n);
            assert!(ortho.iter().all(|x| x.abs() < 1e-12));
            assert!(e.values.windows(2).into_iter().all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn matches_nalgebra_reference() {
        for seed in 0..20 {
            let n = 2 + (seed as usize % 9);
            let a = random_symmetric(n, 100 + seed);
            let ours = jacobi_eigen(a.view()).unwrap().values;
            let na = nalgebra::DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
            let mut theirs: Vec<f64> = na.symmetric_eigen().eigenvalues.iter().copied().collect();
            theirs.sort_by(f64::total_cmp);
            for (x, y) in ours.iter().zip(&theirs) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sqrt_squares_back() {
        let b = random_symmetric(6, 9);
        let spd = b.dot(&b.t()) + Array2::<f64>::eye(6) * 0.1;
        let r = psd_sqrt(spd.view()).unwrap();
        let err = (r.dot(&r) - &spd).iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(err < 1e-11);
    }

    #[test]
    fn singular_values_match_nalgebra_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = Array2::from_shape_fn((7, 30), |_| rng.random_range(-1.0..1.0));
        let ours = singular_values(m.view()).unwrap();
        let na = nalgebra::DMatrix::from_fn(7, 30, |i, j| m[[i, j]]);
        let mut theirs: Vec<f64> = na.svd(false, false).singular_values.iter().copied().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        for (x, y) in ours.iter().zip(&theirs) {
            assert!((x - y).abs() < 1e-10 * theirs[0]);
        }
        assert!((spectral_norm(m.view()).unwrap() - theirs[0]).abs() < 1e-10 * theirs[0]);
        assert!((spectral_norm(m.t()).unwrap() - theirs[0]).abs() < 1e-10 * theirs[0]);
    }
}
