//! Dense linear algebra used by the kernel and coalescent modules: an LU
//! solver with partial pivoting and a cyclic Jacobi eigensolver for symmetric
//! matrices.  Problem sizes here are desk-scale (a few thousand unknowns), so
//! plain dense routines beat pulling in an external LAPACK build.

use ndarray::{Array1, Array2};

use crate::{Error, Result};

/// Solve `a x = b` in place via LU with partial pivoting.
pub fn lu_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(b.len(), n);
    let mut lu = a.clone();
    let mut x = b.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let mut pivot = col;
        let mut best = lu[[col, col]].abs();
        for row in col + 1..n {
            let v = lu[[row, col]].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best < 1e-300 {
            return Err(Error::NoConvergence("singular matrix in LU solve".into()));
        }
        if pivot != col {
            perm.swap(pivot, col);
            for k in 0..n {
                let tmp = lu[[col, k]];
                lu[[col, k]] = lu[[pivot, k]];
                lu[[pivot, k]] = tmp;
            }
            let tmp = x[col];
            x[col] = x[pivot];
            x[pivot] = tmp;
        }
        let inv = 1.0 / lu[[col, col]];
        for row in col + 1..n {
            let factor = lu[[row, col]] * inv;
            if factor != 0.0 {
                lu[[row, col]] = factor;
                for k in col + 1..n {
                    lu[[row, k]] -= factor * lu[[col, k]];
                }
                x[row] -= factor * x[col];
            } else {
                lu[[row, col]] = 0.0;
            }
        }
    }
    for row in (0..n).rev() {
        let mut acc = x[row];
        for k in row + 1..n {
            acc -= lu[[row, k]] * x[k];
        }
        x[row] = acc / lu[[row, row]];
    }
    Ok(x)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, returned in
/// descending order.  `tol` bounds the final off-diagonal Frobenius mass
/// relative to the matrix norm.
pub fn jacobi_eigenvalues(matrix: &Array2<f64>, tol: f64) -> Result<Vec<f64>> {
    let n = matrix.nrows();
    assert_eq!(matrix.ncols(), n);
    let mut a = matrix.clone();
    let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let off: f64 = {
            let mut s = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    s += a[[i, j]] * a[[i, j]];
                }
            }
            (2.0 * s).sqrt()
        };
        if off <= tol * norm {
            let mut eig: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
            eig.sort_by(|p, q| q.total_cmp(p));
            return Ok(eig);
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    Err(Error::NoConvergence(
        "Jacobi eigensolver did not reach tolerance".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn lu_solves_a_small_system() {
        let a = array![[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let b = array![1.0, 2.0, 3.0];
        let x = lu_solve(&a, &b).unwrap();
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // eigenvalues of [[2,1],[1,2]] are 3 and 1
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let eig = jacobi_eigenvalues(&a, 1e-10).unwrap();
        assert!((eig[0] - 3.0).abs() < 1e-10);
        assert!((eig[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn jacobi_handles_a_random_symmetric_matrix() {
        use crate::rng::{domain, substream};
        use rand::Rng;
        let n = 12;
        let mut rng = substream(5, domain::WALK, 9);
        let mut a = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random::<f64>() - 0.5;
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        let eig = jacobi_eigenvalues(&a, 1e-10).unwrap();
        let trace: f64 = (0..n).map(|i| a[[i, i]]).sum();
        let frob: f64 = a.iter().map(|v| v * v).sum();
        assert!((eig.iter().sum::<f64>() - trace).abs() < 1e-9);
        assert!((eig.iter().map(|v| v * v).sum::<f64>() - frob).abs() < 1e-8);
    }
}
