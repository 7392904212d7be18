//! Dense symmetric linear algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FracError, Result};

/// Matrices up to this order are diagonalized in full.
const FULL_EIGEN_LIMIT: usize = 700;

pub type Factor = Cholesky<f64, Dyn>;

pub fn cholesky(m: DMatrix<f64>) -> Result<Factor> {
    Cholesky::new(m).ok_or_else(|| {
        FracError::Numerical("Cholesky factorization failed: matrix is not positive definite".into())
    })
}

/// Solves `m x = b` for symmetric positive definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let f = cholesky(m.clone())?;
    Ok(f.solve(&DVector::from_column_slice(b)).as_slice().to_vec())
}

pub fn matvec(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(x)).as_slice().to_vec()
}

/// Eigenpairs of a symmetric matrix in ascending order (columns of the matrix).
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// All eigenpairs, ascending.
pub fn full_eigen(m: &DMatrix<f64>) -> EigenPairs {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    EigenPairs { values, vectors }
}

/// The `k` smallest eigenpairs of a symmetric positive definite matrix.
///
/// Small matrices are diagonalized in full; larger ones use block inverse
/// iteration on a Cholesky factor with Rayleigh–Ritz extraction, iterated until
/// every requested residual `‖A x − λ x‖` is below `1e-11 ‖A‖`.
pub fn lowest_eigenpairs(m: &DMatrix<f64>, k: usize) -> Result<EigenPairs> {
    let n = m.nrows();
    let k = k.min(n);
    if n <= FULL_EIGEN_LIMIT || 4 * k >= n {
        let all = full_eigen(m);
        return Ok(EigenPairs {
            values: all.values[..k].to_vec(),
            vectors: all.vectors.columns(0, k).into_owned(),
        });
    }
    let chol = cholesky(m.clone())?;
    let p = (2 * k).max(k + 6).min(n);
    let norm = m.iter().fold(0.0f64, |a, v| a.max(v.abs())) * n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() - 0.5);
    let mut last = None;
    for _ in 0..1000 {
        let y = chol.solve(&x);
        let q = y.qr().q();
        let aq = m * &q;
        let h = q.transpose() * &aq;
        let h = 0.5 * (&h + h.transpose());
        let small = full_eigen(&h);
        x = &q * &small.vectors;
        let ax = &aq * &small.vectors;
        let mut worst = 0.0f64;
        for i in 0..k {
            let r = ax.column(i) - x.column(i) * small.values[i];
            worst = worst.max(r.norm());
        }
        last = Some(small.values);
        if worst <= 1e-11 * norm {
            let values = last.unwrap();
            return Ok(EigenPairs { values: values[..k].to_vec(), vectors: x.columns(0, k).into_owned() });
        }
    }
    Err(FracError::Numerical(format!(
        "subspace iteration did not converge (last Ritz values {:?})",
        last.map(|v| v[..k].to_vec())
    )))
}
