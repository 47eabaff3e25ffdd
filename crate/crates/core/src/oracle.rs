//! Dense reference solvers for tests.
//!
//! These share no code with the sparse solvers they check: linear systems go
//! through nalgebra's LU factorization and the bound QP is solved by trying
//! every active set.

use nalgebra::{DMatrix, DVector};

use crate::sparse::CsrMatrix;

/// `AᵀA + I/2` for a random `A` with entries drawn from `sample`.
pub fn random_spd_with(n: usize, mut sample: impl FnMut() -> f64) -> CsrMatrix {
    let a = DMatrix::from_fn(n, n, |_, _| sample());
    let k = a.transpose() * &a + DMatrix::identity(n, n) * 0.5;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| k[(i, j)]).collect()).collect();
    CsrMatrix::from_dense(&rows)
}

#[cfg(test)]
pub(crate) fn random_spd(rng: &mut impl rand::Rng, n: usize) -> CsrMatrix {
    random_spd_with(n, || rng.gen_range(-1.0..1.0))
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

pub fn dense_solve(rows: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let x = to_matrix(rows).lu().solve(&DVector::from_column_slice(b)).expect("singular system");
    x.iter().copied().collect()
}

/// Solve `min ½ xᵀKx − bᵀx, x ≥ 0` by enumerating all `2ⁿ` free sets and
/// keeping the feasible KKT point with the lowest objective.
pub fn enumerate_bound_qp(rows: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = rows.len();
    assert!(n <= 20, "enumeration is exponential");
    let k = to_matrix(rows);
    let tol = 1e-12 * (1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1u32 << n) {
        let free: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mut x = vec![0.0; n];
        if !free.is_empty() {
            let kff = DMatrix::from_fn(free.len(), free.len(), |i, j| k[(free[i], free[j])]);
            let bf = DVector::from_iterator(free.len(), free.iter().map(|&i| b[i]));
            let Some(xf) = kff.lu().solve(&bf) else { continue };
            for (slot, &i) in free.iter().enumerate() {
                x[i] = xf[slot];
            }
        }
        if x.iter().any(|&v| v < -tol) {
            continue;
        }
        let kx = &k * DVector::from_column_slice(&x);
        let dual_ok = (0..n).all(|i| mask & (1 << i) != 0 || kx[i] - b[i] >= -tol);
        if !dual_ok {
            continue;
        }
        let obj = 0.5 * x.iter().zip(kx.iter()).map(|(a, b)| a * b).sum::<f64>()
            - x.iter().zip(b).map(|(a, b)| a * b).sum::<f64>();
        if best.as_ref().map_or(true, |(o, _)| obj < *o) {
            best = Some((obj, x.iter().map(|v| v.max(0.0)).collect()));
        }
    }
    best.expect("no KKT point found").1
}

/// Eigenvalues of a dense symmetric matrix, ascending.
pub fn symmetric_eigenvalues(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut e: Vec<f64> = to_matrix(rows).symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}
