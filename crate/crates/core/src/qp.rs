//! Bound-constrained convex quadratic programming.
//!
//! Solves `min ½ xᵀKx − bᵀx` subject to `x ≥ 0` for symmetric positive
//! definite `K`. The method is a primal active-set scheme: conjugate
//! gradient iterations run on the free face (`x_i > 0`), a projected
//! gradient expansion step adds several bounds at once when CG would leave
//! the feasible set, and proportioning steps release bounds whose
//! multiplier has turned negative (modified proportioning with reduced
//! gradient projections). Jacobi preconditioning is applied as a diagonal
//! change of variables, which maps the bound `x ≥ 0` onto itself.

use thiserror::Error;

use crate::sparse::{dot, norm_inf, CsrMatrix};

/// Ratio between chopped and free gradient above which a proportioning
/// step releases bounds.
const PROPORTIONING: f64 = 1.0;

/// Recompute the gradient from scratch this often to stop drift.
const REFRESH_EVERY: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("solver did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64, last: Vec<f64> },
    #[error("matrix is not positive definite: curvature {curvature:e} along search direction")]
    Indefinite { curvature: f64 },
    #[error("dimension mismatch: matrix is {matrix}, vector has {vector}")]
    Dimension { matrix: usize, vector: usize },
    #[error("non-positive diagonal entry {value:e} at row {row}")]
    BadDiagonal { row: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub tol: f64,
    /// Matrix-vector product budget; `None` means `50 n`.
    pub max_iter: Option<usize>,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: None }
    }
}

impl QpOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }

    fn budget(&self, n: usize) -> usize {
        self.max_iter.unwrap_or(50 * n.max(1))
    }
}

/// Primal-dual result of a bound QP.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// `Kx − b`; non-negative at the bound, zero on the free set.
    pub lambda: Vec<f64>,
    pub iterations: usize,
    /// Projected-gradient infinity norm at exit.
    pub residual: f64,
    /// Number of bounds held with a strictly positive multiplier.
    pub active: usize,
}

impl QpSolution {
    pub fn objective(&self, k: &CsrMatrix, b: &[f64]) -> f64 {
        objective(k, b, &self.x)
    }
}

pub fn objective(k: &CsrMatrix, b: &[f64], x: &[f64]) -> f64 {
    0.5 * dot(x, &k.mul_vec(x)) - dot(b, x)
}

fn check_dims(k: &CsrMatrix, b: &[f64], x0: &[f64]) -> Result<(), QpError> {
    for len in [b.len(), x0.len()] {
        if len != k.dim() {
            return Err(QpError::Dimension { matrix: k.dim(), vector: len });
        }
    }
    Ok(())
}

/// Square roots of the diagonal, used for the symmetric Jacobi scaling.
fn diagonal_scaling(k: &CsrMatrix) -> Result<Vec<f64>, QpError> {
    k.diagonal()
        .into_iter()
        .enumerate()
        .map(|(row, value)| if value > 0.0 { Ok(value.sqrt()) } else { Err(QpError::BadDiagonal { row, value }) })
        .collect()
}

/// `K̃ = S⁻¹ K S⁻¹` with `S = diag(√K_ii)`.
fn scaled_matrix(k: &CsrMatrix, s: &[f64]) -> CsrMatrix {
    let mut values = Vec::with_capacity(k.nnz());
    for i in 0..k.dim() {
        let (cols, vals) = k.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            values.push(v / (s[i] * s[j]));
        }
    }
    CsrMatrix::from_parts(k.dim(), k.row_offsets().to_vec(), k.col_indices().to_vec(), values)
}

/// Stopping test evaluated in the original variables: projected gradient
/// and complementarity both below `tol · scale`.
fn kkt_residual(x: &[f64], g: &[f64]) -> (f64, f64) {
    let mut projected = 0.0f64;
    let mut complementarity = 0.0f64;
    for (&xi, &gi) in x.iter().zip(g) {
        if xi > 0.0 {
            projected = projected.max(gi.abs());
            complementarity = complementarity.max((xi * gi).abs());
        } else {
            projected = projected.max((-gi).max(0.0));
        }
    }
    (projected, complementarity)
}

fn rhs_scale(b: &[f64]) -> f64 {
    let s = norm_inf(b);
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Solve `min ½ xᵀKx − bᵀx, x ≥ 0` starting from `x0` clipped at zero.
pub fn solve_bound_qp(k: &CsrMatrix, b: &[f64], x0: &[f64], opts: QpOptions) -> Result<QpSolution, QpError> {
    check_dims(k, b, x0)?;
    let n = k.dim();
    let s = diagonal_scaling(k)?;
    let a = scaled_matrix(k, &s);
    let scale = rhs_scale(b);
    let threshold = opts.tol * scale;
    let budget = opts.budget(n);

    // Scaled problem: y = S x, c = S⁻¹ b, gradient gy = A y − c = S⁻¹ (K x − b).
    let c: Vec<f64> = b.iter().zip(&s).map(|(bi, si)| bi / si).collect();
    let mut y: Vec<f64> = x0.iter().zip(&s).map(|(xi, si)| xi.max(0.0) * si).collect();

    // Fixed step for the projected gradient expansion, below 2 / ‖A‖.
    let alpha_bar = 1.8 / a.gershgorin_bound();

    let mut ay = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut xo = vec![0.0; n];
    let mut go = vec![0.0; n];

    let refresh = |y: &[f64], ay: &mut Vec<f64>, g: &mut Vec<f64>| {
        a.mul_vec_into(y, ay);
        for i in 0..n {
            g[i] = ay[i] - c[i];
        }
    };
    refresh(&y, &mut ay, &mut g);

    let free_gradient = |y: &[f64], g: &[f64], out: &mut Vec<f64>| {
        for i in 0..n {
            out[i] = if y[i] > 0.0 { g[i] } else { 0.0 };
        }
    };

    let mut p = vec![0.0; n];
    free_gradient(&y, &g, &mut p);
    let mut phi = p.clone();
    let mut iterations = 0usize;
    let mut since_refresh = 0usize;

    loop {
        // Convergence in the original variables.
        for i in 0..n {
            xo[i] = y[i] / s[i];
            go[i] = g[i] * s[i];
        }
        let (projected, complementarity) = kkt_residual(&xo, &go);
        if projected <= threshold && complementarity <= threshold {
            // Confirm against a freshly computed gradient before accepting.
            refresh(&y, &mut ay, &mut g);
            for i in 0..n {
                go[i] = g[i] * s[i];
            }
            let (projected, complementarity) = kkt_residual(&xo, &go);
            if projected <= threshold && complementarity <= threshold {
                let active = xo.iter().zip(&go).filter(|(x, l)| **x == 0.0 && **l > threshold).count();
                return Ok(QpSolution { x: xo, lambda: go, iterations, residual: projected, active });
            }
            free_gradient(&y, &g, &mut phi);
            p.copy_from_slice(&phi);
        }
        if iterations >= budget {
            return Err(QpError::NotConverged { iterations, residual: projected, last: xo });
        }
        iterations += 1;
        since_refresh += 1;

        // ‖β‖² against φ̃ᵀφ (reduced free gradient).
        let mut beta_sq = 0.0;
        let mut reduced = 0.0;
        for i in 0..n {
            if y[i] > 0.0 {
                let f = g[i];
                let fr = if f > 0.0 { f.min(y[i] / alpha_bar) } else { f };
                reduced += fr * f;
            } else if g[i] < 0.0 {
                beta_sq += g[i] * g[i];
            }
        }

        if beta_sq <= PROPORTIONING * PROPORTIONING * reduced {
            a.mul_vec_into(&p, &mut ap);
            let curvature = dot(&p, &ap);
            if !(curvature > 0.0) {
                if norm_inf(&p) == 0.0 {
                    // Nothing left on the free face; fall through to a fresh gradient.
                    refresh(&y, &mut ay, &mut g);
                    free_gradient(&y, &g, &mut phi);
                    p.copy_from_slice(&phi);
                    continue;
                }
                return Err(QpError::Indefinite { curvature });
            }
            let alpha_cg = dot(&g, &p) / curvature;
            let mut alpha_feasible = f64::INFINITY;
            for i in 0..n {
                if p[i] > 0.0 {
                    alpha_feasible = alpha_feasible.min(y[i] / p[i]);
                }
            }
            if alpha_cg <= alpha_feasible {
                // Conjugate gradient step on the free face.
                for i in 0..n {
                    y[i] = (y[i] - alpha_cg * p[i]).max(0.0);
                    g[i] -= alpha_cg * ap[i];
                }
                free_gradient(&y, &g, &mut phi);
                let gamma = dot(&phi, &ap) / curvature;
                for i in 0..n {
                    p[i] = phi[i] - gamma * p[i];
                }
            } else {
                // Expansion: go to the boundary, then a fixed-step projected gradient move.
                for i in 0..n {
                    y[i] = (y[i] - alpha_feasible * p[i]).max(0.0);
                    g[i] -= alpha_feasible * ap[i];
                }
                free_gradient(&y, &g, &mut phi);
                for i in 0..n {
                    y[i] = (y[i] - alpha_bar * phi[i]).max(0.0);
                }
                refresh(&y, &mut ay, &mut g);
                since_refresh = 0;
                free_gradient(&y, &g, &mut phi);
                p.copy_from_slice(&phi);
            }
        } else {
            // Proportioning: release bounds along the chopped gradient.
            let d: Vec<f64> = (0..n).map(|i| if y[i] > 0.0 { 0.0 } else { g[i].min(0.0) }).collect();
            a.mul_vec_into(&d, &mut ap);
            let curvature = dot(&d, &ap);
            if !(curvature > 0.0) {
                return Err(QpError::Indefinite { curvature });
            }
            let alpha = dot(&g, &d) / curvature;
            for i in 0..n {
                y[i] = (y[i] - alpha * d[i]).max(0.0);
                g[i] -= alpha * ap[i];
            }
            free_gradient(&y, &g, &mut phi);
            p.copy_from_slice(&phi);
        }

        if since_refresh >= REFRESH_EVERY {
            refresh(&y, &mut ay, &mut g);
            since_refresh = 0;
            free_gradient(&y, &g, &mut phi);
            p.copy_from_slice(&phi);
        }
    }
}

/// Jacobi-preconditioned conjugate gradient for `Kx = b`, stopping at
/// `‖Kx − b‖∞ ≤ tol ‖b‖∞`.
pub fn solve_unconstrained(k: &CsrMatrix, b: &[f64], x0: &[f64], opts: QpOptions) -> Result<Vec<f64>, QpError> {
    check_dims(k, b, x0)?;
    let n = k.dim();
    let b_norm = norm_inf(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let inv_diag: Vec<f64> = diagonal_scaling(k)?.iter().map(|s| 1.0 / (s * s)).collect();
    let threshold = opts.tol * b_norm;
    let budget = opts.budget(n);

    let mut x = x0.to_vec();
    let mut r = k.mul_vec(&x);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut kp = vec![0.0; n];

    for iteration in 0..=budget {
        if norm_inf(&r) <= threshold {
            // Verify with a true residual.
            let kx = k.mul_vec(&x);
            let true_res = kx.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if true_res <= threshold {
                return Ok(x);
            }
            r = kx.iter().zip(b).map(|(a, b)| b - a).collect();
            z = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
        }
        if iteration == budget {
            break;
        }
        k.mul_vec_into(&p, &mut kp);
        let curvature = dot(&p, &kp);
        if !(curvature > 0.0) {
            return Err(QpError::Indefinite { curvature });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * kp[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let kx = k.mul_vec(&x);
    let residual = kx.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Err(QpError::NotConverged { iterations: budget, residual, last: x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{dense_solve, enumerate_bound_qp, random_spd};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inf_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn separable_one_active_bound() {
        let k = CsrMatrix::from_dense(&[vec![2.0, 0.0], vec![0.0, 2.0]]);
        let sol = solve_bound_qp(&k, &[2.0, -2.0], &[0.0, 0.0], QpOptions::default()).unwrap();
        assert!(inf_diff(&sol.x, &[1.0, 0.0]) < 1e-12);
        assert!(inf_diff(&sol.lambda, &[0.0, 2.0]) < 1e-12);
        assert_eq!(sol.active, 1);
    }

    #[test]
    fn identity_with_feasible_optimum() {
        let k = CsrMatrix::identity(4);
        let b = [0.5, 0.0, 3.0, 1e-3];
        let sol = solve_bound_qp(&k, &b, &[1.0; 4], QpOptions::default()).unwrap();
        assert!(inf_diff(&sol.x, &b) < 1e-12);
        assert!(norm_inf(&sol.lambda) < 1e-12);
    }

    #[test]
    fn matches_exhaustive_active_set_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..200 {
            let n = rng.gen_range(1..=8);
            let k = random_spd(&mut rng, n);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let want = enumerate_bound_qp(&k.to_dense(), &b);
            let got = solve_bound_qp(&k, &b, &x0, QpOptions::default()).unwrap();
            assert!(inf_diff(&got.x, &want) <= 1e-8, "case {case}: {:?} vs {want:?}", got.x);
        }
    }

    #[test]
    fn kkt_conditions_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let tol = 1e-10;
        for _ in 0..50 {
            let n = rng.gen_range(5..40);
            let k = random_spd(&mut rng, n);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sol = solve_bound_qp(&k, &b, &vec![0.0; n], QpOptions::with_tol(tol)).unwrap();
            let scale = norm_inf(&b);
            let lambda = {
                let kx = k.mul_vec(&sol.x);
                kx.iter().zip(&b).map(|(a, b)| a - b).collect::<Vec<_>>()
            };
            assert!(sol.x.iter().all(|&x| x >= 0.0));
            assert!(lambda.iter().all(|&l| l >= -tol * scale));
            assert!(sol.x.iter().zip(&lambda).all(|(x, l)| (x * l).abs() <= tol * scale));
        }
    }

    #[test]
    fn objective_not_above_warm_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let n = rng.gen_range(2..20);
            let k = random_spd(&mut rng, n);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let clipped: Vec<f64> = x0.iter().map(|x| x.max(0.0)).collect();
            let sol = solve_bound_qp(&k, &b, &x0, QpOptions::default()).unwrap();
            assert!(sol.objective(&k, &b) <= objective(&k, &b, &clipped) + 1e-14);
        }
    }

    #[test]
    fn warm_start_and_scaling_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tol = 1e-10;
        for _ in 0..30 {
            let n = rng.gen_range(2..25);
            let k = random_spd(&mut rng, n);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s1 = solve_bound_qp(&k, &b, &vec![0.0; n], QpOptions::with_tol(tol)).unwrap();
            let start: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
            let s2 = solve_bound_qp(&k, &b, &start, QpOptions::with_tol(tol)).unwrap();
            assert!(inf_diff(&s1.x, &s2.x) <= 10.0 * tol);
            let alpha = 37.5;
            let bs: Vec<f64> = b.iter().map(|v| v * alpha).collect();
            let s3 = solve_bound_qp(&k.scaled(alpha), &bs, &vec![0.0; n], QpOptions::with_tol(tol)).unwrap();
            assert!(inf_diff(&s1.x, &s3.x) <= 10.0 * tol);
        }
    }

    #[test]
    fn feasible_unconstrained_optimum_is_returned() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let tol = 1e-10;
        let n = 12;
        let k = random_spd(&mut rng, n);
        let target: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let b = k.mul_vec(&target);
        let sol = solve_bound_qp(&k, &b, &vec![0.0; n], QpOptions::with_tol(tol)).unwrap();
        let free = solve_unconstrained(&k, &b, &vec![0.0; n], QpOptions::with_tol(1e-13)).unwrap();
        assert!(inf_diff(&sol.x, &free) <= 10.0 * tol);
        assert_eq!(sol.active, 0);
    }

    #[test]
    fn unconstrained_cases() {
        let k = CsrMatrix::identity(3);
        let x = solve_unconstrained(&k, &[1.0, -2.0, 3.0], &[0.0; 3], QpOptions::default()).unwrap();
        assert!(inf_diff(&x, &[1.0, -2.0, 3.0]) < 1e-14);
        let x = solve_unconstrained(&k, &[0.0; 3], &[5.0; 3], QpOptions::default()).unwrap();
        assert_eq!(x, vec![0.0; 3]);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..40 {
            let n = rng.gen_range(1..=12);
            let k = random_spd(&mut rng, n);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let want = dense_solve(&k.to_dense(), &b);
            let got = solve_unconstrained(&k, &b, &vec![0.0; n], QpOptions::with_tol(1e-13)).unwrap();
            assert!(inf_diff(&got, &want) <= 1e-10);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let k = CsrMatrix::from_dense(&[vec![1.0, 3.0], vec![3.0, 1.0]]);
        let err = solve_unconstrained(&k, &[1.0, -1.0], &[0.0, 0.0], QpOptions::default()).unwrap_err();
        assert!(matches!(err, QpError::Indefinite { .. }));
        let err = solve_bound_qp(&k, &[5.0, 3.0], &[1.0, 1.0], QpOptions::default()).unwrap_err();
        assert!(matches!(err, QpError::Indefinite { .. }), "{err:?}");
    }

    #[test]
    fn iteration_budget_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random_spd(&mut rng, 30);
        let b: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let opts = QpOptions { tol: 1e-14, max_iter: Some(2) };
        match solve_bound_qp(&k, &b, &vec![0.0; 30], opts) {
            Err(QpError::NotConverged { iterations, last, .. }) => {
                assert_eq!(iterations, 2);
                assert_eq!(last.len(), 30);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch() {
        let k = CsrMatrix::identity(3);
        assert!(matches!(
            solve_bound_qp(&k, &[1.0], &[0.0; 3], QpOptions::default()),
            Err(QpError::Dimension { matrix: 3, vector: 1 })
        ));
    }
}
