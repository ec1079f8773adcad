//! Krylov solvers for the symmetric saddle-point system, the block-diagonal
//! preconditioner and its direct and multigrid backends.

mod amg;
mod direct;
mod precond;

pub use amg::{Amg, AmgConfig};
pub use direct::SparseFactor;
pub use precond::{
    BlockPreconditioner, InverseBackend, SaddleSolver, SchurBlock, SolveMethod, SolveOutcome, SolverConfig,
    SymmetricGaussSeidel, VelocityBlock, VelocityKind,
};

use crate::error::{Error, Result};
use crate::sparse::{dot, Csr};

/// A linear map on `R^n`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply(x, &mut y);
        y
    }
}

impl LinearOperator for Csr {
    fn dim(&self) -> usize {
        self.nrows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec_into(x, y);
    }
}

pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
}

/// Deterministic, non-degenerate probe vectors for setup-time checks.
pub fn probe_vector(n: usize, seed: usize) -> Vec<f64> {
    (0..n)
        .map(|i| ((i as f64 + 1.0) * (0.7311 + 0.1379 * seed as f64)).sin() + 0.25 * ((i * (seed + 3)) as f64).cos())
        .collect()
}

/// Largest relative defect `|x^T A y - y^T A x|` over `pairs` probe pairs.
pub fn symmetry_defect(op: &dyn LinearOperator, pairs: usize) -> f64 {
    let n = op.dim();
    let mut worst = 0.0f64;
    for s in 0..pairs {
        let x = probe_vector(n, 2 * s);
        let y = probe_vector(n, 2 * s + 1);
        let ax = op.apply_vec(&x);
        let ay = op.apply_vec(&y);
        let a = dot(&x, &ay);
        let b = dot(&y, &ax);
        let scale = (dot(&ax, &ax) * dot(&y, &y)).sqrt().max(f64::MIN_POSITIVE);
        worst = worst.max((a - b).abs() / scale);
    }
    worst
}

#[derive(Clone, Debug)]
pub struct KrylovOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual in the norm the method monitors.
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Preconditioned MinRes from a zero initial guess. Stops when the
/// preconditioned residual norm has dropped by `tol`.
pub fn minres(
    op: &dyn LinearOperator,
    prec: &dyn LinearOperator,
    rhs: &[f64],
    tol: f64,
    maxit: usize,
) -> Result<KrylovOutcome> {
    let n = op.dim();
    let mut x = vec![0.0; n];
    let mut r1 = rhs.to_vec();
    let mut y = prec.apply_vec(&r1);
    let beta1_sq = dot(&r1, &y);
    if beta1_sq < 0.0 {
        return Err(Error::Factorization("preconditioner is not positive definite".into()));
    }
    let beta1 = beta1_sq.sqrt();
    if beta1 == 0.0 {
        return Ok(KrylovOutcome {
            x,
            iterations: 0,
            residual: 0.0,
            history: vec![0.0],
        });
    }
    let mut r2 = r1.clone();
    let mut history = vec![1.0];
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    for itn in 1..=maxit {
        let s = 1.0 / beta;
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = s * yi;
        }
        op.apply(&v, &mut y);
        if itn >= 2 {
            let c = beta / oldb;
            for (yi, ri) in y.iter_mut().zip(&r1) {
                *yi -= c * ri;
            }
        }
        let alfa = dot(&v, &y);
        let c = alfa / beta;
        for (yi, ri) in y.iter_mut().zip(&r2) {
            *yi -= c * ri;
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        prec.apply(&r2, &mut y);
        oldb = beta;
        let bsq = dot(&r2, &y);
        if bsq < 0.0 {
            return Err(Error::Factorization("preconditioner is not positive definite".into()));
        }
        beta = bsq.sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let denom = 1.0 / gamma;
        for i in 0..n {
            let w1 = w2[i];
            w2[i] = w[i];
            w[i] = (v[i] - oldeps * w1 - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }
        let rel = phibar / beta1;
        debug_assert!(rel <= history.last().copied().unwrap_or(1.0) * (1.0 + 1e-12));
        history.push(rel);
        if rel <= tol || beta == 0.0 {
            return Ok(KrylovOutcome {
                x,
                iterations: itn,
                residual: rel,
                history,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: maxit,
        residual: *history.last().unwrap(),
        history,
    })
}

/// Preconditioned conjugate gradients from a zero initial guess; stops on the
/// relative Euclidean residual.
pub fn pcg(
    op: &dyn LinearOperator,
    prec: &dyn LinearOperator,
    rhs: &[f64],
    tol: f64,
    maxit: usize,
) -> Result<KrylovOutcome> {
    let n = op.dim();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let r0 = dot(&r, &r).sqrt();
    let mut history = vec![1.0];
    if r0 == 0.0 {
        return Ok(KrylovOutcome {
            x,
            iterations: 0,
            residual: 0.0,
            history,
        });
    }
    let mut z = prec.apply_vec(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for itn in 1..=maxit {
        op.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / r0;
        history.push(rel);
        if rel <= tol {
            return Ok(KrylovOutcome {
                x,
                iterations: itn,
                residual: rel,
                history,
            });
        }
        prec.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let b = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + b * p[i];
        }
    }
    Err(Error::NonConvergence {
        iterations: maxit,
        residual: *history.last().unwrap(),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_converges_in_one_iteration() {
        let b = vec![1.0, -2.0, 3.0, 0.5];
        let out = minres(&Identity(4), &Identity(4), &b, 1e-12, 10).unwrap();
        assert_eq!(out.iterations, 1);
        for (a, c) in out.x.iter().zip(&b) {
            assert!((a - c).abs() < 1e-14);
        }
    }

    #[test]
    fn small_indefinite_system_matches_dense_solve() {
        let a = Csr::from_triplets(
            4,
            4,
            vec![(0, 0, 2.0), (1, 1, 2.0), (0, 2, 1.0), (2, 0, 1.0), (1, 3, 1.0), (3, 1, 1.0)],
        );
        let b = [1.0; 4];
        let out = minres(&a, &Identity(4), &b, 1e-14, 50).unwrap();
        let exact = a.to_dense().lu().solve(&nalgebra::DVector::from_column_slice(&b)).unwrap();
        for i in 0..4 {
            assert!((out.x[i] - exact[i]).abs() < 1e-10);
        }
        // hand elimination: x = (1, 1, -1, -1)
        assert!((out.x[2] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn residual_history_is_monotone_and_error_carries_it() {
        let n = 60;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, if i % 3 == 0 { -1.0 } else { 2.0 + i as f64 / 7.0 }));
            if i + 1 < n {
                t.push((i, i + 1, 0.4));
                t.push((i + 1, i, 0.4));
            }
        }
        let a = Csr::from_triplets(n, n, t);
        let b = probe_vector(n, 1);
        let out = minres(&a, &Identity(n), &b, 1e-10, 500).unwrap();
        assert!(out.history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        let r = a.mul_vec(&out.x);
        let res = r.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(res < 1e-8 * dot(&b, &b).sqrt());
        match minres(&a, &Identity(n), &b, 1e-14, 3) {
            Err(Error::NonConvergence { iterations, history, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 4);
            }
            _ => panic!("expected non-convergence"),
        }
    }

    #[test]
    fn operators_are_linear() {
        let a = Csr::from_triplets(3, 3, vec![(0, 0, 1.0), (0, 2, 2.0), (1, 1, -3.0), (2, 0, 0.5)]);
        let x = probe_vector(3, 0);
        let y = probe_vector(3, 1);
        let alpha = 0.37;
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p + alpha * q).collect();
        let lhs = a.apply_vec(&xy);
        let (ax, ay) = (a.apply_vec(&x), a.apply_vec(&y));
        for i in 0..3 {
            assert!((lhs[i] - ax[i] - alpha * ay[i]).abs() < 1e-12);
        }
        assert!(symmetry_defect(&a, 4) > 1e-3);
    }
}
