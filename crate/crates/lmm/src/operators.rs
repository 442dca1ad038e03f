//! Matrix-free linear operators and the conjugate gradient solver used for
//! every damped normal-equation solve.

use crate::error::{Error, Result};
use crate::rng::Rng;
use nalgebra::DMatrix;

/// Default cap on `domain_dim * codomain_dim` for dense materialization.
pub const DENSE_CAP: usize = 4_000_000;

/// A matrix-free linear operator with an explicit adjoint.
///
/// Operators are immutable after construction and safe to share across
/// threads.
pub trait LinearOperator: Sync {
    fn domain_dim(&self) -> usize;
    fn codomain_dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Vec<f64>;
    fn adjoint_apply(&self, w: &[f64]) -> Vec<f64>;
}

/// Operator defined by a pair of closures; convenient for tests and probes.
pub struct FnOperator<A, B>
where
    A: Fn(&[f64]) -> Vec<f64> + Sync,
    B: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pub domain_dim: usize,
    pub codomain_dim: usize,
    pub forward: A,
    pub adjoint: B,
}

impl<A, B> LinearOperator for FnOperator<A, B>
where
    A: Fn(&[f64]) -> Vec<f64> + Sync,
    B: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn domain_dim(&self) -> usize {
        self.domain_dim
    }
    fn codomain_dim(&self) -> usize {
        self.codomain_dim
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (self.forward)(v)
    }
    fn adjoint_apply(&self, w: &[f64]) -> Vec<f64> {
        (self.adjoint)(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub max_iters: usize,
    /// Threshold on the Euclidean norm of the residual.
    pub residual_tol: f64,
}

impl Default for CgSettings {
    fn default() -> Self {
        CgSettings {
            max_iters: 100,
            residual_tol: 1e-25,
        }
    }
}

impl CgSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::parameter("max_iters", "must be at least 1"));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(Error::parameter("residual_tol", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgResult {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub converged: bool,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Conjugate gradients on a symmetric (positive definite for damped systems)
/// operator, starting from the zero vector. Deterministic given inputs.
pub fn cg_solve<G>(gram_apply: G, rhs: &[f64], settings: &CgSettings) -> Result<CgResult>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    settings.validate()?;
    let n = rhs.len();
    let mut x = vec![0.0; n];
    // x0 = 0, so r0 = rhs.
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rs_old = dot(&r, &r);
    let mut res_norm = rs_old.sqrt();
    if res_norm <= settings.residual_tol {
        return Ok(CgResult {
            solution: x,
            iterations: 0,
            final_residual_norm: res_norm,
            converged: true,
        });
    }
    for k in 0..settings.max_iters {
        let ap = gram_apply(&p);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap == 0.0 {
            if pap == 0.0 {
                // Exact stagnation; return the current iterate.
                break;
            }
            return Err(Error::CgBreakdown { iteration: k });
        }
        let alpha = rs_old / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        if !rs_new.is_finite() {
            return Err(Error::CgBreakdown { iteration: k });
        }
        res_norm = rs_new.sqrt();
        if res_norm <= settings.residual_tol {
            return Ok(CgResult {
                solution: x,
                iterations: k + 1,
                final_residual_norm: res_norm,
                converged: true,
            });
        }
        let beta = rs_new / rs_old;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs_old = rs_new;
    }
    Ok(CgResult {
        solution: x,
        iterations: settings.max_iters,
        final_residual_norm: res_norm,
        converged: res_norm <= settings.residual_tol,
    })
}

/// Materialize an operator column by column by probing with basis vectors.
pub fn materialize_dense(op: &dyn LinearOperator) -> Result<DMatrix<f64>> {
    materialize_dense_capped(op, DENSE_CAP)
}

pub fn materialize_dense_capped(op: &dyn LinearOperator, cap: usize) -> Result<DMatrix<f64>> {
    let (m, n) = (op.codomain_dim(), op.domain_dim());
    if m.saturating_mul(n) > cap {
        return Err(Error::SizeGuard {
            rows: m,
            cols: n,
            cap,
        });
    }
    let mut out = DMatrix::zeros(m, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = op.apply(&e);
        for i in 0..m {
            out[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    Ok(out)
}

/// Lower estimate of the operator norm by power iteration on `opᵀop`.
pub fn op_norm_estimate(op: &dyn LinearOperator, iters: usize, seed: u64) -> f64 {
    assert!(iters >= 1);
    let n = op.domain_dim();
    let mut rng = Rng::new(seed);
    let mut v = rng.normal_vec(n);
    let mut estimate = 0.0f64;
    for _ in 0..iters {
        let nv = norm(&v);
        if nv == 0.0 {
            return estimate;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let av = op.apply(&v);
        estimate = estimate.max(norm(&av));
        v = op.adjoint_apply(&av);
    }
    estimate
}
