//! The five smooth parameterizations F with matrix-free evaluation,
//! Jacobian-vector products, adjoint products, and closed-form damped Gram
//! actions (∇F(x)ᵀ∇F(x) + λI)u, plus the damped direction solve.
//!
//! Layout conventions: factor matrices are stored column-major inside the
//! flattened point; matrix codomains are full column-major arrays (symmetric
//! outputs are not packed); third-order tensors are flattened with mode-1
//! fastest, entry (i1, i2, i3) at index i1 + d1*i2 + d1*d2*i3.

use crate::error::{Error, Result};
use crate::operators::{
    self, cg_solve, materialize_dense_capped, CgResult, CgSettings, FnOperator, LinearOperator,
    DENSE_CAP,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamShape {
    /// x ∈ ℝʳ
    Vector { r: usize },
    /// X ∈ ℝ^{d×r}
    Factor { d: usize, r: usize },
    /// (X, Y) ∈ ℝ^{d1×r} × ℝ^{d2×r}
    FactorPair { d1: usize, d2: usize, r: usize },
    /// (W, X, Y) ∈ ℝ^{d1×r} × ℝ^{d2×r} × ℝ^{d3×r}
    FactorTriple {
        d1: usize,
        d2: usize,
        d3: usize,
        r: usize,
    },
}

impl ParamShape {
    pub fn domain_dim(&self) -> usize {
        match *self {
            ParamShape::Vector { r } => r,
            ParamShape::Factor { d, r } => d * r,
            ParamShape::FactorPair { d1, d2, r } => (d1 + d2) * r,
            ParamShape::FactorTriple { d1, d2, d3, r } => (d1 + d2 + d3) * r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// x ↦ x ⊙ x
    HadamardSquare,
    /// X ↦ XXᵀ
    BurerMonteiro,
    /// (X, Y) ↦ XYᵀ
    AsymmetricFactor,
    /// X ↦ Σ_l X_l ⊗ X_l ⊗ X_l
    SymmetricCp,
    /// (W, X, Y) ↦ Σ_l W_l ⊗ X_l ⊗ Y_l
    AsymmetricCp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamMap {
    pub kind: ParamKind,
    pub shape: ParamShape,
}

/// A point in the (flattened) domain of a parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatPoint {
    pub data: Vec<f64>,
    pub shape: ParamShape,
}

impl FlatPoint {
    pub fn new(data: Vec<f64>, shape: ParamShape) -> Result<Self> {
        if data.len() != shape.domain_dim() {
            return Err(Error::dimension(shape.domain_dim(), data.len(), "flat point"));
        }
        Ok(FlatPoint { data, shape })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProjectionMode {
    /// ‖Π^x v‖ from the SVD of the dense Jacobian.
    Exact,
    /// √(vᵀ P(x, ε) v) with ε = delta_proj · λ_current.
    Surrogate { delta_proj: f64 },
}

pub const DEFAULT_DELTA_PROJ: f64 = 1e-6;

/// Singular values below this fraction of σ_max count as zero in Exact mode.
const SVD_RANK_REL_TOL: f64 = 1e-10;

impl ParamMap {
    pub fn new(kind: ParamKind, shape: ParamShape) -> Result<Self> {
        let ok = matches!(
            (kind, shape),
            (ParamKind::HadamardSquare, ParamShape::Vector { .. })
                | (ParamKind::BurerMonteiro, ParamShape::Factor { .. })
                | (ParamKind::AsymmetricFactor, ParamShape::FactorPair { .. })
                | (ParamKind::SymmetricCp, ParamShape::Factor { .. })
                | (ParamKind::AsymmetricCp, ParamShape::FactorTriple { .. })
        );
        if !ok {
            return Err(Error::parameter(
                "shape",
                format!("shape {shape:?} does not fit map kind {kind:?}"),
            ));
        }
        Ok(ParamMap { kind, shape })
    }

    pub fn domain_dim(&self) -> usize {
        self.shape.domain_dim()
    }

    pub fn codomain_dim(&self) -> usize {
        match (self.kind, self.shape) {
            (ParamKind::HadamardSquare, ParamShape::Vector { r }) => r,
            (ParamKind::BurerMonteiro, ParamShape::Factor { d, .. }) => d * d,
            (ParamKind::AsymmetricFactor, ParamShape::FactorPair { d1, d2, .. }) => d1 * d2,
            (ParamKind::SymmetricCp, ParamShape::Factor { d, .. }) => d * d * d,
            (ParamKind::AsymmetricCp, ParamShape::FactorTriple { d1, d2, d3, .. }) => d1 * d2 * d3,
            _ => unreachable!("constructor enforces kind/shape pairing"),
        }
    }

    /// Global Lipschitz constant of ∇F where one exists. The CP maps only
    /// admit local constants, so they report `None`.
    pub fn lipschitz_jacobian(&self) -> Option<f64> {
        match self.kind {
            ParamKind::HadamardSquare | ParamKind::BurerMonteiro => Some(2.0),
            ParamKind::AsymmetricFactor => Some(std::f64::consts::SQRT_2),
            ParamKind::SymmetricCp | ParamKind::AsymmetricCp => None,
        }
    }

    fn check_domain(&self, v: &[f64], what: &'static str) -> Result<()> {
        if v.len() != self.domain_dim() {
            return Err(Error::dimension(self.domain_dim(), v.len(), what));
        }
        Ok(())
    }

    fn check_codomain(&self, v: &[f64], what: &'static str) -> Result<()> {
        if v.len() != self.codomain_dim() {
            return Err(Error::dimension(self.codomain_dim(), v.len(), what));
        }
        Ok(())
    }

    /// F(x), flattened per the module conventions.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x, "eval point")?;
        Ok(match (self.kind, self.shape) {
            (ParamKind::HadamardSquare, _) => x.iter().map(|v| v * v).collect(),
            (ParamKind::BurerMonteiro, ParamShape::Factor { d, r }) => {
                let mut z = vec![0.0; d * d];
                for l in 0..r {
                    let col = &x[l * d..(l + 1) * d];
                    for j in 0..d {
                        for i in 0..d {
                            z[i + d * j] += col[i] * col[j];
                        }
                    }
                }
                z
            }
            (ParamKind::AsymmetricFactor, ParamShape::FactorPair { d1, d2, r }) => {
                let (xm, ym) = x.split_at(d1 * r);
                let mut z = vec![0.0; d1 * d2];
                for l in 0..r {
                    let xc = &xm[l * d1..(l + 1) * d1];
                    let yc = &ym[l * d2..(l + 1) * d2];
                    for j in 0..d2 {
                        for i in 0..d1 {
                            z[i + d1 * j] += xc[i] * yc[j];
                        }
                    }
                }
                z
            }
            (ParamKind::SymmetricCp, ParamShape::Factor { d, r }) => {
                let mut t = vec![0.0; d * d * d];
                for l in 0..r {
                    let c = &x[l * d..(l + 1) * d];
                    for k in 0..d {
                        for j in 0..d {
                            let cjk = c[j] * c[k];
                            for i in 0..d {
                                t[i + d * j + d * d * k] += c[i] * cjk;
                            }
                        }
                    }
                }
                t
            }
            (ParamKind::AsymmetricCp, ParamShape::FactorTriple { d1, d2, d3, r }) => {
                let (w, rest) = x.split_at(d1 * r);
                let (xs, ys) = rest.split_at(d2 * r);
                let mut t = vec![0.0; d1 * d2 * d3];
                for l in 0..r {
                    let wc = &w[l * d1..(l + 1) * d1];
                    let xc = &xs[l * d2..(l + 1) * d2];
                    let yc = &ys[l * d3..(l + 1) * d3];
                    for k in 0..d3 {
                        for j in 0..d2 {
                            let xy = xc[j] * yc[k];
                            for i in 0..d1 {
                                t[i + d1 * j + d1 * d2 * k] += wc[i] * xy;
                            }
                        }
                    }
                }
                t
            }
            _ => unreachable!(),
        })
    }

    /// ∇F(x)u, closed form.
    pub fn jvp(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x, "jvp point")?;
        self.check_domain(u, "jvp direction")?;
        Ok(match (self.kind, self.shape) {
            (ParamKind::HadamardSquare, _) => {
                x.iter().zip(u).map(|(a, b)| 2.0 * a * b).collect()
            }
            (ParamKind::BurerMonteiro, ParamShape::Factor { d, r }) => {
                // DXᵀ + XDᵀ
                let mut z = vec![0.0; d * d];
                for l in 0..r {
                    let xc = &x[l * d..(l + 1) * d];
                    let uc = &u[l * d..(l + 1) * d];
                    for j in 0..d {
                        for i in 0..d {
                            z[i + d * j] += uc[i] * xc[j] + xc[i] * uc[j];
                        }
                    }
                }
                z
            }
            (ParamKind::AsymmetricFactor, ParamShape::FactorPair { d1, d2, r }) => {
                // X̃Yᵀ + XỸᵀ
                let (xm, ym) = x.split_at(d1 * r);
                let (um, vm) = u.split_at(d1 * r);
                let mut z = vec![0.0; d1 * d2];
                for l in 0..r {
                    let xc = &xm[l * d1..(l + 1) * d1];
                    let yc = &ym[l * d2..(l + 1) * d2];
                    let uc = &um[l * d1..(l + 1) * d1];
                    let vc = &vm[l * d2..(l + 1) * d2];
                    for j in 0..d2 {
                        for i in 0..d1 {
                            z[i + d1 * j] += uc[i] * yc[j] + xc[i] * vc[j];
                        }
                    }
                }
                z
            }
            (ParamKind::SymmetricCp, ParamShape::Factor { d, r }) => {
                let mut t = vec![0.0; d * d * d];
                for l in 0..r {
                    let c = &x[l * d..(l + 1) * d];
                    let uc = &u[l * d..(l + 1) * d];
                    for k in 0..d {
                        for j in 0..d {
                            let cc = c[j] * c[k];
                            let uc_jk = uc[j] * c[k] + c[j] * uc[k];
                            for i in 0..d {
                                t[i + d * j + d * d * k] += uc[i] * cc + c[i] * uc_jk;
                            }
                        }
                    }
                }
                t
            }
            (ParamKind::AsymmetricCp, ParamShape::FactorTriple { d1, d2, d3, r }) => {
                let (w, rest) = x.split_at(d1 * r);
                let (xs, ys) = rest.split_at(d2 * r);
                let (uw, urest) = u.split_at(d1 * r);
                let (ux, uy) = urest.split_at(d2 * r);
                let mut t = vec![0.0; d1 * d2 * d3];
                for l in 0..r {
                    let wc = &w[l * d1..(l + 1) * d1];
                    let xc = &xs[l * d2..(l + 1) * d2];
                    let yc = &ys[l * d3..(l + 1) * d3];
                    let uwc = &uw[l * d1..(l + 1) * d1];
                    let uxc = &ux[l * d2..(l + 1) * d2];
                    let uyc = &uy[l * d3..(l + 1) * d3];
                    for k in 0..d3 {
                        for j in 0..d2 {
                            let xy = xc[j] * yc[k];
                            let dxy = uxc[j] * yc[k] + xc[j] * uyc[k];
                            for i in 0..d1 {
                                t[i + d1 * j + d1 * d2 * k] += uwc[i] * xy + wc[i] * dxy;
                            }
                        }
                    }
                }
                t
            }
            _ => unreachable!(),
        })
    }

    /// ∇F(x)ᵀw, closed form. Satisfies the adjoint identity against `jvp`
    /// for the plain dot product on the flattened codomain.
    pub fn vjp(&self, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x, "vjp point")?;
        self.check_codomain(w, "vjp cotangent")?;
        Ok(match (self.kind, self.shape) {
            (ParamKind::HadamardSquare, _) => {
                x.iter().zip(w).map(|(a, b)| 2.0 * a * b).collect()
            }
            (ParamKind::BurerMonteiro, ParamShape::Factor { d, r }) => {
                // (Z + Zᵀ)X
                let mut g = vec![0.0; d * r];
                for l in 0..r {
                    let xc = &x[l * d..(l + 1) * d];
                    for j in 0..d {
                        let xj = xc[j];
                        for i in 0..d {
                            g[l * d + i] += (w[i + d * j] + w[j + d * i]) * xj;
                        }
                    }
                }
                g
            }
            (ParamKind::AsymmetricFactor, ParamShape::FactorPair { d1, d2, r }) => {
                // (ZY, ZᵀX)
                let (xm, ym) = x.split_at(d1 * r);
                let mut g = vec![0.0; (d1 + d2) * r];
                let (gx, gy) = g.split_at_mut(d1 * r);
                for l in 0..r {
                    let xc = &xm[l * d1..(l + 1) * d1];
                    let yc = &ym[l * d2..(l + 1) * d2];
                    for j in 0..d2 {
                        let yj = yc[j];
                        for i in 0..d1 {
                            let z = w[i + d1 * j];
                            gx[l * d1 + i] += z * yj;
                            gy[l * d2 + j] += z * xc[i];
                        }
                    }
                }
                g
            }
            (ParamKind::SymmetricCp, ParamShape::Factor { d, r }) => {
                let mut g = vec![0.0; d * r];
                for l in 0..r {
                    let c = &x[l * d..(l + 1) * d];
                    for k in 0..d {
                        for j in 0..d {
                            let cjk = c[j] * c[k];
                            let base = d * j + d * d * k;
                            for i in 0..d {
                                // (Z_{ijk} + Z_{jik} + Z_{jki}) X_jl X_kl summed over j,k
                                let zsum = w[i + base]
                                    + w[j + d * i + d * d * k]
                                    + w[j + d * k + d * d * i];
                                g[l * d + i] += zsum * cjk;
                            }
                        }
                    }
                }
                g
            }
            (ParamKind::AsymmetricCp, ParamShape::FactorTriple { d1, d2, d3, r }) => {
                let (wm, rest) = x.split_at(d1 * r);
                let (xm, ym) = rest.split_at(d2 * r);
                let mut g = vec![0.0; (d1 + d2 + d3) * r];
                for l in 0..r {
                    let wc = &wm[l * d1..(l + 1) * d1];
                    let xc = &xm[l * d2..(l + 1) * d2];
                    let yc = &ym[l * d3..(l + 1) * d3];
                    for k in 0..d3 {
                        for j in 0..d2 {
                            let xy = xc[j] * yc[k];
                            for i in 0..d1 {
                                let z = w[i + d1 * j + d1 * d2 * k];
                                g[l * d1 + i] += z * xy;
                                g[d1 * r + l * d2 + j] += z * wc[i] * yc[k];
                                g[(d1 + d2) * r + l * d3 + k] += z * wc[i] * xc[j];
                            }
                        }
                    }
                }
                g
            }
            _ => unreachable!(),
        })
    }

    /// (∇F(x)ᵀ∇F(x) + λI)u via the closed-form Gram actions. Coincides with
    /// `vjp(x, jvp(x, u)) + λu` to roundoff.
    pub fn gram_damped_apply(&self, x: &[f64], lambda: f64, u: &[f64]) -> Result<Vec<f64>> {
        if !(lambda > 0.0) {
            return Err(Error::parameter("lambda", "damping must be positive"));
        }
        self.gram_apply(x, lambda, u)
    }

    /// Same as [`gram_damped_apply`](Self::gram_damped_apply) but admits
    /// λ = 0 (the Gauss-Newton path).
    pub fn gram_apply(&self, x: &[f64], lambda: f64, u: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x, "gram point")?;
        self.check_domain(u, "gram direction")?;
        Ok(match (self.kind, self.shape) {
            (ParamKind::HadamardSquare, _) => x
                .iter()
                .zip(u)
                .map(|(a, b)| 4.0 * a * a * b + lambda * b)
                .collect(),
            (ParamKind::BurerMonteiro, ParamShape::Factor { d, r }) => {
                // 2(X̃ XᵀX + X X̃ᵀX) + λX̃
                let xtx = gram_matrix(x, x, d, r);
                let utx = gram_matrix(u, x, d, r);
                let mut g = vec![0.0; d * r];
                factor_times_small(&mut g, x, &utx, d, r, 2.0);
                factor_times_small(&mut g, u, &xtx, d, r, 2.0);
                axpy(&mut g, lambda, u);
                g
            }
            (ParamKind::AsymmetricFactor, ParamShape::FactorPair { d1, d2, r }) => {
                let (xm, ym) = x.split_at(d1 * r);
                let (um, vm) = u.split_at(d1 * r);
                let yty = gram_matrix(ym, ym, d2, r);
                let xtx = gram_matrix(xm, xm, d1, r);
                let vty = gram_matrix(vm, ym, d2, r);
                let utx = gram_matrix(um, xm, d1, r);
                let mut g = vec![0.0; (d1 + d2) * r];
                {
                    let (gx, gy) = g.split_at_mut(d1 * r);
                    // X ỸᵀY + X̃ YᵀY + λX̃
                    factor_times_small(gx, xm, &vty, d1, r, 1.0);
                    factor_times_small(gx, um, &yty, d1, r, 1.0);
                    axpy(gx, lambda, um);
                    // Y X̃ᵀX + Ỹ XᵀX + λỸ
                    factor_times_small(gy, ym, &utx, d2, r, 1.0);
                    factor_times_small(gy, vm, &xtx, d2, r, 1.0);
                    axpy(gy, lambda, vm);
                }
                g
            }
            (ParamKind::SymmetricCp, ParamShape::Factor { d, r }) => {
                // 3X̃(XᵀX ⊙ XᵀX) + 6X(X̃ᵀX ⊙ XᵀX) + λX̃
                let xtx = gram_matrix(x, x, d, r);
                let utx = gram_matrix(u, x, d, r);
                let xtx2 = hadamard(&xtx, &xtx);
                let utx_xtx = hadamard(&utx, &xtx);
                let mut g = vec![0.0; d * r];
                factor_times_small(&mut g, u, &xtx2, d, r, 3.0);
                factor_times_small(&mut g, x, &utx_xtx, d, r, 6.0);
                axpy(&mut g, lambda, u);
                g
            }
            (ParamKind::AsymmetricCp, ParamShape::FactorTriple { d1, d2, d3, r }) => {
                let (wm, rest) = x.split_at(d1 * r);
                let (xm, ym) = rest.split_at(d2 * r);
                let (uw, urest) = u.split_at(d1 * r);
                let (ux, uy) = urest.split_at(d2 * r);
                let wtw = gram_matrix(wm, wm, d1, r);
                let xtx = gram_matrix(xm, xm, d2, r);
                let yty = gram_matrix(ym, ym, d3, r);
                let uwtw = gram_matrix(uw, wm, d1, r);
                let uxtx = gram_matrix(ux, xm, d2, r);
                let uyty = gram_matrix(uy, ym, d3, r);
                let mut g = vec![0.0; (d1 + d2 + d3) * r];
                {
                    let (gw, grest) = g.split_at_mut(d1 * r);
                    let (gx, gy) = grest.split_at_mut(d2 * r);
                    // W̃(XᵀX⊙YᵀY) + W(X̃ᵀX⊙YᵀY + XᵀX⊙ỸᵀY) + λW̃
                    factor_times_small(gw, uw, &hadamard(&xtx, &yty), d1, r, 1.0);
                    factor_times_small(
                        gw,
                        wm,
                        &add(&hadamard(&uxtx, &yty), &hadamard(&xtx, &uyty)),
                        d1,
                        r,
                        1.0,
                    );
                    axpy(gw, lambda, uw);
                    factor_times_small(gx, ux, &hadamard(&wtw, &yty), d2, r, 1.0);
                    factor_times_small(
                        gx,
                        xm,
                        &add(&hadamard(&uwtw, &yty), &hadamard(&wtw, &uyty)),
                        d2,
                        r,
                        1.0,
                    );
                    axpy(gx, lambda, ux);
                    factor_times_small(gy, uy, &hadamard(&wtw, &xtx), d3, r, 1.0);
                    factor_times_small(
                        gy,
                        ym,
                        &add(&hadamard(&uwtw, &xtx), &hadamard(&wtw, &uxtx)),
                        d3,
                        r,
                        1.0,
                    );
                    axpy(gy, lambda, uy);
                }
                g
            }
            _ => unreachable!(),
        })
    }

    /// Solve (∇F(x)ᵀ∇F(x) + λI)Δ = ∇F(x)ᵀv by conjugate gradients. The
    /// solver step is then x − γΔ. λ = 0 selects the undamped Gauss-Newton
    /// system.
    pub fn lmm_direction(
        &self,
        x: &[f64],
        lambda: f64,
        v: &[f64],
        cg: &CgSettings,
    ) -> Result<(Vec<f64>, CgResult)> {
        if !(lambda >= 0.0) {
            return Err(Error::parameter("lambda", "damping must be nonnegative"));
        }
        let rhs = self.vjp(x, v)?;
        let result = cg_solve(|u| self.gram_apply(x, lambda, u).expect("dims fixed"), &rhs, cg)?;
        Ok((result.solution.clone(), result))
    }

    /// The Jacobian ∇F(x) as a matrix-free operator.
    pub fn jacobian_operator<'a>(&'a self, x: &'a [f64]) -> impl LinearOperator + 'a {
        FnOperator {
            domain_dim: self.domain_dim(),
            codomain_dim: self.codomain_dim(),
            forward: move |u: &[f64]| self.jvp(x, u).expect("dims fixed"),
            adjoint: move |w: &[f64]| self.vjp(x, w).expect("dims fixed"),
        }
    }

    /// ‖Π^x v‖, the norm of v projected onto the range of ∇F(x).
    ///
    /// Exact mode materializes the Jacobian and projects onto the left
    /// singular vectors with nonzero singular value. Surrogate mode computes
    /// √(vᵀ P(x, ε) v) with ε = delta_proj · λ_current, which needs only one
    /// extra CG solve and converges to the exact value as ε → 0.
    pub fn projected_subgradient_norm(
        &self,
        x: &[f64],
        v: &[f64],
        mode: ProjectionMode,
        lambda_current: f64,
        cg: &CgSettings,
    ) -> Result<f64> {
        self.check_codomain(v, "projected vector")?;
        match mode {
            ProjectionMode::Exact => {
                let op = self.jacobian_operator(x);
                let jac = materialize_dense_capped(&op, DENSE_CAP)?;
                let svd = jac.svd(true, false);
                let u = svd.u.as_ref().expect("u requested");
                let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
                let tol = SVD_RANK_REL_TOL * smax;
                let vv = nalgebra::DVector::from_column_slice(v);
                let mut acc = 0.0;
                for (j, s) in svd.singular_values.iter().enumerate() {
                    if *s > tol {
                        let c = u.column(j).dot(&vv);
                        acc += c * c;
                    }
                }
                Ok(acc.sqrt())
            }
            ProjectionMode::Surrogate { delta_proj } => {
                let eps = delta_proj * lambda_current;
                if !(eps > 0.0) {
                    return Err(Error::parameter(
                        "delta_proj",
                        "surrogate projection needs delta_proj * lambda > 0",
                    ));
                }
                let rhs = self.vjp(x, v)?;
                let sol = cg_solve(|u| self.gram_apply(x, eps, u).expect("dims fixed"), &rhs, cg)?;
                Ok(operators::dot(&rhs, &sol.solution).max(0.0).sqrt())
            }
        }
    }
}

// Small dense helpers on r×r matrices stored column-major.

/// AᵀB for two d×r factor blocks; result r×r column-major.
fn gram_matrix(a: &[f64], b: &[f64], d: usize, r: usize) -> Vec<f64> {
    let mut g = vec![0.0; r * r];
    for j in 0..r {
        let bc = &b[j * d..(j + 1) * d];
        for i in 0..r {
            let ac = &a[i * d..(i + 1) * d];
            g[i + r * j] = operators::dot(ac, bc);
        }
    }
    g
}

fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn axpy(out: &mut [f64], alpha: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// out += scale · A·S where A is d×r and S is r×r (both column-major).
fn factor_times_small(out: &mut [f64], a: &[f64], s: &[f64], d: usize, r: usize, scale: f64) {
    for m in 0..r {
        for l in 0..r {
            let coeff = scale * s[l + r * m];
            if coeff == 0.0 {
                continue;
            }
            let ac = &a[l * d..(l + 1) * d];
            let oc = &mut out[m * d..(m + 1) * d];
            for i in 0..d {
                oc[i] += coeff * ac[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::materialize_dense;
    use crate::rng::Rng;
    use nalgebra::{DMatrix, DVector};

    pub(crate) fn all_test_maps() -> Vec<ParamMap> {
        vec![
            ParamMap::new(ParamKind::HadamardSquare, ParamShape::Vector { r: 6 }).unwrap(),
            ParamMap::new(ParamKind::BurerMonteiro, ParamShape::Factor { d: 5, r: 3 }).unwrap(),
            ParamMap::new(
                ParamKind::AsymmetricFactor,
                ParamShape::FactorPair { d1: 4, d2: 5, r: 2 },
            )
            .unwrap(),
            ParamMap::new(ParamKind::SymmetricCp, ParamShape::Factor { d: 4, r: 2 }).unwrap(),
            ParamMap::new(
                ParamKind::AsymmetricCp,
                ParamShape::FactorTriple {
                    d1: 3,
                    d2: 4,
                    d3: 5,
                    r: 2,
                },
            )
            .unwrap(),
        ]
    }

    #[test]
    fn hadamard_eval() {
        let map = ParamMap::new(ParamKind::HadamardSquare, ParamShape::Vector { r: 3 }).unwrap();
        assert_eq!(map.eval(&[1.0, -2.0, 0.0]).unwrap(), vec![1.0, 4.0, 0.0]);
    }

    #[test]
    fn bm_eval_outer_product() {
        let map = ParamMap::new(ParamKind::BurerMonteiro, ParamShape::Factor { d: 2, r: 1 }).unwrap();
        // X = (1, 2)ᵀ → XXᵀ = [[1,2],[2,4]], column-major (1,2,2,4)
        assert_eq!(map.eval(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0, 2.0, 4.0]);
    }

    #[test]
    fn sym_cp_rank_one_cube_of_ones() {
        let map = ParamMap::new(ParamKind::SymmetricCp, ParamShape::Factor { d: 2, r: 1 }).unwrap();
        assert_eq!(map.eval(&[1.0, 1.0]).unwrap(), vec![1.0; 8]);
    }

    #[test]
    fn hadamard_jvp_vjp() {
        let map = ParamMap::new(ParamKind::HadamardSquare, ParamShape::Vector { r: 2 }).unwrap();
        assert_eq!(map.jvp(&[1.0, 2.0], &[1.0, 1.0]).unwrap(), vec![2.0, 4.0]);
        assert_eq!(map.vjp(&[1.0, 2.0], &[1.0, 1.0]).unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn bm_jvp_vjp_hand_values() {
        let map = ParamMap::new(ParamKind::BurerMonteiro, ParamShape::Factor { d: 2, r: 1 }).unwrap();
        // X = (1,0)ᵀ, D = (0,1)ᵀ → DXᵀ + XDᵀ = [[0,1],[1,0]]
        assert_eq!(
            map.jvp(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            vec![0.0, 1.0, 1.0, 0.0]
        );
        // Z = [[0,1],[1,0]] → (Z + Zᵀ)X = (0, 2)ᵀ
        assert_eq!(
            map.vjp(&[1.0, 0.0], &[0.0, 1.0, 1.0, 0.0]).unwrap(),
            vec![0.0, 2.0]
        );
    }

    #[test]
    fn zero_direction_maps_to_zero() {
        for map in all_test_maps() {
            let n = map.domain_dim();
            let m = map.codomain_dim();
            let x: Vec<f64> = (0..n).map(|i| 0.1 * i as f64 - 0.3).collect();
            assert!(map.jvp(&x, &vec![0.0; n]).unwrap().iter().all(|&v| v == 0.0));
            assert!(map.vjp(&x, &vec![0.0; m]).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn adjoint_identity_random_probes() {
        for map in all_test_maps() {
            let mut rng = Rng::new(11);
            for _ in 0..100 {
                let x = rng.normal_vec(map.domain_dim());
                let u = rng.normal_vec(map.domain_dim());
                let w = rng.normal_vec(map.codomain_dim());
                let lhs = operators::dot(&map.jvp(&x, &u).unwrap(), &w);
                let rhs = operators::dot(&u, &map.vjp(&x, &w).unwrap());
                let scale = lhs.abs().max(rhs.abs()).max(1.0);
                assert!(
                    (lhs - rhs).abs() / scale <= 1e-10,
                    "{:?}: {lhs} vs {rhs}",
                    map.kind
                );
            }
        }
    }

    #[test]
    fn jvp_matches_central_differences() {
        for map in all_test_maps() {
            let mut rng = Rng::new(5);
            let n = map.domain_dim();
            let mut x = rng.normal_vec(n);
            let nx = operators::norm(&x);
            x.iter_mut().for_each(|v| *v /= nx);
            let mut u = rng.normal_vec(n);
            let nu = operators::norm(&u);
            u.iter_mut().for_each(|v| *v /= nu);
            let t = 1e-5;
            let xp: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + t * b).collect();
            let xm: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a - t * b).collect();
            let fd: Vec<f64> = map
                .eval(&xp)
                .unwrap()
                .iter()
                .zip(map.eval(&xm).unwrap())
                .map(|(p, m)| (p - m) / (2.0 * t))
                .collect();
            let jv = map.jvp(&x, &u).unwrap();
            let err: f64 = fd
                .iter()
                .zip(&jv)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(err <= 1e-6, "{:?}: fd error {err}", map.kind);
        }
    }

    #[test]
    fn gram_closed_form_matches_composition() {
        for map in all_test_maps() {
            let mut rng = Rng::new(3);
            for _ in 0..20 {
                let x = rng.normal_vec(map.domain_dim());
                let u = rng.normal_vec(map.domain_dim());
                let lambda = 0.37;
                let closed = map.gram_damped_apply(&x, lambda, &u).unwrap();
                let mut composed = map.vjp(&x, &map.jvp(&x, &u).unwrap()).unwrap();
                axpy(&mut composed, lambda, &u);
                for (a, b) in closed.iter().zip(&composed) {
                    let scale = a.abs().max(b.abs()).max(1.0);
                    assert!((a - b).abs() / scale <= 1e-12, "{:?}: {a} vs {b}", map.kind);
                }
            }
        }
    }

    #[test]
    fn gram_hand_values() {
        let had = ParamMap::new(ParamKind::HadamardSquare, ParamShape::Vector { r: 2 }).unwrap();
        assert_eq!(
            had.gram_damped_apply(&[1.0, 2.0], 0.5, &[1.0, 1.0]).unwrap(),
            vec![4.5, 16.5]
        );
        let bm = ParamMap::new(ParamKind::BurerMonteiro, ParamShape::Factor { d: 2, r: 1 }).unwrap();
        // Composition oracle: vjp(jvp((0,1))) + λ(0,1) = (0,2) + (0,1) = (0,3)
        assert_eq!(
            bm.gram_damped_apply(&[1.0, 0.0], 1.0, &[0.0, 1.0]).unwrap(),
            vec![0.0, 3.0]
        );
    }

    #[test]
    fn gram_rejects_nonpositive_lambda() {
        let map = ParamMap::new(ParamKind::HadamardSquare, ParamShape::Vector { r: 2 }).unwrap();
        assert!(map.gram_damped_apply(&[1.0, 1.0], 0.0, &[1.0, 1.0]).is_err());
        assert!(map.gram_damped_apply(&[1.0, 1.0], -1.0, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn lmm_direction_diagonal_case() {
        let map = ParamMap::new(ParamKind::HadamardSquare, ParamShape::Vector { r: 2 }).unwrap();
        let (delta, res) = map
            .lmm_direction(&[1.0, 2.0], 0.5, &[9.0, 33.0], &CgSettings {
                max_iters: 50,
                residual_tol: 1e-12,
            })
            .unwrap();
        assert!(res.converged);
        assert!((delta[0] - 4.0).abs() < 1e-9);
        assert!((delta[1] - 8.0).abs() < 1e-9);
    }

    #[test]
    fn lmm_direction_zero_v() {
        for map in all_test_maps() {
            let x = vec![0.25; map.domain_dim()];
            let v = vec![0.0; map.codomain_dim()];
            let (delta, _) = map
                .lmm_direction(&x, 0.1, &v, &CgSettings::default())
                .unwrap();
            assert!(delta.iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn lmm_direction_matches_dense_solve() {
        for map in all_test_maps() {
            let mut rng = Rng::new(77);
            let x = rng.normal_vec(map.domain_dim());
            let v = rng.normal_vec(map.codomain_dim());
            let lambda = 0.2;
            let (delta, _) = map
                .lmm_direction(&x, lambda, &v, &CgSettings {
                    max_iters: 500,
                    residual_tol: 1e-14,
                })
                .unwrap();
            let op = map.jacobian_operator(&x);
            let jac = materialize_dense(&op).unwrap();
            let n = map.domain_dim();
            let gram = jac.transpose() * &jac + DMatrix::identity(n, n) * lambda;
            let rhs = jac.transpose() * DVector::from_column_slice(&v);
            let dense = gram.lu().solve(&rhs).unwrap();
            let diff: f64 = delta
                .iter()
                .zip(dense.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let scale = dense.norm().max(1.0);
            assert!(diff / scale <= 1e-8, "{:?}: {}", map.kind, diff / scale);
        }
    }

    #[test]
    fn projected_norm_in_range_vector() {
        // v in the range of the Jacobian projects to itself.
        let map = ParamMap::new(ParamKind::HadamardSquare, ParamShape::Vector { r: 3 }).unwrap();
        let x = [1.0, 2.0, 3.0];
        let v = map.jvp(&x, &[0.3, -0.1, 0.2]).unwrap();
        let pn = map
            .projected_subgradient_norm(&x, &v, ProjectionMode::Exact, 0.0, &CgSettings::default())
            .unwrap();
        assert!((pn - operators::norm(&v)).abs() < 1e-10);
    }

    #[test]
    fn projected_norm_zero_column() {
        // Hadamard at x = (1, 0): range is span(e1), so v = (3, 4) projects to 3.
        let map = ParamMap::new(ParamKind::HadamardSquare, ParamShape::Vector { r: 2 }).unwrap();
        let pn = map
            .projected_subgradient_norm(
                &[1.0, 0.0],
                &[3.0, 4.0],
                ProjectionMode::Exact,
                0.0,
                &CgSettings::default(),
            )
            .unwrap();
        assert!((pn - 3.0).abs() < 1e-10);
    }

    #[test]
    fn surrogate_projected_norm_close_to_exact() {
        let map = ParamMap::new(ParamKind::BurerMonteiro, ParamShape::Factor { d: 6, r: 2 }).unwrap();
        let mut rng = Rng::new(21);
        let x = rng.normal_vec(map.domain_dim());
        let v = rng.normal_vec(map.codomain_dim());
        let cg = CgSettings {
            max_iters: 500,
            residual_tol: 1e-16,
        };
        let exact = map
            .projected_subgradient_norm(&x, &v, ProjectionMode::Exact, 0.0, &cg)
            .unwrap();
        let sur = map
            .projected_subgradient_norm(
                &x,
                &v,
                ProjectionMode::Surrogate { delta_proj: 1e-6 },
                1.0,
                &cg,
            )
            .unwrap();
        assert!((sur - exact).abs() / exact <= 1e-3, "{sur} vs {exact}");
    }

    #[test]
    fn lipschitz_jacobian_constants() {
        // ‖∇F(x) − ∇F(y)‖_op ≤ L_∇F ‖x − y‖ on random pairs, dense oracle.
        for map in all_test_maps() {
            let Some(lip) = map.lipschitz_jacobian() else { continue };
            let mut rng = Rng::new(13);
            for _ in 0..10 {
                let x = rng.normal_vec(map.domain_dim());
                let y = rng.normal_vec(map.domain_dim());
                let jx = materialize_dense(&map.jacobian_operator(&x)).unwrap();
                let jy = materialize_dense(&map.jacobian_operator(&y)).unwrap();
                let opnorm = (jx - jy).svd(false, false).singular_values[0];
                let dist: f64 = x
                    .iter()
                    .zip(&y)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(opnorm <= lip * dist + 1e-10, "{:?}", map.kind);
            }
        }
    }

    #[test]
    fn damped_projection_nonexpansive() {
        // ‖P(x,λ)v‖ ≤ ‖v‖ and ‖P(x,λ)v‖ ≤ ‖Π^x v‖ on dense instances.
        for map in all_test_maps() {
            let mut rng = Rng::new(31);
            let x = rng.normal_vec(map.domain_dim());
            let jac = materialize_dense(&map.jacobian_operator(&x)).unwrap();
            let n = map.domain_dim();
            for &lambda in &[0.1, 1.0, 10.0] {
                let gram = jac.transpose() * &jac + DMatrix::identity(n, n) * lambda;
                let inv = gram.clone().lu();
                for _ in 0..10 {
                    let v = DVector::from_vec(rng.normal_vec(map.codomain_dim()));
                    let pv = &jac * inv.solve(&(jac.transpose() * &v)).unwrap();
                    let vn = v.norm();
                    assert!(pv.norm() <= vn + 1e-10 * vn.max(1.0));
                    let pi = map
                        .projected_subgradient_norm(
                            &x,
                            v.as_slice(),
                            ProjectionMode::Exact,
                            0.0,
                            &CgSettings::default(),
                        )
                        .unwrap();
                    assert!(pv.norm() <= pi + 1e-8 * pi.max(1.0));
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_errors() {
        let map = ParamMap::new(ParamKind::BurerMonteiro, ParamShape::Factor { d: 3, r: 2 }).unwrap();
        assert!(map.eval(&[0.0; 5]).is_err());
        assert!(map.jvp(&[0.0; 6], &[0.0; 5]).is_err());
        assert!(map.vjp(&[0.0; 6], &[0.0; 8]).is_err());
        assert!(ParamMap::new(ParamKind::HadamardSquare, ParamShape::Factor { d: 2, r: 2 }).is_err());
    }

    #[test]
    fn flat_point_length_checked() {
        assert!(FlatPoint::new(vec![0.0; 3], ParamShape::Vector { r: 3 }).is_ok());
        assert!(FlatPoint::new(vec![0.0; 2], ParamShape::Vector { r: 3 }).is_err());
    }

    #[test]
    fn bm_jacobian_probe_matches_finite_difference() {
        // Probing e2 at X = (1,0)ᵀ gives vec([[0,1],[1,0]]).
        let map = ParamMap::new(ParamKind::BurerMonteiro, ParamShape::Factor { d: 2, r: 1 }).unwrap();
        let op = map.jacobian_operator(&[1.0, 0.0]);
        let dense = materialize_dense(&op).unwrap();
        assert_eq!(dense.column(1).as_slice(), &[0.0, 1.0, 1.0, 0.0]);
        // Hadamard at x = (1, 2): ∇F = 2 diag(x)
        let had = ParamMap::new(ParamKind::HadamardSquare, ParamShape::Vector { r: 2 }).unwrap();
        let hd = materialize_dense(&had.jacobian_operator(&[1.0, 2.0])).unwrap();
        assert_eq!(hd, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]));
    }
}
