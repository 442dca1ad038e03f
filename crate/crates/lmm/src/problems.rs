//! Seed-driven generators for the benchmark families: nonnegative least
//! squares on squared variables, PSD and asymmetric matrix
//! factorization/sensing, and symmetric/asymmetric CP tensor problems.
//! Every instance carries its ground truth and an initialization at a
//! prescribed relative error.

use crate::error::{Error, Result};
use crate::losses::{
    corrupt, make_gaussian_map, CorruptionSpec, LossKind, MeasurementMap, OuterLoss,
};
use crate::params::{FlatPoint, ParamKind, ParamMap, ParamShape};
use crate::rng::{mix, Rng};
use crate::solver::relative_error;
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub x_star: FlatPoint,
    pub z_star: Vec<f64>,
    /// Loss value at z*; zero for noiseless instances, positive once
    /// measurements are corrupted.
    pub h_star: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMeta {
    pub dims: Vec<usize>,
    pub r: usize,
    pub r_star: usize,
    pub tau: f64,
    /// Measurement count; `None` encodes the identity map (pure
    /// factorization).
    pub m: Option<usize>,
    pub p_fail: f64,
    pub kappa_a: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub map: ParamMap,
    pub loss: OuterLoss,
    pub x0: FlatPoint,
    pub gt: GroundTruth,
    pub meta: InstanceMeta,
}

/// Initialization relative error mandated by the experiment protocol.
pub const INIT_REL_ERR: f64 = 1e-2;
const INIT_REL_TOL: f64 = 1e-4;

/// Dense Gaussian matrix with its singular values replaced by a linear ramp
/// from σ_max down to σ_max/κ (σ_max kept from the raw draw), so the
/// condition number is exactly κ.
pub fn conditioned_matrix(m: usize, n: usize, kappa: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(kappa >= 1.0) {
        return Err(Error::parameter("kappa", "must be at least 1"));
    }
    if m < n || n == 0 {
        return Err(Error::parameter("dims", "need m >= n >= 1"));
    }
    if n == 1 && kappa > 1.0 {
        return Err(Error::parameter(
            "kappa",
            "a single column admits only kappa = 1",
        ));
    }
    let mut rng = Rng::new(seed);
    let raw = DMatrix::from_fn(m, n, |_, _| rng.normal());
    let svd = raw.svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let sigma_max = svd.singular_values[0];
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
        s[(i, i)] = sigma_max * (1.0 - t * (1.0 - 1.0 / kappa));
    }
    Ok(u.columns(0, n) * s * vt)
}

/// Orthonormal d×r factor (column-major slice) from the QR of a Gaussian
/// draw, with the sign of each column fixed so the R diagonal is positive.
fn orthonormal_factor(d: usize, r: usize, rng: &mut Rng) -> Vec<f64> {
    assert!(d >= r);
    let raw = DMatrix::from_fn(d, r, |_, _| rng.normal());
    let qr = raw.qr();
    let mut q = qr.q();
    let rr = qr.r();
    for j in 0..r {
        if rr[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q.as_slice().to_vec()
}

/// r* values linearly spaced from 1 down to 1/τ (a single value is 1),
/// padded with zeros to length `len`.
fn spaced_spectrum(r_star: usize, tau: f64, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, slot) in out.iter_mut().take(r_star).enumerate() {
        let t = if r_star == 1 {
            0.0
        } else {
            i as f64 / (r_star - 1) as f64
        };
        *slot = 1.0 - t * (1.0 - 1.0 / tau);
    }
    out
}

/// Pad a d×r_star column-major factor with zero columns to width r.
fn pad_columns(factor: &[f64], d: usize, r_star: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * r];
    out[..d * r_star].copy_from_slice(&factor[..d * r_star]);
    out
}

/// Scale the columns of a d×r_star orthonormal factor by powers of the
/// spectrum: col_i ← col_i · spectrum[i]^exponent.
fn scale_columns(factor: &mut [f64], d: usize, spectrum: &[f64], exponent: f64) {
    for (i, s) in spectrum.iter().enumerate() {
        let w = s.powf(exponent);
        for v in &mut factor[i * d..(i + 1) * d] {
            *v *= w;
        }
    }
}

/// Find x0 = x* + s·ξ with ξ a seeded unit direction and s chosen by
/// bisection so the image relative error lands in ρ0(1 ± 1e-4).
pub fn init_relative(map: &ParamMap, x_star: &FlatPoint, rho0: f64, seed: u64) -> Result<FlatPoint> {
    if !(rho0 > 0.0) {
        return Err(Error::parameter("rho0", "must be positive"));
    }
    let n = map.domain_dim();
    let mut rng = Rng::new(seed);
    let mut xi = rng.normal_vec(n);
    let nxi = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nxi == 0.0 {
        return Err(Error::Generation("zero perturbation direction".into()));
    }
    xi.iter_mut().for_each(|v| *v /= nxi);

    let z_star = map.eval(&x_star.data)?;
    let err_at = |s: f64| -> Result<f64> {
        let x: Vec<f64> = x_star.data.iter().zip(&xi).map(|(a, b)| a + s * b).collect();
        relative_error(&map.eval(&x)?, &z_star)
    };

    // Bracket: grow s until the image error clears the target.
    let x_norm = x_star.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut hi = 1e-3 * x_norm.max(1.0);
    let mut grow = 0;
    while err_at(hi)? < rho0 {
        hi *= 2.0;
        grow += 1;
        if grow > 80 {
            return Err(Error::Generation(
                "could not bracket the initialization error".into(),
            ));
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let e = err_at(mid)?;
        if (e - rho0).abs() <= INIT_REL_TOL * rho0 {
            let x: Vec<f64> = x_star.data.iter().zip(&xi).map(|(a, b)| a + mid * b).collect();
            return FlatPoint::new(x, map.shape);
        }
        if e < rho0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Generation(format!(
        "initialization bisection failed to land within {INIT_REL_TOL} of rho0 = {rho0}"
    )))
}

fn finalize(
    map: ParamMap,
    mut loss: OuterLoss,
    x_star: FlatPoint,
    meta: InstanceMeta,
    seed: u64,
) -> Result<ProblemInstance> {
    let z_star = map.eval(&x_star.data)?;
    let h_star = loss.value(&z_star)?;
    loss.h_star = Some(h_star);
    let gt = GroundTruth {
        x_star: x_star.clone(),
        z_star,
        h_star,
    };
    let x0 = init_relative(&map, &x_star, INIT_REL_ERR, mix(seed ^ 0xA11))?;
    Ok(ProblemInstance {
        map,
        loss,
        x0,
        gt,
        meta,
    })
}

/// Nonnegative least squares through the squared-variable map:
/// minimize ‖A(x ⊙ x) − b‖ (ℓ2 or squared-ℓ2) with z* holding r* nonzeros
/// linearly spaced from 1 down to 1/τ and A conditioned to κ(A) exactly.
pub fn gen_nnls(
    r: usize,
    r_star: usize,
    tau: f64,
    m: usize,
    kappa_a: f64,
    kind: LossKind,
    seed: u64,
) -> Result<ProblemInstance> {
    if r_star < 1 || r < r_star {
        return Err(Error::parameter("r", "need r >= r_star >= 1"));
    }
    if !(tau >= 1.0) {
        return Err(Error::parameter("tau", "must be at least 1"));
    }
    if m < r {
        return Err(Error::parameter("m", "need m >= r"));
    }
    if matches!(kind, LossKind::L1) {
        return Err(Error::parameter("loss", "nnls instances use l2 or l2sq"));
    }
    let map = ParamMap::new(ParamKind::HadamardSquare, ParamShape::Vector { r })?;
    let x_star = FlatPoint::new(
        spaced_spectrum(r_star, tau, r).iter().map(|v| v.sqrt()).collect(),
        map.shape,
    )?;
    // z* as the exact image of x*, so the noiseless optimum is exactly zero.
    let z_star = map.eval(&x_star.data)?;
    let a = conditioned_matrix(m, r, kappa_a, mix(seed ^ 0xA))?;
    let sv = a.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv[0], sv[sv.len() - 1]);
    let mmap = MeasurementMap::DenseGaussian { a };
    let b = mmap.apply(&z_star)?;
    let mut loss = OuterLoss::new(kind, mmap, b)?;
    if matches!(kind, LossKind::L2) {
        loss.regularity = Some((smin, smax));
    }
    let meta = InstanceMeta {
        dims: vec![r],
        r,
        r_star,
        tau,
        m: Some(m),
        p_fail: 0.0,
        kappa_a: Some(kappa_a),
        seed,
    };
    finalize(map, loss, x_star, meta, seed)
}

/// Measurement layer shared by the matrix and tensor generators: identity or
/// Gaussian sensing of the flattened signal, with optional gross-outlier
/// corruption against an independently drawn spurious signal.
fn sensing_loss(
    signal_dim: usize,
    m: Option<usize>,
    kind: LossKind,
    p_fail: f64,
    z_star: &[f64],
    z_bar: &[f64],
    seed: u64,
) -> Result<OuterLoss> {
    let mmap = match m {
        None => MeasurementMap::Identity { m: signal_dim },
        Some(m) => {
            if m == 0 {
                return Err(Error::parameter("m", "must be positive"));
            }
            make_gaussian_map(m, signal_dim, mix(seed ^ 0xB))
        }
    };
    let b_clean = mmap.apply(z_star)?;
    let b = if p_fail > 0.0 {
        corrupt(
            &b_clean,
            &CorruptionSpec {
                p_fail,
                seed: mix(seed ^ 0xC),
            },
            &mmap,
            z_bar,
        )?
    } else {
        if !(0.0..1.0).contains(&p_fail) {
            return Err(Error::parameter("p_fail", "must lie in [0, 1)"));
        }
        b_clean
    };
    let mut loss = OuterLoss::new(kind, mmap, b)?;
    if m.is_none() && matches!(kind, LossKind::L2) {
        // h(z) = ‖z − b‖ is 1-sharp and 1-Lipschitz.
        loss.regularity = Some((1.0, 1.0));
    }
    Ok(loss)
}

/// Low-rank matrix factorization/sensing. Symmetric instances use the PSD
/// map X ↦ XXᵀ with X* = U D^{1/2}; asymmetric instances use (X, Y) ↦ XYᵀ
/// with X* = U D^{1/2}, Y* = V D^{1/2} sharing the diagonal factor, so the
/// two ground-truth factors have matching right singular structure.
#[allow(clippy::too_many_arguments)]
pub fn gen_matrix(
    sym: bool,
    d1: usize,
    d2: usize,
    r: usize,
    r_star: usize,
    tau: f64,
    m: Option<usize>,
    kind: LossKind,
    p_fail: f64,
    seed: u64,
) -> Result<ProblemInstance> {
    if r_star < 1 || r < r_star {
        return Err(Error::parameter("r", "need r >= r_star >= 1"));
    }
    if !(tau >= 1.0) {
        return Err(Error::parameter("tau", "must be at least 1"));
    }
    let dmin = if sym { d1 } else { d1.min(d2) };
    if dmin < r {
        return Err(Error::parameter("d", "need d >= r"));
    }
    if sym && d1 != d2 {
        return Err(Error::parameter("d", "symmetric instances need d1 = d2"));
    }
    let spectrum = spaced_spectrum(r_star, tau, r_star);
    let mut rng = Rng::new(mix(seed ^ 0xD));
    let (map, x_star) = if sym {
        let d = d1;
        let map = ParamMap::new(ParamKind::BurerMonteiro, ParamShape::Factor { d, r })?;
        let mut u = orthonormal_factor(d, r_star, &mut rng);
        scale_columns(&mut u, d, &spectrum, 0.5);
        (map, FlatPoint::new(pad_columns(&u, d, r_star, r), map.shape)?)
    } else {
        let map = ParamMap::new(
            ParamKind::AsymmetricFactor,
            ParamShape::FactorPair { d1, d2, r },
        )?;
        let mut u = orthonormal_factor(d1, r_star, &mut rng);
        let mut v = orthonormal_factor(d2, r_star, &mut rng);
        scale_columns(&mut u, d1, &spectrum, 0.5);
        scale_columns(&mut v, d2, &spectrum, 0.5);
        let mut data = pad_columns(&u, d1, r_star, r);
        data.extend(pad_columns(&v, d2, r_star, r));
        (map, FlatPoint::new(data, map.shape)?)
    };
    let z_star = map.eval(&x_star.data)?;
    // Independent spurious ground truth for the outlier model.
    let z_bar = {
        let mut srng = Rng::new(mix(seed ^ 0xE));
        let (mk, xb) = if sym {
            let d = d1;
            let mut u = orthonormal_factor(d, r_star, &mut srng);
            scale_columns(&mut u, d, &spectrum, 0.5);
            (map, pad_columns(&u, d, r_star, r))
        } else {
            let mut u = orthonormal_factor(d1, r_star, &mut srng);
            let mut v = orthonormal_factor(d2, r_star, &mut srng);
            scale_columns(&mut u, d1, &spectrum, 0.5);
            scale_columns(&mut v, d2, &spectrum, 0.5);
            let mut data = pad_columns(&u, d1, r_star, r);
            data.extend(pad_columns(&v, d2, r_star, r));
            (map, data)
        };
        mk.eval(&xb)?
    };
    let loss = sensing_loss(map.codomain_dim(), m, kind, p_fail, &z_star, &z_bar, seed)?;
    let meta = InstanceMeta {
        dims: if sym { vec![d1] } else { vec![d1, d2] },
        r,
        r_star,
        tau,
        m,
        p_fail,
        kappa_a: None,
        seed,
    };
    finalize(map, loss, x_star, meta, seed)
}

/// CP tensor factorization/sensing with factor columns U D^{1/3} (all factor
/// blocks share the diagonal), measured by the identity or a Gaussian map.
#[allow(clippy::too_many_arguments)]
pub fn gen_tensor(
    sym: bool,
    dims: &[usize],
    r: usize,
    r_star: usize,
    tau: f64,
    m: Option<usize>,
    kind: LossKind,
    p_fail: f64,
    seed: u64,
) -> Result<ProblemInstance> {
    if r_star < 1 || r < r_star {
        return Err(Error::parameter("r", "need r >= r_star >= 1"));
    }
    if !(tau >= 1.0) {
        return Err(Error::parameter("tau", "must be at least 1"));
    }
    let expected_dims = if sym { 1 } else { 3 };
    if dims.len() != expected_dims || dims.iter().any(|&d| d < r) {
        return Err(Error::parameter(
            "d",
            "need one dim (symmetric) or three (asymmetric), each >= r",
        ));
    }
    let spectrum = spaced_spectrum(r_star, tau, r_star);
    let mut rng = Rng::new(mix(seed ^ 0xF));
    let build = |rng: &mut Rng| -> Result<(ParamMap, Vec<f64>)> {
        if sym {
            let d = dims[0];
            let map = ParamMap::new(ParamKind::SymmetricCp, ParamShape::Factor { d, r })?;
            let mut u = orthonormal_factor(d, r_star, rng);
            scale_columns(&mut u, d, &spectrum, 1.0 / 3.0);
            Ok((map, pad_columns(&u, d, r_star, r)))
        } else {
            let (d1, d2, d3) = (dims[0], dims[1], dims[2]);
            let map = ParamMap::new(
                ParamKind::AsymmetricCp,
                ParamShape::FactorTriple { d1, d2, d3, r },
            )?;
            let mut data = Vec::with_capacity((d1 + d2 + d3) * r);
            for &d in &[d1, d2, d3] {
                let mut u = orthonormal_factor(d, r_star, rng);
                scale_columns(&mut u, d, &spectrum, 1.0 / 3.0);
                data.extend(pad_columns(&u, d, r_star, r));
            }
            Ok((map, data))
        }
    };
    let (map, x_data) = build(&mut rng)?;
    let x_star = FlatPoint::new(x_data, map.shape)?;
    let z_star = map.eval(&x_star.data)?;
    let z_bar = {
        let mut srng = Rng::new(mix(seed ^ 0x10));
        let (_, xb) = build(&mut srng)?;
        map.eval(&xb)?
    };
    let loss = sensing_loss(map.codomain_dim(), m, kind, p_fail, &z_star, &z_bar, seed)?;
    let meta = InstanceMeta {
        dims: dims.to_vec(),
        r,
        r_star,
        tau,
        m,
        p_fail,
        kappa_a: None,
        seed,
    };
    finalize(map, loss, x_star, meta, seed)
}
