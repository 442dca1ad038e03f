//! Dense verification oracles: closed-form Jacobian spectra for the matrix
//! maps, constant-rank predictions for the factorization maps, and the
//! weak-alignment probe. These live outside the solver hot path; they turn
//! the structural claims behind the method into executable checks.

use crate::error::{Error, Result};
use crate::operators::{materialize_dense, norm};
use crate::params::{ParamKind, ParamMap, ParamShape};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Eigenvalues of the dense ∇F∇Fᵀ, ascending.
    pub computed_eigenvalues: Vec<f64>,
    /// Closed-form prediction, ascending, same length.
    pub predicted_eigenvalues: Vec<f64>,
    pub max_abs_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    /// Number of top singular directions needed to capture the error.
    pub j: usize,
    /// ‖(I − Π_j^x)(z − z*)‖ / ‖z − z*‖ at that j.
    pub residual_ratio: f64,
    /// (σ_j^x)², the squared j-th singular value of ∇F(x).
    pub sigma_j_sq: f64,
}

const RANK_REL_TOL: f64 = 1e-8;

fn report(mut computed: Vec<f64>, mut predicted: Vec<f64>) -> SpectrumReport {
    computed.sort_by(|a, b| a.partial_cmp(b).unwrap());
    predicted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    debug_assert_eq!(computed.len(), predicted.len());
    let max_abs_deviation = computed
        .iter()
        .zip(&predicted)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    SpectrumReport {
        computed_eigenvalues: computed,
        predicted_eigenvalues: predicted,
        max_abs_deviation,
    }
}

fn gram_eigenvalues(map: &ParamMap, x: &[f64]) -> Result<Vec<f64>> {
    let jac = materialize_dense(&map.jacobian_operator(x))?;
    let gram = &jac * jac.transpose();
    Ok(gram.symmetric_eigen().eigenvalues.iter().cloned().collect())
}

/// Spectrum of ∇F∇Fᵀ for the PSD map X ↦ XXᵀ: the multiset
/// {2(σ_i²(X) + σ_j²(X)) : 1 ≤ i ≤ j ≤ d} on the symmetric part of the
/// codomain, padded with d(d−1)/2 zeros for the antisymmetric part.
pub fn check_bm_spectrum(x: &[f64], d: usize, r: usize) -> Result<SpectrumReport> {
    let map = ParamMap::new(ParamKind::BurerMonteiro, ParamShape::Factor { d, r })?;
    let computed = gram_eigenvalues(&map, x)?;
    let xmat = DMatrix::from_column_slice(d, r, x);
    let sv = xmat.svd(false, false).singular_values;
    let mut sigma_sq = vec![0.0; d];
    for (i, s) in sv.iter().enumerate().take(d) {
        sigma_sq[i] = s * s;
    }
    let mut predicted = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in i..d {
            predicted.push(2.0 * (sigma_sq[i] + sigma_sq[j]));
        }
    }
    predicted.resize(d * d, 0.0);
    Ok(report(computed, predicted))
}

/// Spectrum of ∇F∇Fᵀ for (X, Y) ↦ XYᵀ: {σ_i²(X) + σ_j²(Y)} over the full
/// index grid [d1]×[d2], singular values padded with zeros.
pub fn check_asym_spectrum(
    x: &[f64],
    y: &[f64],
    d1: usize,
    d2: usize,
    r: usize,
) -> Result<SpectrumReport> {
    let map = ParamMap::new(
        ParamKind::AsymmetricFactor,
        ParamShape::FactorPair { d1, d2, r },
    )?;
    let mut point = x.to_vec();
    point.extend_from_slice(y);
    let computed = gram_eigenvalues(&map, &point)?;
    let sx = DMatrix::from_column_slice(d1, r, x).svd(false, false).singular_values;
    let sy = DMatrix::from_column_slice(d2, r, y).svd(false, false).singular_values;
    let mut sig_x = vec![0.0; d1];
    for (i, s) in sx.iter().enumerate().take(d1) {
        sig_x[i] = s * s;
    }
    let mut sig_y = vec![0.0; d2];
    for (j, s) in sy.iter().enumerate().take(d2) {
        sig_y[j] = s * s;
    }
    let mut predicted = Vec::with_capacity(d1 * d2);
    for &a in &sig_x {
        for &b in &sig_y {
            predicted.push(a + b);
        }
    }
    Ok(report(computed, predicted))
}

/// Numeric rank of the dense Jacobian against the constant-rank prediction:
/// d·r for the symmetric CP map, (d1+d2+d3−2)·r for the asymmetric CP map,
/// and d·r − r(r−1)/2 for the PSD factorization map, all at full-rank
/// factors.
pub fn check_cp_rank(map: &ParamMap, x: &[f64]) -> Result<(usize, usize)> {
    let predicted = match (map.kind, map.shape) {
        (ParamKind::SymmetricCp, ParamShape::Factor { d, r }) => d * r,
        (ParamKind::AsymmetricCp, ParamShape::FactorTriple { d1, d2, d3, r }) => {
            (d1 + d2 + d3 - 2) * r
        }
        (ParamKind::BurerMonteiro, ParamShape::Factor { d, r }) => d * r - r * (r - 1) / 2,
        _ => {
            return Err(Error::parameter(
                "map",
                "rank predictions exist for the CP and PSD factorization maps",
            ))
        }
    };
    let jac = materialize_dense(&map.jacobian_operator(x))?;
    let sv = jac.svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    let numeric = sv.iter().filter(|&&s| s > RANK_REL_TOL * smax).count();
    Ok((numeric, predicted))
}

/// Alignment probe: how many top left singular directions of ∇F(x) are
/// needed before the residual fraction of z − z* drops to ρ, and how large
/// the corresponding squared singular value is.
pub fn weak_alignment_probe(
    map: &ParamMap,
    x: &[f64],
    z_star: &[f64],
    rho: f64,
) -> Result<AlignmentReport> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::parameter("rho", "must lie in (0, 1)"));
    }
    let z = map.eval(x)?;
    if z.len() != z_star.len() {
        return Err(Error::dimension(z.len(), z_star.len(), "alignment probe"));
    }
    let w: Vec<f64> = z.iter().zip(z_star).map(|(a, b)| a - b).collect();
    let wn = norm(&w);
    if wn == 0.0 {
        return Err(Error::Degenerate("z equals z* in the alignment probe".into()));
    }
    let jac = materialize_dense(&map.jacobian_operator(x))?;
    let svd = jac.svd(true, false);
    let u = svd.u.as_ref().expect("u requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_REL_TOL * smax)
        .count();
    let wv = DVector::from_column_slice(&w);
    // Peel off one singular direction at a time; keeping the residual as an
    // explicit vector avoids the cancellation of a norm-difference update.
    let mut resid = wv.clone();
    let mut best = AlignmentReport {
        j: rank,
        residual_ratio: 1.0,
        sigma_j_sq: 0.0,
    };
    for j in 1..=rank {
        let uj = u.column(j - 1);
        let c = uj.dot(&wv);
        resid -= c * DVector::from(uj);
        let ratio = resid.norm() / wn;
        let sigma = svd.singular_values[j - 1];
        if ratio <= rho {
            return Ok(AlignmentReport {
                j,
                residual_ratio: ratio,
                sigma_j_sq: sigma * sigma,
            });
        }
        best = AlignmentReport {
            j,
            residual_ratio: ratio,
            sigma_j_sq: sigma * sigma,
        };
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn bm_spectrum_hand_values() {
        // X = diag(2, 1): singular values (2, 1); nonzero eigenvalues
        // {2(4+4), 2(4+1), 2(1+1)} = {16, 10, 4} plus one zero (antisymmetric
        // part of a d=2 codomain).
        let x = [2.0, 0.0, 0.0, 1.0];
        let rep = check_bm_spectrum(&x, 2, 2).unwrap();
        assert!(rep.max_abs_deviation <= 1e-8, "{}", rep.max_abs_deviation);
        let top: Vec<f64> = rep.predicted_eigenvalues.iter().rev().cloned().collect();
        assert_eq!(&top[..3], &[16.0, 10.0, 4.0]);
    }

    #[test]
    fn bm_spectrum_zero_matrix() {
        let rep = check_bm_spectrum(&[0.0; 6], 3, 2).unwrap();
        assert!(rep.computed_eigenvalues.iter().all(|v| v.abs() <= 1e-12));
        assert!(rep.max_abs_deviation <= 1e-12);
    }

    #[test]
    fn bm_spectrum_random_instances() {
        let mut rng = Rng::new(101);
        for _ in 0..50 {
            let d = 3 + (rng.below(4) as usize); // d in 3..=6
            let r = 1 + (rng.below(3) as usize).min(d - 1);
            let x = rng.normal_vec(d * r);
            let rep = check_bm_spectrum(&x, d, r).unwrap();
            assert!(rep.max_abs_deviation <= 1e-8, "{}", rep.max_abs_deviation);
        }
    }

    #[test]
    fn asym_spectrum_hand_value() {
        // d1 = d2 = 1: X = (2), Y = (3) → single eigenvalue 4 + 9 = 13.
        let rep = check_asym_spectrum(&[2.0], &[3.0], 1, 1, 1).unwrap();
        assert_eq!(rep.predicted_eigenvalues, vec![13.0]);
        assert!(rep.max_abs_deviation <= 1e-10);
    }

    #[test]
    fn asym_spectrum_random_instances() {
        let mut rng = Rng::new(55);
        for _ in 0..50 {
            let d1 = 2 + (rng.below(4) as usize);
            let d2 = 2 + (rng.below(4) as usize);
            let r = 1 + (rng.below(2) as usize);
            let x = rng.normal_vec(d1 * r);
            let y = rng.normal_vec(d2 * r);
            let rep = check_asym_spectrum(&x, &y, d1, d2, r).unwrap();
            assert!(rep.max_abs_deviation <= 1e-8, "{}", rep.max_abs_deviation);
        }
    }

    #[test]
    fn cp_and_bm_rank_predictions() {
        let mut rng = Rng::new(77);
        for _ in 0..50 {
            let sym = ParamMap::new(ParamKind::SymmetricCp, ParamShape::Factor { d: 5, r: 2 }).unwrap();
            let (num, pred) = check_cp_rank(&sym, &rng.normal_vec(10)).unwrap();
            assert_eq!((num, pred), (10, 10));
        }
        for _ in 0..50 {
            let asym = ParamMap::new(
                ParamKind::AsymmetricCp,
                ParamShape::FactorTriple { d1: 4, d2: 4, d3: 4, r: 2 },
            )
            .unwrap();
            let (num, pred) = check_cp_rank(&asym, &rng.normal_vec(24)).unwrap();
            assert_eq!((num, pred), (20, 20));
        }
        for _ in 0..50 {
            let bm = ParamMap::new(ParamKind::BurerMonteiro, ParamShape::Factor { d: 5, r: 2 }).unwrap();
            let (num, pred) = check_cp_rank(&bm, &rng.normal_vec(10)).unwrap();
            assert_eq!((num, pred), (9, 9));
        }
    }

    #[test]
    fn alignment_in_range_error_is_captured() {
        // Hadamard with strictly positive x has a full-rank diagonal
        // Jacobian, so any error is eventually fully captured.
        let map = ParamMap::new(ParamKind::HadamardSquare, ParamShape::Vector { r: 4 }).unwrap();
        let x = [1.0, 2.0, 0.5, 1.5];
        let z = map.eval(&x).unwrap();
        let z_star: Vec<f64> = z.iter().map(|v| v * 1.01).collect();
        // A tiny rho forces the probe out to j = rank, where the in-range
        // error is fully captured.
        let rep = weak_alignment_probe(&map, &x, &z_star, 1e-12).unwrap();
        assert!(rep.residual_ratio <= 1e-10, "{}", rep.residual_ratio);
        assert_eq!(rep.j, 4);
        assert!(rep.sigma_j_sq > 0.0);
    }

    #[test]
    fn alignment_degenerate_input() {
        let map = ParamMap::new(ParamKind::HadamardSquare, ParamShape::Vector { r: 2 }).unwrap();
        let x = [1.0, 2.0];
        let z = map.eval(&x).unwrap();
        assert!(weak_alignment_probe(&map, &x, &z, 0.1).is_err());
        assert!(weak_alignment_probe(&map, &x, &[0.0, 0.0], 1.5).is_err());
    }

    #[test]
    fn hadamard_weak_alignment_inequality() {
        // Exactly parameterized squared-variable map near a strictly positive
        // z*: (σ_j)² ≥ s(ρ)·‖z − z*‖ with s(ρ) = ρ when r = r*.
        let r = 6;
        let map = ParamMap::new(ParamKind::HadamardSquare, ParamShape::Vector { r }).unwrap();
        let mut rng = Rng::new(2024);
        for rho in [0.1, 0.3] {
            for _ in 0..100 {
                let z_star: Vec<f64> = (0..r).map(|_| 0.5 + rng.uniform()).collect();
                let x_star: Vec<f64> = z_star.iter().map(|v| v.sqrt()).collect();
                let mut x = x_star.clone();
                for v in &mut x {
                    *v += 1e-3 * rng.normal();
                }
                let z = map.eval(&x).unwrap();
                let dist: f64 = z
                    .iter()
                    .zip(&z_star)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if dist == 0.0 {
                    continue;
                }
                let rep = weak_alignment_probe(&map, &x, &z_star, rho).unwrap();
                assert!(rep.residual_ratio <= rho);
                assert!(
                    rep.sigma_j_sq >= rho * dist,
                    "sigma_j_sq {} < {}",
                    rep.sigma_j_sq,
                    rho * dist
                );
            }
        }
    }

    #[test]
    fn residual_ratio_bounded() {
        let map = ParamMap::new(ParamKind::BurerMonteiro, ParamShape::Factor { d: 4, r: 2 }).unwrap();
        let mut rng = Rng::new(9);
        let x = rng.normal_vec(8);
        let z_star = rng.normal_vec(16);
        let rep = weak_alignment_probe(&map, &x, &z_star, 0.2).unwrap();
        assert!((0.0..=1.0 + 1e-12).contains(&rep.residual_ratio));
        assert!(rep.sigma_j_sq >= 0.0);
    }
}
