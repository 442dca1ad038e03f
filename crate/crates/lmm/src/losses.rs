//! Convex outer losses h(z) = ‖𝒜(z) − b‖ (in the squared-ℓ2, ℓ2, or ℓ1
//! sense), linear measurement maps, Gaussian sensing construction, and the
//! gross-outlier corruption model.

use crate::error::{Error, Result};
use crate::params::ParamMap;
use crate::rng::Rng;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementMap {
    /// 𝒜 = I, m = N.
    Identity { m: usize },
    /// Dense m×N matrix.
    DenseGaussian { a: DMatrix<f64> },
}

impl MeasurementMap {
    /// Number of measurements m.
    pub fn m(&self) -> usize {
        match self {
            MeasurementMap::Identity { m } => *m,
            MeasurementMap::DenseGaussian { a } => a.nrows(),
        }
    }

    /// Flattened signal dimension N.
    pub fn signal_dim(&self) -> usize {
        match self {
            MeasurementMap::Identity { m } => *m,
            MeasurementMap::DenseGaussian { a } => a.ncols(),
        }
    }

    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.signal_dim() {
            return Err(Error::dimension(self.signal_dim(), z.len(), "measurement input"));
        }
        Ok(match self {
            MeasurementMap::Identity { .. } => z.to_vec(),
            MeasurementMap::DenseGaussian { a } => {
                (a * DVector::from_column_slice(z)).data.into()
            }
        })
    }

    pub fn adjoint_apply(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.m() {
            return Err(Error::dimension(self.m(), w.len(), "measurement adjoint input"));
        }
        Ok(match self {
            MeasurementMap::Identity { .. } => w.to_vec(),
            MeasurementMap::DenseGaussian { a } => {
                (a.transpose() * DVector::from_column_slice(w)).data.into()
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// h(z) = ½‖𝒜(z) − b‖₂²
    SquaredL2,
    /// h(z) = ‖𝒜(z) − b‖₂
    L2,
    /// h(z) = ‖𝒜(z) − b‖₁
    L1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterLoss {
    pub kind: LossKind,
    pub map: MeasurementMap,
    pub b: Vec<f64>,
    /// Known optimum of h over the image of F, when available (0 for
    /// noiseless instances).
    pub h_star: Option<f64>,
    /// Sharpness and Lipschitz moduli (μ, L) when known.
    pub regularity: Option<(f64, f64)>,
}

impl OuterLoss {
    pub fn new(kind: LossKind, map: MeasurementMap, b: Vec<f64>) -> Result<Self> {
        if b.len() != map.m() {
            return Err(Error::dimension(map.m(), b.len(), "loss offset b"));
        }
        Ok(OuterLoss {
            kind,
            map,
            b,
            h_star: None,
            regularity: None,
        })
    }

    pub fn with_h_star(mut self, h_star: f64) -> Self {
        self.h_star = Some(h_star);
        self
    }

    fn residual(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.map.apply(z)?;
        for (ri, bi) in r.iter_mut().zip(&self.b) {
            *ri -= bi;
        }
        Ok(r)
    }

    /// h(z).
    pub fn value(&self, z: &[f64]) -> Result<f64> {
        let r = self.residual(z)?;
        Ok(match self.kind {
            LossKind::SquaredL2 => 0.5 * r.iter().map(|v| v * v).sum::<f64>(),
            LossKind::L2 => r.iter().map(|v| v * v).sum::<f64>().sqrt(),
            LossKind::L1 => r.iter().map(|v| v.abs()).sum(),
        })
    }

    /// The minimal-norm element of ∂h(z): 𝒜ᵀ(𝒜z−b) for squared-ℓ2,
    /// 𝒜ᵀr/‖r‖ (zero at the kink) for ℓ2, 𝒜ᵀsign(r) with sign(0) = 0 for ℓ1.
    pub fn subgradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        let w = self.measurement_subgradient(z)?;
        self.map.adjoint_apply(&w)
    }

    /// The subgradient in measurement space, i.e. the v with
    /// ∂h(z) ∋ 𝒜ᵀv. Identity maps make this coincide with `subgradient`.
    pub fn measurement_subgradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        let r = self.residual(z)?;
        Ok(match self.kind {
            LossKind::SquaredL2 => r,
            LossKind::L2 => {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n == 0.0 {
                    vec![0.0; r.len()]
                } else {
                    r.iter().map(|v| v / n).collect()
                }
            }
            LossKind::L1 => r
                .iter()
                .map(|&v| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
        })
    }
}

/// Dense sensing matrix with i.i.d. N(0, 1/m) entries, filled column-major
/// from the seeded stream.
pub fn make_gaussian_map(m: usize, n: usize, seed: u64) -> MeasurementMap {
    assert!(m >= 1 && n >= 1);
    let mut rng = Rng::new(seed);
    let scale = (1.0 / m as f64).sqrt();
    let data: Vec<f64> = (0..m * n).map(|_| scale * rng.normal()).collect();
    MeasurementMap::DenseGaussian {
        a: DMatrix::from_vec(m, n, data),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    /// Fraction of measurements replaced; recovery is only expected below ½.
    pub p_fail: f64,
    pub seed: u64,
}

/// Replace exactly ⌊p_fail·m⌋ entries of `b_clean` (at seeded-random indices,
/// without replacement) with the measurements of the spurious signal `z_bar`.
pub fn corrupt(
    b_clean: &[f64],
    spec: &CorruptionSpec,
    map: &MeasurementMap,
    z_bar: &[f64],
) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&spec.p_fail) {
        return Err(Error::parameter("p_fail", "must lie in [0, 1)"));
    }
    let m = map.m();
    if b_clean.len() != m {
        return Err(Error::dimension(m, b_clean.len(), "clean measurements"));
    }
    let n_corrupt = (spec.p_fail * m as f64).floor() as usize;
    let mut b = b_clean.to_vec();
    if n_corrupt == 0 {
        return Ok(b);
    }
    let eta = map.apply(z_bar)?;
    let mut rng = Rng::new(spec.seed);
    for i in rng.choose_indices(m, n_corrupt) {
        b[i] = eta[i];
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RipNorm {
    /// ratio ‖𝒜(Z)‖₂² / ‖Z‖_F²
    L2Sq,
    /// ratio ‖𝒜(Z)‖₁ / ‖Z‖_F
    L1,
}

/// Statistical restricted-isometry diagnostic: extreme ratios of measured to
/// true norms over random low-rank signals drawn through `pmap` (standard
/// normal factors).
pub fn empirical_rip(
    map: &MeasurementMap,
    pmap: &ParamMap,
    norm: RipNorm,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if trials < 1 {
        return Err(Error::parameter("trials", "must be at least 1"));
    }
    if pmap.codomain_dim() != map.signal_dim() {
        return Err(Error::dimension(
            map.signal_dim(),
            pmap.codomain_dim(),
            "rip signal dimension",
        ));
    }
    let mut rng = Rng::new(seed);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for _ in 0..trials {
        let x = rng.normal_vec(pmap.domain_dim());
        let z = pmap.eval(&x)?;
        let zf = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if zf == 0.0 {
            continue;
        }
        let az = map.apply(&z)?;
        let ratio = match norm {
            RipNorm::L2Sq => az.iter().map(|v| v * v).sum::<f64>() / (zf * zf),
            RipNorm::L1 => az.iter().map(|v| v.abs()).sum::<f64>() / zf,
        };
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ParamKind, ParamShape};

    fn identity_loss(kind: LossKind, b: Vec<f64>) -> OuterLoss {
        let m = b.len();
        OuterLoss::new(kind, MeasurementMap::Identity { m }, b).unwrap()
    }

    #[test]
    fn loss_values_hand_computed() {
        let l1 = identity_loss(LossKind::L1, vec![1.0, 2.0]);
        assert_eq!(l1.value(&[1.0, 2.0]).unwrap(), 0.0);
        let sq = identity_loss(LossKind::SquaredL2, vec![0.0, 0.0]);
        assert_eq!(sq.value(&[3.0, 4.0]).unwrap(), 12.5);
        let l2 = identity_loss(LossKind::L2, vec![0.0, 0.0]);
        assert_eq!(l2.value(&[3.0, 4.0]).unwrap(), 5.0);
    }

    #[test]
    fn subgradients_hand_computed() {
        let l1 = identity_loss(LossKind::L1, vec![0.0, 0.0, 0.0]);
        assert_eq!(l1.subgradient(&[2.0, -3.0, 0.0]).unwrap(), vec![1.0, -1.0, 0.0]);
        let sq = identity_loss(LossKind::SquaredL2, vec![0.0, 0.0]);
        assert_eq!(sq.subgradient(&[2.0, -3.0]).unwrap(), vec![2.0, -3.0]);
        let l2 = identity_loss(LossKind::L2, vec![1.0, 1.0]);
        assert_eq!(l2.subgradient(&[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn gaussian_map_statistics() {
        let m = 100;
        let n = 1000;
        let map = make_gaussian_map(m, n, 7);
        let MeasurementMap::DenseGaussian { a } = &map else { panic!() };
        assert_eq!((a.nrows(), a.ncols()), (m, n));
        let cnt = (m * n) as f64;
        let mean = a.iter().sum::<f64>() / cnt;
        let var = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cnt;
        assert!(mean.abs() < 0.02, "mean {mean}");
        let target = 1.0 / m as f64;
        assert!((var - target).abs() / target < 0.1, "var {var}");
    }

    #[test]
    fn gaussian_map_deterministic() {
        let a = make_gaussian_map(5, 7, 123);
        let b = make_gaussian_map(5, 7, 123);
        assert_eq!(a, b);
        assert_ne!(a, make_gaussian_map(5, 7, 124));
    }

    #[test]
    fn corruption_counts_and_values() {
        let m = 20;
        let map = MeasurementMap::Identity { m };
        let b: Vec<f64> = (0..m).map(|i| i as f64).collect();
        let z_bar: Vec<f64> = (0..m).map(|i| -(i as f64) - 100.0).collect();

        let same = corrupt(&b, &CorruptionSpec { p_fail: 0.0, seed: 1 }, &map, &z_bar).unwrap();
        assert_eq!(same, b);

        let spec = CorruptionSpec { p_fail: 0.45, seed: 1 };
        let corrupted = corrupt(&b, &spec, &map, &z_bar).unwrap();
        let diff: Vec<usize> = (0..m).filter(|&i| corrupted[i] != b[i]).collect();
        assert_eq!(diff.len(), 9); // floor(0.45 * 20)
        for &i in &diff {
            assert_eq!(corrupted[i], z_bar[i]);
        }
        // deterministic
        assert_eq!(corrupted, corrupt(&b, &spec, &map, &z_bar).unwrap());
        // half corrupted is allowed (recovery is just not expected there)
        let half = corrupt(&b, &CorruptionSpec { p_fail: 0.5, seed: 1 }, &map, &z_bar).unwrap();
        assert_eq!((0..m).filter(|&i| half[i] != b[i]).count(), 10);
        assert!(corrupt(&b, &CorruptionSpec { p_fail: 1.0, seed: 1 }, &map, &z_bar).is_err());
    }

    #[test]
    fn subgradient_inequality_random_pairs() {
        let mut rng = Rng::new(99);
        let m = 6;
        let map = make_gaussian_map(m, 4, 5);
        for kind in [LossKind::SquaredL2, LossKind::L2, LossKind::L1] {
            let loss = OuterLoss::new(kind, map.clone(), rng.normal_vec(m)).unwrap();
            for _ in 0..1000 {
                let z = rng.normal_vec(4);
                let y = rng.normal_vec(4);
                let v = loss.subgradient(&z).unwrap();
                let hy = loss.value(&y).unwrap();
                let hz = loss.value(&z).unwrap();
                let inner: f64 = v.iter().zip(y.iter().zip(&z)).map(|(g, (a, b))| g * (a - b)).sum();
                assert!(hy >= hz + inner - 1e-10, "{kind:?}: {hy} < {} ", hz + inner);
            }
        }
    }

    #[test]
    fn l1_sharpness_witness() {
        // Identity map, ℓ1: h(z) − h* = ‖z − z*‖₁ ≥ ‖z − z*‖₂.
        let mut rng = Rng::new(17);
        let z_star = rng.normal_vec(8);
        let loss = identity_loss(LossKind::L1, z_star.clone());
        for _ in 0..100 {
            let z = rng.normal_vec(8);
            let gap = loss.value(&z).unwrap();
            let dist: f64 = z
                .iter()
                .zip(&z_star)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(gap >= dist - 1e-12);
        }
    }

    #[test]
    fn l2_regularity_sigma_min() {
        // h(z) − h* ≥ σ_min(A)‖z − z*‖ for the ℓ2 kind on a tall dense A.
        let mut rng = Rng::new(4);
        let a = DMatrix::from_fn(10, 4, |_, _| rng.normal());
        let sigma_min = *a
            .clone()
            .svd(false, false)
            .singular_values
            .as_slice()
            .iter()
            .min_by(|x, y| x.partial_cmp(y).unwrap())
            .unwrap();
        let z_star = rng.normal_vec(4);
        let b = (&a * DVector::from_column_slice(&z_star)).data.into();
        let loss = OuterLoss::new(LossKind::L2, MeasurementMap::DenseGaussian { a }, b).unwrap();
        for _ in 0..100 {
            let z = rng.normal_vec(4);
            let gap = loss.value(&z).unwrap();
            let dist: f64 = z
                .iter()
                .zip(&z_star)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            assert!(gap >= sigma_min * dist - 1e-10);
        }
    }

    #[test]
    fn empirical_rip_identity_exact() {
        let pmap = ParamMap::new(ParamKind::BurerMonteiro, ParamShape::Factor { d: 4, r: 2 }).unwrap();
        let map = MeasurementMap::Identity { m: 16 };
        let (lo, hi) = empirical_rip(&map, &pmap, RipNorm::L2Sq, 20, 3).unwrap();
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        let (lo1, hi1) = empirical_rip(&map, &pmap, RipNorm::L2Sq, 1, 3).unwrap();
        assert_eq!(lo1, hi1);
    }

    #[test]
    fn empirical_rip_gaussian_concentrates() {
        let d = 20;
        let r = 2;
        let pmap = ParamMap::new(ParamKind::BurerMonteiro, ParamShape::Factor { d, r }).unwrap();
        let map = make_gaussian_map(8 * d * r, d * d, 11);
        let (lo, hi) = empirical_rip(&map, &pmap, RipNorm::L2Sq, 20, 3).unwrap();
        assert!(lo >= 0.5 && hi <= 1.5, "({lo}, {hi})");
    }

    #[test]
    fn dimension_errors() {
        let loss = identity_loss(LossKind::L2, vec![0.0, 0.0]);
        assert!(loss.value(&[1.0]).is_err());
        assert!(OuterLoss::new(
            LossKind::L1,
            MeasurementMap::Identity { m: 2 },
            vec![0.0; 3]
        )
        .is_err());
    }
}
