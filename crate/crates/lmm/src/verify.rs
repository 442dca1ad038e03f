//! Static registry of structural checks behind the `verify` subcommand:
//! adjoint identities, finite-difference Jacobian checks, damped-Gram
//! consistency, closed-form spectra, constant-rank predictions, and the
//! squared-variable alignment inequality.

use crate::operators::dot;
use crate::params::{ParamKind, ParamMap, ParamShape};
use crate::rng::Rng;
use crate::spectral::{check_asym_spectrum, check_bm_spectrum, check_cp_rank, weak_alignment_probe};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Measured worst-case deviation for the check.
    pub deviation: f64,
    pub threshold: f64,
}

fn result(name: &str, deviation: f64, threshold: f64) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed: deviation <= threshold,
        deviation,
        threshold,
    }
}

fn registry_maps() -> Vec<(&'static str, ParamMap)> {
    vec![
        (
            "hadamard",
            ParamMap::new(ParamKind::HadamardSquare, ParamShape::Vector { r: 6 }).unwrap(),
        ),
        (
            "bm",
            ParamMap::new(ParamKind::BurerMonteiro, ParamShape::Factor { d: 5, r: 3 }).unwrap(),
        ),
        (
            "asym",
            ParamMap::new(
                ParamKind::AsymmetricFactor,
                ParamShape::FactorPair { d1: 4, d2: 5, r: 2 },
            )
            .unwrap(),
        ),
        (
            "sym_cp",
            ParamMap::new(ParamKind::SymmetricCp, ParamShape::Factor { d: 4, r: 2 }).unwrap(),
        ),
        (
            "asym_cp",
            ParamMap::new(
                ParamKind::AsymmetricCp,
                ParamShape::FactorTriple { d1: 3, d2: 4, d3: 5, r: 2 },
            )
            .unwrap(),
        ),
    ]
}

fn adjoint_check(map: &ParamMap, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = rng.normal_vec(map.domain_dim());
        let u = rng.normal_vec(map.domain_dim());
        let w = rng.normal_vec(map.codomain_dim());
        let lhs = dot(&map.jvp(&x, &u).unwrap(), &w);
        let rhs = dot(&u, &map.vjp(&x, &w).unwrap());
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    worst
}

fn finite_difference_check(map: &ParamMap, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let normalize = |mut v: Vec<f64>| {
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= n);
        v
    };
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x = normalize(rng.normal_vec(map.domain_dim()));
        let u = normalize(rng.normal_vec(map.domain_dim()));
        let t = 1e-5;
        let xp: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + t * b).collect();
        let xm: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a - t * b).collect();
        let jv = map.jvp(&x, &u).unwrap();
        let err: f64 = map
            .eval(&xp)
            .unwrap()
            .iter()
            .zip(map.eval(&xm).unwrap())
            .zip(&jv)
            .map(|((p, m), j)| {
                let fd = (p - m) / (2.0 * t);
                (fd - j) * (fd - j)
            })
            .sum::<f64>()
            .sqrt();
        worst = worst.max(err);
    }
    worst
}

fn gram_consistency_check(map: &ParamMap, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = rng.normal_vec(map.domain_dim());
        let u = rng.normal_vec(map.domain_dim());
        let lambda = 0.37;
        let closed = map.gram_damped_apply(&x, lambda, &u).unwrap();
        let composed = map.vjp(&x, &map.jvp(&x, &u).unwrap()).unwrap();
        for ((a, b), ui) in closed.iter().zip(&composed).zip(&u) {
            let b = b + lambda * ui;
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
        }
    }
    worst
}

fn bm_spectrum_check(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d = 3 + rng.below(4) as usize;
        let r = 1 + (rng.below(3) as usize).min(d - 1);
        let x = rng.normal_vec(d * r);
        worst = worst.max(check_bm_spectrum(&x, d, r).unwrap().max_abs_deviation);
    }
    worst
}

fn asym_spectrum_check(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d1 = 2 + rng.below(4) as usize;
        let d2 = 2 + rng.below(4) as usize;
        let r = 1 + rng.below(2) as usize;
        let x = rng.normal_vec(d1 * r);
        let y = rng.normal_vec(d2 * r);
        worst = worst.max(
            check_asym_spectrum(&x, &y, d1, d2, r)
                .unwrap()
                .max_abs_deviation,
        );
    }
    worst
}

fn rank_check(map: &ParamMap, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = rng.normal_vec(map.domain_dim());
        let (numeric, predicted) = check_cp_rank(map, &x).unwrap();
        worst = worst.max((numeric as f64 - predicted as f64).abs());
    }
    worst
}

fn hadamard_alignment_check(rho: f64, seed: u64) -> f64 {
    // Exactly parameterized squared-variable map: s(rho) = rho; measure the
    // worst violation of sigma_j^2 >= s(rho) * ||z - z*||.
    let r = 6;
    let map = ParamMap::new(ParamKind::HadamardSquare, ParamShape::Vector { r }).unwrap();
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let z_star: Vec<f64> = (0..r).map(|_| 0.5 + rng.uniform()).collect();
        let mut x: Vec<f64> = z_star.iter().map(|v| v.sqrt()).collect();
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
        worst = worst.max(rho * dist - rep.sigma_j_sq);
    }
    worst
}

/// Simple `*` wildcard match for the check filter.
fn glob_match(pattern: &str, name: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == name;
    }
    let mut rest = name;
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            continue;
        }
        match rest.find(part) {
            Some(pos) => {
                if i == 0 && pos != 0 {
                    return false;
                }
                rest = &rest[pos + part.len()..];
            }
            None => return false,
        }
    }
    parts.last().map_or(true, |p| p.is_empty() || name.ends_with(p))
}

/// Run the (static) check registry, optionally filtered by a `*` glob on
/// check names.
pub fn run_checks(filter: Option<&str>) -> Vec<CheckResult> {
    let mut results = Vec::new();
    for (tag, map) in registry_maps() {
        results.push(result(
            &format!("adjoint_identity_{tag}"),
            adjoint_check(&map, 11),
            1e-10,
        ));
        results.push(result(
            &format!("finite_difference_{tag}"),
            finite_difference_check(&map, 12),
            1e-6,
        ));
        results.push(result(
            &format!("gram_consistency_{tag}"),
            gram_consistency_check(&map, 13),
            1e-12,
        ));
    }
    results.push(result("bm_spectrum", bm_spectrum_check(101), 1e-8));
    results.push(result("asym_spectrum", asym_spectrum_check(55), 1e-8));
    let sym_cp = ParamMap::new(ParamKind::SymmetricCp, ParamShape::Factor { d: 5, r: 2 }).unwrap();
    let asym_cp = ParamMap::new(
        ParamKind::AsymmetricCp,
        ParamShape::FactorTriple { d1: 4, d2: 4, d3: 4, r: 2 },
    )
    .unwrap();
    let bm = ParamMap::new(ParamKind::BurerMonteiro, ParamShape::Factor { d: 5, r: 2 }).unwrap();
    results.push(result("rank_sym_cp", rank_check(&sym_cp, 77), 0.0));
    results.push(result("rank_asym_cp", rank_check(&asym_cp, 78), 0.0));
    results.push(result("rank_bm", rank_check(&bm, 79), 0.0));
    results.push(result(
        "hadamard_alignment_rho_0.1",
        hadamard_alignment_check(0.1, 2024),
        0.0,
    ));
    results.push(result(
        "hadamard_alignment_rho_0.3",
        hadamard_alignment_check(0.3, 2025),
        0.0,
    ));

    match filter {
        None => results,
        Some(pat) => results
            .into_iter()
            .filter(|r| glob_match(pat, &r.name))
            .collect(),
    }
}

pub fn checks_to_csv(results: &[CheckResult]) -> String {
    let mut out = String::from("name,status,deviation,threshold\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.name,
            if r.passed { "pass" } else { "fail" },
            r.deviation,
            r.threshold
        );
    }
    out
}
