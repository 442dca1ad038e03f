//! The damped preconditioned subgradient method with its three stepsize
//! configurations, plus Polyak-subgradient and undamped Gauss-Newton
//! baselines. Every run emits a full per-iteration trace.

use crate::error::{Error, Result};
use crate::losses::OuterLoss;
use crate::operators::{norm, CgSettings};
use crate::params::{FlatPoint, ParamMap, ProjectionMode, DEFAULT_DELTA_PROJ};

/// Rule for the damping parameter λ_k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DampingRule {
    /// λ_k = C·‖z_k − z*‖; requires ground truth.
    ExactDistance { c: f64 },
    /// λ_k = c·f(x_k)^p with p ∈ {½, 1}, a ground-truth-free surrogate for
    /// the distance.
    LossProxy { c: f64, p: f64 },
}

impl DampingRule {
    fn validate(&self) -> Result<()> {
        match *self {
            DampingRule::ExactDistance { c } if c > 0.0 => Ok(()),
            DampingRule::LossProxy { c, p } if c > 0.0 && (p == 0.5 || p == 1.0) => Ok(()),
            DampingRule::ExactDistance { .. } => {
                Err(Error::parameter("damping.C", "must be positive"))
            }
            DampingRule::LossProxy { .. } => Err(Error::parameter(
                "damping",
                "needs c > 0 and p in {1/2, 1}",
            )),
        }
    }

    fn lambda(&self, f: f64, dist: Option<f64>) -> Result<f64> {
        match *self {
            DampingRule::ExactDistance { c } => dist.map(|d| c * d).ok_or_else(|| {
                Error::parameter("damping", "exact-distance damping requires ground truth")
            }),
            DampingRule::LossProxy { c, p } => Ok(c * f.powf(p)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepsizeConfig {
    /// γ_k = γ(f_k − h*)/‖Π^{x_k}v_k‖², λ_k from the damping rule.
    Polyak {
        gamma: f64,
        damping: DampingRule,
        h_star: f64,
    },
    /// γ_k = γq^k, λ_k = λq^k.
    Geometric { gamma: f64, lambda: f64, q: f64 },
    /// γ_k = γ, λ_k = λq^k.
    Constant { gamma: f64, lambda: f64, q: f64 },
}

impl StepsizeConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepsizeConfig::Polyak { gamma, damping, h_star } => {
                if !(gamma > 0.0) {
                    return Err(Error::parameter("gamma", "must be positive"));
                }
                if !h_star.is_finite() {
                    return Err(Error::parameter("h_star", "must be finite"));
                }
                damping.validate()
            }
            StepsizeConfig::Geometric { gamma, lambda, q }
            | StepsizeConfig::Constant { gamma, lambda, q } => {
                if !(gamma > 0.0) {
                    return Err(Error::parameter("gamma", "must be positive"));
                }
                if !(lambda > 0.0) {
                    return Err(Error::parameter("lambda", "must be positive"));
                }
                if !(q > 0.0 && q < 1.0) {
                    return Err(Error::parameter("q", "must lie in (0, 1)"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Relative error below which a run counts as converged.
    pub success_rel_err: f64,
    pub cg: CgSettings,
    pub proj_mode: ProjectionMode,
    /// Record every k-th iteration (the terminal state is always recorded).
    pub record_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 500,
            success_rel_err: 1e-8,
            cg: CgSettings::default(),
            proj_mode: ProjectionMode::Surrogate {
                delta_proj: DEFAULT_DELTA_PROJ,
            },
            record_every: 1,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.record_every == 0 {
            return Err(Error::parameter("record_every", "must be at least 1"));
        }
        if !(self.success_rel_err >= 0.0) {
            return Err(Error::parameter("success_rel_err", "must be nonnegative"));
        }
        self.cg.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// Composite objective h(F(x_k)).
    pub f: f64,
    /// ‖z_k − z*‖/‖z*‖ when ground truth is known.
    pub rel_err_z: Option<f64>,
    pub gamma: f64,
    pub lambda: f64,
    /// Projected (or full, for the subgradient baseline) subgradient norm
    /// entering the Polyak stepsize; absent under schedule-driven stepsizes.
    pub proj_norm: Option<f64>,
    pub cg_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Converged,
    Budget,
    Diverged { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub final_x: FlatPoint,
}

impl Trace {
    pub fn final_rel_err(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.rel_err_z)
    }

    /// First iteration index whose recorded relative error is ≤ `tol`.
    pub fn iters_to_rel_err(&self, tol: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.rel_err_z.is_some_and(|e| e <= tol))
            .map(|r| r.k)
    }
}

/// ‖z − z*‖₂ / ‖z*‖₂.
pub fn relative_error(z: &[f64], z_star: &[f64]) -> Result<f64> {
    if z.len() != z_star.len() {
        return Err(Error::dimension(z_star.len(), z.len(), "relative error"));
    }
    let denom = norm(z_star);
    if denom == 0.0 {
        return Err(Error::parameter("z_star", "ground truth must be nonzero"));
    }
    let diff: f64 = z
        .iter()
        .zip(z_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / denom)
}

/// Relative error above which a run is declared divergent.
const DIVERGENCE_REL_ERR: f64 = 1e6;

/// Polyak gap below which the iterate is treated as optimal (avoids 0/0 in
/// the stepsize).
fn polyak_converged(f: f64, h_star: f64) -> bool {
    f - h_star <= 1e-15 * h_star.abs().max(1.0)
}

enum Method {
    /// Damped preconditioned step.
    Lmm,
    /// Undamped (λ = 0) preconditioned step.
    Gnp,
    /// Plain subgradient step x − η g.
    Subgradient,
}

/// Damped preconditioned subgradient method:
/// x_{k+1} = x_k − γ_k (∇F(x_k)ᵀ∇F(x_k) + λ_k I)⁻¹ ∇F(x_k)ᵀ v_k.
pub fn lmm_run(
    map: &ParamMap,
    loss: &OuterLoss,
    x0: &FlatPoint,
    cfg: &StepsizeConfig,
    opts: &SolverOptions,
    ground_truth: Option<&[f64]>,
) -> Result<Trace> {
    run(map, loss, x0, cfg, opts, ground_truth, Method::Lmm)
}

/// Gauss-Newton preconditioned baseline: same as [`lmm_run`] but the
/// direction solves the undamped Gram system (λ = 0). Singular Grams may
/// produce wild iterates; those runs end `Diverged` rather than erroring.
pub fn gnp_run(
    map: &ParamMap,
    loss: &OuterLoss,
    x0: &FlatPoint,
    cfg: &StepsizeConfig,
    opts: &SolverOptions,
    ground_truth: Option<&[f64]>,
) -> Result<Trace> {
    run(map, loss, x0, cfg, opts, ground_truth, Method::Gnp)
}

/// Plain subgradient baseline: x_{k+1} = x_k − η_k g_k with
/// g_k = ∇F(x_k)ᵀv_k and η_k the Polyak or scheduled stepsize (damping
/// fields are ignored).
pub fn subgradient_run(
    map: &ParamMap,
    loss: &OuterLoss,
    x0: &FlatPoint,
    cfg: &StepsizeConfig,
    opts: &SolverOptions,
    ground_truth: Option<&[f64]>,
) -> Result<Trace> {
    run(map, loss, x0, cfg, opts, ground_truth, Method::Subgradient)
}

fn run(
    map: &ParamMap,
    loss: &OuterLoss,
    x0: &FlatPoint,
    cfg: &StepsizeConfig,
    opts: &SolverOptions,
    ground_truth: Option<&[f64]>,
    method: Method,
) -> Result<Trace> {
    cfg.validate()?;
    opts.validate()?;
    if x0.data.len() != map.domain_dim() {
        return Err(Error::dimension(map.domain_dim(), x0.data.len(), "x0"));
    }
    if loss.map.signal_dim() != map.codomain_dim() {
        return Err(Error::dimension(
            map.codomain_dim(),
            loss.map.signal_dim(),
            "loss signal dimension",
        ));
    }
    if let (StepsizeConfig::Polyak { damping: DampingRule::ExactDistance { .. }, .. }, None) =
        (cfg, ground_truth)
    {
        return Err(Error::parameter(
            "damping",
            "exact-distance damping requires ground truth",
        ));
    }

    let mut x = x0.data.clone();
    let mut records: Vec<IterationRecord> = Vec::new();
    if opts.max_iters == 0 {
        return Ok(Trace {
            records,
            termination: Termination::Budget,
            final_x: x0.clone(),
        });
    }
    let z_star_norm = ground_truth.map(norm);

    let push_terminal = |records: &mut Vec<IterationRecord>, k, f, rel| {
        records.push(IterationRecord {
            k,
            f,
            rel_err_z: rel,
            gamma: 0.0,
            lambda: 0.0,
            proj_norm: None,
            cg_iters: 0,
        });
    };

    for k in 0..=opts.max_iters {
        let z = map.eval(&x)?;
        let f = loss.value(&z)?;
        let rel = match (ground_truth, z_star_norm) {
            (Some(zs), Some(nz)) if nz > 0.0 => {
                let d: f64 = z
                    .iter()
                    .zip(zs)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                Some(d / nz)
            }
            _ => None,
        };

        if !f.is_finite() || rel.is_some_and(|e| !e.is_finite() || e > DIVERGENCE_REL_ERR) {
            push_terminal(&mut records, k, f, rel);
            return Ok(Trace {
                records,
                termination: Termination::Diverged {
                    reason: "iterates left the admissible region".into(),
                },
                final_x: FlatPoint::new(x, map.shape)?,
            });
        }

        let gap_converged = match cfg {
            StepsizeConfig::Polyak { h_star, .. } => polyak_converged(f, *h_star),
            _ => loss.h_star.is_some_and(|hs| polyak_converged(f, hs)),
        };
        if rel.is_some_and(|e| e <= opts.success_rel_err) || (rel.is_none() && gap_converged) {
            push_terminal(&mut records, k, f, rel);
            return Ok(Trace {
                records,
                termination: Termination::Converged,
                final_x: FlatPoint::new(x, map.shape)?,
            });
        }
        if k == opts.max_iters {
            push_terminal(&mut records, k, f, rel);
            return Ok(Trace {
                records,
                termination: Termination::Budget,
                final_x: FlatPoint::new(x, map.shape)?,
            });
        }

        // Subgradient of the outer loss in signal space; ∂(h∘F) = ∇Fᵀ v.
        let v = loss.subgradient(&z)?;
        let dist = rel.zip(z_star_norm).map(|(e, nz)| e * nz);

        // λ_k per configuration.
        let lambda_k = match cfg {
            StepsizeConfig::Polyak { damping, .. } => damping.lambda(f, dist)?,
            StepsizeConfig::Geometric { lambda, q, .. } => lambda * q.powi(k as i32),
            StepsizeConfig::Constant { lambda, q, .. } => lambda * q.powi(k as i32),
        };
        if matches!(cfg, StepsizeConfig::Polyak { .. }) && lambda_k <= 0.0 {
            // Exact-distance damping vanishes only at an exact solution.
            push_terminal(&mut records, k, f, rel);
            return Ok(Trace {
                records,
                termination: Termination::Converged,
                final_x: FlatPoint::new(x, map.shape)?,
            });
        }

        let step = match method {
            Method::Subgradient => {
                let g = map.vjp(&x, &v)?;
                let gn = norm(&g);
                let (eta, pn) = match cfg {
                    StepsizeConfig::Polyak { gamma, h_star, .. } => {
                        if gn == 0.0 {
                            push_terminal(&mut records, k, f, rel);
                            return Ok(Trace {
                                records,
                                termination: Termination::Diverged {
                                    reason: "subgradient vanished away from the optimum".into(),
                                },
                                final_x: FlatPoint::new(x, map.shape)?,
                            });
                        }
                        (gamma * (f - h_star) / (gn * gn), Some(gn))
                    }
                    StepsizeConfig::Geometric { gamma, q, .. } => {
                        (gamma * q.powi(k as i32), None)
                    }
                    StepsizeConfig::Constant { gamma, .. } => (*gamma, None),
                };
                Some((g, eta, pn, 0usize, 0.0))
            }
            Method::Lmm | Method::Gnp => {
                let solve_lambda = match method {
                    Method::Gnp => 0.0,
                    _ => lambda_k,
                };
                let dir = map.lmm_direction(&x, solve_lambda, &v, &opts.cg);
                let (delta, cg_res) = match dir {
                    Ok(v) => v,
                    Err(Error::CgBreakdown { iteration }) => {
                        push_terminal(&mut records, k, f, rel);
                        return Ok(Trace {
                            records,
                            termination: Termination::Diverged {
                                reason: format!("CG breakdown at inner iteration {iteration}"),
                            },
                            final_x: FlatPoint::new(x, map.shape)?,
                        });
                    }
                    Err(e) => return Err(e),
                };
                let (gamma_k, pn) = match cfg {
                    StepsizeConfig::Polyak { gamma, h_star, .. } => {
                        let pn = map.projected_subgradient_norm(
                            &x,
                            &v,
                            opts.proj_mode,
                            lambda_k,
                            &opts.cg,
                        )?;
                        if pn == 0.0 {
                            push_terminal(&mut records, k, f, rel);
                            return Ok(Trace {
                                records,
                                termination: Termination::Diverged {
                                    reason: "projected subgradient vanished away from the optimum"
                                        .into(),
                                },
                                final_x: FlatPoint::new(x, map.shape)?,
                            });
                        }
                        (gamma * (f - h_star) / (pn * pn), Some(pn))
                    }
                    StepsizeConfig::Geometric { gamma, q, .. } => {
                        (gamma * q.powi(k as i32), None)
                    }
                    StepsizeConfig::Constant { gamma, .. } => (*gamma, None),
                };
                Some((delta, gamma_k, pn, cg_res.iterations, solve_lambda))
            }
        };

        let (direction, gamma_k, proj_norm, cg_iters, recorded_lambda) = match step {
            Some((d, g, p, c, l)) => (
                d,
                g,
                p,
                c,
                match method {
                    Method::Subgradient => 0.0,
                    Method::Gnp => l,
                    Method::Lmm => lambda_k,
                },
            ),
            None => unreachable!(),
        };

        if k % opts.record_every == 0 {
            records.push(IterationRecord {
                k,
                f,
                rel_err_z: rel,
                gamma: gamma_k,
                lambda: recorded_lambda,
                proj_norm,
                cg_iters,
            });
        }
        for (xi, di) in x.iter_mut().zip(&direction) {
            *xi -= gamma_k * di;
        }
        if x.iter().any(|v| !v.is_finite()) {
            let rel_now = None;
            push_terminal(&mut records, k + 1, f64::NAN, rel_now);
            return Ok(Trace {
                records,
                termination: Termination::Diverged {
                    reason: "non-finite iterate".into(),
                },
                final_x: FlatPoint::new(
                    x.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect(),
                    map.shape,
                )?,
            });
        }
    }
    unreachable!("loop returns at k = max_iters")
}
