//! JSON-configured experiment harness: single solver runs with per-iteration
//! trace CSVs, outlier phase-transition grids, and stepsize-sensitivity
//! grids. All outputs are deterministic functions of the config file and are
//! byte-identical across worker-thread counts.

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::par::run_jobs;
use crate::params::ProjectionMode;
use crate::problems::{gen_matrix, gen_nnls, gen_tensor, ProblemInstance};
use crate::rng::{cell_seed, mix};
use crate::solver::{
    gnp_run, lmm_run, subgradient_run, DampingRule, SolverOptions, StepsizeConfig, Termination,
    Trace,
};
use crate::operators::CgSettings;
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Nnls,
    MatrixSym,
    MatrixAsym,
    TensorSym,
    TensorAsym,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MeasurementCount {
    Count(usize),
    Keyword(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum LossName {
    #[serde(rename = "l2sq")]
    L2Sq,
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "l1")]
    L1,
}

impl From<LossName> for LossKind {
    fn from(n: LossName) -> LossKind {
        match n {
            LossName::L2Sq => LossKind::SquaredL2,
            LossName::L2 => LossKind::L2,
            LossName::L1 => LossKind::L1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    #[serde(default)]
    pub d: Option<usize>,
    pub r: usize,
    pub r_star: usize,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default)]
    pub m: Option<MeasurementCount>,
    pub loss: LossName,
    #[serde(default)]
    pub p_fail: f64,
    #[serde(default, rename = "kappa_A")]
    pub kappa_a: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl ProblemSpec {
    /// Measurement count: `Ok(None)` means the identity map.
    fn measurements(&self) -> Result<Option<usize>> {
        match &self.m {
            None => Ok(None),
            Some(MeasurementCount::Count(m)) => Ok(Some(*m)),
            Some(MeasurementCount::Keyword(k)) if k == "identity" => Ok(None),
            Some(MeasurementCount::Keyword(k)) => Err(Error::Config {
                path: "problem.m".into(),
                message: format!("expected a count or \"identity\", got \"{k}\""),
            }),
        }
    }

    fn dim(&self) -> Result<usize> {
        self.d.ok_or_else(|| Error::Config {
            path: "problem.d".into(),
            message: "required for matrix and tensor problems".into(),
        })
    }

    pub fn build(&self, seed: u64) -> Result<ProblemInstance> {
        let kind: LossKind = self.loss.into();
        let m = self.measurements()?;
        match self.kind {
            ProblemKind::Nnls => {
                let m = m.ok_or_else(|| Error::Config {
                    path: "problem.m".into(),
                    message: "nnls requires an explicit measurement count".into(),
                })?;
                gen_nnls(
                    self.r,
                    self.r_star,
                    self.tau,
                    m,
                    self.kappa_a.unwrap_or(10.0),
                    kind,
                    seed,
                )
            }
            ProblemKind::MatrixSym => {
                let d = self.dim()?;
                gen_matrix(true, d, d, self.r, self.r_star, self.tau, m, kind, self.p_fail, seed)
            }
            ProblemKind::MatrixAsym => {
                let d = self.dim()?;
                gen_matrix(false, d, d, self.r, self.r_star, self.tau, m, kind, self.p_fail, seed)
            }
            ProblemKind::TensorSym => {
                let d = self.dim()?;
                gen_tensor(true, &[d], self.r, self.r_star, self.tau, m, kind, self.p_fail, seed)
            }
            ProblemKind::TensorAsym => {
                let d = self.dim()?;
                gen_tensor(
                    false,
                    &[d, d, d],
                    self.r,
                    self.r_star,
                    self.tau,
                    m,
                    kind,
                    self.p_fail,
                    seed,
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    Lmm,
    Subgradient,
    Gnp,
}

impl SolverMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SolverMethod::Lmm => "lmm",
            SolverMethod::Subgradient => "subgradient",
            SolverMethod::Gnp => "gnp",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DampingSpec {
    pub rule: String,
    #[serde(default, rename = "C")]
    pub c_upper: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub p: Option<f64>,
}

impl DampingSpec {
    fn build(&self) -> Result<DampingRule> {
        match self.rule.as_str() {
            "exact" => Ok(DampingRule::ExactDistance {
                c: self.c_upper.ok_or_else(|| Error::Config {
                    path: "solvers[].config.damping.C".into(),
                    message: "exact rule requires C".into(),
                })?,
            }),
            "loss_proxy" => Ok(DampingRule::LossProxy {
                c: self.c.ok_or_else(|| Error::Config {
                    path: "solvers[].config.damping.c".into(),
                    message: "loss_proxy rule requires c".into(),
                })?,
                p: self.p.unwrap_or(1.0),
            }),
            other => Err(Error::Config {
                path: "solvers[].config.damping.rule".into(),
                message: format!("unknown rule \"{other}\""),
            }),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepCfgSpec {
    pub variant: String,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub damping: Option<DampingSpec>,
}

impl StepCfgSpec {
    /// Instantiate against a concrete problem (the Polyak target h* comes
    /// from the instance's ground truth).
    pub fn build(&self, h_star: f64) -> Result<StepsizeConfig> {
        let sched = |what: &Option<f64>, path: &str| -> Result<f64> {
            what.ok_or_else(|| Error::Config {
                path: format!("solvers[].config.{path}"),
                message: format!("required for the {} variant", self.variant),
            })
        };
        match self.variant.as_str() {
            "polyak" => Ok(StepsizeConfig::Polyak {
                gamma: self.gamma,
                damping: match &self.damping {
                    Some(d) => d.build()?,
                    None => DampingRule::LossProxy { c: 1e-5, p: 1.0 },
                },
                h_star,
            }),
            "geometric" => Ok(StepsizeConfig::Geometric {
                gamma: self.gamma,
                lambda: sched(&self.lambda, "lambda")?,
                q: sched(&self.q, "q")?,
            }),
            "constant" => Ok(StepsizeConfig::Constant {
                gamma: self.gamma,
                lambda: sched(&self.lambda, "lambda")?,
                q: sched(&self.q, "q")?,
            }),
            other => Err(Error::Config {
                path: "solvers[].config.variant".into(),
                message: format!("unknown variant \"{other}\""),
            }),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsSpec {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_success")]
    pub success_rel_err: f64,
    #[serde(default = "default_cg_max")]
    pub cg_max_iters: usize,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
    #[serde(default)]
    pub proj_mode: Option<String>,
    #[serde(default = "default_delta_proj")]
    pub delta_proj: f64,
    #[serde(default = "one_usize")]
    pub record_every: usize,
}

fn default_max_iters() -> usize {
    500
}
fn default_success() -> f64 {
    1e-8
}
fn default_cg_max() -> usize {
    100
}
fn default_cg_tol() -> f64 {
    1e-25
}
fn default_delta_proj() -> f64 {
    1e-6
}
fn one_usize() -> usize {
    1
}

impl Default for OptionsSpec {
    fn default() -> Self {
        OptionsSpec {
            max_iters: default_max_iters(),
            success_rel_err: default_success(),
            cg_max_iters: default_cg_max(),
            cg_tol: default_cg_tol(),
            proj_mode: None,
            delta_proj: default_delta_proj(),
            record_every: 1,
        }
    }
}

impl OptionsSpec {
    pub fn build(&self) -> Result<SolverOptions> {
        let proj_mode = match self.proj_mode.as_deref() {
            None | Some("surrogate") => ProjectionMode::Surrogate {
                delta_proj: self.delta_proj,
            },
            Some("exact") => ProjectionMode::Exact,
            Some(other) => {
                return Err(Error::Config {
                    path: "solvers[].options.proj_mode".into(),
                    message: format!("expected \"exact\" or \"surrogate\", got \"{other}\""),
                })
            }
        };
        let opts = SolverOptions {
            max_iters: self.max_iters,
            success_rel_err: self.success_rel_err,
            cg: CgSettings {
                max_iters: self.cg_max_iters,
                residual_tol: self.cg_tol,
            },
            proj_mode,
            record_every: self.record_every,
        };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub method: SolverMethod,
    pub config: StepCfgSpec,
    #[serde(default)]
    pub options: Option<OptionsSpec>,
}

impl SolverSpec {
    pub fn run(&self, instance: &ProblemInstance) -> Result<Trace> {
        let cfg = self.config.build(instance.gt.h_star)?;
        let opts = self.options.clone().unwrap_or_default().build()?;
        let runner = match self.method {
            SolverMethod::Lmm => lmm_run,
            SolverMethod::Subgradient => subgradient_run,
            SolverMethod::Gnp => gnp_run,
        };
        runner(
            &instance.map,
            &instance.loss,
            &instance.x0,
            &cfg,
            &opts,
            Some(&instance.gt.z_star),
        )
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSpec {
    #[serde(default)]
    pub m_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub p_fail_grid: Option<Vec<f64>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_trials() -> usize {
    20
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySpec {
    #[serde(default)]
    pub q_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma_grid: Option<Vec<f64>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_iter_cap")]
    pub iter_cap: usize,
}

fn default_iter_cap() -> usize {
    1000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub solvers: Vec<SolverSpec>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub transition: Option<TransitionSpec>,
    #[serde(default)]
    pub sensitivity: Option<SensitivitySpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig =
            serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.solvers.is_empty() {
            return Err(Error::Config {
                path: "solvers".into(),
                message: "at least one solver is required".into(),
            });
        }
        if self.seeds.is_empty() {
            return Err(Error::Config {
                path: "seeds".into(),
                message: "at least one seed is required".into(),
            });
        }
        Ok(())
    }
}

/// f64 → decimal text that parses back to the same bits (Rust's shortest
/// round-trip formatting).
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn trace_to_csv(trace: &Trace) -> String {
    let mut out = String::from("iter,f,rel_err_z,gamma,lambda,proj_norm,cg_iters\n");
    for r in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.k,
            fmt_f64(r.f),
            fmt_opt(r.rel_err_z),
            fmt_f64(r.gamma),
            fmt_f64(r.lambda),
            fmt_opt(r.proj_norm),
            r.cg_iters
        );
    }
    out
}

/// Run every (solver, seed) pair and write one trace CSV each. Returns the
/// written paths in a fixed order.
pub fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut jobs = Vec::new();
    for (si, solver) in cfg.solvers.iter().enumerate() {
        for &seed in &cfg.seeds {
            jobs.push((si, solver.clone(), seed));
        }
    }
    let problem = cfg.problem.clone();
    let results: Vec<Result<(usize, u64, &'static str, String)>> =
        run_jobs(jobs, move |(si, solver, seed)| {
            let instance = problem.build(seed)?;
            let trace = solver.run(&instance)?;
            Ok((si, seed, solver.method.name(), trace_to_csv(&trace)))
        });
    let mut paths = Vec::new();
    for res in results {
        let (si, seed, method, csv) = res?;
        let path = out_dir.join(format!("trace_s{si}_{method}_seed{seed}.csv"));
        std::fs::write(&path, csv)?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCell {
    pub m: usize,
    pub p_fail: f64,
    pub trials: usize,
    pub successes: usize,
}

/// Success-rate grid over (measurement count, corruption level). Each cell
/// runs `trials` independent instances with seeds derived from the base seed
/// and the cell coordinates, so any cell is reproducible in isolation.
pub fn cmd_transition(cfg: &ExperimentConfig) -> Result<Vec<TransitionCell>> {
    let spec = cfg.transition.clone().unwrap_or(TransitionSpec {
        m_grid: None,
        p_fail_grid: None,
        trials: default_trials(),
    });
    if spec.trials == 0 {
        return Err(Error::Config {
            path: "transition.trials".into(),
            message: "must be at least 1".into(),
        });
    }
    if cfg.solvers.len() != 1 {
        return Err(Error::Config {
            path: "solvers".into(),
            message: "transition grids use exactly one solver".into(),
        });
    }
    let d = cfg.problem.dim()?;
    let r = cfg.problem.r;
    // Default ramp: m = k·d·r for k = 1..8.
    let m_grid = spec
        .m_grid
        .unwrap_or_else(|| (1..=8).map(|k| k * d * r).collect());
    let p_grid = spec
        .p_fail_grid
        .unwrap_or_else(|| (0..10).map(|i| i as f64 * 0.05).collect());
    if m_grid.is_empty() || p_grid.is_empty() {
        return Err(Error::Config {
            path: "transition".into(),
            message: "grids must be nonempty".into(),
        });
    }
    let base_seed = cfg.seeds[0];
    let solver = cfg.solvers[0].clone();
    let problem = cfg.problem.clone();

    let mut jobs = Vec::new();
    for (mi, &m) in m_grid.iter().enumerate() {
        for (pi, &p_fail) in p_grid.iter().enumerate() {
            for trial in 0..spec.trials {
                jobs.push((mi, pi, m, p_fail, trial));
            }
        }
    }
    let results: Vec<Result<(usize, usize, bool)>> =
        run_jobs(jobs, move |(mi, pi, m, p_fail, trial)| {
            let seed = cell_seed(base_seed, m, p_fail, trial);
            let mut pspec = problem.clone();
            pspec.m = Some(MeasurementCount::Count(m));
            pspec.p_fail = p_fail;
            let instance = pspec.build(seed)?;
            let trace = solver.run(&instance)?;
            Ok((mi, pi, trace.termination == Termination::Converged))
        });
    let mut counts = vec![vec![0usize; p_grid.len()]; m_grid.len()];
    for res in results {
        let (mi, pi, ok) = res?;
        if ok {
            counts[mi][pi] += 1;
        }
    }
    let mut cells = Vec::new();
    for (mi, &m) in m_grid.iter().enumerate() {
        for (pi, &p_fail) in p_grid.iter().enumerate() {
            cells.push(TransitionCell {
                m,
                p_fail,
                trials: spec.trials,
                successes: counts[mi][pi],
            });
        }
    }
    cells.sort_by(|a, b| (a.m, a.p_fail).partial_cmp(&(b.m, b.p_fail)).unwrap());
    Ok(cells)
}

pub fn transition_to_csv(cells: &[TransitionCell]) -> String {
    let mut out = String::from("m,p_fail,trials,successes,success_rate\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            c.m,
            fmt_f64(c.p_fail),
            c.trials,
            c.successes,
            fmt_f64(c.successes as f64 / c.trials as f64)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityCell {
    pub q: f64,
    pub gamma: f64,
    pub median_iters: usize,
    pub p5_iters: usize,
    pub p95_iters: usize,
}

fn percentile(sorted: &[usize], frac: f64) -> usize {
    let n = sorted.len();
    let rank = (frac * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Iterations-to-tolerance over a (q, γ) grid for the geometric schedule;
/// runs that miss the tolerance within the cap report the cap (censoring).
pub fn cmd_sensitivity(cfg: &ExperimentConfig) -> Result<Vec<SensitivityCell>> {
    let spec = cfg.sensitivity.clone().unwrap_or(SensitivitySpec {
        q_grid: None,
        gamma_grid: None,
        trials: default_trials(),
        iter_cap: default_iter_cap(),
    });
    if spec.trials == 0 {
        return Err(Error::Config {
            path: "sensitivity.trials".into(),
            message: "must be at least 1".into(),
        });
    }
    if cfg.solvers.len() != 1 {
        return Err(Error::Config {
            path: "solvers".into(),
            message: "sensitivity grids use exactly one solver".into(),
        });
    }
    let q_grid = spec.q_grid.unwrap_or_else(|| vec![0.95, 0.96, 0.97]);
    let gamma_grid = spec
        .gamma_grid
        .unwrap_or_else(|| (1..=8).map(|j| 10f64.powi(-j)).collect());
    if q_grid.is_empty() || gamma_grid.is_empty() {
        return Err(Error::Config {
            path: "sensitivity".into(),
            message: "grids must be nonempty".into(),
        });
    }
    let base_seed = cfg.seeds[0];
    let solver = cfg.solvers[0].clone();
    let problem = cfg.problem.clone();
    let cap = spec.iter_cap;

    let mut jobs = Vec::new();
    for (qi, &q) in q_grid.iter().enumerate() {
        for (gi, &gamma) in gamma_grid.iter().enumerate() {
            for trial in 0..spec.trials {
                jobs.push((qi, gi, q, gamma, trial));
            }
        }
    }
    let results: Vec<Result<(usize, usize, usize)>> =
        run_jobs(jobs, move |(qi, gi, q, gamma, trial)| {
            let seed = mix(mix(mix(base_seed ^ (q * 1e4).round() as u64) ^ gamma.to_bits()) ^ trial as u64);
            let instance = problem.build(seed)?;
            let mut sspec = solver.clone();
            sspec.config.q = Some(q);
            sspec.config.gamma = gamma;
            let mut opts = sspec.options.clone().unwrap_or_default();
            opts.max_iters = cap;
            sspec.options = Some(opts.clone());
            let trace = sspec.run(&instance)?;
            let iters = trace.iters_to_rel_err(opts.success_rel_err).unwrap_or(cap);
            Ok((qi, gi, iters))
        });
    let mut grid: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); gamma_grid.len()]; q_grid.len()];
    for res in results {
        let (qi, gi, iters) = res?;
        grid[qi][gi].push(iters);
    }
    let mut cells = Vec::new();
    for (qi, &q) in q_grid.iter().enumerate() {
        for (gi, &gamma) in gamma_grid.iter().enumerate() {
            let mut iters = grid[qi][gi].clone();
            iters.sort_unstable();
            cells.push(SensitivityCell {
                q,
                gamma,
                median_iters: percentile(&iters, 0.5),
                p5_iters: percentile(&iters, 0.05),
                p95_iters: percentile(&iters, 0.95),
            });
        }
    }
    cells.sort_by(|a, b| (a.q, a.gamma).partial_cmp(&(b.q, b.gamma)).unwrap());
    Ok(cells)
}

pub fn sensitivity_to_csv(cells: &[SensitivityCell]) -> String {
    let mut out = String::from("q,gamma,median_iters,p5_iters,p95_iters\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(c.q),
            fmt_f64(c.gamma),
            c.median_iters,
            c.p5_iters,
            c.p95_iters
        );
    }
    out
}
