//! Planning and executing a single flow run, and its manifest and trace.

use std::fmt::Write as _;

use dsm_core::path::{geometric_shifts, solve_regularized, track_path};
use dsm_core::schedule::{derive_exponent, GateKind, GateReport};
use dsm_core::solver::{envelope_check, EnvelopeReport, SolveStats};
use dsm_core::{
    solve, DsmError, IntegratorConfig, OperatorProblem, Oracles, ResolventParams, Schedule,
    ScheduleInputs, Status, Trajectory,
};
use nalgebra::DVector;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::gallery::{self, AssertedConstants, GalleryParams, GalleryProblem};

pub const TOOL: &str = "dsm";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Problem description, as stored in problem files and manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub kind: String,
    pub n: usize,
    #[serde(default)]
    pub params: GalleryParams,
    #[serde(default)]
    pub asserted_constants: Option<AssertedConstants>,
    #[serde(default)]
    pub seed: u64,
}

impl ProblemFile {
    pub fn gallery(kind: &str, n: usize, seed: u64) -> Self {
        Self {
            kind: kind.to_string(),
            n,
            params: GalleryParams::default(),
            asserted_constants: None,
            seed,
        }
    }

    pub fn build(&self) -> Result<GalleryProblem, CliError> {
        Ok(gallery::make(
            &self.kind,
            self.n,
            &self.params,
            self.asserted_constants,
            self.seed,
        )?)
    }
}

/// Run settings. Field names match the `solve` flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub r0: Option<f64>,
    /// Distance of the start point from `w_{r0}`.
    pub g0: Option<f64>,
    pub theta: f64,
    pub stop_r: f64,
    pub stop_residual: Option<f64>,
    pub max_time: Option<f64>,
    pub samples: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub initial_step: f64,
    pub max_steps: usize,
    pub tol_env: f64,
    pub force: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        let cfg = IntegratorConfig::default();
        Self {
            r0: None,
            g0: None,
            theta: 0.0,
            stop_r: 1e-2,
            stop_residual: None,
            max_time: None,
            samples: cfg.samples,
            rel_tol: cfg.rel_tol,
            abs_tol: cfg.abs_tol,
            initial_step: cfg.initial_step,
            max_steps: cfg.max_steps,
            tol_env: 0.05,
            force: false,
        }
    }
}

/// Everything decided before integration starts.
#[derive(Debug, Clone)]
pub struct Plan {
    pub problem: OperatorProblem,
    pub schedule: Schedule,
    pub gates: GateReport,
    pub u0: DVector<f64>,
    pub w0: DVector<f64>,
    /// `max ‖w_a‖` over the tracked path.
    pub max_w_norm: f64,
    pub config: IntegratorConfig,
}

/// Unit vector (in the problem's norm) drawn from stream 1 of the seed.
pub fn start_direction(problem: &OperatorProblem, seed: u64) -> DVector<f64> {
    let mut rng = gallery::rng(seed);
    rng.set_stream(1);
    loop {
        let e: DVector<f64> =
            DVector::from_fn(problem.dim(), |_, _| StandardNormal.sample(&mut rng));
        let norm = problem.norm(&e);
        if norm > 0.0 {
            return e / norm;
        }
        rng.next_u64();
    }
}

/// Chooses `c2`, `r0`, `g0` and the start point, then derives the schedule.
///
/// `c2 = 1.1 c1 max ‖w_a‖` over a geometric grid of shifts below `ε0`;
/// `r0 = max(1.25 × radius threshold, 0.1)` unless given; the default
/// `g0` is 90% of the largest value the rate and distance gates allow.
pub fn plan(gp: &GalleryProblem, opts: &RunOptions, seed: u64) -> Result<Plan, CliError> {
    let base = gp.problem.clone();
    let res = base.resolvent();
    let smooth = base.smoothness();
    let problem = if opts.theta != 0.0 {
        base.clone()
            .with_resolvent(ResolventParams::new(res.c1, res.b, res.eps0, opts.theta)?)
    } else {
        base.clone()
    };
    // The path is tracked on the real ray.
    let real = base.with_resolvent(ResolventParams::new(res.c1, res.b, res.eps0, 0.0)?);

    let shifts = geometric_shifts(0.99 * res.eps0);
    let path = track_path(&real, &shifts, &DVector::zeros(real.dim()))?;
    if let Some(err) = &path.failure {
        log::warn!("regularized path stopped early: {err}");
    }
    if path.entries.is_empty() {
        return Err(CliError::Usage(
            "could not solve the regularized equation at any shift".into(),
        ));
    }
    let max_w_norm = path.max_norm(&real);
    let c2 = (1.1 * res.c1 * max_w_norm).max(1e-12);
    let k = derive_exponent(res.b, smooth.kappa)?;

    let probe = Schedule::derive(ScheduleInputs {
        b: res.b,
        kappa: smooth.kappa,
        c0: smooth.c0,
        c1: res.c1,
        c2,
        g0: 1.0,
        r0: 0.5 * res.eps0,
        theta: opts.theta,
        eps0: res.eps0,
    })?;
    let threshold = probe.validate().gate(GateKind::RadiusThreshold).bound;
    let r0 = opts
        .r0
        .unwrap_or_else(|| (1.25 * threshold).max(0.1).min(0.9 * res.eps0));
    if !(opts.stop_r > 0.0 && opts.stop_r < r0) {
        return Err(CliError::Usage(format!(
            "stop_r must lie in (0, r0 = {r0}), got {}",
            opts.stop_r
        )));
    }

    let guess = path
        .entries
        .iter()
        .min_by(|a, b| {
            (a.a.ln() - r0.ln())
                .abs()
                .total_cmp(&(b.a.ln() - r0.ln()).abs())
        })
        .map(|e| e.w.clone())
        .unwrap_or_else(|| DVector::zeros(real.dim()));
    let w0 = solve_regularized(&real, r0, &guess)?.w;
    let g0 = opts
        .g0
        .unwrap_or_else(|| 0.9 * c2 / k * r0.powf(res.b - 1.0).min(r0.powf(1.0 - res.b)));
    let u0 = &w0 + start_direction(&problem, seed) * g0;

    let schedule = Schedule::derive(ScheduleInputs {
        b: res.b,
        kappa: smooth.kappa,
        c0: smooth.c0,
        c1: res.c1,
        c2,
        g0: problem.norm(&(&u0 - &w0)),
        r0,
        theta: opts.theta,
        eps0: res.eps0,
    })?;
    let gates = schedule.validate();
    let max_time = opts
        .max_time
        .unwrap_or_else(|| 1000.0 * schedule.time_at(opts.stop_r));
    let config = IntegratorConfig {
        initial_step: opts.initial_step,
        rel_tol: opts.rel_tol,
        abs_tol: opts.abs_tol,
        max_time,
        stop_residual: opts.stop_residual,
        stop_r: Some(opts.stop_r),
        max_steps: opts.max_steps,
        samples: opts.samples,
    };
    Ok(Plan {
        problem,
        schedule,
        gates,
        u0,
        w0,
        max_w_norm,
        config,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Converged,
    CheckFailure,
    GateFailure,
    SolverFailure,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Converged => 0,
            Outcome::CheckFailure => 1,
            Outcome::GateFailure => 2,
            Outcome::SolverFailure => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Metrics {
    pub final_t: Option<f64>,
    pub final_r: Option<f64>,
    pub final_residual: Option<f64>,
    /// `‖F(u) − f‖` at the final point.
    pub final_equation_residual: Option<f64>,
    pub final_dist_to_y: Option<f64>,
    /// `dist_to_y` at the first point with `r ≤ stop_r`.
    pub dist_to_y_at_stop_r: Option<f64>,
    pub envelope_min_slack: Option<f64>,
    pub max_u_norm: Option<f64>,
    pub initial_distance: f64,
    pub max_w_norm: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub plan: Plan,
    pub trajectory: Option<Trajectory>,
    pub envelope: Option<EnvelopeReport>,
    pub metrics: Metrics,
    pub outcome: Outcome,
}

/// Plans and, unless a gate fails without `force`, integrates.
pub fn execute(gp: &GalleryProblem, opts: &RunOptions, seed: u64) -> Result<RunResult, CliError> {
    let plan = plan(gp, opts, seed)?;
    let mut metrics = Metrics {
        initial_distance: plan.schedule.g0,
        max_w_norm: plan.max_w_norm,
        ..Default::default()
    };
    if !plan.gates.passed && !opts.force {
        return Ok(RunResult {
            plan,
            trajectory: None,
            envelope: None,
            metrics,
            outcome: Outcome::GateFailure,
        });
    }
    if !plan.gates.passed {
        log::warn!("proceeding with failed gates; the envelope bound is not guaranteed");
    }
    let oracles = Oracles::from_problem(&plan.problem);
    let traj = solve(
        &plan.problem,
        &plan.schedule,
        &plan.u0,
        &plan.config,
        Some(&oracles),
    )?;
    let envelope = match envelope_check(&traj, opts.tol_env) {
        Ok(report) => Some(report),
        Err(DsmError::Usage(msg)) => {
            log::info!("envelope check skipped: {msg}");
            None
        }
        Err(e) => return Err(e.into()),
    };

    let last = traj.last();
    metrics.final_t = Some(last.t);
    metrics.final_r = Some(last.r);
    metrics.final_residual = Some(last.residual);
    metrics.final_equation_residual = Some(
        plan.problem
            .norm(&(plan.problem.eval(&last.u)? - plan.problem.rhs())),
    );
    metrics.final_dist_to_y = last.dist_to_y;
    metrics.dist_to_y_at_stop_r = traj
        .points
        .iter()
        .find(|p| p.r <= opts.stop_r * (1.0 + 1e-12))
        .and_then(|p| p.dist_to_y);
    metrics.envelope_min_slack = envelope.as_ref().map(|e| e.min_relative_slack);
    metrics.max_u_norm = Some(
        traj.points
            .iter()
            .map(|p| plan.problem.norm(&p.u))
            .fold(0.0, f64::max),
    );

    let envelope_ok = envelope.as_ref().is_none_or(|e| e.passed) || !plan.gates.passed;
    let outcome = match traj.status {
        Status::Converged if envelope_ok => Outcome::Converged,
        Status::Converged => Outcome::CheckFailure,
        _ => Outcome::SolverFailure,
    };
    Ok(RunResult {
        plan,
        trajectory: Some(traj),
        envelope,
        metrics,
        outcome,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub problem: ProblemFile,
    pub options: RunOptions,
    #[serde(default)]
    pub results: serde_json::Value,
}

#[derive(Serialize)]
struct ManifestResults<'a> {
    provenance: dsm_core::Provenance,
    schedule: &'a Schedule,
    gates: &'a GateReport,
    config: &'a IntegratorConfig,
    status: Option<Status>,
    outcome: Outcome,
    failure: Option<&'a str>,
    stats: Option<&'a SolveStats>,
    envelope: Option<&'a EnvelopeReport>,
    metrics: &'a Metrics,
}

pub fn manifest(
    problem: &ProblemFile,
    opts: &RunOptions,
    seed: u64,
    result: &RunResult,
) -> Manifest {
    let traj = result.trajectory.as_ref();
    let results = ManifestResults {
        provenance: result.plan.problem.provenance(),
        schedule: &result.plan.schedule,
        gates: &result.plan.gates,
        config: &result.plan.config,
        status: traj.map(|t| t.status),
        outcome: result.outcome,
        failure: traj.and_then(|t| t.failure.as_deref()),
        stats: traj.map(|t| &t.stats),
        envelope: result.envelope.as_ref(),
        metrics: &result.metrics,
    };
    Manifest {
        tool: TOOL.to_string(),
        version: VERSION.to_string(),
        seed,
        problem: problem.clone(),
        options: opts.clone(),
        results: serde_json::to_value(results).expect("manifest results serialize"),
    }
}

pub const TRACE_HEADER: &str = "t,r,residual,envelope,dist_to_w,dist_to_y";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub fn trace_csv(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(64 * traj.points.len());
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for p in &traj.points {
        let _ = writeln!(
            out,
            "{:e},{:e},{:e},{:e},{},{}",
            p.t,
            p.r,
            p.residual,
            p.envelope,
            opt(p.dist_to_w),
            opt(p.dist_to_y)
        );
    }
    out
}

#[derive(Serialize)]
struct TraceRow {
    t: f64,
    r: f64,
    residual: f64,
    envelope: f64,
    dist_to_w: Option<f64>,
    dist_to_y: Option<f64>,
}

pub fn trace_json(traj: &Trajectory) -> String {
    let rows: Vec<TraceRow> = traj
        .points
        .iter()
        .map(|p| TraceRow {
            t: p.t,
            r: p.r,
            residual: p.residual,
            envelope: p.envelope,
            dist_to_w: p.dist_to_w,
            dist_to_y: p.dist_to_y,
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("trace rows serialize")
}

/// Remediation lines for the failed gates.
pub fn gate_failure_text(gates: &GateReport) -> String {
    let mut out = String::new();
    for g in gates.failed() {
        let _ = writeln!(
            out,
            "gate {} failed: value {:.6e} vs bound {:.6e}; {}",
            g.kind.name(),
            g.value,
            g.bound,
            g.remediation
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_passes_gates() {
        for (kind, n) in [
            ("monotone-holder", 2),
            ("wellposed-linear", 3),
            ("illposed-kernel", 8),
        ] {
            let gp = ProblemFile::gallery(kind, n, 1).build().unwrap();
            let plan = plan(&gp, &RunOptions::default(), 1).unwrap();
            assert!(plan.gates.passed, "{kind}: {:?}", plan.gates);
            let g = plan.problem.norm(&(&plan.u0 - &plan.w0));
            assert!((g - plan.schedule.g0).abs() <= 1e-15 * (1.0 + g));
        }
    }

    #[test]
    fn huge_g0_fails_distance_gate() {
        let gp = ProblemFile::gallery("monotone-holder", 2, 1)
            .build()
            .unwrap();
        let opts = RunOptions {
            g0: Some(1e6),
            ..Default::default()
        };
        let result = execute(&gp, &opts, 1).unwrap();
        assert_eq!(result.outcome, Outcome::GateFailure);
        assert!(!result.plan.gates.gate(GateKind::InitialDistance).passed);
        assert!(gate_failure_text(&result.plan.gates).contains("initial-distance"));
    }

    #[test]
    fn stop_r_must_be_below_r0() {
        let gp = ProblemFile::gallery("wellposed-linear", 2, 1)
            .build()
            .unwrap();
        let opts = RunOptions {
            r0: Some(0.1),
            stop_r: 0.2,
            ..Default::default()
        };
        assert!(matches!(plan(&gp, &opts, 0), Err(CliError::Usage(_))));
    }

    #[test]
    fn start_direction_is_unit_and_seeded() {
        let gp = ProblemFile::gallery("wellposed-linear", 5, 1)
            .build()
            .unwrap();
        let a = start_direction(&gp.problem, 9);
        assert!((gp.problem.norm(&a) - 1.0).abs() < 1e-15);
        assert_eq!(a, start_direction(&gp.problem, 9));
        assert_ne!(a, start_direction(&gp.problem, 10));
    }
}
