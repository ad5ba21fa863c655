//! The regularized Newton flow
//!
//! ```text
//! u̇(t) = −(A(u) + a(t) I)^{-1} [F(u) + a(t) u − f],    u(0) = u0,
//! ```
//!
//! integrated with an adaptive Dormand–Prince pair under a derived
//! [`Schedule`]. Along the way the trajectory records the regularized
//! residual and the envelope `r^k / λ`; at sample times it also records the
//! distance to the regularized path `w_{a(t)}` and to a known solution.

use nalgebra::{Complex, DVector};
use serde::Serialize;

use crate::error::{DsmError, Result};
use crate::ode::{self, Control, Dopri5Config, Termination};
use crate::operator::OperatorProblem;
use crate::path::{newton_tolerance, solve_regularized};
use crate::schedule::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorConfig {
    pub initial_step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_time: f64,
    /// Defaults to `1e-8 (1 + ‖f‖)`.
    pub stop_residual: Option<f64>,
    /// When set, convergence also requires `r(t) ≤ stop_r`.
    pub stop_r: Option<f64>,
    pub max_steps: usize,
    /// Number of oracle sample times, including `t = 0`.
    pub samples: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            initial_step: 0.01,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_time: 1e3,
            stop_residual: None,
            stop_r: None,
            max_steps: 5_000_000,
            samples: 32,
        }
    }
}

impl IntegratorConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("initial_step", self.initial_step),
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_time", self.max_time),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DsmError::usage(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// How a trajectory ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    HorizonReached,
    StepFailure,
    ResolventFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub u: DVector<f64>,
    pub r: f64,
    /// `‖F(u) + a(t) u − f‖`.
    pub residual: f64,
    /// `r^k / λ`.
    pub envelope: f64,
    pub dist_to_w: Option<f64>,
    pub dist_to_y: Option<f64>,
    /// Whether this is an oracle sample time.
    pub sampled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SolveStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rejection_rate: f64,
    /// Shifted solves performed by the flow (one per right-hand side).
    pub resolvent_solves: usize,
    /// Sum of local error estimates over accepted steps.
    pub error_estimate: f64,
    /// Largest discarded imaginary update relative to `1 + ‖u‖`.
    pub max_imag_ratio: f64,
    /// Discarded imaginary update at the last right-hand side evaluation.
    pub final_imag_norm: f64,
    pub oracle_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub status: Status,
    pub stats: SolveStats,
    /// Description of the failure behind a failure status.
    pub failure: Option<String>,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryPoint {
        self.points
            .last()
            .expect("trajectories hold the initial point")
    }

    pub fn samples(&self) -> impl Iterator<Item = &TrajectoryPoint> {
        self.points.iter().filter(|p| p.sampled)
    }
}

/// What to compare the trajectory against.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Oracles {
    /// Solve for `w_{a(t)}` at the sample times.
    pub regularized_path: bool,
    pub solution: Option<DVector<f64>>,
}

impl Oracles {
    /// Path oracle on, plus the problem's known solution if any.
    pub fn from_problem(problem: &OperatorProblem) -> Self {
        Self {
            regularized_path: true,
            solution: problem.known_solution().cloned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhsValue {
    pub update: DVector<f64>,
    /// Norm of the imaginary part dropped from the update (zero on the real ray).
    pub imag_norm: f64,
    /// `‖F(u) + a u − f‖`.
    pub residual: f64,
}

/// `−(A(u) + a(t) I)^{-1} [F(u) + a(t) u − f]` with one shifted solve.
///
/// For complex `a` the update's real part is returned and the size of the
/// discarded imaginary part is reported.
pub fn rhs(
    problem: &OperatorProblem,
    schedule: &Schedule,
    t: f64,
    u: &DVector<f64>,
) -> Result<RhsValue> {
    let st = schedule.eval(t);
    let fu = problem.eval(u)?;
    let factor = problem.shifted_factor(u, st.a).map_err(|e| e.at(t))?;
    if st.a.im == 0.0 {
        let psi = fu + u * st.a.re - problem.rhs();
        let (h, _) = factor.solve_real(&psi);
        return Ok(RhsValue {
            update: -h,
            imag_norm: 0.0,
            residual: problem.norm(&psi),
        });
    }
    let psi: DVector<Complex<f64>> = DVector::from_fn(u.len(), |i, _| {
        Complex::new(fu[i] - problem.rhs()[i], 0.0) + st.a * u[i]
    });
    let h = factor.solve_complex(&psi);
    let residual = problem
        .norm(&psi.map(|z| z.re))
        .hypot(problem.norm(&psi.map(|z| z.im)));
    Ok(RhsValue {
        update: -h.map(|z| z.re),
        imag_norm: problem.norm(&h.map(|z| z.im)),
        residual,
    })
}

fn regularized_residual(
    problem: &OperatorProblem,
    schedule: &Schedule,
    t: f64,
    u: &DVector<f64>,
) -> Result<f64> {
    let a = schedule.eval(t).a;
    let fu = problem.eval(u)? - problem.rhs();
    if a.im == 0.0 {
        return Ok(problem.norm(&(fu + u * a.re)));
    }
    let re = fu + u * a.re;
    let im = u * a.im;
    Ok(problem.norm(&re).hypot(problem.norm(&im)))
}

/// Oracle sample times: `0` and `samples − 1` log-spaced points ending at `horizon`.
pub fn sample_times(horizon: f64, samples: usize) -> Vec<f64> {
    let mut out = vec![0.0];
    if samples < 2 || horizon <= 0.0 {
        return out;
    }
    let m = samples - 1;
    let lo = horizon * 1e-3;
    for i in 0..m {
        let frac = if m == 1 {
            1.0
        } else {
            i as f64 / (m - 1) as f64
        };
        out.push(lo * (horizon / lo).powf(frac));
    }
    out
}

struct PathOracle<'a> {
    problem: &'a OperatorProblem,
    schedule: &'a Schedule,
    guess: DVector<f64>,
    enabled: bool,
}

impl PathOracle<'_> {
    fn distance(&mut self, t: f64, u: &DVector<f64>, failures: &mut usize) -> Option<f64> {
        if !self.enabled {
            return None;
        }
        match solve_regularized(self.problem, self.schedule.r(t), &self.guess) {
            Ok(sol) => {
                let d = self.problem.norm(&(u - &sol.w));
                self.guess = sol.w;
                Some(d)
            }
            Err(_) => {
                *failures += 1;
                None
            }
        }
    }
}

/// Integrates the flow from `u0`.
///
/// Stops with [`Status::Converged`] once the regularized residual is below
/// `stop_residual` (and `r ≤ stop_r` when set; on a complex ray the test
/// uses the flow speed `‖u̇‖` instead), with
/// [`Status::HorizonReached`] at `max_time`, or with a failure status.
pub fn solve(
    problem: &OperatorProblem,
    schedule: &Schedule,
    u0: &DVector<f64>,
    config: &IntegratorConfig,
    oracles: Option<&Oracles>,
) -> Result<Trajectory> {
    config.validate()?;
    problem.space().check(u0)?;
    let eps0 = problem.resolvent().eps0;
    if schedule.r0 >= eps0 {
        return Err(DsmError::usage(format!(
            "schedule starts at r0 = {} outside |a| < eps0 = {eps0}",
            schedule.r0
        )));
    }
    if (schedule.theta - problem.resolvent().theta).abs() > 1e-12 {
        return Err(DsmError::usage(
            "schedule and problem use different ray angles",
        ));
    }
    let stop_residual = config
        .stop_residual
        .unwrap_or(1e-8 * (1.0 + problem.norm(problem.rhs())));
    let sample_horizon = config
        .stop_r
        .map(|r| schedule.time_at(r).min(config.max_time))
        .unwrap_or(config.max_time);
    let stops = sample_times(sample_horizon, config.samples);

    let default_oracles = Oracles::default();
    let oracles = oracles.unwrap_or(&default_oracles);
    let path_oracle_possible = problem.resolvent().theta == 0.0;
    let mut path_oracle = PathOracle {
        problem,
        schedule,
        guess: u0.clone(),
        enabled: oracles.regularized_path && path_oracle_possible,
    };
    let mut stats = SolveStats::default();
    let solution = oracles.solution.as_ref();

    let make_point = |t: f64,
                      u: &DVector<f64>,
                      sampled: bool,
                      oracle: &mut PathOracle<'_>,
                      stats: &mut SolveStats|
     -> Result<TrajectoryPoint> {
        let st = schedule.eval(t);
        Ok(TrajectoryPoint {
            t,
            u: u.clone(),
            r: st.r,
            residual: regularized_residual(problem, schedule, t, u)?,
            envelope: st.envelope,
            dist_to_w: if sampled {
                oracle.distance(t, u, &mut stats.oracle_failures)
            } else {
                None
            },
            dist_to_y: solution.map(|y| problem.norm(&(u - y))),
            sampled,
        })
    };
    // Off the real ray a real u leaves the residual above r |sin θ| ‖u‖,
    // and u tracks Re w_a, which is O(r) from a solution, so ‖F(u) − f‖
    // stalls too. There the stopping test uses the flow speed ‖u̇‖.
    let complex_ray = schedule.theta != 0.0;
    let converged = |p: &TrajectoryPoint| {
        if !config.stop_r.is_none_or(|r| p.r <= r * (1.0 + 1e-12)) {
            return false;
        }
        let residual = if complex_ray {
            match rhs(problem, schedule, p.t, &p.u) {
                Ok(v) => problem.norm(&v.update),
                Err(_) => return false,
            }
        } else {
            p.residual
        };
        residual <= stop_residual
    };

    let first = make_point(0.0, u0, true, &mut path_oracle, &mut stats)?;
    let done = converged(&first);
    let mut points = vec![first];
    if done {
        return Ok(Trajectory {
            points,
            status: Status::Converged,
            stats,
            failure: None,
        });
    }

    let ode_config = Dopri5Config {
        rel_tol: config.rel_tol,
        abs_tol: config.abs_tol,
        initial_step: config.initial_step,
        min_step: 1e-12,
        max_step: f64::INFINITY,
        max_steps: config.max_steps,
    };
    let mut solves = 0usize;
    let mut imag = (0.0f64, 0.0f64);
    let mut converged_flag = false;
    let mut observer_error: Option<DsmError> = None;
    let outcome = ode::integrate(
        |t, u| {
            let v = rhs(problem, schedule, t, u)?;
            solves += 1;
            imag.0 = imag.0.max(v.imag_norm / (1.0 + problem.norm(u)));
            imag.1 = v.imag_norm;
            Ok(v.update)
        },
        0.0,
        u0.clone(),
        config.max_time,
        &stops[1..],
        &ode_config,
        |info| {
            let point = match make_point(info.t, info.y, info.at_stop, &mut path_oracle, &mut stats)
            {
                Ok(p) => p,
                Err(e) => {
                    observer_error = Some(e);
                    return Ok(Control::Stop);
                }
            };
            let done = converged(&point);
            points.push(point);
            if done {
                converged_flag = true;
                return Ok(Control::Stop);
            }
            Ok(Control::Continue)
        },
    );
    stats.resolvent_solves = solves;
    stats.max_imag_ratio = imag.0;
    stats.final_imag_norm = imag.1;

    let (status, failure, integration) = match outcome {
        Ok(out) => {
            let status = if let Some(e) = observer_error.take() {
                (Status::StepFailure, Some(e.to_string()))
            } else if converged_flag {
                (Status::Converged, None)
            } else {
                match out.termination {
                    Termination::Finished | Termination::Stopped => (Status::HorizonReached, None),
                    Termination::StepUnderflow => (
                        Status::StepFailure,
                        Some(format!("step size underflow at t = {}", out.t)),
                    ),
                    Termination::MaxSteps => (
                        Status::StepFailure,
                        Some(format!("step budget exhausted at t = {}", out.t)),
                    ),
                }
            };
            (status.0, status.1, Some(out))
        }
        Err(e @ DsmError::ResolventSingular { .. }) => {
            (Status::ResolventFailure, Some(e.to_string()), None)
        }
        Err(e @ DsmError::Usage(_)) => return Err(e),
        Err(e) => (Status::StepFailure, Some(e.to_string()), None),
    };
    if let Some(out) = integration {
        stats.accepted = out.accepted;
        stats.rejected = out.rejected;
        stats.error_estimate = out.error_estimate;
        let total = out.accepted + out.rejected;
        stats.rejection_rate = if total > 0 {
            out.rejected as f64 / total as f64
        } else {
            0.0
        };
    } else {
        stats.accepted = points.len() - 1;
    }
    Ok(Trajectory {
        points,
        status,
        stats,
        failure,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub passed: bool,
    pub samples: usize,
    pub tol_env: f64,
    /// `min (1 − dist_to_w / envelope)` over the samples.
    pub min_relative_slack: f64,
    pub worst_t: f64,
    pub violations: usize,
}

/// Checks `dist_to_w ≤ envelope (1 + tol_env)` at every sample.
pub fn envelope_check(trajectory: &Trajectory, tol_env: f64) -> Result<EnvelopeReport> {
    let samples: Vec<_> = trajectory
        .points
        .iter()
        .filter_map(|p| p.dist_to_w.map(|d| (p.t, d, p.envelope)))
        .collect();
    if samples.len() < 10 {
        return Err(DsmError::usage(format!(
            "envelope check needs at least 10 path distances, found {}",
            samples.len()
        )));
    }
    let mut min_slack = f64::INFINITY;
    let mut worst_t = 0.0;
    let mut violations = 0;
    for &(t, d, env) in &samples {
        let slack = 1.0 - d / env;
        if slack < min_slack {
            min_slack = slack;
            worst_t = t;
        }
        if d > env * (1.0 + tol_env) {
            violations += 1;
        }
    }
    Ok(EnvelopeReport {
        passed: violations == 0,
        samples: samples.len(),
        tol_env,
        min_relative_slack: min_slack,
        worst_t,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub t: f64,
    pub g: f64,
    /// Finite-difference `ġ`.
    pub g_rate: f64,
    /// `−g + c2 |ṙ| r^{-b} + c3 r^{-b} g^p`.
    pub bound: f64,
    /// Size of the finite-difference error, from the second difference and
    /// the oracle solve tolerance.
    pub discretization: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub passed: bool,
    /// `max (ġ − bound) / discretization` over the rows.
    pub worst_ratio: f64,
    pub rows: Vec<AuditRow>,
}

/// Audits `ġ ≤ −g + c2 |ṙ| r^{-b} + c3 r^{-b} g^p` for `g = ‖u − w_{a(t)}‖`
/// at the sampled points of a trajectory.
///
/// `ġ` is a centered difference with step `delta`; the neighbouring states
/// come from single flow steps of size `±delta`. A row passes when the
/// excess over the bound is at most `10×` the discretization estimate.
pub fn audit_distance_inequality(
    problem: &OperatorProblem,
    schedule: &Schedule,
    trajectory: &Trajectory,
    delta: f64,
) -> Result<AuditReport> {
    if !(delta > 0.0) {
        return Err(DsmError::usage("audit step must be positive"));
    }
    let b = schedule.inputs.b;
    let c2 = schedule.inputs.c2;
    let flow = |t: f64, u: &DVector<f64>| rhs(problem, schedule, t, u).map(|v| v.update);
    let noise_floor = |u: &DVector<f64>, a: f64| {
        // A residual of size tol moves w by at most tol times the resolvent norm.
        let resolvent = problem.resolvent().c1 * a.powf(-b);
        (newton_tolerance(problem) * resolvent + 4.0 * f64::EPSILON * (1.0 + problem.norm(u)))
            / delta
    };
    let mut rows = Vec::new();
    let mut worst_ratio = f64::NEG_INFINITY;
    for p in trajectory
        .points
        .iter()
        .filter(|p| p.sampled && p.dist_to_w.is_some())
    {
        let t = p.t;
        let w = solve_regularized(problem, schedule.r(t), &p.u)?.w;
        let g_at = |s: f64| -> Result<f64> {
            let u = ode::single_step(flow, t, &p.u, s - t)?;
            let ws = solve_regularized(problem, schedule.r(s), &w)?.w;
            Ok(problem.norm(&(u - ws)))
        };
        let g = problem.norm(&(&p.u - &w));
        let (g_rate, second) = if t >= delta {
            let gp = g_at(t + delta)?;
            let gm = g_at(t - delta)?;
            ((gp - gm) / (2.0 * delta), (gp - 2.0 * g + gm).abs())
        } else {
            let g1 = g_at(t + delta)?;
            let g2 = g_at(t + 2.0 * delta)?;
            (
                (-3.0 * g + 4.0 * g1 - g2) / (2.0 * delta),
                (g2 - 2.0 * g1 + g).abs(),
            )
        };
        let st = schedule.eval(t);
        let bound = -g
            + c2 * st.r_dot.abs() * st.r.powf(-b)
            + schedule.c3 * st.r.powf(-b) * g.powf(schedule.p);
        let discretization = second / delta + noise_floor(&p.u, st.r);
        let excess = g_rate - bound;
        worst_ratio = worst_ratio.max(excess / discretization);
        rows.push(AuditRow {
            t,
            g,
            g_rate,
            bound,
            discretization,
            passed: excess <= 10.0 * discretization,
        });
    }
    Ok(AuditReport {
        passed: !rows.is_empty() && rows.iter().all(|r| r.passed),
        worst_ratio,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{LinearMap, ResolventParams};
    use crate::schedule::ScheduleInputs;
    use nalgebra::DMatrix;

    fn scalar_identity(f: f64) -> OperatorProblem {
        OperatorProblem::new(
            LinearMap::new(DMatrix::identity(1, 1)).unwrap(),
            DVector::from_element(1, f),
        )
        .unwrap()
        .with_resolvent(ResolventParams::monotone(2.0))
    }

    fn worked_schedule() -> Schedule {
        Schedule::derive(ScheduleInputs {
            b: 1.0,
            kappa: 1.0,
            c0: 0.0,
            c1: 1.0,
            c2: 1.0,
            g0: 0.25,
            r0: 1.0,
            theta: 0.0,
            eps0: 2.0,
        })
        .unwrap()
    }

    #[test]
    fn rhs_examples() {
        let s = worked_schedule();
        let zero = rhs(&scalar_identity(0.0), &s, 0.0, &DVector::zeros(1)).unwrap();
        assert_eq!(zero.update[0], 0.0);
        // a(t) = 0.25 at t = 60.
        let t = s.time_at(0.25);
        let v = rhs(&scalar_identity(1.0), &s, t, &DVector::from_element(1, 1.0)).unwrap();
        assert!((v.update[0] + 0.2).abs() < 1e-14);
    }

    #[test]
    fn rhs_bounded_by_residual() {
        let s = worked_schedule();
        let p = scalar_identity(1.0);
        for (t, u) in [(0.0, 0.3), (5.0, 2.0), (100.0, -1.0)] {
            let v = rhs(&p, &s, t, &DVector::from_element(1, u)).unwrap();
            let r = s.r(t);
            assert!(v.update.norm() <= v.residual / r * (1.0 + 1e-14));
        }
    }

    #[test]
    fn equilibrium_converges_immediately() {
        let traj = solve(
            &scalar_identity(0.0),
            &worked_schedule(),
            &DVector::zeros(1),
            &IntegratorConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(traj.status, Status::Converged);
        assert_eq!(traj.points.len(), 1);
    }

    #[test]
    fn sample_times_are_log_spaced() {
        let t = sample_times(1000.0, 32);
        assert_eq!(t.len(), 32);
        assert_eq!(t[0], 0.0);
        assert!((t[1] - 1.0).abs() < 1e-12 && (t[31] - 1000.0).abs() < 1e-9);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn envelope_check_requires_samples() {
        let traj = solve(
            &scalar_identity(0.0),
            &worked_schedule(),
            &DVector::zeros(1),
            &IntegratorConfig::default(),
            None,
        )
        .unwrap();
        assert!(matches!(
            envelope_check(&traj, 0.05),
            Err(DsmError::Usage(_))
        ));
    }

    #[test]
    fn usage_errors() {
        let s = worked_schedule();
        let p = scalar_identity(1.0).with_resolvent(ResolventParams::monotone(0.5));
        let err = solve(
            &p,
            &s,
            &DVector::zeros(1),
            &IntegratorConfig::default(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, DsmError::Usage(_)));
        let err = solve(
            &scalar_identity(1.0),
            &s,
            &DVector::zeros(2),
            &IntegratorConfig::default(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, DsmError::DimensionMismatch { .. }));
    }
}
