//! DSM against simple baselines on one problem.

use dsm_core::linalg::ShiftedFactor;
use dsm_core::path::{geometric_shifts, solve_regularized, track_path};
use dsm_core::{DsmError, OperatorProblem};
use nalgebra::{Complex, DVector};
use serde::Serialize;

use crate::error::CliError;
use crate::gallery::GalleryProblem;
use crate::run::{self, RunOptions};

pub const BASELINES: [&str; 3] = ["newton-plain", "fixed-a", "geometric-a"];

/// Newton iterations allowed to the plain baseline.
pub const NEWTON_BUDGET: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub status: String,
    /// Linear solves with `A(u) + aI`.
    pub solves: usize,
    pub dist_to_y: f64,
    /// `‖F(u) − f‖`.
    pub equation_residual: f64,
}

/// Parses a comma-separated baseline list; the empty string selects none.
pub fn parse_baselines(list: &str) -> Result<Vec<String>, CliError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            if BASELINES.contains(&s) {
                Ok(s.to_string())
            } else {
                Err(CliError::Usage(format!(
                    "unknown baseline '{s}'; choose from {}",
                    BASELINES.join(", ")
                )))
            }
        })
        .collect()
}

fn row(
    problem: &OperatorProblem,
    y: &DVector<f64>,
    method: &str,
    status: &str,
    solves: usize,
    u: &DVector<f64>,
) -> BenchRow {
    let residual = problem
        .eval(u)
        .map(|fu| problem.norm(&(fu - problem.rhs())))
        .unwrap_or(f64::INFINITY);
    BenchRow {
        method: method.to_string(),
        status: status.to_string(),
        solves,
        dist_to_y: problem.norm(&(u - y)),
        equation_residual: residual,
    }
}

/// Armijo-damped Newton on `F(u) = f` with no regularization.
fn newton_plain(problem: &OperatorProblem, y: &DVector<f64>, u0: &DVector<f64>) -> BenchRow {
    let tol = 1e-8 * (1.0 + problem.norm(problem.rhs()));
    let mut u = u0.clone();
    let mut solves = 0;
    let residual = |u: &DVector<f64>| -> Option<(DVector<f64>, f64)> {
        let g = problem.eval(u).ok()? - problem.rhs();
        let n = problem.norm(&g);
        n.is_finite().then_some((g, n))
    };
    let Some((mut g, mut res)) = residual(&u) else {
        return row(problem, y, "newton-plain", "diverged", 0, &u);
    };
    let status = loop {
        if res <= tol {
            break "converged";
        }
        if solves >= NEWTON_BUDGET {
            break "budget-exceeded";
        }
        let factor = match problem
            .jacobian(&u)
            .and_then(|j| ShiftedFactor::new(&j, Complex::new(0.0, 0.0)))
        {
            Ok(f) => f,
            Err(_) => break "singular",
        };
        solves += 1;
        let (dir, _) = factor.solve_real(&g);
        let mut step = 1.0;
        let accepted = loop {
            let trial = &u - &dir * step;
            if let Some((tg, tr)) = residual(&trial) {
                if tr <= (1.0 - 1e-4 * step) * res {
                    u = trial;
                    g = tg;
                    res = tr;
                    break true;
                }
            }
            step *= 0.5;
            if step < 1e-10 {
                break false;
            }
        };
        if !accepted {
            break "stagnated";
        }
        if !u.iter().all(|x| x.is_finite()) || problem.norm(&u) > 1e12 {
            break "diverged";
        }
    };
    row(problem, y, "newton-plain", status, solves, &u)
}

fn fixed_a(problem: &OperatorProblem, y: &DVector<f64>, u0: &DVector<f64>, a: f64) -> BenchRow {
    match solve_regularized(problem, a, u0) {
        Ok(sol) => row(problem, y, "fixed-a", "converged", sol.iterations, &sol.w),
        Err(DsmError::NoConvergence { iterations, .. }) => {
            row(problem, y, "fixed-a", "stagnated", iterations, u0)
        }
        Err(_) => row(problem, y, "fixed-a", "singular", 0, u0),
    }
}

fn geometric_a(
    problem: &OperatorProblem,
    y: &DVector<f64>,
    u0: &DVector<f64>,
    r0: f64,
    stop_r: f64,
) -> BenchRow {
    let shifts: Vec<f64> = geometric_shifts(r0)
        .into_iter()
        .filter(|&a| a >= stop_r)
        .collect();
    match track_path(problem, &shifts, u0) {
        Ok(path) => {
            let solves = path.entries.iter().map(|e| e.newton_iters).sum();
            let u = path.limit_estimate.clone().unwrap_or_else(|| u0.clone());
            let status = if path.failure.is_some() {
                "stagnated"
            } else {
                "converged"
            };
            row(problem, y, "geometric-a", status, solves, &u)
        }
        Err(_) => row(problem, y, "geometric-a", "singular", 0, u0),
    }
}

/// Runs DSM and each baseline from the same start point `u0`.
///
/// The fixed-shift baseline solves once at `a = stop_r`; the geometric
/// baseline halves `a` from `r0` down to `stop_r`. Rows are ranked with
/// converged methods first, then by solve count.
pub fn bench(
    gp: &GalleryProblem,
    opts: &RunOptions,
    seed: u64,
    baselines: &[String],
) -> Result<Vec<BenchRow>, CliError> {
    let mut forced = opts.clone();
    forced.force = true;
    let res = run::execute(gp, &forced, seed)?;
    let plan = &res.plan;
    let problem = &plan.problem;
    let y = &gp.y;
    let mut rows = Vec::new();
    if let Some(traj) = &res.trajectory {
        let u = traj.last().u.clone();
        let status = serde_json::to_value(traj.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        rows.push(row(
            problem,
            y,
            "dsm",
            &status,
            traj.stats.resolvent_solves,
            &u,
        ));
    }
    let extra: Vec<BenchRow> = std::thread::scope(|s| {
        let handles: Vec<_> = baselines
            .iter()
            .map(|b| {
                s.spawn(move || match b.as_str() {
                    "newton-plain" => newton_plain(problem, y, &plan.u0),
                    "fixed-a" => fixed_a(problem, y, &plan.u0, opts.stop_r),
                    _ => geometric_a(problem, y, &plan.u0, plan.schedule.r0, opts.stop_r),
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("baseline thread panicked"))
            .collect()
    });
    rows.extend(extra);
    rows.sort_by_key(|r| (r.status != "converged", r.solves));
    Ok(rows)
}

pub fn table_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("method,status,solves,dist_to_y,equation_residual\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:e},{:e}\n",
            r.method, r.status, r.solves, r.dist_to_y, r.equation_residual
        ));
    }
    out
}
