//! The regularized path `a ↦ w_a`, where `F(w_a) + a w_a = f`.
//!
//! Points on the path are found by damped Newton iteration whose linear
//! solve is exactly the shifted Jacobian `A(w) + aI`. The path is tracked
//! with warm starts as `a` decreases. For linear problems the limit `a → 0`
//! of the normal equations gives the minimal-norm solution.
//!
//! Only the real ray (`θ = 0`) is supported here: for complex `a` the path
//! point is complex and a real nonlinear map cannot be evaluated there.

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::error::{DsmError, Result};
use crate::operator::OperatorProblem;
use crate::schedule::Schedule;

pub const MAX_NEWTON_ITERS: usize = 100;
pub const MIN_DAMPING: f64 = 1.0 / (1u64 << 30) as f64;

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedSolution {
    pub w: DVector<f64>,
    /// `‖F(w) + a w − f‖`.
    pub residual: f64,
    pub iterations: usize,
}

/// Newton tolerance `1e-12 (1 + ‖f‖)`.
pub fn newton_tolerance(problem: &OperatorProblem) -> f64 {
    1e-12 * (1.0 + problem.norm(problem.rhs()))
}

/// Solves `F(w) + a w = f` for real `a` with Armijo-damped Newton steps.
pub fn solve_regularized(
    problem: &OperatorProblem,
    a: f64,
    initial_guess: &DVector<f64>,
) -> Result<RegularizedSolution> {
    if problem.resolvent().theta != 0.0 {
        return Err(DsmError::usage(
            "the regularized path is computed on the real ray only (theta = 0)",
        ));
    }
    let shift = Complex::new(a, 0.0);
    let tol = newton_tolerance(problem);
    let mut w = initial_guess.clone();
    let mut g = problem.regularized_residual(&w, a)?;
    let mut res = problem.norm(&g);
    for iter in 0..MAX_NEWTON_ITERS {
        if res <= tol {
            return Ok(RegularizedSolution {
                w,
                residual: res,
                iterations: iter,
            });
        }
        let factor = problem.shifted_factor(&w, shift)?;
        let (dir, _) = factor.solve_real(&g);
        let mut step = 1.0;
        loop {
            let trial = &w - &dir * step;
            let trial_g = problem.regularized_residual(&trial, a);
            if let Ok(trial_g) = trial_g {
                let trial_res = problem.norm(&trial_g);
                if trial_res <= (1.0 - 1e-4 * step) * res {
                    w = trial;
                    g = trial_g;
                    res = trial_res;
                    break;
                }
            }
            step *= 0.5;
            if step < MIN_DAMPING {
                // At the roundoff floor no direction decreases the residual.
                if res <= 100.0 * tol {
                    return Ok(RegularizedSolution {
                        w,
                        residual: res,
                        iterations: iter + 1,
                    });
                }
                return Err(DsmError::NoConvergence {
                    residual: res,
                    iterations: iter + 1,
                });
            }
        }
    }
    if res <= tol {
        return Ok(RegularizedSolution {
            w,
            residual: res,
            iterations: MAX_NEWTON_ITERS,
        });
    }
    Err(DsmError::NoConvergence {
        residual: res,
        iterations: MAX_NEWTON_ITERS,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEntry {
    pub a: f64,
    #[serde(skip)]
    pub w: DVector<f64>,
    pub residual: f64,
    pub newton_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegularizedPath {
    pub entries: Vec<PathEntry>,
    /// `w` at the smallest `a` reached.
    pub limit_estimate: Option<DVector<f64>>,
    /// Whether `‖w_{a_{j+1}} − w_{a_j}‖` decreased along the path.
    pub cauchy_decreasing: bool,
    /// The error that cut the path short, if any.
    pub failure: Option<DsmError>,
}

impl RegularizedPath {
    /// `max_j ‖w_{a_j}‖`.
    pub fn max_norm(&self, problem: &OperatorProblem) -> f64 {
        self.entries
            .iter()
            .map(|e| problem.norm(&e.w))
            .fold(0.0, f64::max)
    }
}

/// The default continuation grid: `r0, r0/2, …` down to `max(1e-8, r0 2^-40)`.
pub fn geometric_shifts(r0: f64) -> Vec<f64> {
    let floor = (r0 * 2f64.powi(-40)).max(1e-8);
    let mut out = Vec::new();
    let mut a = r0;
    while a >= floor {
        out.push(a);
        a *= 0.5;
    }
    out
}

/// Solves along strictly decreasing `a_values`, warm-starting each solve
/// from the previous point. The first failure ends the path.
pub fn track_path(
    problem: &OperatorProblem,
    a_values: &[f64],
    w_start: &DVector<f64>,
) -> Result<RegularizedPath> {
    if a_values.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(DsmError::usage("shift values must decrease strictly"));
    }
    if let Some(&a) = a_values.iter().find(|&&a| !(a > 0.0)) {
        return Err(DsmError::usage(format!(
            "shift values must be positive, got {a}"
        )));
    }
    let mut path = RegularizedPath {
        cauchy_decreasing: true,
        ..Default::default()
    };
    let mut guess = w_start.clone();
    for &a in a_values {
        match solve_regularized(problem, a, &guess) {
            Ok(sol) => {
                guess = sol.w.clone();
                path.entries.push(PathEntry {
                    a,
                    w: sol.w,
                    residual: sol.residual,
                    newton_iters: sol.iterations,
                });
            }
            Err(err @ (DsmError::NoConvergence { .. } | DsmError::ResolventSingular { .. })) => {
                path.failure = Some(err);
                break;
            }
            Err(err) => return Err(err),
        }
    }
    let steps: Vec<f64> = path
        .entries
        .windows(2)
        .map(|p| problem.norm(&(&p[1].w - &p[0].w)))
        .collect();
    path.cauchy_decreasing = steps.windows(2).all(|s| s[1] <= s[0]);
    path.limit_estimate = path.entries.last().map(|e| e.w.clone());
    Ok(path)
}

/// Tracks the path at `a(t_j) = r(t_j)` for the given times.
pub fn track_on_schedule(
    problem: &OperatorProblem,
    schedule: &Schedule,
    times: &[f64],
    w_start: &DVector<f64>,
) -> Result<(Vec<f64>, RegularizedPath)> {
    let a_values: Vec<f64> = times.iter().map(|&t| schedule.r(t)).collect();
    let path = track_path(problem, &a_values, w_start)?;
    Ok((times[..path.entries.len()].to_vec(), path))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeRow {
    pub t: f64,
    pub a: f64,
    /// `‖ẇ‖` from `ẇ = −ȧ (A(w) + aI)^{-1} w`.
    pub analytic_norm: f64,
    /// `‖ẇ_fd − ẇ‖`, when both neighbours exist.
    pub fd_error: Option<f64>,
    pub fd_tolerance: Option<f64>,
    /// `c1 |ȧ| r^{-b} ‖w‖`.
    pub resolvent_bound: f64,
    /// `c2 |ṙ| r^{-b}`.
    pub uniform_bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeReport {
    pub passed: bool,
    pub rows: Vec<DerivativeRow>,
}

/// Compares the implicit-function derivative of `w_{a(t)}` with centered
/// differences along the path, and checks the two norm bounds on `ẇ`.
///
/// `times[j]` must be the schedule time of `path.entries[j]`.
pub fn path_derivative_check(
    problem: &OperatorProblem,
    path: &RegularizedPath,
    times: &[f64],
    schedule: &Schedule,
) -> Result<DerivativeReport> {
    if times.len() != path.entries.len() {
        return Err(DsmError::usage("one time per path entry is required"));
    }
    let c1 = problem.resolvent().c1;
    let b = schedule.inputs.b;
    let c2 = schedule.inputs.c2;
    let mut rows = Vec::with_capacity(times.len());
    let analytic: Vec<DVector<f64>> = path
        .entries
        .iter()
        .zip(times)
        .map(|(e, &t)| {
            let st = schedule.eval(t);
            let factor = problem.shifted_factor(&e.w, Complex::new(e.a, 0.0))?;
            Ok(-factor.solve_real(&e.w).0 * st.a_dot.re)
        })
        .collect::<Result<_>>()?;
    for (j, (entry, &t)) in path.entries.iter().zip(times).enumerate() {
        let st = schedule.eval(t);
        let wdot = &analytic[j];
        let analytic_norm = problem.norm(wdot);
        let (fd_error, fd_tolerance) = if j > 0 && j + 1 < times.len() {
            let dt = times[j + 1] - times[j - 1];
            let fd = (&path.entries[j + 1].w - &path.entries[j - 1].w) / dt;
            // Second difference of the analytic derivative bounds the truncation error.
            let curvature = problem.norm(&(&analytic[j + 1] - &analytic[j - 1]));
            let tol =
                2.0 * curvature + 4.0 * newton_tolerance(problem) / dt + 1e-12 * analytic_norm;
            (Some(problem.norm(&(fd - wdot))), Some(tol))
        } else {
            (None, None)
        };
        let rb = c1 * st.a_dot.norm() * st.r.powf(-b) * problem.norm(&entry.w);
        let ub = c2 * st.r_dot.abs() * st.r.powf(-b);
        let slack = 1.0 + 1e-10;
        let passed = analytic_norm <= rb * slack + 1e-300
            && analytic_norm <= ub * slack + 1e-300
            && fd_error.zip(fd_tolerance).is_none_or(|(e, tol)| e <= tol);
        rows.push(DerivativeRow {
            t,
            a: entry.a,
            analytic_norm,
            fd_error,
            fd_tolerance,
            resolvent_bound: rb,
            uniform_bound: ub,
            passed,
        });
    }
    Ok(DerivativeReport {
        passed: rows.iter().all(|r| r.passed),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalSolution {
    pub y: DVector<f64>,
    /// `‖y_{a_{j+1}} − y_{a_j}‖`.
    pub step_history: Vec<f64>,
    /// `‖A y_{a_j} − f‖`.
    pub residual_history: Vec<f64>,
    pub max_norm: f64,
}

/// Minimal-norm solution of `A x = f` as the limit of
/// `y_a = (AᵀA + aI)^{-1} Aᵀ f` along a decreasing sequence of `a`.
/// Each `y_a` is the least-squares solution of `[A; √a I] y = [f; 0]`.
pub fn normal_solution(
    matrix: &DMatrix<f64>,
    f: &DVector<f64>,
    a_sequence: &[f64],
) -> Result<NormalSolution> {
    if matrix.nrows() != f.len() {
        return Err(DsmError::DimensionMismatch {
            expected: matrix.nrows(),
            found: f.len(),
        });
    }
    if a_sequence.is_empty() || a_sequence.iter().any(|&a| !(a > 0.0)) {
        return Err(DsmError::usage(
            "shift sequence must be nonempty and positive",
        ));
    }
    if a_sequence.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(DsmError::usage("shift sequence must decrease strictly"));
    }
    let (m, n) = matrix.shape();
    let mut stacked = DMatrix::zeros(m + n, n);
    stacked.view_mut((0, 0), (m, n)).copy_from(matrix);
    let mut rhs = DVector::zeros(m + n);
    rhs.rows_mut(0, m).copy_from(f);
    let mut prev: Option<DVector<f64>> = None;
    let mut step_history = Vec::new();
    let mut residual_history = Vec::new();
    let mut max_norm: f64 = 0.0;
    for &a in a_sequence {
        // Least squares on [A; √a I] keeps the condition number near a^{-1/2}.
        stacked.view_mut((m, 0), (n, n)).fill_with_identity();
        stacked.view_mut((m, 0), (n, n)).scale_mut(a.sqrt());
        let qr = stacked.clone().qr();
        let qtb = qr.q().transpose() * &rhs;
        let y = qr
            .r()
            .solve_upper_triangular(&qtb)
            .ok_or(DsmError::ResolventSingular {
                modulus: a,
                condition: f64::INFINITY,
                t: None,
            })?;
        residual_history.push((matrix * &y - f).norm());
        max_norm = max_norm.max(y.norm());
        if let Some(p) = &prev {
            step_history.push((&y - p).norm());
        }
        prev = Some(y);
    }
    Ok(NormalSolution {
        y: prev.expect("nonempty sequence"),
        step_history,
        residual_history,
        max_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{FnMap, LinearMap, ResolventParams};
    use crate::schedule::ScheduleInputs;

    fn cubic(f: f64) -> OperatorProblem {
        let map = FnMap::new(1, |u| u.map(|x| x * x * x))
            .with_jacobian(|u| DMatrix::from_element(1, 1, 3.0 * u[0] * u[0]));
        OperatorProblem::new(map, DVector::from_element(1, f))
            .unwrap()
            .with_resolvent(ResolventParams::monotone(10.0))
    }

    fn identity(f: f64) -> OperatorProblem {
        OperatorProblem::new(
            LinearMap::new(DMatrix::identity(1, 1)).unwrap(),
            DVector::from_element(1, f),
        )
        .unwrap()
        .with_resolvent(ResolventParams::monotone(10.0))
    }

    fn bisect(mut lo: f64, mut hi: f64, g: impl Fn(f64) -> f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(lo) * g(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn cubic_zero_rhs() {
        let sol = solve_regularized(&cubic(0.0), 1.0, &DVector::from_element(1, 0.7)).unwrap();
        assert!(sol.w[0].abs() < 1e-12);
    }

    #[test]
    fn linear_closed_form() {
        let sol = solve_regularized(&identity(1.0), 0.1, &DVector::zeros(1)).unwrap();
        assert!((sol.w[0] - 1.0 / 1.1).abs() < 1e-14);
        assert!(sol.iterations <= 2);
    }

    #[test]
    fn cubic_matches_bisection() {
        let oracle = bisect(0.0, 1.0, |w| w * w * w + 0.5 * w - 0.5);
        assert!((oracle - 0.589755).abs() < 1e-6);
        let sol = solve_regularized(&cubic(0.5), 0.5, &DVector::zeros(1)).unwrap();
        assert!((sol.w[0] - oracle).abs() < 1e-10);
    }

    #[test]
    fn complex_ray_rejected() {
        let p = identity(1.0).with_resolvent(ResolventParams::new(1.0, 1.0, 10.0, 0.5).unwrap());
        assert!(matches!(
            solve_regularized(&p, 0.1, &DVector::zeros(1)),
            Err(DsmError::Usage(_))
        ));
    }

    #[test]
    fn no_convergence_is_reported() {
        // F(w) + a w has no real root: F(w) = w^2 + 1 - a w, f = 0.
        let map = FnMap::new(1, |u| u.map(|x| x * x + 1.0));
        let p = OperatorProblem::new(map, DVector::zeros(1))
            .unwrap()
            .with_resolvent(ResolventParams::monotone(10.0));
        let err = solve_regularized(&p, 0.1, &DVector::from_element(1, 3.0)).unwrap_err();
        assert!(
            matches!(
                err,
                DsmError::NoConvergence { .. } | DsmError::ResolventSingular { .. }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn track_linear_path() {
        let a: Vec<f64> = geometric_shifts(1.0);
        let path = track_path(&identity(1.0), &a, &DVector::zeros(1)).unwrap();
        assert_eq!(path.entries.len(), a.len());
        for e in &path.entries {
            assert!((e.w[0] - 1.0 / (1.0 + e.a)).abs() < 1e-14);
            assert!(e.residual <= 1e-10 * 2.0);
        }
        assert!(path.cauchy_decreasing);
        assert!((path.limit_estimate.unwrap()[0] - 1.0).abs() < 1e-7);
        let empty = track_path(&identity(1.0), &[], &DVector::zeros(1)).unwrap();
        assert!(empty.entries.is_empty() && empty.limit_estimate.is_none());
        assert!(track_path(&identity(1.0), &[0.1, 0.2], &DVector::zeros(1)).is_err());
    }

    #[test]
    fn geometric_grid_bounds() {
        let g = geometric_shifts(1.0);
        assert_eq!(g.len(), 27);
        assert!(*g.last().unwrap() >= 1e-8);
        let g = geometric_shifts(1e-4);
        assert!(*g.last().unwrap() >= 1e-8);
    }

    #[test]
    fn derivative_of_linear_path() {
        let problem = identity(1.0);
        let schedule = Schedule::derive(ScheduleInputs {
            b: 1.0,
            kappa: 1.0,
            c0: 0.0,
            c1: 1.0,
            c2: 1.1,
            g0: 0.25,
            r0: 1.0,
            theta: 0.0,
            eps0: 10.0,
        })
        .unwrap();
        let times: Vec<f64> = (0..60).map(|i| i as f64 * 0.25).collect();
        let (times, path) =
            track_on_schedule(&problem, &schedule, &times, &DVector::zeros(1)).unwrap();
        let report = path_derivative_check(&problem, &path, &times, &schedule).unwrap();
        assert!(report.passed, "{report:?}");
        for (row, &t) in report.rows.iter().zip(&times) {
            let st = schedule.eval(t);
            let exact = st.r_dot.abs() / (1.0 + st.r).powi(2);
            assert!((row.analytic_norm - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn normal_solution_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let f = DVector::from_vec(vec![1.0, 0.0]);
        let a: Vec<f64> = (0..20).map(|i| 10f64.powi(-i)).collect();
        let sol = normal_solution(&m, &f, &a).unwrap();
        assert!((sol.y[0] - 1.0 / (1.0 + 1e-19)).abs() < 1e-14);
        assert_eq!(sol.y[1], 0.0);
        assert!(sol.residual_history.windows(2).all(|w| w[1] <= w[0]));

        let zero =
            normal_solution(&DMatrix::zeros(3, 3), &DVector::from_element(3, 1.0), &a).unwrap();
        // roundoff level ε ‖f‖ / √a_min
        assert!(zero.y.norm() < 1e-5);
    }
}
