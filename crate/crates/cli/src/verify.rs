//! Invariant suites behind `dsm verify`.

use std::sync::Arc;

use dsm_core::comparison::{CertConfig, InequalityInstance};
use dsm_core::path::{
    normal_solution, path_derivative_check, solve_regularized, track_on_schedule,
};
use dsm_core::schedule::derive_exponent;
use dsm_core::solver::audit_distance_inequality;
use dsm_core::{LinearMap, NormKind, OperatorProblem, Schedule, ScheduleInputs, VectorSpace};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::CliError;
use crate::gallery::{self, gaussian_vector, random_orthogonal};
use crate::run::{self, ProblemFile, RunOptions};

pub const SUITES: [&str; 5] = ["operator", "schedule", "lemma1", "path", "theorem"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    /// Distance to the failure boundary; negative when failed.
    pub margin: f64,
    pub detail: String,
}

fn check(
    suite: &'static str,
    name: impl Into<String>,
    margin: f64,
    detail: impl Into<String>,
) -> Check {
    Check {
        suite,
        name: name.into(),
        passed: margin >= 0.0,
        margin,
        detail: detail.into(),
    }
}

/// Runs one suite, or every suite for `"all"` (each on its own thread).
pub fn run_suite(name: &str, seed: u64) -> Result<Vec<Check>, CliError> {
    match name {
        "all" => std::thread::scope(|s| {
            let handles: Vec<_> = SUITES
                .iter()
                .map(|suite| s.spawn(move || run_suite(suite, seed)))
                .collect();
            let mut out = Vec::new();
            for h in handles {
                out.extend(h.join().expect("suite thread panicked")?);
            }
            Ok(out)
        }),
        "operator" => operator_suite(seed),
        "schedule" => Ok(schedule_suite(seed)),
        "lemma1" => comparison_suite(seed),
        "path" => path_suite(seed),
        "theorem" => flow_suite(seed),
        other => Err(CliError::Usage(format!(
            "unknown suite '{other}'; choose all, {}",
            SUITES.join(", ")
        ))),
    }
}

/// Symmetric positive semidefinite matrix with `n − rank` zero eigenvalues.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> DMatrix<f64> {
    let q = random_orthogonal(rng, n);
    let eig = DVector::from_fn(n, |i, _| {
        if i < rank {
            rng.random_range(0.01..10.0)
        } else {
            0.0
        }
    });
    let m = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Log-spaced grid of `count` radii from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64))
        .collect()
}

fn operator_suite(seed: u64) -> Result<Vec<Check>, CliError> {
    const S: &str = "operator";
    let mut out = Vec::new();
    let mut rng = gallery::rng(seed);

    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let n = rng.random_range(1..=50);
        let rank = rng.random_range(0..=n);
        let m = random_psd(&mut rng, n, rank);
        let problem = OperatorProblem::new(LinearMap::new(m)?, DVector::zeros(n))?;
        let report =
            problem.verify_resolvent_bound(&DVector::zeros(n), &log_grid(1e-6, 0.99, 40))?;
        let margin = if report.failures > 0 {
            -1.0
        } else {
            1.0 + 1e-8 - report.max_scaled
        };
        worst = worst.min(margin);
    }
    out.push(check(
        S,
        "resolvent-bound-psd",
        worst,
        "max ‖(A+rI)^-1‖ r ≤ 1 + 1e-8 on 100 PSD matrices",
    ));

    for (kind, kappa) in [
        ("monotone-holder", 1.0),
        ("monotone-holder", 0.5),
        ("monotone-smooth", 1.0),
        ("wellposed-linear", 1.0),
    ] {
        let mut pf = ProblemFile::gallery(kind, 6, seed);
        pf.params.kappa = kappa;
        let gp = pf.build()?;
        let p = &gp.problem;
        let c0 = p.smoothness().c0.max(1.0);
        let mut fd_worst = f64::INFINITY;
        let mut holder_worst = f64::INFINITY;
        for _ in 0..20 {
            let u = gaussian_vector(&mut rng, 6);
            let h = gaussian_vector(&mut rng, 6);
            let ah = p.apply_derivative(&u, &h)?;
            let fu = p.eval(&u)?;
            for s in [1e-4, 1e-5, 1e-6] {
                let fd = (p.eval(&(&u + &h * s))? - &fu) / s;
                let tol = c0 * s.powf(kappa) * h.norm().powf(1.0 + kappa) + 1e-8;
                fd_worst = fd_worst.min(tol * (1.0 + ah.norm()) - (fd - &ah).norm());
            }
            let v = &u + gaussian_vector(&mut rng, 6) * rng.random_range(1e-3..1.0);
            let diff = gallery_spectral_gap(p, &u, &v)?;
            let sm = p.smoothness();
            holder_worst =
                holder_worst.min(sm.c0 * (&u - &v).norm().powf(sm.kappa) * (1.0 + 1e-8) - diff);
        }
        out.push(check(
            S,
            format!("derivative-consistency/{kind}/kappa={kappa}"),
            fd_worst,
            "forward differences match A(u)h",
        ));
        if kind != "wellposed-linear" {
            out.push(check(
                S,
                format!("holder-bound/{kind}/kappa={kappa}"),
                holder_worst,
                "‖A(u)−A(v)‖ ≤ c0 ‖u−v‖^κ",
            ));
        }
    }

    for kappa in [0.5, 1.0] {
        let mut pf = ProblemFile::gallery("monotone-holder", 3, seed);
        pf.params.kappa = kappa;
        let gp = pf.build()?;
        let est = gp
            .problem
            .estimate_holder_constants(200, 1.0, &DVector::zeros(3), seed)?;
        let c0 = 1.0 + kappa;
        let margin = (0.05 - (est.kappa - kappa).abs()).min(c0 + 0.1 - est.c0);
        out.push(check(
            S,
            format!("holder-estimate/kappa={kappa}"),
            margin,
            format!("estimated c0 = {:.4}, kappa = {:.4}", est.c0, est.kappa),
        ));
    }

    let s = 1e-4;
    for norm in [NormKind::L2, NormKind::Lp(1.5), NormKind::Lp(3.0)] {
        let space = VectorSpace::new(5, norm)?;
        let mut worst = f64::INFINITY;
        let mut worst_rate = f64::INFINITY;
        for _ in 0..100 {
            let curve = Curve::random(&mut rng, 5);
            let t: f64 = rng.random_range(0.0..1.0);
            let w = curve.at(t);
            let wdot = curve.rate(t);
            let fd = (space.norm(&curve.at(t + s)) - space.norm(&w)) / s;
            let bound = space.norm(&wdot) + 10.0 * s * curve.second_bound(&space);
            worst = worst.min(bound - fd.abs());
            let (_, rate) = space.norm_and_derivative(&w, &wdot)?;
            // ℓ^p with p < 2 has unbounded curvature near zero components.
            let h = 1e-6;
            let centered =
                (space.norm(&curve.at(t + h)) - space.norm(&curve.at(t - h))) / (2.0 * h);
            worst_rate = worst_rate.min(1e-5 * (1.0 + rate.abs()) - (rate - centered).abs());
        }
        out.push(check(
            S,
            format!("norm-rate-bound/{norm:?}"),
            worst,
            "|d‖w‖/dt| ≤ ‖ẇ‖ + 10 s M",
        ));
        out.push(check(
            S,
            format!("norm-derivative/{norm:?}"),
            worst_rate,
            "Gateaux rate matches centered differences",
        ));

        let mut tri = f64::INFINITY;
        for _ in 0..100 {
            let x = gaussian_vector(&mut rng, 5);
            let y = gaussian_vector(&mut rng, 5);
            let rhs = space.norm(&x) + space.norm(&y);
            tri = tri.min(rhs * (1.0 + 8.0 * f64::EPSILON) - space.norm(&(&x + &y)));
        }
        out.push(check(
            S,
            format!("triangle-inequality/{norm:?}"),
            tri,
            "100 random pairs",
        ));
    }
    Ok(out)
}

fn gallery_spectral_gap(
    p: &OperatorProblem,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<f64, CliError> {
    Ok(dsm_core::linalg::spectral_norm(
        &(p.jacobian(u)? - p.jacobian(v)?),
    ))
}

/// `w(t) = a + b sin(ωt) + c t²`.
pub struct Curve {
    a: DVector<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    omega: f64,
}

impl Curve {
    pub fn random(rng: &mut ChaCha8Rng, n: usize) -> Self {
        Self {
            a: gaussian_vector(rng, n),
            b: gaussian_vector(rng, n),
            c: gaussian_vector(rng, n),
            omega: rng.random_range(0.5..3.0),
        }
    }

    pub fn at(&self, t: f64) -> DVector<f64> {
        &self.a + &self.b * (self.omega * t).sin() + &self.c * (t * t)
    }

    pub fn rate(&self, t: f64) -> DVector<f64> {
        &self.b * (self.omega * (self.omega * t).cos()) + &self.c * (2.0 * t)
    }

    /// Bound on `‖ẅ‖` over all `t`.
    pub fn second_bound(&self, space: &VectorSpace) -> f64 {
        space.norm(&self.b) * self.omega * self.omega + 2.0 * space.norm(&self.c)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Inputs that pass every gate: `r0` above the radius threshold and `g0`
/// below both distance bounds.
pub fn gated_inputs(rng: &mut ChaCha8Rng) -> ScheduleInputs {
    let b: f64 = rng.random_range(0.05..3.0);
    let kappa: f64 = rng.random_range(0.05..=1.0);
    let c0: f64 = rng.random_range(0.0..5.0);
    let c1: f64 = rng.random_range(0.1..3.0);
    let c2: f64 = rng.random_range(0.01..2.0);
    let k = (b + 1.0) / kappa;
    let exponent = kappa + (1.0 - kappa) * b;
    let threshold = (4.0 * c0 * c1 * (2.0 * c2 / k).powf(kappa)).powf(1.0 / exponent);
    let r0: f64 = threshold.max(1e-2) * rng.random_range(1.1..2.0);
    let g0 = rng.random_range(0.05..1.0) * c2 / k * r0.powf(b - 1.0).min(r0.powf(1.0 - b));
    ScheduleInputs {
        b,
        kappa,
        c0,
        c1,
        c2,
        g0,
        r0,
        theta: 0.0,
        eps0: 2.0 * r0,
    }
}

fn schedule_suite(seed: u64) -> Vec<Check> {
    const S: &str = "schedule";
    let mut out = Vec::new();
    let mut rng = gallery::rng(seed);
    let mut worst = f64::INFINITY;
    let mut min_kp = f64::INFINITY;
    for _ in 0..1000 {
        // (0, 3] × (0, 1]
        let b = 3.0 - rng.random_range(0.0..3.0);
        let kappa = 1.0 - rng.random_range(0.0..1.0);
        let k = match derive_exponent(b, kappa) {
            Ok(k) => k,
            Err(_) => {
                worst = -1.0;
                continue;
            }
        };
        let p = 1.0 + kappa;
        let errors = [
            rel(k + b, k * p - 1.0),
            rel(k * (p - 1.0), b + 1.0),
            rel(k * (p - 1.0) - 2.0 + 1.0, b),
            rel((k * p - 2.0) / (k * p - 1.0 - k), (k * p - 2.0) / (b)),
        ];
        for e in errors {
            worst = worst.min(1e-12 - e);
        }
        min_kp = min_kp.min(k * p);
    }
    out.push(check(
        S,
        "exponent-identities",
        worst,
        "1000 random (b, κ); relative error ≤ 1e-12",
    ));
    out.push(check(
        S,
        "kp-exceeds-two",
        min_kp - 2.0,
        format!("min kp = {min_kp:.6}"),
    ));

    let mut rate = f64::INFINITY;
    let mut majorant = f64::INFINITY;
    let mut gates = f64::INFINITY;
    for _ in 0..200 {
        let inputs = gated_inputs(&mut rng);
        let s = match Schedule::derive(inputs) {
            Ok(s) => s,
            Err(_) => {
                gates = -1.0;
                continue;
            }
        };
        gates = gates.min(if s.validate().passed { 1.0 } else { -1.0 });
        for i in 0..40 {
            let t = (i as f64).powi(3);
            let st = s.eval(t);
            let lhs = s.c4 * st.r_dot.abs() / st.r.powf(s.k * s.p - 1.0);
            rate = rate.min(1e-10 - rel(lhs, 0.25));
            majorant = majorant.min(s.majorant_margin(t) + 1e-12 * st.envelope);
        }
    }
    out.push(check(
        S,
        "gated-inputs-pass",
        gates,
        "200 constructed inputs pass every gate",
    ));
    out.push(check(S, "rate-law", rate, "c4 |ṙ| / r^(kp−1) = 1/4"));
    out.push(check(
        S,
        "majorant-margin",
        majorant,
        "gates imply a nonnegative majorant margin",
    ));

    let worked = Schedule::derive(ScheduleInputs {
        b: 1.0,
        kappa: 1.0,
        c0: 0.0,
        c1: 1.0,
        c2: 1.0,
        g0: 0.25,
        r0: 1.0,
        theta: 0.0,
        eps0: 2.0,
    });
    let margin = match worked {
        Ok(s) => {
            let errs = [
                (s.k - 2.0).abs(),
                (s.lambda - 2.0).abs(),
                (s.c4 - 2.0).abs(),
                (s.c6 - 0.25).abs(),
                (s.r(12.0) - 0.5).abs(),
            ];
            1e-14 - errs.iter().cloned().fold(0.0, f64::max)
        }
        Err(_) => -1.0,
    };
    out.push(check(
        S,
        "worked-example",
        margin,
        "k = 2, λ = 2, c4 = 2, c6 = 1/4, r(12) = 1/2",
    ));
    out
}

/// A random comparison instance whose majorant conditions hold, with a
/// subsolution `g` sampled on its grid.
///
/// `γ = 1`, `α(t, g) = α0 (1 + sin(t)/2) g^p`, `β = β0 e^{-t}`,
/// `μ = μ0 e^{νt}`; the coefficients are scaled so each term uses at most
/// 30% of `(1 − ν)/μ`. `g` solves the same equation with `α` and `β`
/// halved, from `0.9 g0`, by fixed-step RK4.
pub fn random_comparison_instance(
    rng: &mut ChaCha8Rng,
) -> Result<(InequalityInstance, Vec<f64>), CliError> {
    let p: f64 = 2.0 - rng.random_range(0.0..1.0);
    let nu: f64 = rng.random_range(0.0..0.5);
    let mu0: f64 = rng.random_range(1.0..4.0);
    let alpha0 = rng.random_range(0.0..1.0) * 0.2 * (1.0 - nu) * mu0.powf(p - 1.0);
    let beta0 = rng.random_range(0.0..1.0) * 0.3 * (1.0 - nu) / mu0;
    let g0 = rng.random_range(0.0..1.0) / mu0;
    let grid: Vec<f64> = (0..=200).map(|i| i as f64 * 0.05).collect();
    let instance = InequalityInstance::power_law(
        Arc::new(|_| 1.0),
        Arc::new(move |t: f64| alpha0 * (1.0 + 0.5 * t.sin())),
        p,
        Arc::new(move |t: f64| beta0 * (-t).exp()),
        Arc::new(move |t: f64| mu0 * (nu * t).exp()),
        Arc::new(move |t: f64| nu * mu0 * (nu * t).exp()),
        g0,
        grid.clone(),
    )?;
    let f = |t: f64, g: f64| {
        -g + 0.5 * alpha0 * (1.0 + 0.5 * t.sin()) * g.max(0.0).powf(p) + 0.5 * beta0 * (-t).exp()
    };
    let mut g = 0.9 * g0;
    let mut samples = vec![g];
    for w in grid.windows(2) {
        let steps = 20;
        let h = (w[1] - w[0]) / steps as f64;
        let mut t = w[0];
        for _ in 0..steps {
            let k1 = f(t, g);
            let k2 = f(t + 0.5 * h, g + 0.5 * h * k1);
            let k3 = f(t + 0.5 * h, g + 0.5 * h * k2);
            let k4 = f(t + h, g + h * k3);
            g += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        samples.push(g);
    }
    Ok((instance, samples))
}

fn comparison_suite(seed: u64) -> Result<Vec<Check>, CliError> {
    const S: &str = "lemma1";
    let mut out = Vec::new();
    let cfg = CertConfig::default();

    let logistic = InequalityInstance::power_law(
        Arc::new(|_| 1.0),
        Arc::new(|_| 1.0),
        2.0,
        Arc::new(|_| 0.0),
        Arc::new(|_| 2.0),
        Arc::new(|_| 0.0),
        0.5,
        vec![0.0, 0.5, 1.0, 2.0],
    )?;
    let phi = logistic.integrate_phi(&cfg)?;
    let err = phi
        .times
        .iter()
        .zip(&phi.values)
        .map(|(t, v)| (v - 1.0 / (1.0 + t.exp())).abs())
        .fold(0.0, f64::max);
    out.push(check(
        S,
        "logistic-closed-form",
        1e-8 - err,
        format!("max error {err:.3e}"),
    ));

    let mut rng = gallery::rng(seed);
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    for _ in 0..100 {
        let (instance, g) = random_comparison_instance(&mut rng)?;
        let cert = instance.verify_sandwich(&g, &cfg)?;
        if !cert.passed {
            failures += 1;
        }
        worst = worst.min(cert.condition9_margin);
    }
    out.push(check(
        S,
        "random-sandwich",
        if failures == 0 {
            worst
        } else {
            -(failures as f64)
        },
        format!("100 instances, {failures} failed"),
    ));

    let schedule = Schedule::derive(ScheduleInputs {
        b: 1.0,
        kappa: 1.0,
        c0: 2.0,
        c1: 1.0,
        c2: 0.055,
        g0: 0.02,
        r0: 0.6,
        theta: 0.0,
        eps0: 10.0,
    })?;
    let horizon = schedule.time_at(1e-2);
    let grid: Vec<f64> = std::iter::once(0.0)
        .chain(log_grid(horizon * 1e-4, horizon, 200))
        .collect();
    let instance = InequalityInstance::from_schedule(&schedule, grid)?;
    let phi = instance.integrate_phi(&cfg)?;
    let cert = instance.verify_sandwich(&phi.values, &cfg)?;
    out.push(check(
        S,
        "schedule-majorant",
        if cert.passed {
            cert.condition9_margin.max(0.0)
        } else {
            -1.0
        },
        format!("gates passed: {}", schedule.validate().passed),
    ));
    Ok(out)
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (f(hi) > 0.0) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn path_suite(seed: u64) -> Result<Vec<Check>, CliError> {
    const S: &str = "path";
    let mut out = Vec::new();

    let cubic = OperatorProblem::new(
        dsm_core::FnMap::new(1, |u| u.map(|x| x * x * x))
            .with_jacobian(|u| DMatrix::from_element(1, 1, 3.0 * u[0] * u[0])),
        DVector::from_element(1, 0.5),
    )?;
    let oracle = bisect(0.0, 1.0, |w| w * w * w + 0.5 * w - 0.5);
    let w = solve_regularized(&cubic, 0.5, &DVector::zeros(1))?.w[0];
    out.push(check(
        S,
        "cubic-bisection",
        1e-10 - (w - oracle).abs(),
        format!("w = {w:.12}"),
    ));

    let gp = ProblemFile::gallery("monotone-holder", 4, seed).build()?;
    let plan = run::plan(&gp, &RunOptions::default(), seed)?;
    let times: Vec<f64> = log_grid(1e-2, plan.schedule.time_at(1e-2), 24);
    let (times, path) = track_on_schedule(&plan.problem, &plan.schedule, &times, &plan.w0)?;
    let report = path_derivative_check(&plan.problem, &path, &times, &plan.schedule)?;
    let worst = report
        .rows
        .iter()
        .map(|r| {
            r.fd_tolerance
                .zip(r.fd_error)
                .map_or(0.0, |(tol, e)| tol - e)
        })
        .fold(f64::INFINITY, f64::min);
    out.push(check(
        S,
        "path-derivative",
        if report.passed {
            worst.max(0.0)
        } else {
            worst.min(-f64::MIN_POSITIVE)
        },
        format!("{} rows", report.rows.len()),
    ));

    let mut rng = gallery::rng(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..50 {
        let a = gallery::rank_deficient_matrix(&mut rng, 5, 3);
        let x0 = gaussian_vector(&mut rng, 5);
        let f = &a * x0;
        let svd = a.clone().svd(true, true);
        let pinv = svd
            .pseudo_inverse(1e-12)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let oracle = pinv * &f;
        let shifts: Vec<f64> = (0..=30)
            .map(|i| 10f64.powf(-(i as f64) * 8.0 / 30.0))
            .collect();
        let sol = normal_solution(&a, &f, &shifts)?;
        worst = worst.min(1e-6 - (sol.y - oracle).norm());
    }
    out.push(check(
        S,
        "normal-solution-svd",
        worst,
        "50 random 5×5 rank-3 systems",
    ));
    Ok(out)
}

fn flow_suite(seed: u64) -> Result<Vec<Check>, CliError> {
    const S: &str = "theorem";
    let mut out = Vec::new();
    for (kind, n, kappa) in [
        ("monotone-holder", 2, 1.0),
        ("monotone-holder", 16, 0.5),
        ("wellposed-linear", 16, 1.0),
    ] {
        let mut pf = ProblemFile::gallery(kind, n, seed);
        pf.params.kappa = kappa;
        let gp = pf.build()?;
        let opts = RunOptions::default();
        let res = run::execute(&gp, &opts, seed)?;
        let label = format!("{kind}/n={n}/kappa={kappa}");
        out.push(check(
            S,
            format!("gates/{label}"),
            if res.plan.gates.passed { 0.0 } else { -1.0 },
            "",
        ));
        let Some(traj) = res.trajectory.as_ref() else {
            continue;
        };
        out.push(check(
            S,
            format!("converged/{label}"),
            if res.outcome == run::Outcome::Converged {
                0.0
            } else {
                -1.0
            },
            format!("{:?}", traj.status),
        ));
        let env = res.envelope.as_ref();
        out.push(check(
            S,
            format!("envelope/{label}"),
            env.map_or(-1.0, |e| {
                if e.passed {
                    e.min_relative_slack + opts.tol_env
                } else {
                    -1.0
                }
            }),
            env.map_or("no samples".to_string(), |e| {
                format!("{} samples", e.samples)
            }),
        ));
        let y_norm = res.plan.problem.norm(&gp.y);
        let d = res.metrics.dist_to_y_at_stop_r.unwrap_or(f64::INFINITY);
        out.push(check(
            S,
            format!("convergence/{label}"),
            1e-3 * (1.0 + y_norm) - d,
            format!("dist_to_y = {d:.3e}"),
        ));
        let bound = res.plan.max_w_norm + res.plan.schedule.eval(0.0).envelope + 1e-8;
        let sup = res.metrics.max_u_norm.unwrap_or(f64::INFINITY);
        out.push(check(
            S,
            format!("bounded/{label}"),
            bound - sup,
            format!("sup ‖u‖ = {sup:.4e}"),
        ));
        let audit = audit_distance_inequality(&res.plan.problem, &res.plan.schedule, traj, 1e-3)?;
        out.push(check(
            S,
            format!("distance-inequality/{label}"),
            if audit.passed {
                10.0 - audit.worst_ratio
            } else {
                -1.0
            },
            format!("worst excess / discretization = {:.3e}", audit.worst_ratio),
        ));
    }
    Ok(out)
}

pub fn checks_csv(checks: &[Check]) -> String {
    let mut out = String::from("suite,check,passed,margin\n");
    for c in checks {
        out.push_str(&format!(
            "{},{},{},{:e}\n",
            c.suite,
            c.name.replace(',', ";"),
            c.passed,
            c.margin
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_usage() {
        assert!(matches!(run_suite("bogus", 0), Err(CliError::Usage(_))));
    }

    #[test]
    fn schedule_suite_passes() {
        let checks = run_suite("schedule", 5).unwrap();
        assert!(checks.iter().all(|c| c.passed), "{checks:#?}");
    }

    #[test]
    fn curve_derivative_matches() {
        let mut rng = gallery::rng(1);
        let c = Curve::random(&mut rng, 3);
        let h = 1e-6;
        let fd = (c.at(0.4 + h) - c.at(0.4 - h)) / (2.0 * h);
        assert!((fd - c.rate(0.4)).norm() < 1e-8);
    }
}
