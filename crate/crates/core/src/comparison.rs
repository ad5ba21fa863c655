//! Numerical certificates for the comparison inequality.
//!
//! If a nonnegative `g` satisfies `ġ ≤ −γ(t) g + α(t, g) + β(t)` and a
//! positive `μ` satisfies
//!
//! ```text
//! α(t, 1/μ) + β(t) ≤ (1/μ) (γ(t) − μ̇/μ),      μ(0) g(0) ≤ 1,
//! ```
//!
//! then `g(t) ≤ 1/μ(t)` for all `t ≥ 0`. The proof runs through the solution
//! `φ` of `φ̇ = −γ φ + α(t, φ) + β`, `φ(0) = g(0)`, and the chain
//! `g ≤ φ ≤ 1/μ`. This module checks the hypotheses on a grid, integrates
//! `φ`, and verifies the chain for sampled `g`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{DsmError, Result};
use crate::ode::{self, Control, Dopri5Config, Termination};
use crate::schedule::Schedule;

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type RateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Tolerances for certification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertConfig {
    /// Sandwich tolerance is `tol_cert * (1 + 1/μ(t))`.
    pub tol_cert: f64,
    /// `φ` above this value counts as blow-up.
    pub blow_up: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for CertConfig {
    fn default() -> Self {
        Self {
            tol_cert: 1e-8,
            blow_up: 1e12,
            rel_tol: 1e-10,
            abs_tol: 1e-14,
        }
    }
}

/// `(γ, α, β, μ, g0)` on a time grid.
#[derive(Clone)]
pub struct InequalityInstance {
    gamma: TimeFn,
    alpha: RateFn,
    beta: TimeFn,
    mu: TimeFn,
    mu_dot: TimeFn,
    g0: f64,
    grid: Vec<f64>,
}

impl fmt::Debug for InequalityInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InequalityInstance")
            .field("g0", &self.g0)
            .field("grid_len", &self.grid.len())
            .field("horizon", &self.horizon())
            .finish_non_exhaustive()
    }
}

impl InequalityInstance {
    /// Builds an instance; `grid` must start at 0 and increase strictly.
    pub fn new(
        gamma: TimeFn,
        alpha: RateFn,
        beta: TimeFn,
        mu: TimeFn,
        mu_dot: TimeFn,
        g0: f64,
        grid: Vec<f64>,
    ) -> Result<Self> {
        if !(g0 >= 0.0 && g0.is_finite()) {
            return Err(DsmError::usage(format!("g0 must be nonnegative, got {g0}")));
        }
        if grid.len() < 2 || grid[0] != 0.0 {
            return Err(DsmError::usage(
                "grid must start at 0 and hold at least two points",
            ));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DsmError::usage("grid must be strictly increasing"));
        }
        for &t in &grid {
            let m = mu(t);
            if !(m > 0.0 && m.is_finite()) {
                return Err(DsmError::usage(format!(
                    "mu must be positive on the grid, got {m} at t = {t}"
                )));
            }
        }
        Ok(Self {
            gamma,
            alpha,
            beta,
            mu,
            mu_dot,
            g0,
            grid,
        })
    }

    /// The instance with `α(t, g) = α(t) g^p`.
    #[allow(clippy::too_many_arguments)]
    pub fn power_law(
        gamma: TimeFn,
        alpha_coeff: TimeFn,
        p: f64,
        beta: TimeFn,
        mu: TimeFn,
        mu_dot: TimeFn,
        g0: f64,
        grid: Vec<f64>,
    ) -> Result<Self> {
        if !(p > 1.0) {
            return Err(DsmError::usage(format!("power must exceed 1, got {p}")));
        }
        let alpha: RateFn = Arc::new(move |t, g: f64| alpha_coeff(t) * g.max(0.0).powf(p));
        Self::new(gamma, alpha, beta, mu, mu_dot, g0, grid)
    }

    /// The flow's distance inequality with the schedule's majorant:
    /// `γ = 1`, `α(t, g) = c3 r^{-b} g^p`, `β = c2 |ṙ| r^{-b}`, `μ = λ r^{-k}`.
    pub fn from_schedule(schedule: &Schedule, grid: Vec<f64>) -> Result<Self> {
        let s = *schedule;
        let b = s.inputs.b;
        let c2 = s.inputs.c2;
        Self::power_law(
            Arc::new(|_| 1.0),
            Arc::new(move |t| s.c3 * s.r(t).powf(-b)),
            s.p,
            Arc::new(move |t| {
                let st = s.eval(t);
                c2 * st.r_dot.abs() * st.r.powf(-b)
            }),
            Arc::new(move |t| s.mu(t)),
            Arc::new(move |t| s.mu_dot(t)),
            s.g0,
            grid,
        )
    }

    pub fn g0(&self) -> f64 {
        self.g0
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("grid is nonempty")
    }

    pub fn envelope(&self, t: f64) -> f64 {
        1.0 / (self.mu)(t)
    }

    /// Same instance with a different `β`.
    pub fn with_beta(&self, beta: TimeFn) -> Self {
        Self {
            beta,
            ..self.clone()
        }
    }

    /// Same instance on a different grid.
    pub fn with_grid(&self, grid: Vec<f64>) -> Result<Self> {
        Self::new(
            self.gamma.clone(),
            self.alpha.clone(),
            self.beta.clone(),
            self.mu.clone(),
            self.mu_dot.clone(),
            self.g0,
            grid,
        )
    }

    fn rate(&self, t: f64, g: f64) -> f64 {
        -(self.gamma)(t) * g + (self.alpha)(t, g) + (self.beta)(t)
    }

    fn majorant_slack(&self, t: f64) -> Result<f64> {
        let mu = (self.mu)(t);
        let inv = 1.0 / mu;
        let slack =
            inv * ((self.gamma)(t) - (self.mu_dot)(t) / mu) - (self.alpha)(t, inv) - (self.beta)(t);
        if !slack.is_finite() {
            return Err(DsmError::NonFiniteAt { t });
        }
        Ok(slack)
    }

    /// Worst slack of the majorant condition over the grid and its midpoints,
    /// and whether `μ(0) g0 ≤ 1`.
    pub fn check_conditions(&self) -> Result<Conditions> {
        let mut margin = f64::INFINITY;
        let mut worst_t = 0.0;
        let mids = self.grid.windows(2).map(|w| 0.5 * (w[0] + w[1]));
        for t in self.grid.iter().copied().chain(mids) {
            let s = self.majorant_slack(t)?;
            if s < margin {
                margin = s;
                worst_t = t;
            }
        }
        Ok(Conditions {
            margin,
            worst_t,
            initial_ok: (self.mu)(0.0) * self.g0 <= 1.0,
        })
    }

    /// Integrates `φ̇ = −γ φ + α(t, φ) + β`, `φ(0) = g0` onto the grid.
    pub fn integrate_phi(&self, config: &CertConfig) -> Result<PhiTrajectory> {
        let cfg = Dopri5Config {
            rel_tol: config.rel_tol,
            abs_tol: config.abs_tol,
            initial_step: (self.grid[1] - self.grid[0]).min(1e-2),
            min_step: 1e-14,
            max_step: f64::INFINITY,
            max_steps: 10_000_000,
        };
        let mut values = vec![self.g0];
        let mut blow_up = None;
        let out = ode::integrate(
            |t, y| {
                let v = self.rate(t, y[0]);
                if v.is_finite() {
                    Ok(DVector::from_element(1, v))
                } else {
                    Err(DsmError::NonFiniteAt { t })
                }
            },
            0.0,
            DVector::from_element(1, self.g0),
            self.horizon(),
            &self.grid[1..],
            &cfg,
            |info| {
                if info.y[0].abs() > config.blow_up {
                    blow_up = Some(info.t);
                    return Ok(Control::Stop);
                }
                if info.at_stop {
                    values.push(info.y[0]);
                }
                Ok(Control::Continue)
            },
        );
        let out = match out {
            Ok(out) => out,
            Err(DsmError::NonFiniteAt { t }) => {
                return Ok(PhiTrajectory {
                    times: self.grid[..values.len()].to_vec(),
                    values,
                    blow_up: Some(t),
                })
            }
            Err(e) => return Err(e),
        };
        if blow_up.is_none() && out.termination != Termination::Finished {
            blow_up = Some(out.t);
        }
        Ok(PhiTrajectory {
            times: self.grid[..values.len()].to_vec(),
            values,
            blow_up,
        })
    }

    /// Checks `g ≤ φ ≤ 1/μ` on the grid and assembles the certificate.
    pub fn verify_sandwich(&self, g_samples: &[f64], config: &CertConfig) -> Result<Certificate> {
        if g_samples.len() != self.grid.len() {
            return Err(DsmError::usage(format!(
                "expected {} samples of g, got {}",
                self.grid.len(),
                g_samples.len()
            )));
        }
        let conditions = self.check_conditions()?;
        let phi = self.integrate_phi(config)?;
        let mut max_violation: f64 = 0.0;
        let mut worst_t = None;
        for (i, &t) in self.grid.iter().enumerate() {
            let env = self.envelope(t);
            let tol = config.tol_cert * (1.0 + env);
            let upper = match phi.values.get(i) {
                Some(&p) => {
                    let v = (g_samples[i] - p).max(p - env);
                    if v > tol && v > max_violation {
                        max_violation = v;
                        worst_t = Some(t);
                    }
                    continue;
                }
                // Past blow-up only the outer bound is available.
                None => g_samples[i] - env,
            };
            if upper > tol && upper > max_violation {
                max_violation = upper;
                worst_t = Some(t);
            }
        }
        let sandwich_ok = worst_t.is_none() && phi.blow_up.is_none();
        let condition9_margin = conditions.margin;
        Ok(Certificate {
            passed: condition9_margin >= -config.tol_cert && conditions.initial_ok && sandwich_ok,
            condition9_margin,
            condition9_worst_t: conditions.worst_t,
            condition10_ok: conditions.initial_ok,
            sandwich_ok,
            max_violation,
            worst_t,
            blow_up: phi.blow_up,
            tol_cert: config.tol_cert,
            blow_up_sentinel: config.blow_up,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Conditions {
    /// `min_t [ (1/μ)(γ − μ̇/μ) − α(t, 1/μ) − β ]`.
    pub margin: f64,
    pub worst_t: f64,
    /// `μ(0) g(0) ≤ 1`.
    pub initial_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// First time `φ` left the finite range, if it did before the horizon.
    pub blow_up: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub passed: bool,
    pub condition9_margin: f64,
    pub condition9_worst_t: f64,
    pub condition10_ok: bool,
    pub sandwich_ok: bool,
    pub max_violation: f64,
    pub worst_t: Option<f64>,
    pub blow_up: Option<f64>,
    pub tol_cert: f64,
    pub blow_up_sentinel: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(c: f64) -> TimeFn {
        Arc::new(move |_| c)
    }

    fn grid(horizon: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| horizon * i as f64 / n as f64).collect()
    }

    fn logistic(g0: f64, beta: f64) -> InequalityInstance {
        InequalityInstance::power_law(
            constant(1.0),
            constant(1.0),
            2.0,
            constant(beta),
            constant(2.0),
            constant(0.0),
            g0,
            vec![0.0, 0.5, 1.0, 2.0, 4.0],
        )
        .unwrap()
    }

    #[test]
    fn constant_coefficient_conditions() {
        let c = logistic(0.5, 0.0).check_conditions().unwrap();
        assert!((c.margin - 0.25).abs() < 1e-15);
        assert!(c.initial_ok);
        let c = logistic(0.5, 1.0).check_conditions().unwrap();
        assert!((c.margin + 0.75).abs() < 1e-15);
        assert!(!logistic(0.6, 0.0).check_conditions().unwrap().initial_ok);
    }

    #[test]
    fn logistic_phi_closed_form() {
        let phi = logistic(0.5, 0.0)
            .integrate_phi(&CertConfig::default())
            .unwrap();
        assert!(phi.blow_up.is_none());
        for (t, v) in phi.times.iter().zip(&phi.values) {
            assert!((v - 1.0 / (1.0 + t.exp())).abs() < 1e-8, "t={t}");
        }
        assert!((phi.values[2] - 0.26894142137).abs() < 1e-8);
    }

    #[test]
    fn linear_decay_and_zero_equilibrium() {
        let inst = InequalityInstance::new(
            constant(1.0),
            Arc::new(|_, _| 0.0),
            constant(0.0),
            constant(0.5),
            constant(0.0),
            1.0,
            grid(3.0, 6),
        )
        .unwrap();
        let phi = inst.integrate_phi(&CertConfig::default()).unwrap();
        for (t, v) in phi.times.iter().zip(&phi.values) {
            assert!((v - (-t).exp()).abs() < 1e-9);
        }
        let zero = logistic(0.0, 0.0)
            .integrate_phi(&CertConfig::default())
            .unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blow_up_is_reported() {
        // φ̇ = −φ + φ² from φ(0) = 2 blows up at t = ln 2.
        let inst = InequalityInstance::power_law(
            constant(1.0),
            constant(1.0),
            2.0,
            constant(0.0),
            constant(0.1),
            constant(0.0),
            2.0,
            grid(2.0, 20),
        )
        .unwrap();
        let phi = inst.integrate_phi(&CertConfig::default()).unwrap();
        let t = phi.blow_up.expect("blow-up");
        assert!(t < 2f64.ln() + 1e-3 && t > 0.5, "{t}");
        let cert = inst
            .verify_sandwich(&[0.0; 21], &CertConfig::default())
            .unwrap();
        assert!(!cert.passed && !cert.sandwich_ok);
    }

    #[test]
    fn sandwich_with_phi_itself() {
        let inst = logistic(0.5, 0.0);
        let cfg = CertConfig::default();
        let phi = inst.integrate_phi(&cfg).unwrap();
        let cert = inst.verify_sandwich(&phi.values, &cfg).unwrap();
        assert!(cert.passed, "{cert:?}");
        assert_eq!(cert.max_violation, 0.0);
    }

    #[test]
    fn sandwich_detects_excess() {
        let inst = logistic(0.5, 0.0);
        let g: Vec<f64> = inst
            .grid()
            .iter()
            .map(|&t| 1.5 * inst.envelope(t))
            .collect();
        let cert = inst.verify_sandwich(&g, &CertConfig::default()).unwrap();
        assert!(!cert.passed && !cert.sandwich_ok);
        // g − φ ≥ 0.5/μ since φ ≤ 1/μ.
        assert!(cert.max_violation >= 0.5 * 0.5, "{cert:?}");
    }

    #[test]
    fn grid_validation() {
        let bad = InequalityInstance::new(
            constant(1.0),
            Arc::new(|_, _| 0.0),
            constant(0.0),
            constant(1.0),
            constant(0.0),
            0.1,
            vec![0.0, 1.0, 1.0],
        );
        assert!(bad.is_err());
        let neg_mu = InequalityInstance::new(
            constant(1.0),
            Arc::new(|_, _| 0.0),
            constant(0.0),
            constant(-1.0),
            constant(0.0),
            0.1,
            vec![0.0, 1.0],
        );
        assert!(neg_mu.is_err());
    }

    #[test]
    fn nonfinite_condition_names_time() {
        let inst = InequalityInstance::new(
            constant(1.0),
            Arc::new(|_, _| 0.0),
            Arc::new(|t| if t > 0.9 { f64::NAN } else { 0.0 }),
            constant(1.0),
            constant(0.0),
            0.1,
            vec![0.0, 1.0],
        )
        .unwrap();
        assert_eq!(
            inst.check_conditions().unwrap_err(),
            DsmError::NonFiniteAt { t: 1.0 }
        );
    }
}
