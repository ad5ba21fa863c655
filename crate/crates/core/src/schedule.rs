//! The regularization schedule `a(t) = e^{iθ} r(t)` and its error envelope.
//!
//! Given the problem constants, the schedule is fully determined:
//!
//! ```text
//! p  = 1 + κ
//! k  = (b + 1) / (p − 1)
//! λ  = r0^k / (2 g0)
//! c3 = c0 c1,   c4 = c2 λ
//! c5 = r0^(2 − kp),   c6 = (kp − 2) / (4 c4)
//! r(t) = (c5 + c6 t)^(−1 / (kp − 2))
//! ```
//!
//! `r` solves `c4 |ṙ| / r^(kp − 1) = 1/4` exactly, and the envelope
//! `μ^{-1}(t) = r(t)^k / λ` bounds the distance from the flow to the
//! regularized path whenever the gates checked by [`Schedule::validate`]
//! pass.

use nalgebra::Complex;
use serde::Serialize;

use crate::error::{DsmError, Result};

/// Right-hand side of `c4 |ṙ| / r^(kp−1) = RATE_CONSTANT`.
pub const RATE_CONSTANT: f64 = 0.25;

/// A zero initial distance is replaced by `1e-8 r0^k` so that `λ` is finite.
pub const G0_FLOOR: f64 = 1e-8;

/// Exponent `k = (b + 1) / κ` of the envelope `r^k / λ`.
pub fn derive_exponent(b: f64, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(DsmError::usage(format!(
            "kappa must lie in (0, 1], got {kappa}"
        )));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(DsmError::usage(format!("b must be positive, got {b}")));
    }
    let p = 1.0 + kappa;
    Ok((b + 1.0) / (p - 1.0))
}

/// Scale `λ = r0^k / (2 g0)`, which makes `μ(0) g0 = 1/2`.
pub fn derive_lambda(r0: f64, k: f64, g0: f64) -> Result<f64> {
    if !(g0 > 0.0) {
        return Err(DsmError::usage(
            "g0 must be positive; apply the floor first",
        ));
    }
    if !(r0 > 0.0 && k > 0.0) {
        return Err(DsmError::usage("r0 and k must be positive"));
    }
    Ok(r0.powf(k) / (2.0 * g0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleInputs {
    pub b: f64,
    pub kappa: f64,
    pub c0: f64,
    pub c1: f64,
    /// Bound on `c1 ‖w_a‖` along the regularized path.
    pub c2: f64,
    /// Measured `‖u0 − w_{a(0)}‖`.
    pub g0: f64,
    pub r0: f64,
    pub theta: f64,
    pub eps0: f64,
}

impl ScheduleInputs {
    fn validate(&self) -> Result<()> {
        derive_exponent(self.b, self.kappa)?;
        for (name, v) in [
            ("c1", self.c1),
            ("c2", self.c2),
            ("r0", self.r0),
            ("eps0", self.eps0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DsmError::usage(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.c0 >= 0.0 && self.c0.is_finite()) {
            return Err(DsmError::usage(format!(
                "c0 must be nonnegative, got {}",
                self.c0
            )));
        }
        if !(self.g0 >= 0.0 && self.g0.is_finite()) {
            return Err(DsmError::usage(format!(
                "g0 must be nonnegative, got {}",
                self.g0
            )));
        }
        if !self.theta.is_finite() {
            return Err(DsmError::usage("theta must be finite"));
        }
        Ok(())
    }
}

/// The schedule at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState {
    pub r: f64,
    pub r_dot: f64,
    pub a: Complex<f64>,
    pub a_dot: Complex<f64>,
    /// `μ^{-1}(t) = r^k / λ`.
    pub envelope: f64,
}

/// Derived schedule constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Schedule {
    pub p: f64,
    pub k: f64,
    pub lambda: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub r0: f64,
    pub theta: f64,
    pub eps0: f64,
    /// The `g0` actually used, after the floor.
    pub g0: f64,
    pub g0_floored: bool,
    pub rate_constant: f64,
    pub inputs: ScheduleInputs,
}

impl Schedule {
    pub fn derive(inputs: ScheduleInputs) -> Result<Self> {
        inputs.validate()?;
        let p = 1.0 + inputs.kappa;
        let k = derive_exponent(inputs.b, inputs.kappa)?;
        let floor = G0_FLOOR * inputs.r0.powf(k);
        let g0 = if inputs.g0 == 0.0 { floor } else { inputs.g0 };
        let lambda = derive_lambda(inputs.r0, k, g0)?;
        let c3 = inputs.c0 * inputs.c1;
        let c4 = inputs.c2 * lambda;
        let m = k * p - 2.0;
        let c5 = inputs.r0.powf(-m);
        let c6 = m / (4.0 * c4);
        Ok(Self {
            p,
            k,
            lambda,
            c3,
            c4,
            c5,
            c6,
            r0: inputs.r0,
            theta: inputs.theta,
            eps0: inputs.eps0,
            g0,
            g0_floored: g0 > inputs.g0,
            rate_constant: RATE_CONSTANT,
            inputs,
        })
    }

    /// `kp − 2`, positive for every admissible `(b, κ)`.
    pub fn decay_exponent(&self) -> f64 {
        self.k * self.p - 2.0
    }

    pub fn r(&self, t: f64) -> f64 {
        (self.c5 + self.c6 * t).powf(-1.0 / self.decay_exponent())
    }

    /// The time at which `r(t) = r`, for `0 < r ≤ r0`.
    pub fn time_at(&self, r: f64) -> f64 {
        ((r.powf(-self.decay_exponent()) - self.c5) / self.c6).max(0.0)
    }

    pub fn eval(&self, t: f64) -> ScheduleState {
        let m = self.decay_exponent();
        let base = self.c5 + self.c6 * t;
        let r = base.powf(-1.0 / m);
        let r_dot = -self.c6 / m * base.powf(-1.0 / m - 1.0);
        let dir = if self.theta == 0.0 {
            Complex::new(1.0, 0.0)
        } else {
            Complex::from_polar(1.0, self.theta)
        };
        ScheduleState {
            r,
            r_dot,
            a: dir * r,
            a_dot: dir * r_dot,
            envelope: r.powf(self.k) / self.lambda,
        }
    }

    /// `μ(t) = λ r^{-k}`.
    pub fn mu(&self, t: f64) -> f64 {
        self.lambda * self.r(t).powf(-self.k)
    }

    /// `μ̇(t) = −k λ ṙ r^{-k-1}`.
    pub fn mu_dot(&self, t: f64) -> f64 {
        let s = self.eval(t);
        -self.k * self.lambda * s.r_dot * s.r.powf(-self.k - 1.0)
    }

    /// Slack of the majorant condition at `t`:
    /// `μ^{-1}(1 − μ̇/μ) − c3 r^{-b} μ^{-p} − c2 |ṙ| r^{-b}`.
    pub fn majorant_margin(&self, t: f64) -> f64 {
        let s = self.eval(t);
        let b = self.inputs.b;
        let inv_mu = s.envelope;
        let mu_ratio = -self.k * s.r_dot / s.r;
        let alpha = self.c3 * s.r.powf(-b) * inv_mu.powf(self.p);
        let beta = self.inputs.c2 * s.r_dot.abs() * s.r.powf(-b);
        inv_mu * (1.0 - mu_ratio) - alpha - beta
    }

    /// Checks the sufficient conditions for the envelope bound.
    pub fn validate(&self) -> GateReport {
        let ScheduleInputs { b, kappa, c2, .. } = self.inputs;
        let (k, p, r0, g0) = (self.k, self.p, self.r0, self.g0);
        let mut gates = Vec::with_capacity(4);

        // k |ṙ| / r ≤ 1/2 at t = 0 (r decays, so then for all t).
        // Equivalent to g0 ≤ (c2 / k) r0^(1−b).
        let rate = k * r0.powf(self.decay_exponent()) / (4.0 * self.c4);
        let ratio = g0 * k / c2;
        let rate_remedy = distance_remedy(1.0 - b, c2 / k * r0.powf(1.0 - b), ratio);
        gates.push(Gate::upper(GateKind::RateBound, rate, 0.5, rate_remedy));

        // g0 ≤ (c2 / k) r0^(b−1).
        let g0_max = c2 / k * r0.powf(b - 1.0);
        let g0_remedy = distance_remedy(b - 1.0, g0_max, ratio);
        gates.push(Gate::upper(
            GateKind::InitialDistance,
            g0,
            g0_max,
            g0_remedy,
        ));

        // r0 ≥ [4 c3 (2 c2 / k)^(p−1)]^(1 / (κ + (1−κ) b)).
        let exponent = kappa + (1.0 - kappa) * b;
        let threshold = (4.0 * self.c3 * (2.0 * c2 / k).powf(p - 1.0)).powf(1.0 / exponent);
        let remedy = if threshold >= self.eps0 {
            format!(
                "raise r0 to at least {threshold:.6e}; this exceeds eps0 = {:.6e}, so no admissible start exists for these constants",
                self.eps0
            )
        } else {
            format!("raise r0 to at least {threshold:.6e}")
        };
        gates.push(Gate::lower(
            GateKind::RadiusThreshold,
            r0,
            threshold,
            remedy,
        ));

        gates.push(Gate {
            kind: GateKind::ShiftDomain,
            value: r0,
            bound: self.eps0,
            slack: self.eps0 - r0,
            passed: r0 < self.eps0,
            remediation: format!("lower r0 below eps0 = {:.6e}", self.eps0),
        });

        GateReport {
            passed: gates.iter().all(|g| g.passed),
            gates,
        }
    }
}

/// Remedy for `g0 ≤ (c2/k) r0^e`, where `ratio = g0 k / c2`.
fn distance_remedy(e: f64, g0_max: f64, ratio: f64) -> String {
    if e == 0.0 {
        return format!("lower g0 to at most {g0_max:.6e} (independent of r0 when b = 1)");
    }
    let r0_needed = ratio.powf(1.0 / e);
    let direction = if e > 0.0 {
        "raise r0 to at least"
    } else {
        "lower r0 to at most"
    };
    format!("lower g0 to at most {g0_max:.6e} or {direction} {r0_needed:.6e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateKind {
    /// `k r0^(kp−2) / (4 c4) ≤ 1/2`.
    RateBound,
    /// `g0 ≤ (c2 / k) r0^(b−1)`.
    InitialDistance,
    /// `r0 ≥ [4 c3 (2 c2 / k)^(p−1)]^(1/(κ + (1−κ) b))`.
    RadiusThreshold,
    /// `r0 < ε0`.
    ShiftDomain,
}

impl GateKind {
    pub fn name(self) -> &'static str {
        match self {
            GateKind::RateBound => "rate-bound",
            GateKind::InitialDistance => "initial-distance",
            GateKind::RadiusThreshold => "radius-threshold",
            GateKind::ShiftDomain => "shift-domain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gate {
    pub kind: GateKind,
    pub value: f64,
    pub bound: f64,
    /// Nonnegative iff the gate passes.
    pub slack: f64,
    pub passed: bool,
    pub remediation: String,
}

impl Gate {
    fn upper(kind: GateKind, value: f64, bound: f64, remediation: String) -> Self {
        Self {
            kind,
            value,
            bound,
            slack: bound - value,
            passed: value <= bound,
            remediation,
        }
    }

    fn lower(kind: GateKind, value: f64, bound: f64, remediation: String) -> Self {
        Self {
            kind,
            value,
            bound,
            slack: value - bound,
            passed: value >= bound,
            remediation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateReport {
    pub passed: bool,
    pub gates: Vec<Gate>,
}

impl GateReport {
    pub fn failed(&self) -> impl Iterator<Item = &Gate> {
        self.gates.iter().filter(|g| !g.passed)
    }

    pub fn gate(&self, kind: GateKind) -> &Gate {
        self.gates
            .iter()
            .find(|g| g.kind == kind)
            .expect("all gates present")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn worked() -> ScheduleInputs {
        ScheduleInputs {
            b: 1.0,
            kappa: 1.0,
            c0: 0.0,
            c1: 1.0,
            c2: 1.0,
            g0: 0.25,
            r0: 1.0,
            theta: 0.0,
            eps0: 2.0,
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn exponent_examples() {
        assert_eq!(derive_exponent(1.0, 1.0).unwrap(), 2.0);
        assert_eq!(derive_exponent(1.0, 0.5).unwrap(), 4.0);
        assert_eq!(derive_exponent(0.5, 1.0).unwrap(), 1.5);
        assert!(derive_exponent(1.0, 0.0).is_err());
        assert!(derive_exponent(1.0, 1.1).is_err());
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(derive_lambda(1.0, 2.0, 0.25).unwrap(), 2.0);
        assert_eq!(derive_lambda(2.0, 2.0, 1.0).unwrap(), 2.0);
        assert!(derive_lambda(1.0, 2.0, 0.0).is_err());
        let lambda = derive_lambda(0.7, 3.0, 0.3).unwrap();
        assert!((lambda / 0.7f64.powi(3) * 0.3 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn worked_schedule() {
        let s = Schedule::derive(worked()).unwrap();
        assert_eq!(
            (s.k, s.p, s.lambda, s.c4, s.c5, s.c6),
            (2.0, 2.0, 2.0, 2.0, 1.0, 0.25)
        );
        assert_eq!(s.r(0.0), 1.0);
        assert!((s.r(12.0) - 0.5).abs() < 1e-15);
        let st = s.eval(0.0);
        assert_eq!(st.r, 1.0);
        assert!((st.r_dot + 0.125).abs() < 1e-15);
        assert_eq!(st.a, Complex::new(1.0, 0.0));
        assert!((st.envelope - 0.5).abs() < 1e-15);
        assert!((s.time_at(0.5) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn worked_gates_pass() {
        let s = Schedule::derive(worked()).unwrap();
        let report = s.validate();
        assert!(report.passed, "{report:?}");
        assert!((report.gate(GateKind::RateBound).value - 0.25).abs() < 1e-15);
        assert!((report.gate(GateKind::InitialDistance).bound - 0.5).abs() < 1e-15);
        assert_eq!(report.gate(GateKind::RadiusThreshold).bound, 0.0);
    }

    #[test]
    fn unit_b_distance_gate_ignores_r0() {
        for r0 in [0.1, 0.5, 1.5] {
            let s = Schedule::derive(ScheduleInputs { r0, ..worked() }).unwrap();
            let gate = s.validate().gate(GateKind::InitialDistance).clone();
            assert!((gate.bound - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn large_g0_fails_distance_gate() {
        let s = Schedule::derive(ScheduleInputs {
            g0: 1e6,
            ..worked()
        })
        .unwrap();
        let report = s.validate();
        assert!(!report.passed);
        let names: Vec<_> = report.failed().map(|g| g.kind.name()).collect();
        assert!(names.contains(&"initial-distance"), "{names:?}");
        assert!(report
            .gate(GateKind::InitialDistance)
            .remediation
            .contains("lower g0"));
    }

    #[test]
    fn radius_gate_remediation_mentions_threshold() {
        let s = Schedule::derive(ScheduleInputs {
            c0: 100.0,
            ..worked()
        })
        .unwrap();
        let gate = s.validate().gate(GateKind::RadiusThreshold).clone();
        assert!(!gate.passed);
        // 4 * 100 * (2 * 1 / 2)^1 = 400 > eps0.
        assert!((gate.bound - 400.0).abs() < 1e-10);
        assert!(gate.remediation.contains("exceeds eps0"));
    }

    #[test]
    fn zero_g0_is_floored() {
        let s = Schedule::derive(ScheduleInputs {
            g0: 0.0,
            ..worked()
        })
        .unwrap();
        assert!(s.g0_floored);
        assert_eq!(s.g0, 1e-8);
        assert!(s.lambda.is_finite());
    }

    #[test]
    fn envelope_decays_monotonically() {
        let s = Schedule::derive(worked()).unwrap();
        let mut prev = s.eval(0.0);
        for i in 1..2000 {
            let cur = s.eval(i as f64 * 0.5);
            assert!(cur.r < prev.r && cur.envelope < prev.envelope);
            assert!(cur.r_dot.abs() < prev.r_dot.abs() && cur.r_dot < 0.0);
            prev = cur;
        }
        assert!(s.eval(1e12).r < 1e-5);
    }

    #[test]
    fn ray_speed_equals_radial_speed() {
        for theta in [0.0, 0.3, -2.0, std::f64::consts::PI] {
            let s = Schedule::derive(ScheduleInputs { theta, ..worked() }).unwrap();
            for t in [0.0, 0.7, 13.0, 1e4] {
                let st = s.eval(t);
                assert!((st.a_dot.norm() - st.r_dot.abs()).abs() <= 1e-14 * st.r_dot.abs());
                assert!((st.a.norm() - st.r).abs() <= 1e-14 * st.r);
            }
        }
    }

    fn gated_inputs() -> impl Strategy<Value = ScheduleInputs> {
        (
            0.05f64..3.0,
            0.05f64..=1.0,
            0.0f64..5.0,
            0.1f64..3.0,
            0.01f64..2.0,
            0.05f64..1.0,
        )
            .prop_map(|(b, kappa, c0, c1, c2, frac)| {
                let k = (b + 1.0) / kappa;
                let p = 1.0 + kappa;
                let exponent = kappa + (1.0 - kappa) * b;
                let threshold = (4.0 * c0 * c1 * (2.0 * c2 / k).powf(p - 1.0)).powf(1.0 / exponent);
                let r0 = threshold.max(1e-2) * 1.5;
                // The rate bound caps g0 at (c2/k) r0^(1−b), the initial-distance gate at (c2/k) r0^(b−1).
                let g0 = frac * c2 / k * r0.powf(b - 1.0).min(r0.powf(1.0 - b));
                ScheduleInputs {
                    b,
                    kappa,
                    c0,
                    c1,
                    c2,
                    g0,
                    r0,
                    theta: 0.0,
                    eps0: r0 * 2.0,
                }
            })
    }

    proptest! {
        #[test]
        fn exponent_identities(b in 1e-3f64..=3.0, kappa in 1e-3f64..=1.0) {
            let k = derive_exponent(b, kappa).unwrap();
            let p = 1.0 + kappa;
            prop_assert!(rel(k + b, k * p - 1.0) <= 1e-12);
            prop_assert!((k * (p - 1.0) - 2.0 - (b - 1.0)).abs() <= 1e-12 * (k * (p - 1.0)).abs().max(1.0));
            prop_assert!(kappa + (1.0 - kappa) * b > 0.0);
            prop_assert!(k * p > 2.0);
        }

        #[test]
        fn rate_law_is_exact(inputs in gated_inputs(), t in 0.0f64..1e6) {
            let s = Schedule::derive(inputs).unwrap();
            let st = s.eval(t);
            let lhs = s.c4 * st.r_dot.abs() / st.r.powf(s.k * s.p - 1.0);
            prop_assert!(rel(lhs, 0.25) <= 1e-10);
            let identity = s.k * st.r_dot.abs() / st.r;
            let predicted = s.k * st.r.powf(s.decay_exponent()) / (4.0 * s.c4);
            prop_assert!(rel(identity, predicted) <= 1e-12);
        }

        #[test]
        fn gates_imply_majorant(inputs in gated_inputs()) {
            let s = Schedule::derive(inputs).unwrap();
            prop_assert!(s.validate().passed, "{:?}", s.validate());
            for i in 0..200 {
                let t = s.time_at(s.r0) + (i as f64).powi(3);
                let m = s.majorant_margin(t);
                prop_assert!(m >= -1e-12 * s.eval(t).envelope, "margin {} at t={}", m, t);
            }
        }
    }
}
