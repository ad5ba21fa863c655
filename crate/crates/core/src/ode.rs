//! Dormand–Prince 5(4) with embedded error control.

use nalgebra::DVector;

use crate::error::{DsmError, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order weights are the last row of A (FSAL); these are fifth minus fourth.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5Config {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for Dopri5Config {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            initial_step: 0.01,
            min_step: 1e-12,
            max_step: f64::INFINITY,
            max_steps: 1_000_000,
        }
    }
}

/// What the observer wants after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Reached `t_end`.
    Finished,
    /// The observer asked to stop.
    Stopped,
    /// Step size fell below `min_step`.
    StepUnderflow,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    pub t: f64,
    pub y: DVector<f64>,
    pub termination: Termination,
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    /// Sum over accepted steps of the max-norm of the local error estimate.
    pub error_estimate: f64,
}

/// One accepted step as seen by the observer.
pub struct StepInfo<'a> {
    pub t: f64,
    pub y: &'a DVector<f64>,
    /// Max-norm of this step's local error estimate.
    pub local_error: f64,
    /// True when `t` is one of the requested stop times.
    pub at_stop: bool,
}

/// Integrates `ẏ = f(t, y)` from `t0` to `t_end`, landing exactly on every
/// time in `stops` (sorted, inside `(t0, t_end]`).
pub fn integrate<F, O>(
    mut f: F,
    t0: f64,
    y0: DVector<f64>,
    t_end: f64,
    stops: &[f64],
    config: &Dopri5Config,
    mut observer: O,
) -> Result<Integration>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
    O: FnMut(StepInfo<'_>) -> Result<Control>,
{
    if !(t_end >= t0) {
        return Err(DsmError::usage("integration end precedes start"));
    }
    let mut out = Integration {
        t: t0,
        y: y0,
        termination: Termination::Finished,
        accepted: 0,
        rejected: 0,
        evaluations: 0,
        error_estimate: 0.0,
    };
    if t_end == t0 {
        return Ok(out);
    }
    let mut stop_iter = stops
        .iter()
        .copied()
        .filter(|&s| s > t0 && s <= t_end)
        .peekable();
    let mut h = config.initial_step.min(t_end - t0).min(config.max_step);
    let mut k0 = f(out.t, &out.y)?;
    out.evaluations += 1;
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);

    loop {
        if out.accepted + out.rejected >= config.max_steps {
            out.termination = Termination::MaxSteps;
            return Ok(out);
        }
        let target = stop_iter.peek().copied().unwrap_or(t_end);
        let mut landing = false;
        let mut step = h;
        if out.t + step >= target || (target - out.t - step) < 1e-12 * target.abs().max(1.0) {
            step = target - out.t;
            landing = true;
        }

        k.clear();
        k.push(k0.clone());
        let mut y_stage = out.y.clone();
        for s in 1..7 {
            y_stage.copy_from(&out.y);
            for (j, kj) in k.iter().enumerate() {
                let coeff = A[s][j];
                if coeff != 0.0 {
                    y_stage.axpy(step * coeff, kj, 1.0);
                }
            }
            k.push(f(out.t + C[s] * step, &y_stage)?);
            out.evaluations += 1;
        }
        // y_stage now holds the fifth-order solution (row 6 of A).
        let y_new = y_stage;
        let mut err_vec = DVector::zeros(out.y.len());
        for (j, kj) in k.iter().enumerate() {
            if E[j] != 0.0 {
                err_vec.axpy(step * E[j], kj, 1.0);
            }
        }
        let n = out.y.len().max(1) as f64;
        let err = (err_vec
            .iter()
            .zip(out.y.iter().zip(y_new.iter()))
            .map(|(e, (a, b))| {
                let sc = config.abs_tol + config.rel_tol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum::<f64>()
            / n)
            .sqrt();
        if !err.is_finite() {
            h = step * 0.2;
            out.rejected += 1;
            if h < config.min_step {
                out.termination = Termination::StepUnderflow;
                return Ok(out);
            }
            continue;
        }

        if err <= 1.0 {
            out.t = if landing { target } else { out.t + step };
            out.y = y_new;
            out.accepted += 1;
            let local_error = err_vec.amax();
            out.error_estimate += local_error;
            k0 = k.pop().expect("seven stages");
            let at_stop = landing && stop_iter.peek().is_some_and(|&s| s == target);
            if at_stop {
                stop_iter.next();
            }
            let control = observer(StepInfo {
                t: out.t,
                y: &out.y,
                local_error,
                at_stop,
            })?;
            if control == Control::Stop {
                out.termination = Termination::Stopped;
                return Ok(out);
            }
            if out.t >= t_end {
                out.termination = Termination::Finished;
                return Ok(out);
            }
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            // Keep the pre-landing step size so a clipped step does not shrink h.
            h = (if landing { h.max(step) } else { step } * fac).min(config.max_step);
        } else {
            out.rejected += 1;
            h = step * (0.9 * err.powf(-0.2)).max(0.2);
        }
        if h < config.min_step {
            out.termination = Termination::StepUnderflow;
            return Ok(out);
        }
    }
}

/// A single Dormand–Prince step of size `h` (which may be negative).
pub fn single_step<F>(mut f: F, t: f64, y: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    k.push(f(t, y)?);
    let mut stage = y.clone();
    for s in 1..7 {
        stage.copy_from(y);
        for (j, kj) in k.iter().enumerate() {
            if A[s][j] != 0.0 {
                stage.axpy(h * A[s][j], kj, 1.0);
            }
        }
        if s < 6 {
            k.push(f(t + C[s] * h, &stage)?);
        }
    }
    Ok(stage)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn exponential_decay() {
        let cfg = Dopri5Config {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            ..Default::default()
        };
        let stops = [1.0, 2.0, 5.0];
        let mut seen = Vec::new();
        let out = integrate(
            |_, y| Ok(-y),
            0.0,
            scalar(1.0),
            5.0,
            &stops,
            &cfg,
            |info| {
                if info.at_stop {
                    seen.push((info.t, info.y[0]));
                }
                Ok(Control::Continue)
            },
        )
        .unwrap();
        assert_eq!(out.termination, Termination::Finished);
        assert_eq!(seen.iter().map(|s| s.0).collect::<Vec<_>>(), stops);
        for (t, y) in seen {
            assert!((y - (-t).exp()).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn logistic_matches_closed_form() {
        let cfg = Dopri5Config {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            ..Default::default()
        };
        let out = integrate(
            |_, y| Ok(y.map(|p| -p + p * p)),
            0.0,
            scalar(0.5),
            1.0,
            &[],
            &cfg,
            |_| Ok(Control::Continue),
        )
        .unwrap();
        assert!((out.y[0] - 1.0 / (1.0 + 1f64.exp())).abs() < 1e-10);
    }

    #[test]
    fn observer_can_stop() {
        let out = integrate(
            |_, y| Ok(-y),
            0.0,
            scalar(1.0),
            100.0,
            &[],
            &Dopri5Config::default(),
            |info| {
                Ok(if info.t > 1.0 {
                    Control::Stop
                } else {
                    Control::Continue
                })
            },
        )
        .unwrap();
        assert_eq!(out.termination, Termination::Stopped);
        assert!(out.t > 1.0 && out.t < 100.0);
    }

    #[test]
    fn blow_up_underflows() {
        let out = integrate(
            |_, y| Ok(y.map(|p| p * p)),
            0.0,
            scalar(1.0),
            2.0,
            &[],
            &Dopri5Config::default(),
            |_| Ok(Control::Continue),
        )
        .unwrap();
        assert_eq!(out.termination, Termination::StepUnderflow);
        assert!((out.t - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_step_is_fifth_order() {
        let exact = (-0.1f64).exp();
        let y = single_step(|_, y| Ok(-y), 0.0, &scalar(1.0), 0.1).unwrap();
        assert!((y[0] - exact).abs() < 1e-9);
        let back = single_step(|_, y| Ok(-y), 0.0, &scalar(1.0), -0.1).unwrap();
        assert!((back[0] - 1.0 / exact).abs() < 1e-9);
    }
}
