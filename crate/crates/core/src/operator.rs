//! Operator problems `F(u) = f` on finite-dimensional normed spaces.
//!
//! An [`OperatorProblem`] bundles the nonlinear map, its right-hand side and
//! the two families of constants the regularized flow relies on:
//!
//! * [`SmoothnessParams`]: Hölder continuity of the derivative,
//!   `‖A(u) − A(v)‖ ≤ c0 ‖u − v‖^κ` with `A = F'`.
//! * [`ResolventParams`]: growth of the shifted inverse along the ray
//!   `a = e^{iθ} r`, `‖(A(u) + aI)^{-1}‖ ≤ c1 / |a|^b` for `0 < |a| < ε0`.
//!
//! Both can be asserted by the caller or checked empirically with
//! [`OperatorProblem::estimate_holder_constants`] and
//! [`OperatorProblem::verify_resolvent_bound`].

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};
use crate::linalg::{self, ShiftedFactor};

/// Norm carried by the coordinate space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NormKind {
    L2,
    /// `ℓ^p` with `1 < p < ∞`.
    Lp(f64),
}

/// Real coordinate space `R^n` with an `ℓ²` or `ℓ^p` norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VectorSpace {
    dimension: usize,
    norm_kind: NormKind,
}

impl VectorSpace {
    pub fn euclidean(dimension: usize) -> Result<Self> {
        Self::new(dimension, NormKind::L2)
    }

    pub fn new(dimension: usize, norm_kind: NormKind) -> Result<Self> {
        if dimension == 0 {
            return Err(DsmError::usage("dimension must be positive"));
        }
        if let NormKind::Lp(p) = norm_kind {
            if !(p > 1.0 && p.is_finite()) {
                return Err(DsmError::usage(format!(
                    "l^p exponent must lie in (1, inf), got {p}"
                )));
            }
        }
        Ok(Self {
            dimension,
            norm_kind,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm_kind
    }

    pub fn check(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dimension {
            return Err(DsmError::DimensionMismatch {
                expected: self.dimension,
                found: v.len(),
            });
        }
        Ok(())
    }

    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        match self.norm_kind {
            NormKind::L2 => v.norm(),
            NormKind::Lp(p) => {
                let scale = v.amax();
                if scale == 0.0 {
                    return 0.0;
                }
                scale
                    * v.iter()
                        .map(|x| (x / scale).abs().powf(p))
                        .sum::<f64>()
                        .powf(1.0 / p)
            }
        }
    }

    /// Returns `(‖w‖, d‖w(t)‖/dt)` where `wdot = ẇ(t)`.
    ///
    /// The rate is the Gateaux derivative of the norm at `w` in direction
    /// `wdot`, so `|rate| ≤ ‖wdot‖` by Hölder's inequality.
    pub fn norm_and_derivative(&self, w: &DVector<f64>, wdot: &DVector<f64>) -> Result<(f64, f64)> {
        self.check(w)?;
        self.check(wdot)?;
        let scale = w.amax();
        if scale == 0.0 {
            return Err(DsmError::NondifferentiablePoint);
        }
        let norm = self.norm(w);
        let rate = match self.norm_kind {
            NormKind::L2 => w.dot(wdot) / norm,
            NormKind::Lp(p) => {
                // Homogeneous of degree zero in w, so rescale for range safety.
                let mut num = 0.0;
                let mut den = 0.0;
                for (wi, di) in w.iter().zip(wdot.iter()) {
                    let s = (wi / scale).abs();
                    num += wi.signum() * s.powf(p - 1.0) * di;
                    den += s.powf(p);
                }
                num / den.powf((p - 1.0) / p)
            }
        };
        Ok((norm, rate))
    }
}

/// Hölder data of the derivative: `‖A(u) − A(v)‖ ≤ c0 ‖u − v‖^κ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessParams {
    pub c0: f64,
    pub kappa: f64,
}

impl SmoothnessParams {
    pub fn new(c0: f64, kappa: f64) -> Result<Self> {
        if !(c0 >= 0.0 && c0.is_finite()) {
            return Err(DsmError::usage(format!("c0 must be nonnegative, got {c0}")));
        }
        if !(kappa > 0.0 && kappa <= 1.0) {
            return Err(DsmError::usage(format!(
                "kappa must lie in (0, 1], got {kappa}"
            )));
        }
        Ok(Self { c0, kappa })
    }

    /// `p = 1 + κ`.
    pub fn p(&self) -> f64 {
        1.0 + self.kappa
    }
}

/// Resolvent growth along the ray `{e^{iθ} r : 0 < r < ε0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolventParams {
    pub c1: f64,
    pub b: f64,
    pub eps0: f64,
    pub theta: f64,
}

impl ResolventParams {
    pub fn new(c1: f64, b: f64, eps0: f64, theta: f64) -> Result<Self> {
        for (name, v) in [("c1", c1), ("b", b), ("eps0", eps0)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DsmError::usage(format!("{name} must be positive, got {v}")));
            }
        }
        if !(theta > -PI && theta <= PI) {
            return Err(DsmError::usage(format!(
                "ray angle must lie in (-pi, pi], got {theta}"
            )));
        }
        Ok(Self { c1, b, eps0, theta })
    }

    /// Monotone operators on the positive real axis: `c1 = 1`, `b = 1`.
    pub fn monotone(eps0: f64) -> Self {
        Self {
            c1: 1.0,
            b: 1.0,
            eps0,
            theta: 0.0,
        }
    }

    /// The shift `e^{iθ} r`.
    pub fn shift(&self, r: f64) -> Complex<f64> {
        if self.theta == 0.0 {
            Complex::new(r, 0.0)
        } else {
            Complex::from_polar(r, self.theta)
        }
    }
}

/// Where the problem constants came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Asserted,
    Estimated,
}

/// A nonlinear map `F: R^n → R^n`.
pub trait NonlinearMap: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, u: &DVector<f64>) -> DVector<f64>;

    /// Analytic Jacobian `F'(u)`, if available. Forward differences are used
    /// otherwise.
    fn jacobian(&self, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    /// Whether `F` is affine, so `F'(u)` does not depend on `u`.
    fn is_linear(&self) -> bool {
        false
    }
}

/// `F(u) = M u`.
#[derive(Debug, Clone)]
pub struct LinearMap {
    matrix: DMatrix<f64>,
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(DsmError::usage(format!(
                "linear map must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl NonlinearMap for LinearMap {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.matrix * u
    }

    fn jacobian(&self, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.matrix.clone())
    }

    fn is_linear(&self) -> bool {
        true
    }
}

type EvalFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacobianFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A map given by closures.
#[derive(Clone)]
pub struct FnMap {
    dim: usize,
    eval: Arc<EvalFn>,
    jacobian: Option<Arc<JacobianFn>>,
}

impl FnMap {
    pub fn new(
        dim: usize,
        eval: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            eval: Arc::new(eval),
            jacobian: None,
        }
    }

    pub fn with_jacobian(
        mut self,
        jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }
}

impl NonlinearMap for FnMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, u: &DVector<f64>) -> DVector<f64> {
        (self.eval)(u)
    }

    fn jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.jacobian.as_ref().map(|j| j(u))
    }
}

/// The equation `F(u) = f` together with its smoothness and resolvent data.
#[derive(Clone)]
pub struct OperatorProblem {
    space: VectorSpace,
    map: Arc<dyn NonlinearMap>,
    rhs: DVector<f64>,
    smoothness: SmoothnessParams,
    resolvent: ResolventParams,
    known_solution: Option<DVector<f64>>,
    provenance: Provenance,
}

impl fmt::Debug for OperatorProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorProblem")
            .field("space", &self.space)
            .field("rhs", &self.rhs)
            .field("smoothness", &self.smoothness)
            .field("resolvent", &self.resolvent)
            .field("known_solution", &self.known_solution)
            .field("provenance", &self.provenance)
            .finish_non_exhaustive()
    }
}

impl OperatorProblem {
    /// A problem on Euclidean space with monotone-case defaults
    /// (`c0 = 0`, `κ = 1`, `c1 = b = 1`, `ε0 = 1`, `θ = 0`).
    pub fn new(map: impl NonlinearMap + 'static, rhs: DVector<f64>) -> Result<Self> {
        let space = VectorSpace::euclidean(map.dim())?;
        space.check(&rhs)?;
        check_finite("right-hand side", &rhs)?;
        Ok(Self {
            space,
            map: Arc::new(map),
            rhs,
            smoothness: SmoothnessParams {
                c0: 0.0,
                kappa: 1.0,
            },
            resolvent: ResolventParams::monotone(1.0),
            known_solution: None,
            provenance: Provenance::Asserted,
        })
    }

    pub fn with_norm(mut self, norm_kind: NormKind) -> Result<Self> {
        self.space = VectorSpace::new(self.space.dimension(), norm_kind)?;
        Ok(self)
    }

    pub fn with_smoothness(mut self, smoothness: SmoothnessParams) -> Self {
        self.smoothness = smoothness;
        self
    }

    pub fn with_resolvent(mut self, resolvent: ResolventParams) -> Self {
        self.resolvent = resolvent;
        self
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Attach a solution `y`; rejected unless `‖F(y) − f‖ ≤ 1e-10 (1 + ‖f‖)`.
    pub fn with_known_solution(mut self, y: DVector<f64>) -> Result<Self> {
        let residual = self.space.norm(&(self.eval(&y)? - &self.rhs));
        let bound = 1e-10 * (1.0 + self.space.norm(&self.rhs));
        if residual > bound {
            return Err(DsmError::usage(format!(
                "known solution has residual {residual:e} above {bound:e}"
            )));
        }
        self.known_solution = Some(y);
        Ok(self)
    }

    pub fn space(&self) -> &VectorSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dimension()
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn smoothness(&self) -> SmoothnessParams {
        self.smoothness
    }

    pub fn resolvent(&self) -> ResolventParams {
        self.resolvent
    }

    pub fn known_solution(&self) -> Option<&DVector<f64>> {
        self.known_solution.as_ref()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn is_linear(&self) -> bool {
        self.map.is_linear()
    }

    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        self.space.norm(v)
    }

    /// `F(u)`.
    pub fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.space.check(u)?;
        let out = self.map.eval(u);
        self.space.check(&out)?;
        check_finite("F", &out)?;
        Ok(out)
    }

    /// `F(u) + a u − f` for real `a`.
    pub fn regularized_residual(&self, u: &DVector<f64>, a: f64) -> Result<DVector<f64>> {
        Ok(self.eval(u)? + u * a - &self.rhs)
    }

    /// The Jacobian `A(u) = F'(u)` as a dense matrix.
    ///
    /// Without an analytic Jacobian, forward differences with step
    /// `sqrt(eps) (1 + ‖u‖)` are used.
    pub fn jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.space.check(u)?;
        let n = self.dim();
        let jac = match self.map.jacobian(u) {
            Some(j) => {
                if j.nrows() != n || j.ncols() != n {
                    return Err(DsmError::DimensionMismatch {
                        expected: n,
                        found: j.nrows(),
                    });
                }
                j
            }
            None => {
                let base = self.eval(u)?;
                let step = f64::EPSILON.sqrt() * (1.0 + u.norm());
                let mut j = DMatrix::zeros(n, n);
                let mut probe = u.clone();
                for col in 0..n {
                    probe[col] += step;
                    let shifted = self.eval(&probe)?;
                    probe[col] = u[col];
                    j.set_column(col, &((shifted - &base) / step));
                }
                j
            }
        };
        if let Some(idx) = jac.iter().position(|x| !x.is_finite()) {
            return Err(DsmError::NonFinite {
                what: "A(u)",
                component: idx,
            });
        }
        Ok(jac)
    }

    /// `A(u) h`.
    pub fn apply_derivative(&self, u: &DVector<f64>, h: &DVector<f64>) -> Result<DVector<f64>> {
        self.space.check(h)?;
        Ok(self.jacobian(u)? * h)
    }

    fn check_shift(&self, a: Complex<f64>) -> Result<()> {
        let modulus = a.norm();
        if !(modulus > 0.0) || !modulus.is_finite() {
            return Err(DsmError::usage("the shift a must be nonzero and finite"));
        }
        if modulus >= self.resolvent.eps0 {
            return Err(DsmError::usage(format!(
                "|a| = {modulus} must stay below eps0 = {}",
                self.resolvent.eps0
            )));
        }
        let mut offset = (a.arg() - self.resolvent.theta).abs();
        offset = offset.min(2.0 * PI - offset);
        if offset > 1e-12 {
            return Err(DsmError::usage(format!(
                "shift {a} is off the ray at angle {}",
                self.resolvent.theta
            )));
        }
        Ok(())
    }

    /// Factor `A(u) + aI` once for repeated solves.
    pub fn shifted_factor(&self, u: &DVector<f64>, a: Complex<f64>) -> Result<ShiftedFactor> {
        self.check_shift(a)?;
        ShiftedFactor::new(&self.jacobian(u)?, a)
    }

    /// Solves `(A(u) + aI) h = v`.
    pub fn apply_resolvent(
        &self,
        u: &DVector<f64>,
        a: Complex<f64>,
        v: &DVector<f64>,
    ) -> Result<DVector<Complex<f64>>> {
        self.space.check(v)?;
        check_finite("resolvent input", v)?;
        let factor = self.shifted_factor(u, a)?;
        Ok(factor.solve_complex(&v.map(|x| Complex::new(x, 0.0))))
    }

    /// Fits `log ‖A(u) − A(v)‖ = log c0 + κ log ‖u − v‖` on random pairs.
    ///
    /// Pairs are anchored at `center`: `v = center` and `u = center + ρ ξ`
    /// with `ξ` a random unit direction and `ρ` log-uniform over three
    /// decades below `radius`, so the fit sees the local exponent at the
    /// center. The slope is clamped to `(0, 1]`; `c0` is the smallest
    /// constant that bounds every sample with the fitted exponent. A map
    /// whose derivative never changes gives `(0, 1)`.
    pub fn estimate_holder_constants(
        &self,
        samples: usize,
        radius: f64,
        center: &DVector<f64>,
        seed: u64,
    ) -> Result<HolderEstimate> {
        const DEGENERATE: f64 = 1e-13;
        if samples < 10 {
            return Err(DsmError::usage(
                "holder estimation needs at least 10 samples",
            ));
        }
        if !(radius > 0.0) {
            return Err(DsmError::usage("sampling radius must be positive"));
        }
        self.space.check(center)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a_center = self.jacobian(center)?;
        let n = self.dim();
        let mut logs = Vec::with_capacity(samples);
        let mut nondegenerate = 0usize;
        for _ in 0..samples {
            let dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let dir_norm = self.norm(&dir);
            if dir_norm == 0.0 {
                continue;
            }
            let rho = radius * 10f64.powf(-3.0 * rng.random::<f64>());
            let u = center + dir * (rho / dir_norm);
            let du = self.norm(&(&u - center));
            if du < DEGENERATE {
                continue;
            }
            nondegenerate += 1;
            let da = linalg::spectral_norm(&(self.jacobian(&u)? - &a_center));
            if da > 0.0 {
                logs.push((du.ln(), da.ln()));
            }
        }
        if nondegenerate == 0 {
            return Err(DsmError::DegenerateSample {
                threshold: DEGENERATE,
            });
        }
        if logs.len() < 2 {
            return Ok(HolderEstimate {
                c0: 0.0,
                kappa: 1.0,
                pairs: nondegenerate,
            });
        }
        let m = logs.len() as f64;
        let mx = logs.iter().map(|(x, _)| x).sum::<f64>() / m;
        let my = logs.iter().map(|(_, y)| y).sum::<f64>() / m;
        let sxx: f64 = logs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
        let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 1.0 };
        let kappa = slope.clamp(1e-3, 1.0);
        let log_c0 = logs
            .iter()
            .map(|(x, y)| y - kappa * x)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(HolderEstimate {
            c0: log_c0.exp(),
            kappa,
            pairs: nondegenerate,
        })
    }

    /// Evaluates `‖(A(u) + aI)^{-1}‖ r^b` for `a = e^{iθ} r` over the grid.
    pub fn verify_resolvent_bound(
        &self,
        u: &DVector<f64>,
        r_grid: &[f64],
    ) -> Result<ResolventReport> {
        let params = self.resolvent;
        if let Some(r) = r_grid.iter().find(|&&r| !(r > 0.0 && r < params.eps0)) {
            return Err(DsmError::usage(format!(
                "grid value {r} outside (0, eps0 = {})",
                params.eps0
            )));
        }
        let jac = self.jacobian(u)?;
        let n = jac.nrows() as f64;
        let mut rows = Vec::with_capacity(r_grid.len());
        for &r in r_grid {
            let a = params.shift(r);
            let (smin, smax) = if a.im == 0.0 {
                let mut m = jac.clone();
                for i in 0..m.nrows() {
                    m[(i, i)] += a.re;
                }
                let sv = m.singular_values();
                (sv.min(), sv.max())
            } else {
                let sv = linalg::shifted_complex(&jac, a).singular_values();
                (sv.min(), sv.max())
            };
            let singular = !(smin > n * f64::EPSILON * smax) || !smin.is_finite();
            let inverse_norm = (!singular).then(|| 1.0 / smin);
            rows.push(ResolventRow {
                r,
                inverse_norm,
                scaled: inverse_norm.map(|x| x * r.powf(params.b)),
            });
        }
        let max_scaled = rows.iter().filter_map(|row| row.scaled).fold(0.0, f64::max);
        let failures = rows.iter().filter(|row| row.scaled.is_none()).count();
        Ok(ResolventReport {
            passed: failures == 0 && max_scaled <= params.c1 * (1.0 + 1e-8),
            c1: params.c1,
            b: params.b,
            max_scaled,
            failures,
            rows,
        })
    }
}

fn check_finite(what: &'static str, v: &DVector<f64>) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(component) => Err(DsmError::NonFinite { what, component }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderEstimate {
    pub c0: f64,
    pub kappa: f64,
    /// Pairs with a usable separation.
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolventRow {
    pub r: f64,
    /// `None` when the shifted matrix is numerically singular.
    pub inverse_norm: Option<f64>,
    pub scaled: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolventReport {
    pub passed: bool,
    pub c1: f64,
    pub b: f64,
    /// `max_r ‖(A + aI)^{-1}‖ r^b` over the nonsingular grid points.
    pub max_scaled: f64,
    pub failures: usize,
    pub rows: Vec<ResolventRow>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_vec(v.to_vec())
    }

    /// `F(u)_i = u_i + u_i |u_i|^κ`.
    fn holder_map(n: usize, kappa: f64) -> FnMap {
        FnMap::new(n, move |u| u.map(|x| x + x * x.abs().powf(kappa))).with_jacobian(move |u| {
            DMatrix::from_diagonal(&u.map(|x| 1.0 + (1.0 + kappa) * x.abs().powf(kappa)))
        })
    }

    fn diag_problem(d: &[f64], theta: f64) -> OperatorProblem {
        let m = DMatrix::from_diagonal(&dv(d));
        OperatorProblem::new(LinearMap::new(m).unwrap(), DVector::zeros(d.len()))
            .unwrap()
            .with_resolvent(ResolventParams::new(1.0, 1.0, 1.0, theta).unwrap())
    }

    #[test]
    fn identity_eval() {
        let p = OperatorProblem::new(FnMap::new(2, |u| u.clone()), dv(&[0.0, 0.0])).unwrap();
        assert_eq!(p.eval(&dv(&[1.0, 2.0])).unwrap(), dv(&[1.0, 2.0]));
    }

    #[test]
    fn holder_map_eval_and_derivative() {
        let p = OperatorProblem::new(holder_map(2, 1.0), dv(&[0.0, 0.0])).unwrap();
        assert_eq!(p.eval(&dv(&[2.0, -1.0])).unwrap(), dv(&[6.0, -2.0]));
        let h = p
            .apply_derivative(&dv(&[2.0, -1.0]), &dv(&[1.0, 1.0]))
            .unwrap();
        assert_eq!(h, dv(&[5.0, 3.0]));
        let zero = p
            .apply_derivative(&dv(&[2.0, -1.0]), &dv(&[0.0, 0.0]))
            .unwrap();
        assert_eq!(zero, dv(&[0.0, 0.0]));
    }

    #[test]
    fn finite_difference_jacobian_matches_analytic() {
        let analytic = OperatorProblem::new(holder_map(3, 1.0), DVector::zeros(3)).unwrap();
        let fd_map = FnMap::new(3, |u| u.map(|x| x + x * x.abs()));
        let fd = OperatorProblem::new(fd_map, DVector::zeros(3)).unwrap();
        let u = dv(&[0.3, -1.2, 2.0]);
        let diff = analytic.jacobian(&u).unwrap() - fd.jacobian(&u).unwrap();
        assert!(diff.amax() < 1e-6, "{diff}");
    }

    #[test]
    fn linear_derivative_is_the_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p =
            OperatorProblem::new(LinearMap::new(m.clone()).unwrap(), DVector::zeros(2)).unwrap();
        let h = dv(&[0.5, -1.0]);
        for u in [dv(&[0.0, 0.0]), dv(&[10.0, -3.0])] {
            assert_eq!(p.apply_derivative(&u, &h).unwrap(), &m * &h);
        }
    }

    #[test]
    fn dimension_mismatch_and_nonfinite() {
        let p =
            OperatorProblem::new(FnMap::new(2, |u| u.map(|x| 1.0 / x)), DVector::zeros(2)).unwrap();
        assert!(matches!(
            p.eval(&dv(&[1.0])),
            Err(DsmError::DimensionMismatch {
                expected: 2,
                found: 1
            })
        ));
        assert_eq!(
            p.eval(&dv(&[1.0, 0.0])).unwrap_err(),
            DsmError::NonFinite {
                what: "F",
                component: 1
            }
        );
    }

    #[test]
    fn known_solution_is_checked() {
        let p = OperatorProblem::new(holder_map(2, 1.0), dv(&[2.0, -2.0])).unwrap();
        assert!(p.clone().with_known_solution(dv(&[1.0, -1.0])).is_ok());
        assert!(p.with_known_solution(dv(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn resolvent_of_zero_operator() {
        let p = diag_problem(&[0.0], 0.0);
        let h = p
            .apply_resolvent(&dv(&[0.0]), Complex::new(0.5, 0.0), &dv(&[1.0]))
            .unwrap();
        assert!((h[0] - Complex::new(2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn resolvent_diagonal_real_and_imaginary() {
        let p = diag_problem(&[0.0, 1.0], 0.0);
        let h = p
            .apply_resolvent(&dv(&[0.0, 0.0]), Complex::new(0.1, 0.0), &dv(&[1.0, 1.0]))
            .unwrap();
        assert!((h[0].re - 10.0).abs() < 1e-12 && h[0].im == 0.0);
        assert!((h[1].re - 1.0 / 1.1).abs() < 1e-15);

        let p = diag_problem(&[0.0, 1.0], PI / 2.0);
        let h = p
            .apply_resolvent(&dv(&[0.0, 0.0]), Complex::new(0.0, 0.1), &dv(&[1.0, 0.0]))
            .unwrap();
        assert!((h[0] - Complex::new(0.0, -10.0)).norm() < 1e-12);
        assert!(h[1].norm() < 1e-15);
    }

    #[test]
    fn resolvent_preconditions() {
        let p = diag_problem(&[0.0, 1.0], 0.0);
        let u = dv(&[0.0, 0.0]);
        let v = dv(&[1.0, 1.0]);
        assert!(matches!(
            p.apply_resolvent(&u, Complex::new(1.5, 0.0), &v),
            Err(DsmError::Usage(_))
        ));
        assert!(matches!(
            p.apply_resolvent(&u, Complex::new(0.0, 0.1), &v),
            Err(DsmError::Usage(_))
        ));
        assert!(matches!(
            p.apply_resolvent(&u, Complex::new(0.0, 0.0), &v),
            Err(DsmError::Usage(_))
        ));
    }

    #[test]
    fn singular_shift_reports_remediation() {
        let p = diag_problem(&[-0.25, 1.0], 0.0);
        let err = p
            .apply_resolvent(&dv(&[0.0, 0.0]), Complex::new(0.25, 0.0), &dv(&[1.0, 1.0]))
            .unwrap_err();
        assert!(matches!(err, DsmError::ResolventSingular { modulus, .. } if modulus == 0.25));
        assert!(err.to_string().contains("increase r(0)"));
    }

    #[test]
    fn holder_estimate_linear_is_clamped() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let p = OperatorProblem::new(LinearMap::new(m).unwrap(), DVector::zeros(2)).unwrap();
        let est = p
            .estimate_holder_constants(50, 1.0, &DVector::zeros(2), 7)
            .unwrap();
        assert_eq!((est.c0, est.kappa), (0.0, 1.0));
    }

    #[test]
    fn holder_estimate_square_root_exponent() {
        let p = OperatorProblem::new(holder_map(3, 0.5), DVector::zeros(3)).unwrap();
        let est = p
            .estimate_holder_constants(200, 1.0, &DVector::zeros(3), 11)
            .unwrap();
        assert!((0.45..=0.55).contains(&est.kappa), "{est:?}");
        assert!(est.c0 <= 1.6, "{est:?}");
    }

    #[test]
    fn holder_estimate_quadratic() {
        // F(u)_i = u_i^2 / 2, so A(u) = diag(u).
        let map = FnMap::new(2, |u| u.map(|x| 0.5 * x * x)).with_jacobian(DMatrix::from_diagonal);
        let p = OperatorProblem::new(map, DVector::zeros(2)).unwrap();
        let est = p
            .estimate_holder_constants(200, 1.0, &DVector::zeros(2), 3)
            .unwrap();
        assert!((0.95..=1.0).contains(&est.kappa), "{est:?}");
        assert!((0.9..=1.1).contains(&est.c0), "{est:?}");
    }

    #[test]
    fn holder_estimate_degenerate_radius() {
        let p = OperatorProblem::new(holder_map(2, 1.0), DVector::zeros(2)).unwrap();
        let err = p
            .estimate_holder_constants(20, 1e-16, &DVector::zeros(2), 1)
            .unwrap_err();
        assert!(matches!(err, DsmError::DegenerateSample { .. }));
        assert!(p
            .estimate_holder_constants(5, 1.0, &DVector::zeros(2), 1)
            .is_err());
    }

    #[test]
    fn resolvent_bound_diagonal_cases() {
        let grid: Vec<f64> = (1..10).map(|i| i as f64 / 10.0).collect();
        for theta in [0.0, PI / 2.0] {
            let p = diag_problem(&[0.0, 1.0], theta);
            let report = p.verify_resolvent_bound(&dv(&[0.0, 0.0]), &grid).unwrap();
            assert!(report.passed, "{report:?}");
            for row in &report.rows {
                assert!((row.inverse_norm.unwrap() - 1.0 / row.r).abs() < 1e-10 / row.r);
            }
            assert!((report.max_scaled - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn resolvent_bound_singular_grid_point_is_recorded() {
        let p = diag_problem(&[-0.5, 1.0], 0.0);
        let report = p
            .verify_resolvent_bound(&dv(&[0.0, 0.0]), &[0.25, 0.5])
            .unwrap();
        assert_eq!(report.failures, 1);
        assert!(!report.passed);
        assert!(p.verify_resolvent_bound(&dv(&[0.0, 0.0]), &[2.0]).is_err());
    }

    #[test]
    fn norm_rate_examples() {
        let s = VectorSpace::euclidean(2).unwrap();
        let (n, rate) = s
            .norm_and_derivative(&dv(&[3.0, 4.0]), &dv(&[1.0, 0.0]))
            .unwrap();
        assert!((n - 5.0).abs() < 1e-15 && (rate - 0.6).abs() < 1e-15);
        let (_, rate) = s
            .norm_and_derivative(&dv(&[1.0, 0.0]), &dv(&[0.0, 1.0]))
            .unwrap();
        assert_eq!(rate, 0.0);
        for kind in [NormKind::L2, NormKind::Lp(1.5), NormKind::Lp(3.0)] {
            let s = VectorSpace::new(2, kind).unwrap();
            let (_, rate) = s
                .norm_and_derivative(&dv(&[3.0, -4.0]), &dv(&[0.0, 0.0]))
                .unwrap();
            assert_eq!(rate, 0.0);
            assert_eq!(
                s.norm_and_derivative(&dv(&[0.0, 0.0]), &dv(&[1.0, 0.0])),
                Err(DsmError::NondifferentiablePoint)
            );
        }
    }

    #[test]
    fn lp_rate_matches_finite_difference() {
        let s = VectorSpace::new(3, NormKind::Lp(3.0)).unwrap();
        let w = dv(&[1.0, -2.0, 0.5]);
        let d = dv(&[0.3, 0.1, -1.0]);
        let (_, rate) = s.norm_and_derivative(&w, &d).unwrap();
        let h = 1e-6;
        let fd = (s.norm(&(&w + &d * h)) - s.norm(&(&w - &d * h))) / (2.0 * h);
        assert!((rate - fd).abs() < 1e-8);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(SmoothnessParams::new(1.0, 0.0).is_err());
        assert!(SmoothnessParams::new(1.0, 1.5).is_err());
        assert!(SmoothnessParams::new(-1.0, 0.5).is_err());
        assert!(ResolventParams::new(0.0, 1.0, 1.0, 0.0).is_err());
        assert!(ResolventParams::new(1.0, 1.0, 1.0, -PI).is_err());
        assert!(VectorSpace::new(2, NormKind::Lp(1.0)).is_err());
        assert!(VectorSpace::new(0, NormKind::L2).is_err());
    }
}
