//! Test problems with known solutions and analytic (or estimated) constants.

use dsm_core::{
    DsmError, FnMap, LinearMap, NormKind, OperatorProblem, Provenance, ResolventParams, Result,
    SmoothnessParams,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const GALLERY: [&str; 5] = [
    "wellposed-linear",
    "illposed-kernel",
    "rank-deficient-linear",
    "monotone-holder",
    "monotone-smooth",
];

/// A user-supplied square matrix (`params.data`, row-major).
pub const MATRIX_KIND: &str = "matrix";

pub const MAX_KERNEL_DIM: usize = 64;

/// Default `ε0` for problems whose resolvent bound holds for every real shift.
pub const MONOTONE_EPS0: f64 = 10.0;

/// Constructor parameters. Unused fields are ignored by a given kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GalleryParams {
    pub kappa: f64,
    /// Norm of the default solution.
    pub scale: Option<f64>,
    pub lambda_min: f64,
    pub cond: f64,
    pub rank: Option<usize>,
    pub epsilon: f64,
    /// Explicit solution, overriding the default profile.
    pub y: Option<Vec<f64>>,
    /// Row-major matrix for the `matrix` kind.
    pub data: Option<Vec<f64>>,
    /// Exponent of an ℓ^p norm; ℓ² when absent.
    pub norm_p: Option<f64>,
}

impl Default for GalleryParams {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            scale: None,
            lambda_min: 2.0,
            cond: 10.0,
            rank: None,
            epsilon: 0.5,
            y: None,
            data: None,
            norm_p: None,
        }
    }
}

/// Constants that replace the gallery's own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssertedConstants {
    pub c0: f64,
    pub kappa: f64,
    pub c1: f64,
    pub b: f64,
    pub eps0: f64,
}

#[derive(Debug, Clone)]
pub struct GalleryProblem {
    pub kind: String,
    pub problem: OperatorProblem,
    /// The matrix of a linear problem.
    pub matrix: Option<DMatrix<f64>>,
    pub y: DVector<f64>,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the sign fix).
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `Q diag(λ) Qᵀ` with eigenvalues geometric from `lambda_min` to `lambda_min · cond`.
pub fn spd_matrix(rng: &mut ChaCha8Rng, n: usize, lambda_min: f64, cond: f64) -> DMatrix<f64> {
    let q = random_orthogonal(rng, n);
    let eig = DVector::from_fn(n, |i, _| {
        let frac = if n == 1 {
            0.0
        } else {
            i as f64 / (n - 1) as f64
        };
        lambda_min * cond.powf(frac)
    });
    let m = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// `U diag(σ) Vᵀ` with `rank` singular values spread over `[0.5, 2]` and the rest zero.
pub fn rank_deficient_matrix(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> DMatrix<f64> {
    let u = random_orthogonal(rng, n);
    let v = random_orthogonal(rng, n);
    let sigma = DVector::from_fn(n, |i, _| {
        if i >= rank {
            0.0
        } else if rank == 1 {
            1.0
        } else {
            2.0 * 0.25f64.powf(i as f64 / (rank - 1) as f64)
        }
    });
    u * DMatrix::from_diagonal(&sigma) * v.transpose()
}

/// The solution that `(A + aI)^{-1} A y` tends to as `a → 0`: the
/// projection of `y` onto `range(A)` along `null(A)`. `None` when the two
/// subspaces do not split the space.
pub fn regularized_limit(m: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let n = m.nrows();
    let svd = m.clone().svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let tol = n as f64 * f64::EPSILON * svd.singular_values.max();
    let range: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] > tol).collect();
    let null: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= tol).collect();
    let mut basis = DMatrix::zeros(n, n);
    for (j, &i) in range.iter().enumerate() {
        basis.set_column(j, &u.column(i));
    }
    for (j, &i) in null.iter().enumerate() {
        basis.set_column(range.len() + j, &v_t.row(i).transpose());
    }
    let coeffs = basis.clone().lu().solve(y)?;
    let limit = basis.columns(0, range.len()) * coeffs.rows(0, range.len());
    limit.iter().all(|x| x.is_finite()).then_some(limit)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=m {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Galerkin matrix of `(Ku)(s) = ∫₀¹ exp(−(s−t)²) u(t) dt` in the orthonormal
/// piecewise-constant basis on `n` equal cells.
pub fn kernel_matrix(n: usize) -> DMatrix<f64> {
    let (x, w) = gauss_legendre(8);
    let h = 1.0 / n as f64;
    let points = |cell: usize| -> Vec<(f64, f64)> {
        x.iter()
            .zip(&w)
            .map(|(&xi, &wi)| (h * (cell as f64 + 0.5 * (xi + 1.0)), 0.5 * h * wi))
            .collect()
    };
    let cells: Vec<_> = (0..n).map(points).collect();
    DMatrix::from_fn(n, n, |i, j| {
        let mut acc = 0.0;
        for &(s, ws) in &cells[i] {
            for &(t, wt) in &cells[j] {
                acc += ws * wt * (-(s - t) * (s - t)).exp();
            }
        }
        acc / h
    })
}

/// Default solution profile `y_i ∝ cos(π i / (n − 1))`, scaled to norm `scale`.
pub fn default_solution(n: usize, scale: f64) -> DVector<f64> {
    if n == 1 {
        return DVector::from_element(1, scale);
    }
    let y = DVector::from_fn(n, |i, _| {
        (std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()
    });
    let norm = y.norm();
    y * (scale / norm)
}

/// Default solution norm for the Hölder problem: small enough that the
/// radius threshold sits near the `r0` for which the flow reaches
/// `r = 1e-2` around `t = 1e4`.
pub fn holder_default_scale(kappa: f64) -> f64 {
    let k = 2.0 / kappa;
    let c0 = 1.0 + kappa;
    let r_target = 0.01 * (0.45 * 1e4f64).powf(kappa / 2.0);
    let c2 = k / 2.0 * (r_target / (5.0 * c0)).powf(1.0 / kappa);
    0.8 * c2 / 1.1
}

fn default_scale(kind: &str, kappa: f64) -> f64 {
    match kind {
        "wellposed-linear" | "illposed-kernel" => 0.1,
        "monotone-holder" => holder_default_scale(kappa),
        "monotone-smooth" => 0.3,
        _ => 1.0,
    }
}

fn check_dim(n: usize) -> Result<()> {
    if n == 0 {
        return Err(DsmError::Usage("dimension must be positive".into()));
    }
    Ok(())
}

/// Builds a gallery problem; `f = F(y)`.
pub fn make(
    kind: &str,
    n: usize,
    params: &GalleryParams,
    asserted: Option<AssertedConstants>,
    seed: u64,
) -> Result<GalleryProblem> {
    check_dim(n)?;
    let mut rng = rng(seed);
    let scale = params
        .scale
        .unwrap_or_else(|| default_scale(kind, params.kappa));
    let mut y = match &params.y {
        Some(v) if v.len() != n => {
            return Err(DsmError::DimensionMismatch {
                expected: n,
                found: v.len(),
            })
        }
        Some(v) => DVector::from_column_slice(v),
        None => default_solution(n, scale),
    };

    let (problem, matrix) = match kind {
        "wellposed-linear" => {
            let m = if n == 1 {
                DMatrix::from_element(1, 1, params.lambda_min)
            } else {
                spd_matrix(&mut rng, n, params.lambda_min, params.cond)
            };
            (linear(m.clone(), &y)?, Some(m))
        }
        "illposed-kernel" => {
            if n > MAX_KERNEL_DIM {
                return Err(DsmError::Usage(format!(
                    "illposed-kernel supports n ≤ {MAX_KERNEL_DIM}, got {n}"
                )));
            }
            let m = kernel_matrix(n);
            (linear(m.clone(), &y)?, Some(m))
        }
        "rank-deficient-linear" => {
            let rank = params.rank.unwrap_or(n.div_ceil(2).max(1));
            if rank > n {
                return Err(DsmError::Usage(format!("rank {rank} exceeds n = {n}")));
            }
            let m = rank_deficient_matrix(&mut rng, n, rank);
            if let Some(limit) = regularized_limit(&m, &y) {
                // keep the requested norm; the projection is oblique
                y = &limit * (y.norm() / limit.norm());
            }
            let p = linear(m.clone(), &y)?;
            let p = with_estimated_resolvent(p)?;
            (p, Some(m))
        }
        "monotone-holder" => {
            let kappa = params.kappa;
            SmoothnessParams::new(1.0 + kappa, kappa)?;
            let map = FnMap::new(n, move |u| u.map(|x| x + x * x.abs().powf(kappa))).with_jacobian(
                move |u| {
                    DMatrix::from_diagonal(&u.map(|x| 1.0 + (1.0 + kappa) * x.abs().powf(kappa)))
                },
            );
            let f = y.map(|x| x + x * x.abs().powf(kappa));
            let p = OperatorProblem::new(map, f)?
                .with_smoothness(SmoothnessParams::new(1.0 + kappa, kappa)?)
                .with_resolvent(ResolventParams::monotone(MONOTONE_EPS0));
            (p, None)
        }
        "monotone-smooth" => {
            let eps = params.epsilon;
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(DsmError::Usage(format!(
                    "epsilon must be nonnegative, got {eps}"
                )));
            }
            let m = spd_matrix(&mut rng, n, params.lambda_min, params.cond);
            let (me, mj) = (m.clone(), m.clone());
            let map = FnMap::new(n, move |u| &me * u + u.map(|x| eps * x.tanh())).with_jacobian(
                move |u| &mj + DMatrix::from_diagonal(&u.map(|x| eps / (x.cosh() * x.cosh()))),
            );
            let f = &m * &y + y.map(|x| eps * x.tanh());
            // sup |d/dx sech² x| = 4 / (3√3).
            let c0 = eps * 4.0 / (3.0 * 3f64.sqrt());
            let p = OperatorProblem::new(map, f)?
                .with_smoothness(SmoothnessParams::new(c0, 1.0)?)
                .with_resolvent(ResolventParams::monotone(MONOTONE_EPS0));
            (p, None)
        }
        MATRIX_KIND => {
            let data = params
                .data
                .as_ref()
                .ok_or_else(|| DsmError::Usage("matrix problems need params.data".into()))?;
            if data.len() != n * n {
                return Err(DsmError::DimensionMismatch {
                    expected: n * n,
                    found: data.len(),
                });
            }
            if params.y.is_none() {
                return Err(DsmError::Usage("matrix problems need params.y".into()));
            }
            let m = DMatrix::from_row_slice(n, n, data);
            let p = with_estimated_resolvent(linear(m.clone(), &y)?)?;
            (p, Some(m))
        }
        other => {
            return Err(DsmError::Usage(format!(
                "unknown problem '{other}'; the gallery has {}",
                GALLERY.join(", ")
            )))
        }
    };

    let mut problem = problem.with_known_solution(y.clone())?;
    if let Some(p) = params.norm_p {
        problem = problem.with_norm(NormKind::Lp(p))?;
    }
    if let Some(c) = asserted {
        problem = problem
            .with_smoothness(SmoothnessParams::new(c.c0, c.kappa)?)
            .with_resolvent(ResolventParams::new(c.c1, c.b, c.eps0, 0.0)?)
            .with_provenance(Provenance::Asserted);
    }
    Ok(GalleryProblem {
        kind: kind.to_string(),
        problem,
        matrix,
        y,
    })
}

fn linear(m: DMatrix<f64>, y: &DVector<f64>) -> Result<OperatorProblem> {
    let f = &m * y;
    Ok(OperatorProblem::new(LinearMap::new(m)?, f)?
        .with_smoothness(SmoothnessParams::new(0.0, 1.0)?)
        .with_resolvent(ResolventParams::monotone(MONOTONE_EPS0)))
}

/// Measures `c1 = max_r ‖(A + rI)^{-1}‖ r` (with `b = 1`) on a log grid below `ε0`.
fn with_estimated_resolvent(problem: OperatorProblem) -> Result<OperatorProblem> {
    let grid: Vec<f64> = (0..=60)
        .map(|i| MONOTONE_EPS0 * 0.999 * 10f64.powf(-i as f64 / 6.0))
        .collect();
    let report = problem.verify_resolvent_bound(&DVector::zeros(problem.dim()), &grid)?;
    if report.failures > 0 {
        return Err(DsmError::Usage(
            "matrix is singular under a real shift; supply asserted constants".into(),
        ));
    }
    let c1 = report.max_scaled.max(1.0) * (1.0 + 1e-6);
    Ok(problem
        .with_resolvent(ResolventParams::new(c1, 1.0, MONOTONE_EPS0, 0.0)?)
        .with_provenance(Provenance::Estimated))
}
