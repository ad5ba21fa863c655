//! Dense helpers: shifted factorizations and singular-value norms.

use nalgebra::{Complex, ComplexField, DMatrix, DVector, Dyn, LU};

use crate::error::{DsmError, Result};

/// Largest singular value of a real matrix (the spectral norm).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest singular value of a complex matrix.
pub fn min_singular_value(m: &DMatrix<Complex<f64>>) -> f64 {
    m.singular_values().min()
}

/// `m + shift * I` lifted to complex arithmetic.
pub fn shifted_complex(m: &DMatrix<f64>, shift: Complex<f64>) -> DMatrix<Complex<f64>> {
    let mut out = m.map(|x| Complex::new(x, 0.0));
    for i in 0..m.nrows().min(m.ncols()) {
        out[(i, i)] += shift;
    }
    out
}

/// LU factorization of `A + aI`, real when the shift is real.
///
/// Singularity is declared when the smallest pivot of `U` falls below
/// `n * eps` times the largest one.
pub enum ShiftedFactor {
    Real(LU<f64, Dyn, Dyn>),
    Complex(LU<Complex<f64>, Dyn, Dyn>),
}

impl ShiftedFactor {
    pub fn new(m: &DMatrix<f64>, shift: Complex<f64>) -> Result<Self> {
        let n = m.nrows();
        if shift.im == 0.0 {
            let mut shifted = m.clone();
            for i in 0..n {
                shifted[(i, i)] += shift.re;
            }
            let lu = shifted.lu();
            let diag = lu.u().diagonal().map(|x| x.abs());
            check_pivots(&diag, n, shift.norm())?;
            Ok(ShiftedFactor::Real(lu))
        } else {
            let lu = shifted_complex(m, shift).lu();
            let diag = lu.u().diagonal().map(|x| x.modulus());
            check_pivots(&diag, n, shift.norm())?;
            Ok(ShiftedFactor::Complex(lu))
        }
    }

    /// Solve with a complex right-hand side.
    pub fn solve_complex(&self, v: &DVector<Complex<f64>>) -> DVector<Complex<f64>> {
        match self {
            ShiftedFactor::Real(lu) => {
                let re = lu.solve(&v.map(|z| z.re)).expect("pivots checked");
                let im = lu.solve(&v.map(|z| z.im)).expect("pivots checked");
                re.zip_map(&im, Complex::new)
            }
            ShiftedFactor::Complex(lu) => lu.solve(v).expect("pivots checked"),
        }
    }

    /// Solve with a real right-hand side; returns the real part of the
    /// solution and the norm of the discarded imaginary part.
    pub fn solve_real(&self, v: &DVector<f64>) -> (DVector<f64>, f64) {
        match self {
            ShiftedFactor::Real(lu) => (lu.solve(v).expect("pivots checked"), 0.0),
            ShiftedFactor::Complex(lu) => {
                let h = lu
                    .solve(&v.map(|x| Complex::new(x, 0.0)))
                    .expect("pivots checked");
                let im = h.map(|z| z.im).norm();
                (h.map(|z| z.re), im)
            }
        }
    }
}

fn check_pivots(diag: &DVector<f64>, n: usize, modulus: f64) -> Result<()> {
    if n == 0 {
        return Ok(());
    }
    let max = diag.max();
    let min = diag.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(min > (n as f64) * f64::EPSILON * max) || !condition.is_finite() {
        return Err(DsmError::ResolventSingular {
            modulus,
            condition,
            t: None,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -3.0, 2.0]));
        assert!((spectral_norm(&m) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn zero_shift_of_singular_matrix_is_rejected() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]));
        let err = ShiftedFactor::new(&m, Complex::new(0.0, 0.0))
            .err()
            .unwrap();
        assert!(matches!(err, DsmError::ResolventSingular { .. }));
    }

    #[test]
    fn real_factor_handles_complex_rhs() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        let f = ShiftedFactor::new(&m, Complex::new(1.0, 0.0)).unwrap();
        let v = DVector::from_vec(vec![Complex::new(2.0, 4.0), Complex::new(0.0, 8.0)]);
        let h = f.solve_complex(&v);
        assert!((h[0] - Complex::new(1.0, 2.0)).norm() < 1e-15);
        assert!((h[1] - Complex::new(0.0, 2.0)).norm() < 1e-15);
    }
}
