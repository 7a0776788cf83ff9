//! Centralized ground-truth solvers. These see the full `A` and are used only
//! for validation, certificates and Monte-Carlo evaluation.

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};

/// Solves `AᵀP + PA + Q = 0` through the Kronecker system
/// `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P) = −vec(Q)`. Dense O(n⁶); fine for n ≤ 16.
pub fn solve_lyapunov_direct(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = numerics::require_square(a, "solve_lyapunov_direct::a")?;
    if q.shape() != (n, n) {
        return Err(Error::dim("solve_lyapunov_direct::q", format!("{n}x{n}"), format!("{}x{}", q.nrows(), q.ncols())));
    }
    let at = a.transpose();
    let eye = Matrix::identity(n, n);
    let op = numerics::kron(&eye, &at) + numerics::kron(&at, &eye);
    let rhs = -numerics::vec(q);
    let lu = op.lu();
    let sol = lu.solve(&rhs).ok_or(Error::Singular {
        context: "Lyapunov operator (eigenvalue pair summing to zero)",
    })?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular {
            context: "Lyapunov operator (eigenvalue pair summing to zero)",
        });
    }
    let p = numerics::mat(sol.as_slice(), n, n)?;
    Ok(if q == &q.transpose() { numerics::symmetrize(&p) } else { p })
}

pub fn lyapunov_residual(a: &Matrix, p: &Matrix, q: &Matrix) -> f64 {
    (a.transpose() * p + p * a + q).norm()
}

/// `D = B R⁻¹ Bᵀ`.
pub fn input_weight(b: &Matrix, r: &Matrix) -> Result<Matrix> {
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or(Error::Singular { context: "input weight R" })?;
    Ok(numerics::symmetrize(&(b * r_inv * b.transpose())))
}

pub fn are_residual(a: &Matrix, d: &Matrix, q: &Matrix, p: &Matrix) -> f64 {
    (a.transpose() * p + p * a + q - p * d * p).norm()
}

/// `K = −R⁻¹BᵀP`.
pub fn lqr_gain(b: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or(Error::Singular { context: "input weight R" })?;
    Ok(-(r_inv * b.transpose() * p))
}

#[derive(Debug, Clone)]
pub struct AreSolution {
    pub p: Matrix,
    pub k: Matrix,
    pub residual: f64,
    pub iterations: usize,
    /// tr(Pₖ) after every Newton iteration.
    pub trace_history: Vec<f64>,
}

const NEWTON_MAX_ITER: usize = 100;

/// Newton–Kleinman iteration for the stabilizing solution of
/// `AᵀP + PA + Q − PBR⁻¹BᵀP = 0`.
///
/// Without `k0`, a stabilizing start comes from `K₀ = 0` if `A` is already
/// Hurwitz, otherwise from the Bass shift: `Z` solving
/// `(A + βI)Z + Z(A + βI)ᵀ = 2BR⁻¹Bᵀ` with `−(A + βI)` Hurwitz, `K₀ = −R⁻¹BᵀZ⁻¹`.
pub fn solve_are_newton(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, k0: Option<&Matrix>) -> Result<AreSolution> {
    let n = numerics::require_square(a, "solve_are_newton::a")?;
    if b.nrows() != n {
        return Err(Error::dim("solve_are_newton::b", format!("{n} rows"), b.nrows()));
    }
    let m = b.ncols();
    if q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::dim("solve_are_newton::weights", format!("Q {n}x{n}, R {m}x{m}"), format!("Q {:?}, R {:?}", q.shape(), r.shape())));
    }
    numerics::require_pd(r, "R", 0.0)?;
    let d = input_weight(b, r)?;
    let r_inv = r.clone().try_inverse().ok_or(Error::Singular { context: "input weight R" })?;

    let mut k = match k0 {
        Some(k0) => {
            if k0.shape() != (m, n) {
                return Err(Error::dim("solve_are_newton::k0", format!("{m}x{n}"), format!("{:?}", k0.shape())));
            }
            k0.clone()
        }
        None => initial_gain(a, b, &d, &r_inv)?,
    };
    if numerics::spectral_abscissa(&(a + b * &k)) >= 0.0 {
        return Err(Error::NoStabilizingGain);
    }

    let mut p = Matrix::zeros(n, n);
    let mut trace_history = Vec::new();
    let mut iterations = 0;
    for it in 0..NEWTON_MAX_ITER {
        let acl = a + b * &k;
        let rhs = q + k.transpose() * r * &k;
        let p_next = solve_lyapunov_direct(&acl, &rhs)?;
        let change = (&p_next - &p).norm();
        p = p_next;
        k = -(&r_inv * b.transpose() * &p);
        trace_history.push(p.trace());
        iterations = it + 1;
        if change <= 1e-13 * p.norm().max(1.0) {
            break;
        }
    }
    let residual = are_residual(a, &d, q, &p);
    let abscissa = numerics::spectral_abscissa(&(a + b * &k));
    if abscissa >= 0.0 {
        return Err(Error::NotHurwitz {
            what: "Newton-Kleinman closed loop",
            abscissa,
        });
    }
    Ok(AreSolution {
        p,
        k,
        residual,
        iterations,
        trace_history,
    })
}

fn initial_gain(a: &Matrix, b: &Matrix, d: &Matrix, r_inv: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    let m = b.ncols();
    if numerics::spectral_abscissa(a) < 0.0 {
        return Ok(Matrix::zeros(m, n));
    }
    if m == 0 {
        return Err(Error::NoStabilizingGain);
    }
    let beta = a
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re.abs())
        .fold(0.0_f64, f64::max)
        + 1.0;
    let shifted = -(a + Matrix::identity(n, n) * beta).transpose();
    let z = solve_lyapunov_direct(&shifted, &(d * 2.0))?;
    let z_inv = z.try_inverse().ok_or(Error::NoStabilizingGain)?;
    let k = -(r_inv * b.transpose() * z_inv);
    if numerics::spectral_abscissa(&(a + b * &k)) < 0.0 {
        Ok(k)
    } else {
        Err(Error::NoStabilizingGain)
    }
}

/// Expected LQR cost `tr((Q + KᵀRK) W)` under `E[x₀x₀ᵀ] = I`, with `W` the
/// closed-loop Gramian `(A + BK)W + W(A + BK)ᵀ + I = 0`.
pub fn lqr_cost(a: &Matrix, b: &Matrix, k: &Matrix, q: &Matrix, r: &Matrix) -> Result<f64> {
    let acl = a + b * k;
    let abscissa = numerics::spectral_abscissa(&acl);
    if abscissa >= 0.0 {
        return Err(Error::NotHurwitz {
            what: "closed loop A + BK",
            abscissa,
        });
    }
    let n = a.nrows();
    let w = solve_lyapunov_direct(&acl.transpose(), &Matrix::identity(n, n))?;
    Ok(((q + k.transpose() * r * k) * w).trace())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_lyapunov() {
        let p = solve_lyapunov_direct(&s(-1.0), &s(2.0)).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_lyapunov() {
        let p = solve_lyapunov_direct(&-Matrix::identity(2, 2), &Matrix::identity(2, 2)).unwrap();
        assert!((p - Matrix::identity(2, 2) * 0.5).norm() < 1e-15);
    }

    #[test]
    fn singular_lyapunov_rejected() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(matches!(solve_lyapunov_direct(&a, &Matrix::identity(2, 2)), Err(Error::Singular { .. })));
    }

    #[test]
    fn scalar_are_integrator() {
        let sol = solve_are_newton(&s(0.0), &s(1.0), &s(1.0), &s(1.0), None).unwrap();
        assert!((sol.p[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((sol.k[(0, 0)] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_are_unstable() {
        let sol = solve_are_newton(&s(1.0), &s(1.0), &s(1.0), &s(1.0), None).unwrap();
        assert!((sol.p[(0, 0)] - (1.0 + 2f64.sqrt())).abs() < 1e-12);
        assert!(sol.residual < 1e-12);
    }

    #[test]
    fn unstabilizable_pair_rejected() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let b = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(solve_are_newton(&a, &b, &Matrix::identity(2, 2), &s(1.0), None).is_err());
    }

    #[test]
    fn lqr_cost_examples() {
        let j = lqr_cost(&s(-1.0), &s(0.0), &s(0.0), &s(1.0), &s(1.0)).unwrap();
        assert!((j - 0.5).abs() < 1e-15);
        let j = lqr_cost(&s(0.0), &s(1.0), &s(-1.0), &s(1.0), &s(1.0)).unwrap();
        assert!((j - 1.0).abs() < 1e-15);
        assert!(lqr_cost(&s(1.0), &s(1.0), &s(0.0), &s(1.0), &s(1.0)).is_err());
    }
}
