//! Pole placement for the kernel ODE boundary condition Φ(0).
//!
//! The closed-loop ODE matrix is E₁ = A + BΦ(0). Any target E₁ reachable
//! through B can be requested directly; with B square and invertible a list
//! of eigenvalues is placed as E₁ = diag(λ₁, …, λ_d) via Φ(0) = B⁻¹(E₁ − A).
//! The convergence-rate condition E₁ + E₁ᵀ < −2cI is verified by a symmetric
//! eigenvalue check and the achieved margin is reported.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::controllability_rank;

/// Placement target: either the closed-loop matrix itself or its spectrum.
#[derive(Debug, Clone)]
pub enum PoleTarget {
    /// Request E₁ = A + BΦ(0) to equal this matrix.
    Matrix(DMatrix<f64>),
    /// Request E₁ = diag of these values (requires B square invertible).
    Eigenvalues(Vec<f64>),
}

/// Result of [`place_poles`].
#[derive(Debug, Clone)]
pub struct PolePlacement {
    /// The kernel ODE boundary condition Φ(0) (n×d acting as d×n input map).
    pub phi0: DMatrix<f64>,
    /// The realized closed-loop matrix A + BΦ(0).
    pub e1: DMatrix<f64>,
    /// Achieved margin: −λ_max(E₁ + E₁ᵀ)/2.
    pub margin: f64,
}

/// Computes Φ(0) realizing the requested closed-loop ODE matrix and verifies
/// the symmetric-part margin condition E₁ + E₁ᵀ < −2cI.
///
/// # Errors
///
/// Fails if (A, B) is uncontrollable, if the eigenvalue-list mode is used
/// with a non-square or singular B, if the requested E₁ is not reachable
/// through B, or if the realized E₁ misses the margin `c` (the error carries
/// the achieved margin).
pub fn place_poles(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    desired: PoleTarget,
    c: f64,
) -> Result<PolePlacement> {
    let d = a.nrows();
    let rank = controllability_rank(a, b)?;
    if rank != d {
        return Err(Error::Uncontrollable { rank, dim: d });
    }

    let e1_target = match &desired {
        PoleTarget::Matrix(e1) => {
            if e1.nrows() != d || e1.ncols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "target E1 is {}x{}, expected {d}x{d}",
                    e1.nrows(),
                    e1.ncols()
                )));
            }
            e1.clone()
        }
        PoleTarget::Eigenvalues(vals) => {
            if vals.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "{} eigenvalues given for state dimension {d}",
                    vals.len()
                )));
            }
            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(vals))
        }
    };

    let rhs = &e1_target - a;
    let phi0 = match &desired {
        PoleTarget::Eigenvalues(_) => {
            if b.nrows() != b.ncols() {
                return Err(Error::Singular(format!(
                    "eigenvalue-list placement needs a square B, got {}x{}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            let inv = b
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Singular("B is singular".into()))?;
            inv * &rhs
        }
        PoleTarget::Matrix(_) => solve_through_b(b, &rhs)?,
    };

    let e1 = a + b * &phi0;
    let reach = (&e1 - &e1_target).abs().max();
    let scale = 1.0 + e1_target.abs().max();
    if reach > 1e-9 * scale {
        return Err(Error::Singular(format!(
            "requested E1 is not reachable through B (best residual {reach:.3e})"
        )));
    }

    let sym = &e1 + e1.transpose();
    let lambda_max = sym
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let margin = -lambda_max / 2.0;
    if !(lambda_max < -2.0 * c) {
        return Err(Error::MarginViolation {
            achieved: margin,
            required: c,
        });
    }

    Ok(PolePlacement { phi0, e1, margin })
}

/// Least-squares solve of B·Φ0 = rhs column by column (exact when reachable).
fn solve_through_b(b: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = b.clone().svd(true, true);
    let mut phi0 = DMatrix::zeros(b.ncols(), rhs.ncols());
    for col in 0..rhs.ncols() {
        let sol = svd
            .solve(&rhs.column(col).into_owned(), 1e-13)
            .map_err(|e| Error::Singular(e.to_string()))?;
        phi0.set_column(col, &sol);
    }
    Ok(phi0)
}

/// Margin realized by a user-supplied Φ(0): −λ_max(E₁ + E₁ᵀ)/2 with
/// E₁ = A + BΦ(0). Fails with the achieved value when below `c`.
pub fn check_margin(a: &DMatrix<f64>, b: &DMatrix<f64>, phi0: &DMatrix<f64>, c: f64) -> Result<f64> {
    let e1 = a + b * phi0;
    let sym = &e1 + e1.transpose();
    let lambda_max = sym
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let margin = -lambda_max / 2.0;
    if !(lambda_max < -2.0 * c) {
        return Err(Error::MarginViolation {
            achieved: margin,
            required: c,
        });
    }
    Ok(margin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_input_places_diagonal() {
        let d = 3;
        let a = DMatrix::zeros(d, d);
        let b = DMatrix::identity(d, d);
        let c = 2.0;
        let p = place_poles(&a, &b, PoleTarget::Eigenvalues(vec![-c; d]), 1.0).unwrap();
        assert!((p.phi0 - DMatrix::from_diagonal_element(d, d, -c)).abs().max() < 1e-14);
        assert!((p.margin - c).abs() < 1e-12);
    }

    #[test]
    fn margin_violation_reports_achieved_value() {
        let d = 2;
        let a = DMatrix::zeros(d, d);
        let b = DMatrix::identity(d, d);
        // E1 = -I gives margin 1; demand 1.5.
        let err = place_poles(&a, &b, PoleTarget::Eigenvalues(vec![-1.0; d]), 1.5).unwrap_err();
        match err {
            Error::MarginViolation { achieved, required } => {
                assert!((achieved - 1.0).abs() < 1e-12);
                assert_eq!(required, 1.5);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn uncontrollable_pair_is_rejected() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::zeros(2, 1);
        assert!(matches!(
            place_poles(&a, &b, PoleTarget::Matrix(-DMatrix::identity(2, 2)), 0.5),
            Err(Error::Uncontrollable { .. })
        ));
    }

    #[test]
    fn singular_b_rejected_in_eigenvalue_mode() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let mut b = DMatrix::zeros(2, 2);
        b[(1, 0)] = 1.0;
        b[(1, 1)] = 1.0;
        // Controllable through column mixing, but singular as a square map.
        if controllability_rank(&a, &b).unwrap() == 2 {
            assert!(matches!(
                place_poles(&a, &b, PoleTarget::Eigenvalues(vec![-1.0, -2.0]), 0.1),
                Err(Error::Singular(_))
            ));
        }
    }
}
