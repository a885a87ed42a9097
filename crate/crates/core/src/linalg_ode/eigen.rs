//! Symmetric eigenvalues by cyclic Jacobi rotations.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Tolerance on `‖S − Sᵀ‖_max` scaled to the matrix size.
pub fn symmetry_tolerance(s: &DMatrix<f64>) -> f64 {
    1e-8 * (1.0 + s.amax())
}

pub fn asymmetry(s: &DMatrix<f64>) -> f64 {
    (s - s.transpose()).amax()
}

pub fn symmetrize(s: &DMatrix<f64>) -> DMatrix<f64> {
    (s + s.transpose()) * 0.5
}

fn ensure_symmetric(s: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() {
        return Err(Error::Dimension(format!("expected a square matrix, got {}x{}", s.nrows(), s.ncols())));
    }
    let asym = asymmetry(s);
    let tol = symmetry_tolerance(s);
    if asym > tol || !asym.is_finite() {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tolerance: tol,
        });
    }
    Ok(())
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn eig_sym(s: &DMatrix<f64>) -> Result<Vec<f64>> {
    ensure_symmetric(s)?;
    Ok(jacobi_eigenvalues(symmetrize(s)))
}

pub fn lambda_min(s: &DMatrix<f64>) -> Result<f64> {
    Ok(eig_sym(s)?.first().copied().unwrap_or(0.0))
}

pub fn lambda_max(s: &DMatrix<f64>) -> Result<f64> {
    Ok(eig_sym(s)?.last().copied().unwrap_or(0.0))
}

/// `λ_min(S) ≥ −tol`.
pub fn is_psd(s: &DMatrix<f64>, tol: f64) -> Result<bool> {
    Ok(lambda_min(s)? >= -tol)
}

fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let scale = a.norm();
    if n > 1 && scale > 0.0 {
        for _ in 0..MAX_SWEEPS {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
            if off.sqrt() <= 1e-15 * scale {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    rotate(&mut a, p, q);
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Applies the rotation `JᵀAJ` that annihilates `a[(p, q)]`.
fn rotate(a: &mut DMatrix<f64>, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = a.nrows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
}
