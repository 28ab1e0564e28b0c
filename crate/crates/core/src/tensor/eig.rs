//! Symmetric eigendecomposition via cyclic Jacobi rotations, and the
//! pseudo-inverse square root built on top of it.
//!
//! Jacobi is quadratic-convergent and backward stable; for the matrix sizes
//! this crate deals with (landmark Gram matrices, m <= 1024) it is fast
//! enough and has no external dependencies.

use super::{Matrix, Vector};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 64;

/// How far from symmetric a matrix may be, relative to its largest entry.
const SYM_TOL: f64 = 1e-10;

/// Eigendecomposition of a symmetric matrix.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues sorted descending
/// and eigenvectors as the columns of the returned matrix, so that
/// `a = U diag(lambda) U^T`.
pub fn sym_eig(a: &Matrix) -> Result<(Vector, Matrix)> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::dim(format!("sym_eig on {}x{}", n, a.cols())));
    }
    let scale = a.max_abs();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a.get(i, j) - a.get(j, i)).abs() > SYM_TOL * scale.max(1e-300) {
                return Err(Error::NotSymmetric(format!(
                    "entry ({i},{j}) = {} vs ({j},{i}) = {}",
                    a.get(i, j),
                    a.get(j, i)
                )));
            }
        }
    }

    let mut w = a.clone();
    let mut u = Matrix::identity(n);
    let frob = a.frob_norm().max(1e-300);

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += w.get(i, j) * w.get(i, j);
            }
        }
        if (2.0 * off).sqrt() <= 1e-14 * frob {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut w, &mut u, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w.get(j, j).partial_cmp(&w.get(i, i)).unwrap());

    let mut vals = Vector::zeros(n);
    let mut vecs = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        vals[col] = w.get(src, src);
        for r in 0..n {
            vecs.set(r, col, u.get(r, src));
        }
    }
    Ok((vals, vecs))
}

/// One Jacobi rotation zeroing the (p,q) entry.
fn rotate(w: &mut Matrix, u: &mut Matrix, p: usize, q: usize) {
    let apq = w.get(p, q);
    let app = w.get(p, p);
    let aqq = w.get(q, q);
    // Entries that are already zero at working precision would only churn
    // roundoff; skip them.
    if apq.abs() <= 1e-300 || apq.abs() <= 1e-17 * (app.abs() + aqq.abs()) {
        return;
    }
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let n = w.rows();
    w.set(p, p, app - t * apq);
    w.set(q, q, aqq + t * apq);
    w.set(p, q, 0.0);
    w.set(q, p, 0.0);
    for i in 0..n {
        if i != p && i != q {
            let aip = w.get(i, p);
            let aiq = w.get(i, q);
            w.set(i, p, c * aip - s * aiq);
            w.set(p, i, c * aip - s * aiq);
            w.set(i, q, s * aip + c * aiq);
            w.set(q, i, s * aip + c * aiq);
        }
    }
    for i in 0..n {
        let uip = u.get(i, p);
        let uiq = u.get(i, q);
        u.set(i, p, c * uip - s * uiq);
        u.set(i, q, s * uip + c * uiq);
    }
}

/// Pseudo-inverse square root of a PSD matrix.
///
/// Eigenvalues at or below `eps_rel * lambda_max` are treated as zero rank
/// and dropped (duplicate landmarks make Gram matrices exactly singular, so
/// plain inversion is not an option). Eigenvalues below `-1e-6 * lambda_max`
/// mean the input was not PSD to begin with and produce an error.
pub fn inv_sqrt_psd(a: &Matrix, eps_rel: f64) -> Result<Matrix> {
    let (vals, vecs) = sym_eig(a)?;
    let n = a.rows();
    let lmax = if n == 0 { 0.0 } else { vals[0].max(0.0) };
    for i in 0..n {
        if vals[i] < -1e-6 * lmax.max(1e-300) && vals[i] < -1e-300 {
            return Err(Error::NotPsd(format!(
                "eigenvalue {} below -1e-6 * lambda_max ({})",
                vals[i], lmax
            )));
        }
    }
    let f: Vec<f64> = (0..n)
        .map(|i| {
            if vals[i] > eps_rel * lmax {
                1.0 / vals[i].sqrt()
            } else {
                0.0
            }
        })
        .collect();

    // U diag(f) U^T, then force exact symmetry against roundoff.
    let mut uf = vecs.clone();
    for i in 0..n {
        for j in 0..n {
            uf.set(i, j, uf.get(i, j) * f[j]);
        }
    }
    let mut out = uf.matmul(&vecs.transpose())?;
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (out.get(i, j) + out.get(j, i));
            out.set(i, j, m);
            out.set(j, i, m);
        }
    }
    Ok(out)
}

/// Default relative eigenvalue clamp for [`inv_sqrt_psd`].
pub const DEFAULT_EPS_REL: f64 = 1e-6;
