//! Cyclic Jacobi eigen-decomposition of a dense symmetric matrix.

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenvalues (descending) and matching unit eigenvectors (one per row) of
/// the symmetric row-major `n x n` matrix `a`.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if a.len() != n * n {
        return Err(Error::DimensionMismatch(format!("{} entries for a {n}x{n} matrix", a.len())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("eigen input contains non-finite entries".into()));
    }
    let mut m = a.to_vec();
    // eigenvectors stored as rows so rotations touch contiguous memory
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        vt[i * n + i] = 1.0;
    }
    let scale: f64 = m.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off <= 1e-30 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    let np = c * akp - s * akq;
                    let nq = s * akp + c * akq;
                    m[k * n + p] = np;
                    m[p * n + k] = np;
                    m[k * n + q] = nq;
                    m[q * n + k] = nq;
                }
                let (lo, hi) = vt.split_at_mut(q * n);
                let vp = &mut lo[p * n..(p + 1) * n];
                let vq = &mut hi[..n];
                for k in 0..n {
                    let a = vp[k];
                    let b = vq[k];
                    vp[k] = c * a - s * b;
                    vq[k] = s * a + c * b;
                }
            }
        }
    }
    if !converged {
        return Err(Error::Numerical("Jacobi eigen solver did not converge".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = order.iter().map(|&i| vt[i * n..(i + 1) * n].to_vec()).collect();
    Ok((values, vectors))
}
