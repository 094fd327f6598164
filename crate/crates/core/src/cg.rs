//! Conjugate gradients for the symmetric positive (semi)definite systems
//! that come out of the IRLS normal equations.

use crate::error::{DeblurError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `A x = b` from `x = 0` with at most `iters` iterations.
///
/// `apply(v, out)` must write `A v` into `out`. Stops early once the
/// residual norm drops below `1e-10 * ||b||`.
pub fn cg_solve<F>(mut apply: F, b: &[f64], iters: usize) -> Result<CgOutcome>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    let tol = 1e-10 * b_norm;
    let mut rr = dot(&r, &r);
    let mut done = 0;
    if rr.sqrt() <= tol || b_norm == 0.0 {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            residual_norm: rr.sqrt(),
        });
    }
    for it in 0..iters {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        let alpha = rr / pap;
        if !alpha.is_finite() {
            if pap == 0.0 && it > 0 {
                // exact breakdown after progress: the Krylov space is exhausted
                break;
            }
            return Err(DeblurError::numerical(
                "conjugate gradients",
                format!("non-finite step at iteration {it} (p'Ap = {pap:e})"),
            ));
        }
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        done = it + 1;
        if rr_new.sqrt() < tol {
            rr = rr_new;
            break;
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok(CgOutcome {
        x,
        iterations: done,
        residual_norm: rr.sqrt(),
    })
}

/// Dense row-major matrix-vector product, `out = m v`.
pub(crate) fn dense_matvec(m: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&m[i * n..(i + 1) * n], v);
    }
}
