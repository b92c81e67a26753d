//! Conjugate gradients and restarted GMRES on flat vectors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::sqrt;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Outcome of a converged iterative solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveInfo {
    pub iterations: usize,
    pub residual: f64,
}

/// Conjugate gradients for a symmetric positive (semi-)definite operator.
///
/// Stops when `|r| <= max(tol * |b|, floor)`. The initial guess in `x` is
/// used as is.
pub(crate) fn cg<F>(
    mut apply: F,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    floor: f64,
    max_iter: usize,
    name: &'static str,
) -> Result<SolveInfo>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let bnorm = sqrt(dot(b, b));
    if !(bnorm.is_finite() && floor.is_finite()) {
        return Err(Error::NonFinite(name));
    }
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveInfo {
            iterations: 0,
            residual: 0.0,
        });
    }
    let n = b.len();
    let mut r = vec![0.0; n];
    apply(x, &mut r)?;
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let target = (tol * bnorm).max(floor);
    // Inner solves make the operator exact only to round-off, so the residual
    // can stall and then grow near the target; keep the best iterate.
    let mut best_rr = rr;
    let mut best_x = x.to_vec();
    let mut it = 0;
    while it < max_iter {
        if sqrt(rr) <= target {
            return Ok(SolveInfo {
                iterations: it,
                residual: sqrt(rr) / bnorm,
            });
        }
        apply(&p, &mut ap)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) || rr > 1e4 * best_rr {
            break;
        }
        let alpha = rr / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        if rr < best_rr {
            best_rr = rr;
            best_x.copy_from_slice(x);
        }
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        it += 1;
    }
    x.copy_from_slice(&best_x);
    let res = sqrt(best_rr) / bnorm;
    if sqrt(best_rr) <= target * 1e3 {
        return Ok(SolveInfo {
            iterations: it,
            residual: res,
        });
    }
    Err(Error::SolverDiverged {
        solver: name,
        iterations: it,
        residual: res,
    })
}

/// Restarted GMRES(m) with modified Gram-Schmidt and Givens rotations.
pub(crate) fn gmres<F>(
    mut apply: F,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    floor: f64,
    restart: usize,
    max_iter: usize,
    name: &'static str,
) -> Result<SolveInfo>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = b.len();
    let bnorm = sqrt(dot(b, b));
    if !(bnorm.is_finite() && floor.is_finite()) {
        return Err(Error::NonFinite(name));
    }
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveInfo {
            iterations: 0,
            residual: 0.0,
        });
    }
    let target = (tol * bnorm).max(floor);
    let m = restart.max(1);
    let mut total = 0;
    let mut w = vec![0.0; n];
    let mut res = f64::INFINITY;
    while total < max_iter {
        let mut r = vec![0.0; n];
        apply(x, &mut r)?;
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        let beta = sqrt(dot(&r, &r));
        res = beta;
        if beta <= target {
            break;
        }
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut hess = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            apply(&basis[k], &mut w)?;
            total += 1;
            for (j, vj) in basis.iter().enumerate() {
                let hjk = dot(&w, vj);
                hess[j][k] = hjk;
                axpy(-hjk, vj, &mut w);
            }
            let hnext = sqrt(dot(&w, &w));
            hess[k + 1][k] = hnext;
            for j in 0..k {
                let t = cs[j] * hess[j][k] + sn[j] * hess[j + 1][k];
                hess[j + 1][k] = -sn[j] * hess[j][k] + cs[j] * hess[j + 1][k];
                hess[j][k] = t;
            }
            let denom = sqrt(hess[k][k] * hess[k][k] + hess[k + 1][k] * hess[k + 1][k]);
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = hess[k][k] / denom;
            sn[k] = hess[k + 1][k] / denom;
            hess[k][k] = denom;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            res = g[k + 1].abs();
            if res <= target || hnext == 0.0 || total >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }
        // Back substitution on the leading k_used block.
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= hess[i][j] * y[j];
            }
            y[i] = s / hess[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            axpy(*yj, &basis[j], x);
        }
        if res <= target {
            // Confirm with the true residual on the next sweep only if needed.
            let mut r = vec![0.0; n];
            apply(x, &mut r)?;
            r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
            res = sqrt(dot(&r, &r));
            if res <= target * 10.0 {
                return Ok(SolveInfo {
                    iterations: total,
                    residual: res / bnorm,
                });
            }
        }
    }
    if res <= target * 10.0 {
        return Ok(SolveInfo {
            iterations: total,
            residual: res / bnorm,
        });
    }
    Err(Error::SolverDiverged {
        solver: name,
        iterations: total,
        residual: res / bnorm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(x: &[f64], y: &mut [f64], lower: f64, diag: f64, upper: f64) {
        let n = x.len();
        for i in 0..n {
            let mut s = diag * x[i];
            if i > 0 {
                s += lower * x[i - 1];
            }
            if i + 1 < n {
                s += upper * x[i + 1];
            }
            y[i] = s;
        }
    }

    #[test]
    fn cg_solves_spd_tridiagonal() {
        let n = 50;
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut x = vec![0.0; n];
        let info = cg(
            |v, out| {
                tridiag(v, out, -1.0, 2.5, -1.0);
                Ok(())
            },
            &b,
            &mut x,
            1e-12,
            0.0,
            500,
            "cg",
        )
        .unwrap();
        let mut ax = vec![0.0; n];
        tridiag(&x, &mut ax, -1.0, 2.5, -1.0);
        let err: f64 = ax.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "err {err} info {info:?}");
    }

    #[test]
    fn gmres_solves_nonsymmetric() {
        let n = 60;
        let b: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64).cos()).collect();
        let mut x = vec![0.0; n];
        gmres(
            |v, out| {
                tridiag(v, out, -1.3, 3.0, -0.4);
                Ok(())
            },
            &b,
            &mut x,
            1e-12,
            0.0,
            20,
            2000,
            "gmres",
        )
        .unwrap();
        let mut ax = vec![0.0; n];
        tridiag(&x, &mut ax, -1.3, 3.0, -0.4);
        let err: f64 = ax.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "err {err}");
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let b = vec![0.0; 4];
        let mut x = vec![1.0; 4];
        cg(|v, o| { o.copy_from_slice(v); Ok(()) }, &b, &mut x, 1e-12, 0.0, 10, "cg").unwrap();
        assert!(x.iter().all(|v| *v == 0.0));
    }
}
