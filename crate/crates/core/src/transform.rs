//! Piola transforms between the moving domain and the reference square.
//!
//! A physical velocity is represented by its values at the image points
//! `r(t, y)` of the grid nodes, so both directions are pointwise products
//! with the Jacobian and no interpolation is involved.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fields::{d1, divergence, VectorField};
use crate::geometry::{MetricData, MotionSample};

/// `ũ(y) = J⁻¹(t, y) u(r(t, y))`.
pub fn piola_forward(u: &VectorField, sample: &MotionSample) -> Result<VectorField> {
    check_grid(u, sample)?;
    Ok(u.map_nodes(|k, x| sample.points[k].jac_inv.apply(x)))
}

/// `v̄(r(t, y)) = J(t, y) v(y)`.
pub fn piola_inverse(v: &VectorField, sample: &MotionSample) -> Result<VectorField> {
    check_grid(v, sample)?;
    Ok(v.map_nodes(|k, x| sample.points[k].jac.apply(x)))
}

fn check_grid(v: &VectorField, sample: &MotionSample) -> Result<()> {
    if v.grid() != sample.grid {
        return Err(Error::GridMismatch {
            expected: sample.grid.n(),
            found: v.grid().n(),
        });
    }
    Ok(())
}

/// Covariant gradient `(∇_k v)_i = ∂v_i/∂y_k + Γ^i_{kj} v_j` at every node,
/// stored as `[k][i]`.
pub fn covariant_gradient(v: &VectorField, metric: &MetricData) -> Vec<[[f64; 2]; 2]> {
    let g = v.grid();
    let (a, b) = (v.comp(0), v.comp(1));
    let mut out = Vec::with_capacity(g.node_count());
    for (i, j, k) in g.nodes() {
        let val = v.at(k);
        let gam = &metric.gamma[k];
        let mut cell = [[0.0; 2]; 2];
        for (kk, row) in cell.iter_mut().enumerate() {
            let da = d1(g, a, i, j, kk);
            let db = d1(g, b, i, j, kk);
            row[0] = da + gam[0][kk][0] * val[0] + gam[0][kk][1] * val[1];
            row[1] = db + gam[1][kk][0] * val[0] + gam[1][kk][1] * val[1];
        }
        out.push(cell);
    }
    out
}

/// Return the largest cell divergence, or an error when it exceeds `tol`.
pub fn check_divergence_free(v: &VectorField, tol: f64) -> Result<f64> {
    let max_div = divergence(v).max_abs();
    if !(max_div <= tol) {
        return Err(Error::NotSolenoidal { max_div });
    }
    Ok(max_div)
}
