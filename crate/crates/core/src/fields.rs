//! Discrete fields on the reference unit square.
//!
//! Velocity components are collocated at the `(n+1)^2` grid nodes, scalars
//! (pressure potentials, divergence) live at the `n^2` cell centres. The cell
//! divergence is the "box" average of nodal differences and the gradient is
//! its negative transpose, so the two are exact adjoints and the Leray
//! projection built from them is an orthogonal projector.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::MetricData;
use crate::krylov::SolveInfo;
use crate::math::sqrt;
use crate::transform::covariant_gradient;

/// Uniform grid with `n` cells per side of the unit square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub const MIN_CELLS: usize = 8;

    pub fn new(n: usize) -> Result<Self> {
        if n < Self::MIN_CELLS {
            return Err(Error::GridTooCoarse { n });
        }
        Ok(Grid { n })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Nodes per side.
    #[inline]
    pub fn side(&self) -> usize {
        self.n + 1
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    #[inline]
    pub fn cell_count(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    #[inline]
    pub fn node_pos(&self, i: usize, j: usize) -> [f64; 2] {
        [self.coord(i), self.coord(j)]
    }

    #[inline]
    pub fn cell_pos(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.spacing();
        [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.n || j == self.n
    }

    /// Trapezoidal quadrature weight of a node.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let h = self.spacing();
        let wi = if i == 0 || i == self.n { 0.5 } else { 1.0 };
        let wj = if j == 0 || j == self.n { 0.5 } else { 1.0 };
        wi * wj * h * h
    }

    /// Iterate `(i, j, flat index)` over all nodes in storage order.
    pub fn nodes(self) -> impl Iterator<Item = (usize, usize, usize)> {
        let s = self.side();
        (0..s).flat_map(move |j| (0..s).map(move |i| (i, j, j * s + i)))
    }
}

/// Two-component nodal vector field, component-major storage.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VectorField {
    grid: Grid,
    data: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        VectorField {
            grid,
            data: vec![0.0; 2 * grid.node_count()],
        }
    }

    /// Sample `f` at every node, boundary included.
    pub fn from_fn<F: FnMut([f64; 2]) -> [f64; 2]>(grid: Grid, mut f: F) -> Self {
        let mut v = Self::zeros(grid);
        let m = grid.node_count();
        for (i, j, k) in grid.nodes() {
            let val = f(grid.node_pos(i, j));
            v.data[k] = val[0];
            v.data[m + k] = val[1];
        }
        v
    }

    /// Sample `f` at interior nodes and impose no-slip on the boundary.
    pub fn from_fn_no_slip<F: FnMut([f64; 2]) -> [f64; 2]>(grid: Grid, f: F) -> Self {
        let mut v = Self::from_fn(grid, f);
        v.clamp_boundary();
        v
    }

    pub fn from_components(grid: Grid, c0: Vec<f64>, c1: Vec<f64>) -> Result<Self> {
        let m = grid.node_count();
        if c0.len() != m || c1.len() != m {
            return Err(Error::InvalidConfig("component length does not match grid"));
        }
        let mut data = c0;
        data.extend_from_slice(&c1);
        Ok(VectorField { grid, data })
    }

    pub(crate) fn from_flat(grid: Grid, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), 2 * grid.node_count());
        VectorField { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn comp(&self, c: usize) -> &[f64] {
        let m = self.grid.node_count();
        &self.data[c * m..(c + 1) * m]
    }

    #[inline]
    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        let m = self.grid.node_count();
        &mut self.data[c * m..(c + 1) * m]
    }

    #[inline]
    pub fn at(&self, k: usize) -> [f64; 2] {
        let m = self.grid.node_count();
        [self.data[k], self.data[m + k]]
    }

    #[inline]
    pub fn set(&mut self, k: usize, val: [f64; 2]) {
        let m = self.grid.node_count();
        self.data[k] = val[0];
        self.data[m + k] = val[1];
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn clamp_boundary(&mut self) {
        let g = self.grid;
        let m = g.node_count();
        for (i, j, k) in g.nodes() {
            if g.is_boundary(i, j) {
                self.data[k] = 0.0;
                self.data[m + k] = 0.0;
            }
        }
    }

    pub fn boundary_is_zero(&self) -> bool {
        let g = self.grid;
        g.nodes()
            .filter(|&(i, j, _)| g.is_boundary(i, j))
            .all(|(_, _, k)| {
                let v = self.at(k);
                v[0] == 0.0 && v[1] == 0.0
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &VectorField) {
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += alpha * b);
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    /// Apply a pointwise linear map node by node.
    pub fn map_nodes<F: FnMut(usize, [f64; 2]) -> [f64; 2]>(&self, mut f: F) -> VectorField {
        let mut out = VectorField::zeros(self.grid);
        for k in 0..self.grid.node_count() {
            out.set(k, f(k, self.at(k)));
        }
        out
    }
}

/// Cell-centred scalar field.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField {
            grid,
            data: vec![0.0; grid.cell_count()],
        }
    }

    pub fn from_fn<F: FnMut([f64; 2]) -> f64>(grid: Grid, mut f: F) -> Self {
        let mut s = Self::zeros(grid);
        for j in 0..grid.n() {
            for i in 0..grid.n() {
                s.data[grid.cell(i, j)] = f(grid.cell_pos(i, j));
            }
        }
        s
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
    }

    /// Midpoint-rule inner product.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        let h = self.grid.spacing();
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum::<f64>() * h * h
    }
}

/// Cell divergence from nodal values.
pub fn divergence(v: &VectorField) -> ScalarField {
    let g = v.grid();
    let mut out = ScalarField::zeros(g);
    divergence_into(g, v.as_slice(), &mut out.data);
    out
}

fn divergence_into(g: Grid, v: &[f64], out: &mut [f64]) {
    let n = g.n();
    let m = g.node_count();
    let s = 0.5 / g.spacing();
    let (a, b) = v.split_at(m);
    for j in 0..n {
        for i in 0..n {
            let k00 = g.node(i, j);
            let k10 = k00 + 1;
            let k01 = k00 + n + 1;
            let k11 = k01 + 1;
            let dx = a[k10] + a[k11] - a[k00] - a[k01];
            let dy = b[k01] + b[k11] - b[k00] - b[k10];
            out[g.cell(i, j)] = s * (dx + dy);
        }
    }
}

/// Nodal gradient of a cell scalar, zero on boundary nodes. Equals minus the
/// transpose of [`divergence`].
pub fn gradient(phi: &ScalarField) -> VectorField {
    let g = phi.grid();
    let mut out = VectorField::zeros(g);
    gradient_into(g, &phi.data, out.as_mut_slice());
    out
}

fn gradient_into(g: Grid, phi: &[f64], out: &mut [f64]) {
    let n = g.n();
    let m = g.node_count();
    let s = 0.5 / g.spacing();
    let (a, b) = out.split_at_mut(m);
    for j in 0..=n {
        for i in 0..=n {
            let k = g.node(i, j);
            if g.is_boundary(i, j) {
                a[k] = 0.0;
                b[k] = 0.0;
                continue;
            }
            let p_mm = phi[g.cell(i - 1, j - 1)];
            let p_pm = phi[g.cell(i, j - 1)];
            let p_mp = phi[g.cell(i - 1, j)];
            let p_pp = phi[g.cell(i, j)];
            a[k] = s * (p_pm + p_pp - p_mm - p_mp);
            b[k] = s * (p_mp + p_pp - p_mm - p_pm);
        }
    }
}

/// Five-point vector Laplacian at interior nodes, zero on the boundary.
pub fn laplacian(v: &VectorField) -> VectorField {
    let g = v.grid();
    let n = g.n();
    let s = 1.0 / (g.spacing() * g.spacing());
    let mut out = VectorField::zeros(g);
    for c in 0..2 {
        let f = v.comp(c);
        let o = out.comp_mut(c);
        for j in 1..n {
            for i in 1..n {
                let k = g.node(i, j);
                o[k] = s * (f[k - 1] + f[k + 1] + f[k - n - 1] + f[k + n + 1] - 4.0 * f[k]);
            }
        }
    }
    out
}

/// Default relative residual for the projection's Poisson solve.
pub const POISSON_TOL: f64 = 1e-12;

/// Leray projection: remove boundary values, then subtract the discrete
/// gradient that makes the cell divergence vanish.
pub fn leray_project(v: &VectorField) -> Result<VectorField> {
    leray_project_tol(v, POISSON_TOL).map(|(p, _)| p)
}

pub fn leray_project_tol(v: &VectorField, tol: f64) -> Result<(VectorField, SolveInfo)> {
    if !v.is_finite() {
        return Err(Error::NonFinite("leray_project input"));
    }
    let g = v.grid();
    let mut w = v.clone();
    w.clamp_boundary();
    let mut rhs = vec![0.0; g.cell_count()];
    divergence_into(g, w.as_slice(), &mut rhs);
    // D G phi = D w with G = -D^T, i.e. (D D^T) phi = -D w.
    rhs.iter_mut().for_each(|x| *x = -*x);
    let factor = crate::poisson::factor(g)?;
    let mut tmp = vec![0.0; 2 * g.node_count()];
    let mut kphi = vec![0.0; g.cell_count()];
    // Divergence is measured against the natural scale |w| / h of the input.
    let floor = tol * sqrt(crate::krylov::dot(w.as_slice(), w.as_slice())) / g.spacing();
    let target = (tol * sqrt(crate::krylov::dot(&rhs, &rhs))).max(floor);
    if !target.is_finite() {
        return Err(Error::NonFinite("leray_project scale"));
    }
    let mut phi = vec![0.0; g.cell_count()];
    let mut res = rhs.clone();
    let mut rnorm = sqrt(crate::krylov::dot(&res, &res));
    let mut sweeps = 0;
    // Direct solve followed by iterative refinement on the true residual.
    while rnorm > target && sweeps < 4 {
        factor.solve(&mut res);
        phi.iter_mut().zip(&res).for_each(|(p, d)| *p += d);
        gradient_into(g, &phi, &mut tmp);
        divergence_into(g, &tmp, &mut kphi);
        res.iter_mut()
            .zip(rhs.iter().zip(&kphi))
            .for_each(|(r, (b, k))| *r = b + k);
        rnorm = sqrt(crate::krylov::dot(&res, &res));
        sweeps += 1;
    }
    if rnorm > 1e3 * target {
        return Err(Error::SolverDiverged { solver: "poisson", iterations: sweeps, residual: rnorm });
    }
    let bnorm = sqrt(crate::krylov::dot(&rhs, &rhs));
    let info = SolveInfo { iterations: sweeps, residual: if bnorm > 0.0 { rnorm / bnorm } else { 0.0 } };
    let mut grad = vec![0.0; 2 * g.node_count()];
    gradient_into(g, &phi, &mut grad);
    w.as_mut_slice()
        .iter_mut()
        .zip(&grad)
        .for_each(|(a, b)| *a -= b);
    Ok((w, info))
}

/// Trapezoidal L2 inner product over the reference square.
pub fn inner_l2(v: &VectorField, w: &VectorField) -> f64 {
    let g = v.grid();
    let m = g.node_count();
    let (a0, a1) = v.as_slice().split_at(m);
    let (b0, b1) = w.as_slice().split_at(m);
    g.nodes()
        .map(|(i, j, k)| g.weight(i, j) * (a0[k] * b0[k] + a1[k] * b1[k]))
        .sum()
}

pub fn norm_l2(v: &VectorField) -> f64 {
    sqrt(inner_l2(v, v))
}

/// Nodal first derivative along `axis`: central inside, second-order
/// one-sided on the boundary.
pub(crate) fn d1(g: Grid, f: &[f64], i: usize, j: usize, axis: usize) -> f64 {
    let n = g.n();
    let h = g.spacing();
    let (pos, stride) = if axis == 0 { (i, 1) } else { (j, n + 1) };
    let k = g.node(i, j);
    if pos == 0 {
        (-3.0 * f[k] + 4.0 * f[k + stride] - f[k + 2 * stride]) / (2.0 * h)
    } else if pos == n {
        (3.0 * f[k] - 4.0 * f[k - stride] + f[k - 2 * stride]) / (2.0 * h)
    } else {
        (f[k + stride] - f[k - stride]) / (2.0 * h)
    }
}

/// Nodal second derivative along `axis`, one-sided on the boundary.
pub(crate) fn d2(g: Grid, f: &[f64], i: usize, j: usize, axis: usize) -> f64 {
    let n = g.n();
    let h2 = g.spacing() * g.spacing();
    let (pos, stride) = if axis == 0 { (i, 1) } else { (j, n + 1) };
    let k = g.node(i, j);
    if pos == 0 {
        (2.0 * f[k] - 5.0 * f[k + stride] + 4.0 * f[k + 2 * stride] - f[k + 3 * stride]) / h2
    } else if pos == n {
        (2.0 * f[k] - 5.0 * f[k - stride] + 4.0 * f[k - 2 * stride] - f[k - 3 * stride]) / h2
    } else {
        (f[k + stride] - 2.0 * f[k] + f[k - stride]) / h2
    }
}

/// Discrete H2 norm: L2 part, forward-difference gradient on edges, pure
/// second differences on nodes and the mixed difference on cells.
pub fn norm_h2(v: &VectorField) -> f64 {
    let g = v.grid();
    let n = g.n();
    let h = g.spacing();
    let hh = h * h;
    let mut grad = 0.0;
    let mut second = 0.0;
    let mut mixed = 0.0;
    for c in 0..2 {
        let f = v.comp(c);
        for j in 0..=n {
            let wj = if j == 0 || j == n { 0.5 } else { 1.0 };
            for i in 0..n {
                let k = g.node(i, j);
                let dx = (f[k + 1] - f[k]) / h;
                grad += wj * hh * dx * dx;
                let k2 = g.node(j, i);
                let dy = (f[k2 + n + 1] - f[k2]) / h;
                grad += wj * hh * dy * dy;
            }
        }
        for (i, j, _) in g.nodes() {
            let w = g.weight(i, j);
            let a = d2(g, f, i, j, 0);
            let b = d2(g, f, i, j, 1);
            second += w * (a * a + b * b);
        }
        for j in 0..n {
            for i in 0..n {
                let k = g.node(i, j);
                let m = (f[k + n + 2] - f[k + 1] - f[k + n + 1] + f[k]) / hh;
                mixed += hh * m * m;
            }
        }
    }
    let l2 = inner_l2(v, v);
    sqrt(l2 + grad + second + 2.0 * mixed)
}

/// `‖P Δ v‖` with the five-point Laplacian.
pub fn norm_a(v: &VectorField) -> Result<f64> {
    Ok(norm_l2(&leray_project(&laplacian(v))?))
}

/// Moving-domain inner product `∫ h_ij v_i w_j`.
pub fn inner_0t(v: &VectorField, w: &VectorField, metric: &MetricData) -> f64 {
    let g = v.grid();
    g.nodes()
        .map(|(i, j, k)| {
            let hv = metric.h[k].apply(v.at(k));
            let wk = w.at(k);
            g.weight(i, j) * (hv[0] * wk[0] + hv[1] * wk[1])
        })
        .sum()
}

/// Moving-domain H1 inner product `∫ h^{kl} h_{ij} (∇_k v)_i (∇_l w)_j`.
pub fn inner_1t(v: &VectorField, w: &VectorField, metric: &MetricData) -> f64 {
    let g = v.grid();
    let gv = covariant_gradient(v, metric);
    let gw = covariant_gradient(w, metric);
    g.nodes()
        .map(|(i, j, k)| {
            let hi = &metric.h_inv[k].0;
            let h = &metric.h[k].0;
            let a = &gv[k];
            let b = &gw[k];
            let mut s = 0.0;
            for kk in 0..2 {
                for ll in 0..2 {
                    let mut inner = 0.0;
                    for ii in 0..2 {
                        for jj in 0..2 {
                            inner += h[ii][jj] * a[kk][ii] * b[ll][jj];
                        }
                    }
                    s += hi[kk][ll] * inner;
                }
            }
            g.weight(i, j) * s
        })
        .sum()
}

pub fn norm_1t(v: &VectorField, metric: &MetricData) -> f64 {
    sqrt(inner_1t(v, v, metric).max(0.0))
}

pub fn norm_0t(v: &VectorField, metric: &MetricData) -> f64 {
    sqrt(inner_0t(v, v, metric).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{cos, sin, PI};

    fn grid(n: usize) -> Grid {
        Grid::new(n).unwrap()
    }

    #[test]
    fn coarse_grid_rejected() {
        assert_eq!(Grid::new(4), Err(Error::GridTooCoarse { n: 4 }));
    }

    #[test]
    fn constant_field_has_unit_norm() {
        let v = VectorField::from_fn(grid(8), |_| [1.0, 0.0]);
        assert!((norm_l2(&v) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_is_negative_adjoint() {
        let g = grid(12);
        let v = VectorField::from_fn(g, |p| [sin(3.0 * p[0]) + p[1], cos(2.0 * p[1] * p[0])]);
        let phi = ScalarField::from_fn(g, |p| {
            let b = |x: f64| sin(PI * x) * sin(PI * x);
            b(p[0]) * b(p[1]) * (1.0 + p[0])
        });
        // Interior-supported potential: zero in boundary cells.
        let mut phi = phi;
        for j in 0..12 {
            for i in 0..12 {
                if i == 0 || j == 0 || i == 11 || j == 11 {
                    phi.data[g.cell(i, j)] = 0.0;
                }
            }
        }
        let lhs = divergence(&v).inner(&phi);
        let rhs = -inner_l2(&v, &gradient(&phi));
        assert!((lhs - rhs).abs() < 1e-13, "{lhs} vs {rhs}");
    }

    #[test]
    fn projection_is_solenoidal_idempotent() {
        let g = grid(16);
        let v = VectorField::from_fn(g, |p| [sin(5.0 * p[1]) * p[0], cos(3.0 * p[0]) + p[1] * p[1]]);
        let p1 = leray_project(&v).unwrap();
        assert!(divergence(&p1).max_abs() < 1e-10);
        assert!(p1.boundary_is_zero());
        let p2 = leray_project(&p1).unwrap();
        assert!(p2.sub(&p1).max_abs() < 1e-10);
    }

    #[test]
    fn laplacian_second_order_on_smooth_field() {
        let mut errs = Vec::new();
        for &n in &[16, 32] {
            let g = grid(n);
            let v = VectorField::from_fn(g, |p| [sin(PI * p[0]) * sin(PI * p[1]), 0.0]);
            let l = laplacian(&v);
            let mut e = 0.0_f64;
            for (i, j, k) in g.nodes() {
                if g.is_boundary(i, j) {
                    continue;
                }
                let p = g.node_pos(i, j);
                let exact = -2.0 * PI * PI * sin(PI * p[0]) * sin(PI * p[1]);
                e = e.max((l.at(k)[0] - exact).abs());
            }
            errs.push(e);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.9, "order {order}");
    }
}
