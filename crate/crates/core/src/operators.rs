//! Pulled-back operators of the transformed equation.
//!
//! An [`OperatorBundle`] is evaluated at time `t` for a reference time `t0`.
//! Fields handed to the bundle are Piola transforms relative to the domain at
//! `t0`. Internally everything is conjugated back to the computational square
//! through `J(t0)`, where the motion `r(t, ·)` is tabulated, so the discrete
//! operators of different reference frames are exact conjugates of each
//! other.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fields::{leray_project_tol, Grid, VectorField};
use crate::geometry::{evaluate_motion, metric_tensors, DomainMotion, MetricData, MotionSample};
use crate::krylov::{cg, dot};
use crate::math::Mat2;
use crate::transform::covariant_gradient;

/// Coefficients of `[L^# v]_l = Σ P_{α,(p,l)} ∂^α v_p` at one node.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct NodeCoefficients {
    /// `second[l][p][j][n]` multiplies `∂_j ∂_n v_p`.
    pub second: [[[[f64; 2]; 2]; 2]; 2],
    /// `first[l][p][q]` multiplies `∂_q v_p`.
    pub first: [[[f64; 2]; 2]; 2],
    /// `zeroth[l][p]` multiplies `v_p`.
    pub zeroth: [[f64; 2]; 2],
}

impl NodeCoefficients {
    fn slots(&self) -> impl Iterator<Item = f64> + '_ {
        self.second
            .iter()
            .flatten()
            .flatten()
            .flatten()
            .chain(self.first.iter().flatten().flatten())
            .chain(self.zeroth.iter().flatten())
            .copied()
    }
}

/// Non-divergence-form coefficients of `L_h^#` at every node.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientTable {
    pub grid: Grid,
    pub nodes: Vec<NodeCoefficients>,
}

impl CoefficientTable {
    /// Expand `∂r_m/∂y_l ∂_n(∂_j(v_p ∂r_m/∂y_p) h^{jn})` into coefficients.
    pub fn from_sample(sample: &MotionSample) -> Self {
        let nodes = sample
            .points
            .iter()
            .map(|p| {
                let jac = &p.jac.0;
                let h = p.jac.transpose() * p.jac;
                let hi = (p.jac_inv * p.jac_inv.transpose()).0;
                // ∂_n h_{ab}
                let mut dh = [[[0.0; 2]; 2]; 2];
                for (n, dhn) in dh.iter_mut().enumerate() {
                    for a in 0..2 {
                        for b in 0..2 {
                            dhn[a][b] = (0..2)
                                .map(|m| p.d2r[m][a][n] * jac[m][b] + jac[m][a] * p.d2r[m][b][n])
                                .sum();
                        }
                    }
                }
                // div_h[j] = Σ_n ∂_n h^{jn}, with ∂h⁻¹ = -h⁻¹ (∂h) h⁻¹.
                let mut div_h = [0.0; 2];
                for (jj, dj) in div_h.iter_mut().enumerate() {
                    for (n, dhn) in dh.iter().enumerate() {
                        let mut s = 0.0;
                        for a in 0..2 {
                            for b in 0..2 {
                                s += hi[jj][a] * dhn[a][b] * hi[b][n];
                            }
                        }
                        *dj -= s;
                    }
                }
                let mut c = NodeCoefficients::default();
                for l in 0..2 {
                    for pp in 0..2 {
                        for jj in 0..2 {
                            for n in 0..2 {
                                c.second[l][pp][jj][n] = h.0[l][pp] * hi[jj][n];
                            }
                        }
                        for q in 0..2 {
                            let mut s = 0.0;
                            for m in 0..2 {
                                let mut inner = div_h[q] * jac[m][pp];
                                for n in 0..2 {
                                    inner += 2.0 * hi[q][n] * p.d2r[m][pp][n];
                                }
                                s += jac[m][l] * inner;
                            }
                            c.first[l][pp][q] = s;
                        }
                        let mut s = 0.0;
                        for m in 0..2 {
                            let mut inner = 0.0;
                            for jj in 0..2 {
                                inner += div_h[jj] * p.d2r[m][pp][jj];
                                for n in 0..2 {
                                    inner += hi[jj][n] * p.d3r[m][pp][jj][n];
                                }
                            }
                            s += jac[m][l] * inner;
                        }
                        c.zeroth[l][pp] = s;
                    }
                }
                c
            })
            .collect();
        CoefficientTable { grid: sample.grid, nodes }
    }

    pub fn max_difference(&self, other: &CoefficientTable) -> f64 {
        self.nodes
            .iter()
            .zip(&other.nodes)
            .flat_map(|(a, b)| a.slots().zip(b.slots()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Apply the tabulated operator at interior nodes; boundary output is 0.
    pub fn apply(&self, v: &VectorField) -> VectorField {
        let g = self.grid;
        let n = g.n();
        let h = g.spacing();
        let (inv2h, invh2, inv4h2) = (0.5 / h, 1.0 / (h * h), 0.25 / (h * h));
        let comps = [v.comp(0), v.comp(1)];
        let mut out = VectorField::zeros(g);
        let s = n + 1;
        for j in 1..n {
            for i in 1..n {
                let k = g.node(i, j);
                let c = &self.nodes[k];
                let mut res = [0.0; 2];
                for (pp, f) in comps.iter().enumerate() {
                    let dx = (f[k + 1] - f[k - 1]) * inv2h;
                    let dy = (f[k + s] - f[k - s]) * inv2h;
                    let dxx = (f[k + 1] - 2.0 * f[k] + f[k - 1]) * invh2;
                    let dyy = (f[k + s] - 2.0 * f[k] + f[k - s]) * invh2;
                    let dxy = (f[k + s + 1] - f[k + s - 1] - f[k - s + 1] + f[k - s - 1]) * inv4h2;
                    for (l, r) in res.iter_mut().enumerate() {
                        let sc = &c.second[l][pp];
                        *r += sc[0][0] * dxx
                            + (sc[0][1] + sc[1][0]) * dxy
                            + sc[1][1] * dyy
                            + c.first[l][pp][0] * dx
                            + c.first[l][pp][1] * dy
                            + c.zeroth[l][pp] * f[k];
                    }
                }
                out.set(k, res);
            }
        }
        out
    }
}

/// Solver tolerances shared by the bundle operations.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tolerances {
    /// Relative residual of the projection's Poisson solve.
    pub poisson: f64,
    /// Relative residual of `(P0 h)⁻¹`.
    pub mass: f64,
    /// Relative residual of the implicit step.
    pub implicit: f64,
    pub gmres_restart: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            poisson: 1e-12,
            mass: 1e-10,
            implicit: 1e-12,
            gmres_restart: 40,
        }
    }
}

/// `g_N(r) = min(1, N / r)`, with `g_N(0) = 1`.
pub fn cutoff_gn(r: f64, n: f64) -> f64 {
    if r <= n {
        return 1.0;
    }
    let g = n / r;
    // Keep r g_N(r) <= N under rounding.
    if r * g > n {
        g.next_down()
    } else {
        g
    }
}

/// Operators of the transformed equation at `(t, t0)`.
#[derive(Clone, Debug)]
pub struct OperatorBundle {
    pub t: f64,
    pub t0: f64,
    pub grid: Grid,
    pub tol: Tolerances,
    /// Motion at `t` relative to the computational square.
    pub sample: MotionSample,
    pub metric: MetricData,
    /// `L^#` coefficients at `t` and at `t0`.
    pub table: CoefficientTable,
    pub ref_table: CoefficientTable,
    frame: Vec<Mat2>,
    frame_inv: Vec<Mat2>,
    identity_frame: bool,
}

impl OperatorBundle {
    pub fn new(motion: &DomainMotion, t: f64, t0: f64, grid: Grid, tol: Tolerances) -> Result<Self> {
        if t0 > t {
            return Err(Error::RereferenceBackwards { t_new: t, t0 });
        }
        let sample = evaluate_motion(motion, t, grid)?;
        let sample0 = evaluate_motion(motion, t0, grid)?;
        let metric = metric_tensors(&sample);
        let table = CoefficientTable::from_sample(&sample);
        let ref_table = CoefficientTable::from_sample(&sample0);
        let frame: Vec<Mat2> = sample0.points.iter().map(|p| p.jac).collect();
        let frame_inv = sample0.points.iter().map(|p| p.jac_inv).collect();
        let identity_frame = frame.iter().all(|m| *m == Mat2::IDENTITY);
        Ok(OperatorBundle {
            t,
            t0,
            grid,
            tol,
            sample,
            metric,
            table,
            ref_table,
            frame,
            frame_inv,
            identity_frame,
        })
    }

    /// Frame field to computational-square field: `J(t0)⁻¹ v`.
    pub fn to_base(&self, v: &VectorField) -> VectorField {
        if self.identity_frame {
            return v.clone();
        }
        v.map_nodes(|k, x| self.frame_inv[k].apply(x))
    }

    /// Computational-square field to frame field: `J(t0) v`.
    pub fn from_base(&self, v: &VectorField) -> VectorField {
        if self.identity_frame {
            return v.clone();
        }
        v.map_nodes(|k, x| self.frame[k].apply(x))
    }

    /// Covector-type quantities (outputs of `L^#`) map with `J(t0)^{-T}`.
    fn covector_from_base(&self, f: &VectorField) -> VectorField {
        if self.identity_frame {
            return f.clone();
        }
        f.map_nodes(|k, x| self.frame_inv[k].apply_t(x))
    }

    fn covector_to_base(&self, f: &VectorField) -> VectorField {
        if self.identity_frame {
            return f.clone();
        }
        f.map_nodes(|k, x| self.frame[k].apply_t(x))
    }

    pub(crate) fn project(&self, v: &VectorField) -> Result<VectorField> {
        leray_project_tol(v, self.tol.poisson).map(|(p, _)| p)
    }

    pub(crate) fn h_base(&self, v: &VectorField) -> VectorField {
        v.map_nodes(|k, x| self.metric.h[k].apply(x))
    }

    pub(crate) fn lh_base(&self, v: &VectorField) -> VectorField {
        self.table.apply(v)
    }

    pub(crate) fn m_base(&self, v: &VectorField) -> VectorField {
        let grad = covariant_gradient(v, &self.metric);
        v.map_nodes(|k, x| {
            let p = &self.sample.points[k];
            let a = (p.jac_inv * p.jac_t).apply(x);
            let gk = &grad[k];
            let mut out = a;
            for (kk, row) in gk.iter().enumerate() {
                out[0] += p.rbar_t[kk] * row[0];
                out[1] += p.rbar_t[kk] * row[1];
            }
            out
        })
    }

    pub(crate) fn n_base(&self, v: &VectorField) -> VectorField {
        let grad = covariant_gradient(v, &self.metric);
        v.map_nodes(|k, x| {
            let gk = &grad[k];
            [
                x[0] * gk[0][0] + x[1] * gk[1][0],
                x[0] * gk[0][1] + x[1] * gk[1][1],
            ]
        })
    }

    /// Solve `P (h x) = P w` for solenoidal `x` on the computational square.
    pub(crate) fn solve_mass_base(&self, w: &VectorField) -> Result<VectorField> {
        let rhs = self.project(w)?;
        let mut x = VectorField::zeros(self.grid);
        let g = self.grid;
        cg(
            |p, out| {
                let pv = self.project(&VectorField::from_flat(g, p.to_vec()))?;
                let r = self.project(&self.h_base(&pv))?;
                out.copy_from_slice(r.as_slice());
                Ok(())
            },
            rhs.as_slice(),
            x.as_mut_slice(),
            self.tol.mass,
            self.tol.mass * crate::fields::norm_l2(w) / self.grid.spacing(),
            4 * g.node_count() + 50,
            "mass-cg",
        )?;
        self.project(&x)
    }

    /// `L_h^# v` in the reference frame.
    pub fn apply_lh_sharp(&self, v: &VectorField) -> VectorField {
        self.covector_from_base(&self.lh_base(&self.to_base(v)))
    }

    /// `M v` in the reference frame.
    pub fn apply_m(&self, v: &VectorField) -> VectorField {
        self.from_base(&self.m_base(&self.to_base(v)))
    }

    /// `N(v, v)` in the reference frame.
    pub fn nonlinear_n(&self, v: &VectorField) -> VectorField {
        self.from_base(&self.n_base(&self.to_base(v)))
    }

    /// `P0 h v`, returned as a covector-type field.
    pub fn apply_p0h(&self, v: &VectorField) -> Result<VectorField> {
        let b = self.project(&self.h_base(&self.to_base(v)))?;
        Ok(self.covector_from_base(&b))
    }

    /// `(P0 h)⁻¹ w` on solenoidal fields.
    pub fn solve_p0h(&self, w: &VectorField) -> Result<VectorField> {
        let x = self.solve_mass_base(&self.covector_to_base(w))?;
        Ok(self.from_base(&x))
    }

    /// Moving-domain L2 norm of a frame field.
    pub fn norm_0t(&self, v: &VectorField) -> f64 {
        crate::fields::norm_0t(&self.to_base(v), &self.metric)
    }

    /// Moving-domain H1 seminorm of a frame field.
    pub fn norm_1t(&self, v: &VectorField) -> f64 {
        crate::fields::norm_1t(&self.to_base(v), &self.metric)
    }

    pub fn inner_1t(&self, v: &VectorField, w: &VectorField) -> f64 {
        crate::fields::inner_1t(&self.to_base(v), &self.to_base(w), &self.metric)
    }

    /// Drift `A1 + A2 + A3` with the cutoff `g_N(‖v‖_{1,t})` when `cutoff` is
    /// given.
    pub fn drift(&self, v: &VectorField, cutoff: Option<f64>) -> Result<VectorField> {
        let vb = self.to_base(v);
        let g = match cutoff {
            Some(n) => cutoff_gn(crate::fields::norm_1t(&vb, &self.metric), n),
            None => 1.0,
        };
        let a1 = self.solve_mass_base(&self.lh_base(&vb))?;
        let nl = self.n_base(&vb);
        let a2 = self.solve_mass_base(&self.h_base(&nl))?;
        let a3 = self.solve_mass_base(&self.h_base(&self.m_base(&vb)))?;
        let mut out = a1;
        out.axpy(-g, &a2);
        out.axpy(-1.0, &a3);
        Ok(self.from_base(&out))
    }

    /// Largest relative deviation `‖(L^#_{t0}(t) - Δ_{t0}) p‖ / ‖p‖_{H2}` over
    /// the probes.
    pub fn stokes_deviation(&self, probes: &[VectorField]) -> f64 {
        probes
            .iter()
            .map(|p| {
                let pb = self.to_base(p);
                let diff = self.table.apply(&pb).sub(&self.ref_table.apply(&pb));
                let diff = self.covector_from_base(&diff);
                let denom = crate::fields::norm_h2(p);
                if denom == 0.0 {
                    0.0
                } else {
                    crate::fields::norm_l2(&diff) / denom
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn is_identity_frame(&self) -> bool {
        self.identity_frame
    }
}

/// Discrete L2-type pairing used by the monotonicity audit:
/// `⟨x, z⟩ = -(x, P0 L^# z)`.
pub fn dual_pairing(bundle: &OperatorBundle, x: &VectorField, z: &VectorField) -> Result<f64> {
    let lz = bundle.project(&bundle.lh_base(&bundle.to_base(z)))?;
    let xb = bundle.to_base(x);
    let h = bundle.grid.spacing();
    Ok(-dot(xb.as_slice(), lz.as_slice()) * h * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{laplacian, leray_project};
    use crate::geometry::MotionKind;
    use crate::math::{sin, PI};

    fn bump_field(g: Grid) -> VectorField {
        VectorField::from_fn_no_slip(g, |p| {
            let b = sin(PI * p[0]) * sin(PI * p[1]);
            [b * b * (1.0 + p[1]), b * (p[0] - 0.3)]
        })
    }

    #[test]
    fn identity_table_is_five_point_laplacian() {
        let g = Grid::new(16).unwrap();
        let b = OperatorBundle::new(&DomainMotion::identity(1.0), 0.3, 0.0, g, Tolerances::default())
            .unwrap();
        let v = bump_field(g);
        let diff = b.apply_lh_sharp(&v).sub(&laplacian(&v)).max_abs();
        assert!(diff <= 1e-12 * laplacian(&v).max_abs());
    }

    #[test]
    fn cutoff_examples() {
        assert_eq!(cutoff_gn(0.5, 1.0), 1.0);
        assert_eq!(cutoff_gn(4.0, 2.0), 0.5);
        assert_eq!(cutoff_gn(0.0, 3.0), 1.0);
    }

    #[test]
    fn mass_solve_inverts_on_solenoidal_fields() {
        let g = Grid::new(16).unwrap();
        let m = DomainMotion::new(MotionKind::Shear { amplitude: 0.5, omega: 1.0 }, 5.0).unwrap();
        let b = OperatorBundle::new(&m, 1.0, 0.0, g, Tolerances::default()).unwrap();
        let v = leray_project(&bump_field(g)).unwrap();
        let back = b.solve_p0h(&b.apply_p0h(&v).unwrap()).unwrap();
        assert!(back.sub(&v).max_abs() <= 1e-8 * v.max_abs());
    }

    #[test]
    fn deviation_vanishes_at_reference_time() {
        let g = Grid::new(16).unwrap();
        let m = DomainMotion::new(MotionKind::Wave { amplitude: 0.1, omega: 2.0, mode: 1 }, 5.0)
            .unwrap();
        let b = OperatorBundle::new(&m, 0.7, 0.7, g, Tolerances::default()).unwrap();
        assert!(b.stokes_deviation(&[bump_field(g)]) <= 1e-10);
    }
}
