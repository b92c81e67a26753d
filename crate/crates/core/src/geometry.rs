//! Domain motions `r(t, y)` of the unit square and their derivatives.
//!
//! Every family is volume preserving. Rigid rotations turn about the centre
//! of the square; the shear-type families displace the first coordinate by a
//! profile of the second, so `det J = 1` identically and the inverse map is
//! explicit.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fields::Grid;
use crate::math::{cos, sin, Mat2, PI};
use crate::operators::CoefficientTable;

const CENTER: [f64; 2] = [0.5, 0.5];

/// One term `amplitude * sin(omega t) * sin(mode * pi * y2)` of a displacement
/// table.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WaveTerm {
    pub amplitude: f64,
    pub omega: f64,
    pub mode: u32,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum MotionKind {
    Identity,
    /// Rigid rotation by angle `omega t` about the square centre.
    Rotation { omega: f64 },
    /// `r = (y1 + a sin(omega t) y2, y2)`.
    Shear { amplitude: f64, omega: f64 },
    /// `r = (y1 + a sin(omega t) sin(mode pi y2), y2)`.
    Wave { amplitude: f64, omega: f64, mode: u32 },
    /// Sum of wave terms, user supplied.
    Table(Vec<WaveTerm>),
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DomainMotion {
    pub kind: MotionKind,
    pub t_max: f64,
}

/// Geometry of the motion at one reference point.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PointGeometry {
    pub r: [f64; 2],
    /// `jac[m][p] = ∂r_m/∂y_p`.
    pub jac: Mat2,
    pub jac_inv: Mat2,
    /// `d2r[m][p][q] = ∂²r_m/∂y_p∂y_q`.
    pub d2r: [[[f64; 2]; 2]; 2],
    pub d3r: [[[[f64; 2]; 2]; 2]; 2],
    pub r_t: [f64; 2],
    /// `∂²r/∂t∂y`.
    pub jac_t: Mat2,
    /// `∂r̄/∂t` evaluated at the image point, equal to `-J⁻¹ r_t`.
    pub rbar_t: [f64; 2],
}

/// Motion evaluated at every grid node at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSample {
    pub t: f64,
    pub grid: Grid,
    pub points: Vec<PointGeometry>,
}

/// Pointwise metric quantities derived from a [`MotionSample`].
#[derive(Clone, Debug, PartialEq)]
pub struct MetricData {
    pub h: Vec<Mat2>,
    pub h_inv: Vec<Mat2>,
    /// `gamma[k][i][j][l] = Γ^i_{jl}`.
    pub gamma: Vec<[[[f64; 2]; 2]; 2]>,
    pub dh_dt: Vec<Mat2>,
    pub dh_inv_dt: Vec<Mat2>,
}

/// Shear-type displacement and derivatives: `(d, d', d'', d''', d_t, d'_t)`.
struct Profile {
    d: f64,
    d1: f64,
    d2: f64,
    d3: f64,
    dt: f64,
    d1t: f64,
}

impl Profile {
    fn zero() -> Self {
        Profile { d: 0.0, d1: 0.0, d2: 0.0, d3: 0.0, dt: 0.0, d1t: 0.0 }
    }

    fn add_wave(&mut self, t: f64, y2: f64, w: &WaveTerm) {
        let k = w.mode as f64 * PI;
        let s = w.amplitude * sin(w.omega * t);
        let st = w.amplitude * w.omega * cos(w.omega * t);
        let (sy, cy) = (sin(k * y2), cos(k * y2));
        self.d += s * sy;
        self.d1 += s * k * cy;
        self.d2 -= s * k * k * sy;
        self.d3 -= s * k * k * k * cy;
        self.dt += st * sy;
        self.d1t += st * k * cy;
    }
}

impl DomainMotion {
    pub fn new(kind: MotionKind, t_max: f64) -> Result<Self> {
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(Error::InvalidMotion("horizon must be positive and finite"));
        }
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        let ok = match &kind {
            MotionKind::Identity => true,
            MotionKind::Rotation { omega } => finite(&[*omega]),
            MotionKind::Shear { amplitude, omega } => finite(&[*amplitude, *omega]),
            MotionKind::Wave { amplitude, omega, mode } => {
                finite(&[*amplitude, *omega]) && *mode > 0
            }
            MotionKind::Table(terms) => terms
                .iter()
                .all(|w| finite(&[w.amplitude, w.omega]) && w.mode > 0),
        };
        if !ok {
            return Err(Error::InvalidMotion("non-finite coefficient or zero mode"));
        }
        Ok(DomainMotion { kind, t_max })
    }

    pub fn identity(t_max: f64) -> Self {
        DomainMotion { kind: MotionKind::Identity, t_max }
    }

    fn profile(&self, t: f64, y2: f64) -> Option<Profile> {
        let mut p = Profile::zero();
        match &self.kind {
            MotionKind::Shear { amplitude, omega } => {
                let s = amplitude * sin(omega * t);
                let st = amplitude * omega * cos(omega * t);
                p.d = s * y2;
                p.d1 = s;
                p.dt = st * y2;
                p.d1t = st;
            }
            MotionKind::Wave { amplitude, omega, mode } => p.add_wave(
                t,
                y2,
                &WaveTerm { amplitude: *amplitude, omega: *omega, mode: *mode },
            ),
            MotionKind::Table(terms) => terms.iter().for_each(|w| p.add_wave(t, y2, w)),
            _ => return None,
        }
        Some(p)
    }

    /// Analytic geometry at one reference point, without range checks.
    pub fn point(&self, t: f64, y: [f64; 2]) -> PointGeometry {
        let mut g = PointGeometry {
            r: y,
            jac: Mat2::IDENTITY,
            jac_inv: Mat2::IDENTITY,
            ..Default::default()
        };
        match &self.kind {
            MotionKind::Identity => {}
            MotionKind::Rotation { omega } => {
                let th = omega * t;
                let (s, c) = (sin(th), cos(th));
                let rot = Mat2::new(c, -s, s, c);
                let drot = Mat2::new(-s, -c, c, -s);
                let rel = [y[0] - CENTER[0], y[1] - CENTER[1]];
                let ry = rot.apply(rel);
                g.r = [CENTER[0] + ry[0], CENTER[1] + ry[1]];
                g.jac = rot;
                g.jac_inv = rot.transpose();
                let v = drot.apply(rel);
                g.r_t = [omega * v[0], omega * v[1]];
                g.jac_t = drot * *omega;
            }
            _ => {
                let p = self.profile(t, y[1]).expect("shear-type family");
                g.r = [y[0] + p.d, y[1]];
                g.jac = Mat2::new(1.0, p.d1, 0.0, 1.0);
                g.jac_inv = Mat2::new(1.0, -p.d1, 0.0, 1.0);
                g.d2r[0][1][1] = p.d2;
                g.d3r[0][1][1][1] = p.d3;
                g.r_t = [p.dt, 0.0];
                g.jac_t = Mat2::new(0.0, p.d1t, 0.0, 0.0);
            }
        }
        let back = g.jac_inv.apply(g.r_t);
        g.rbar_t = [-back[0], -back[1]];
        g
    }

    /// Map a point of the reference square into the moving domain.
    pub fn forward_map(&self, t: f64, y: [f64; 2]) -> [f64; 2] {
        self.point(t, y).r
    }

    /// Inverse map `r̄(t, x)`.
    pub fn inverse_map(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        match &self.kind {
            MotionKind::Identity => x,
            MotionKind::Rotation { omega } => {
                let th = omega * t;
                let (s, c) = (sin(th), cos(th));
                let rel = [x[0] - CENTER[0], x[1] - CENTER[1]];
                [
                    CENTER[0] + c * rel[0] + s * rel[1],
                    CENTER[1] - s * rel[0] + c * rel[1],
                ]
            }
            _ => {
                let p = self.profile(t, x[1]).expect("shear-type family");
                [x[0] - p.d, x[1]]
            }
        }
    }

    /// True when the motion family is affine in space.
    pub fn is_affine(&self) -> bool {
        matches!(
            self.kind,
            MotionKind::Identity | MotionKind::Rotation { .. } | MotionKind::Shear { .. }
        )
    }
}

/// Evaluate the motion and its derivatives at every grid node.
pub fn evaluate_motion(motion: &DomainMotion, t: f64, grid: Grid) -> Result<MotionSample> {
    if !(t.is_finite() && t >= 0.0 && t <= motion.t_max) {
        return Err(Error::TimeOutOfRange { t, t_max: motion.t_max });
    }
    let mut points = Vec::with_capacity(grid.node_count());
    for (i, j, _) in grid.nodes() {
        let p = motion.point(t, grid.node_pos(i, j));
        let det = p.jac.det();
        if !(det.is_finite() && det.abs() > 1e-12) {
            return Err(Error::DegenerateJacobian { t });
        }
        points.push(p);
    }
    Ok(MotionSample { t, grid, points })
}

/// `h = JᵀJ`, its inverse, the Christoffel symbols and time derivatives.
pub fn metric_tensors(sample: &MotionSample) -> MetricData {
    let m = sample.points.len();
    let mut out = MetricData {
        h: Vec::with_capacity(m),
        h_inv: Vec::with_capacity(m),
        gamma: Vec::with_capacity(m),
        dh_dt: Vec::with_capacity(m),
        dh_inv_dt: Vec::with_capacity(m),
    };
    for p in &sample.points {
        let h = p.jac.transpose() * p.jac;
        let hi = p.jac_inv * p.jac_inv.transpose();
        let ht = p.jac_t.transpose() * p.jac + p.jac.transpose() * p.jac_t;
        out.h.push(h);
        out.h_inv.push(hi);
        out.gamma.push(christoffel_at(p));
        out.dh_dt.push(ht);
        out.dh_inv_dt.push((hi * ht * hi) * -1.0);
    }
    out
}

/// `Γ^i_{jk} = (J⁻¹)_{il} ∂²r_l/∂y_j∂y_k`.
pub fn christoffel_at(p: &PointGeometry) -> [[[f64; 2]; 2]; 2] {
    let mut g = [[[0.0; 2]; 2]; 2];
    for (i, gi) in g.iter_mut().enumerate() {
        for (j, gij) in gi.iter_mut().enumerate() {
            for (k, gijk) in gij.iter_mut().enumerate() {
                *gijk = (0..2).map(|l| p.jac_inv.0[i][l] * p.d2r[l][j][k]).sum();
            }
        }
    }
    g
}

/// Christoffel symbols at every node.
pub fn christoffel(sample: &MotionSample) -> Vec<[[[f64; 2]; 2]; 2]> {
    sample.points.iter().map(christoffel_at).collect()
}

/// Geometry of `r^{t0}(t, z) = r(t, r̄(t0, z))` at `z = r(t0, y)`, given the
/// geometry of `r` at `(t, y)` and `(t0, y)`.
pub fn compose_point(p: &PointGeometry, p0: &PointGeometry) -> PointGeometry {
    let g = &p0.jac_inv.0;
    // Second and third derivatives of the inverse map g = r̄(t0, .).
    let mut g2 = [[[0.0; 2]; 2]; 2];
    for (i, g2i) in g2.iter_mut().enumerate() {
        for a in 0..2 {
            for b in 0..2 {
                let mut s = 0.0;
                for m in 0..2 {
                    let mut inner = 0.0;
                    for pp in 0..2 {
                        for q in 0..2 {
                            inner += p0.d2r[m][pp][q] * g[pp][a] * g[q][b];
                        }
                    }
                    s += g[i][m] * inner;
                }
                g2i[a][b] = -s;
            }
        }
    }
    let third_term = |d3: &[[[[f64; 2]; 2]; 2]; 2], d2: &[[[f64; 2]; 2]; 2], m: usize, a: usize, b: usize, c: usize| {
        let mut s = 0.0;
        for pp in 0..2 {
            for q in 0..2 {
                for r in 0..2 {
                    s += d3[m][pp][q][r] * g[pp][a] * g[q][b] * g[r][c];
                }
                s += d2[m][pp][q]
                    * (g2[pp][a][c] * g[q][b] + g[pp][a] * g2[q][b][c] + g2[pp][a][b] * g[q][c]);
            }
        }
        s
    };
    let mut g3 = [[[[0.0; 2]; 2]; 2]; 2];
    for i in 0..2 {
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    let s: f64 = (0..2)
                        .map(|m| g[i][m] * third_term(&p0.d3r, &p0.d2r, m, a, b, c))
                        .sum();
                    g3[i][a][b][c] = -s;
                }
            }
        }
    }
    let jac = p.jac * p0.jac_inv;
    let mut out = PointGeometry {
        r: p.r,
        jac,
        jac_inv: p0.jac * p.jac_inv,
        r_t: p.r_t,
        jac_t: p.jac_t * p0.jac_inv,
        ..Default::default()
    };
    for m in 0..2 {
        for a in 0..2 {
            for b in 0..2 {
                let mut s = 0.0;
                for pp in 0..2 {
                    for q in 0..2 {
                        s += p.d2r[m][pp][q] * g[pp][a] * g[q][b];
                    }
                    s += p.jac.0[m][pp] * g2[pp][a][b];
                }
                out.d2r[m][a][b] = s;
                for c in 0..2 {
                    let mut s3 = third_term(&p.d3r, &p.d2r, m, a, b, c);
                    for pp in 0..2 {
                        s3 += p.jac.0[m][pp] * g3[pp][a][b][c];
                    }
                    out.d3r[m][a][b][c] = s3;
                }
            }
        }
    }
    let back = out.jac_inv.apply(out.r_t);
    out.rbar_t = [-back[0], -back[1]];
    out
}

/// Sample of the re-referenced motion `r^{t0}(t, ·)` at the image nodes
/// `r(t0, grid)`.
pub fn evaluate_relative(
    motion: &DomainMotion,
    t0: f64,
    t: f64,
    grid: Grid,
) -> Result<MotionSample> {
    let s = evaluate_motion(motion, t, grid)?;
    let s0 = evaluate_motion(motion, t0, grid)?;
    Ok(compose_samples(&s, &s0))
}

pub fn compose_samples(s: &MotionSample, s0: &MotionSample) -> MotionSample {
    MotionSample {
        t: s.t,
        grid: s.grid,
        points: s
            .points
            .iter()
            .zip(&s0.points)
            .map(|(p, p0)| compose_point(p, p0))
            .collect(),
    }
}

/// Largest change of the re-referenced operator coefficients between `t0`
/// and `t`, over all nodes and coefficient slots.
pub fn coefficient_drift(motion: &DomainMotion, t0: f64, t: f64, grid: Grid) -> Result<f64> {
    let at_t = CoefficientTable::from_sample(&evaluate_relative(motion, t0, t, grid)?);
    let at_t0 = CoefficientTable::from_sample(&evaluate_relative(motion, t0, t0, grid)?);
    Ok(at_t.max_difference(&at_t0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn motions() -> [DomainMotion; 4] {
        [
            DomainMotion::identity(10.0),
            DomainMotion::new(MotionKind::Rotation { omega: 1.3 }, 10.0).unwrap(),
            DomainMotion::new(MotionKind::Shear { amplitude: 0.4, omega: 2.0 }, 10.0).unwrap(),
            DomainMotion::new(
                MotionKind::Wave { amplitude: 0.1, omega: 3.0, mode: 1 },
                10.0,
            )
            .unwrap(),
        ]
    }

    #[test]
    fn out_of_range_time_rejected() {
        let g = Grid::new(8).unwrap();
        let m = DomainMotion::identity(1.0);
        assert!(matches!(evaluate_motion(&m, 1.5, g), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(evaluate_motion(&m, -0.1, g), Err(Error::TimeOutOfRange { .. })));
    }

    #[test]
    fn shear_closed_form() {
        let g = Grid::new(8).unwrap();
        let m = DomainMotion::new(MotionKind::Shear { amplitude: 0.5, omega: 1.0 }, 5.0).unwrap();
        let t = 0.7;
        let s = 0.5 * sin(t);
        let sample = evaluate_motion(&m, t, g).unwrap();
        let metric = metric_tensors(&sample);
        for k in 0..g.node_count() {
            assert!((sample.points[k].jac - Mat2::new(1.0, s, 0.0, 1.0)).max_abs() < 1e-15);
            assert!((metric.h[k] - Mat2::new(1.0, s, s, 1.0 + s * s)).max_abs() < 1e-15);
            assert!((sample.points[k].jac.det() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn inverse_map_roundtrip() {
        for m in motions() {
            for &t in &[0.0, 0.4, 2.2] {
                for &y in &[[0.1, 0.2], [0.5, 0.9], [1.0, 0.0]] {
                    let x = m.forward_map(t, y);
                    let back = m.inverse_map(t, x);
                    assert!((back[0] - y[0]).abs() < 1e-12 && (back[1] - y[1]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let eps = 1e-5;
        for m in motions() {
            let t = 0.37;
            let y = [0.31, 0.62];
            let p = m.point(t, y);
            for q in 0..2 {
                let mut yp = y;
                let mut ym = y;
                yp[q] += eps;
                ym[q] -= eps;
                let (pp, pm) = (m.point(t, yp), m.point(t, ym));
                for a in 0..2 {
                    let fd = (pp.r[a] - pm.r[a]) / (2.0 * eps);
                    assert!((fd - p.jac.0[a][q]).abs() < 1e-8);
                    for b in 0..2 {
                        let fd2 = (pp.jac.0[a][b] - pm.jac.0[a][b]) / (2.0 * eps);
                        assert!((fd2 - p.d2r[a][b][q]).abs() < 1e-7);
                        for c in 0..2 {
                            let fd3 = (pp.d2r[a][b][c] - pm.d2r[a][b][c]) / (2.0 * eps);
                            assert!((fd3 - p.d3r[a][b][c][q]).abs() < 1e-5);
                        }
                    }
                }
            }
            let (pt, ptm) = (m.point(t + eps, y), m.point(t - eps, y));
            for a in 0..2 {
                assert!(((pt.r[a] - ptm.r[a]) / (2.0 * eps) - p.r_t[a]).abs() < 1e-8);
                for b in 0..2 {
                    let fd = (pt.jac.0[a][b] - ptm.jac.0[a][b]) / (2.0 * eps);
                    assert!((fd - p.jac_t.0[a][b]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn composition_matches_shear_type_closed_form() {
        // r^{t0}(t, z) for a wave motion is the wave with displacement
        // d(t, ·) - d(t0, ·).
        let m = DomainMotion::new(MotionKind::Wave { amplitude: 0.15, omega: 2.0, mode: 2 }, 5.0)
            .unwrap();
        let (t0, t) = (0.4, 0.9);
        let y = [0.3, 0.7];
        let c = compose_point(&m.point(t, y), &m.point(t0, y));
        let z = m.forward_map(t0, y);
        let d = |tt: f64, y2: f64| 0.15 * sin(2.0 * tt) * sin(2.0 * PI * y2);
        let dd = |tt: f64, y2: f64, k: u32| {
            let kk = 2.0 * PI;
            let base = 0.15 * sin(2.0 * tt);
            match k {
                1 => base * kk * cos(kk * y2),
                2 => -base * kk * kk * sin(kk * y2),
                _ => -base * kk * kk * kk * cos(kk * y2),
            }
        };
        assert!((c.r[0] - (z[0] - d(t0, z[1]) + d(t, z[1]))).abs() < 1e-14);
        assert!((c.jac.0[0][1] - (dd(t, z[1], 1) - dd(t0, z[1], 1))).abs() < 1e-13);
        assert!((c.d2r[0][1][1] - (dd(t, z[1], 2) - dd(t0, z[1], 2))).abs() < 1e-12);
        assert!((c.d3r[0][1][1][1] - (dd(t, z[1], 3) - dd(t0, z[1], 3))).abs() < 1e-10);
        assert!((c.jac - Mat2::new(1.0, c.jac.0[0][1], 0.0, 1.0)).max_abs() < 1e-14);
    }

    #[test]
    fn composition_at_reference_time_is_identity() {
        for m in motions() {
            let y = [0.2, 0.45];
            let c = compose_point(&m.point(0.8, y), &m.point(0.8, y));
            assert!((c.jac - Mat2::IDENTITY).max_abs() < 1e-14);
            assert!(c.d2r.iter().flatten().flatten().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn rotation_metric_is_flat() {
        let g = Grid::new(8).unwrap();
        let m = &motions()[1];
        let metric = metric_tensors(&evaluate_motion(m, 1.1, g).unwrap());
        for k in 0..g.node_count() {
            assert!((metric.h[k] - Mat2::IDENTITY).max_abs() < 1e-15);
            assert!(metric.gamma[k].iter().flatten().flatten().all(|x| *x == 0.0));
        }
    }
}
