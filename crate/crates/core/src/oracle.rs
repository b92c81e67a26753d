//! Fixed-domain Navier-Stokes reference solver.
//!
//! Classical semi-implicit projection step on the unit square built from
//! plain stencils, with no metric or motion code:
//!
//! `(I - dt PΔ) x = P(v - dt (v·∇)v + f)`.

use alloc::vec::Vec;

use crate::analytic::mode_shapes;
use crate::error::{Error, Result};
use crate::fields::{divergence, inner_l2, laplacian, leray_project_tol, Grid, VectorField};
use crate::geometry::MotionKind;
use crate::krylov::cg;
use crate::math::{sqrt, theta};
use crate::operators::Tolerances;
use crate::sde::{Coupling, DiagnosticRow, SimConfig, Trajectory};

fn centered(g: Grid, f: &[f64], i: usize, j: usize, axis: usize) -> f64 {
    let n = g.n();
    let h = g.spacing();
    let at = |a: usize, b: usize| f[g.node(a, b)];
    let k = if axis == 0 { i } else { j };
    let pick = |d: usize| if axis == 0 { at(d, j) } else { at(i, d) };
    if k == 0 {
        (-3.0 * pick(0) + 4.0 * pick(1) - pick(2)) / (2.0 * h)
    } else if k == n {
        (3.0 * pick(n) - 4.0 * pick(n - 1) + pick(n - 2)) / (2.0 * h)
    } else {
        (pick(k + 1) - pick(k - 1)) / (2.0 * h)
    }
}

/// `(v·∇)v` with centered differences.
pub fn advection(v: &VectorField) -> VectorField {
    let g = v.grid();
    let (a, b) = (v.comp(0), v.comp(1));
    let mut out = VectorField::zeros(g);
    for (i, j, k) in g.nodes() {
        let (u, w) = (a[k], b[k]);
        let r0 = u * centered(g, a, i, j, 0) + w * centered(g, a, i, j, 1);
        let r1 = u * centered(g, b, i, j, 0) + w * centered(g, b, i, j, 1);
        out.set(k, [r0, r1]);
    }
    out
}

/// `‖∇v‖_{L2}` with the trapezoid rule.
pub fn gradient_norm(v: &VectorField) -> f64 {
    let g = v.grid();
    let mut s = 0.0;
    for (i, j, _) in g.nodes() {
        let mut q = 0.0;
        for c in 0..2 {
            let f = v.comp(c);
            q += centered(g, f, i, j, 0).powi(2) + centered(g, f, i, j, 1).powi(2);
        }
        s += g.weight(i, j) * q;
    }
    sqrt(s)
}

/// One step of the classical projection scheme. `forcing` is added to the
/// explicit right-hand side as an increment (already multiplied by its time
/// weight).
pub fn oracle_step(v: &VectorField, dt: f64, forcing: Option<&VectorField>) -> Result<VectorField> {
    oracle_step_tol(v, dt, forcing, &Tolerances::default())
}

pub fn oracle_step_tol(
    v: &VectorField,
    dt: f64,
    forcing: Option<&VectorField>,
    tol: &Tolerances,
) -> Result<VectorField> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::BadTimeStep(dt));
    }
    let g = v.grid();
    let mut rhs = v.clone();
    rhs.axpy(-dt, &advection(v));
    if let Some(f) = forcing {
        if f.grid() != g {
            return Err(Error::GridMismatch { expected: g.n(), found: f.grid().n() });
        }
        rhs.axpy(1.0, f);
    }
    let proj = |w: &VectorField| leray_project_tol(w, tol.poisson).map(|p| p.0);
    let b = proj(&rhs)?;
    let mut x = v.clone();
    let floor = tol.implicit * sqrt(rhs.as_slice().iter().map(|z| z * z).sum::<f64>());
    cg(
        |p, out| {
            let pv = proj(&VectorField::from_flat(g, p.to_vec()))?;
            let mut y = pv.clone();
            y.axpy(-dt, &laplacian(&pv));
            let y = proj(&y)?;
            out.copy_from_slice(y.as_slice());
            Ok(())
        },
        b.as_slice(),
        x.as_mut_slice(),
        tol.implicit,
        floor,
        4 * g.node_count() + 100,
        "oracle-cg",
    )?;
    let x = proj(&x)?;
    if !x.is_finite() {
        return Err(Error::NonFinite("oracle step"));
    }
    Ok(x)
}

fn row(step: u64, t: f64, v: &VectorField) -> DiagnosticRow {
    let g = v.grid();
    let mut l2 = 0.0;
    for (i, j, k) in g.nodes() {
        let x = v.at(k);
        l2 += g.weight(i, j) * (x[0] * x[0] + x[1] * x[1]);
    }
    let h1 = gradient_norm(v);
    DiagnosticRow {
        step,
        t,
        t0: 0.0,
        cutoff: f64::INFINITY,
        l2: sqrt(l2),
        h1,
        theta: theta(h1 * h1),
        max_div: divergence(v).max_abs(),
    }
}

/// Run the classical equation with the configuration's grid, time step,
/// sampling cadence and noise. Only the identity motion is accepted, and the
/// cutoff is not applied.
pub fn oracle_trajectory(config: &SimConfig, v0: VectorField, seed: u64, member: u32) -> Result<(Trajectory, VectorField)> {
    if config.motion.kind != MotionKind::Identity {
        return Err(Error::InvalidMotion("the oracle runs on a fixed domain only"));
    }
    config.validate()?;
    let g = config.grid;
    let nz = &config.noise;
    let modes: Vec<VectorField> = if nz.modes > 0 { mode_shapes(g, nz.modes)? } else { Vec::new() };
    let amps: Vec<f64> = match nz.amplitudes.len() {
        1 => alloc::vec![nz.amplitudes[0]; nz.modes],
        _ => nz.amplitudes.clone(),
    };
    if amps.len() != modes.len() {
        return Err(Error::InvalidNoise("amplitude count does not match mode count"));
    }
    let rng = crate::rng::CounterRng::new(seed, member);
    let mut v = v0;
    let mut traj = Trajectory { rows: Vec::new(), events: Vec::new(), snapshots: Vec::new() };
    for k in 0..=config.steps {
        let t = k as f64 * config.dt;
        if k % config.sample_every == 0 || k == config.steps {
            traj.rows.push(row(k, t, &v));
        }
        if k == config.steps {
            break;
        }
        let forcing = if modes.is_empty() || amps.iter().all(|a| *a == 0.0) {
            None
        } else {
            let s = sqrt(config.dt);
            let mut f = VectorField::zeros(g);
            for (idx, (e, a)) in modes.iter().zip(&amps).enumerate() {
                let dw = s * rng.normal(k, idx as u32);
                let c = match nz.coupling {
                    Coupling::Additive => *a,
                    Coupling::Multiplicative => a * inner_l2(&v, e),
                };
                f.axpy(c * dw, e);
            }
            Some(f)
        };
        v = oracle_step_tol(&v, config.dt, forcing.as_ref(), &config.tol)?;
    }
    Ok((traj, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{initial_field, InitialCondition};

    #[test]
    fn zero_stays_zero() {
        let g = Grid::new(8).unwrap();
        let v = oracle_step(&VectorField::zeros(g), 1e-3, None).unwrap();
        assert_eq!(v.max_abs(), 0.0);
    }

    #[test]
    fn deterministic_flow_decays() {
        let g = Grid::new(16).unwrap();
        let v0 = initial_field(&InitialCondition::Vortex { amplitude: 1.0 }, g).unwrap();
        let e0 = gradient_norm(&v0);
        let mut v = v0;
        for _ in 0..10 {
            v = oracle_step(&v, 1e-3, None).unwrap();
        }
        assert!(gradient_norm(&v) < e0);
        assert!(divergence(&v).max_abs() < 1e-9);
    }
}
