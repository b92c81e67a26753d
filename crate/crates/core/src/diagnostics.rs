//! Audit quantities: the Θ moment, energy series, norm equivalence constants
//! and empirical checks of the structural conditions on the transformed
//! operators.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::analytic::{initial_field, InitialCondition};
use crate::error::{Error, Result};
use crate::fields::{laplacian, leray_project, norm_a, norm_h2, norm_l2, Grid, VectorField};
use crate::geometry::{evaluate_motion, metric_tensors, DomainMotion};
use crate::krylov::cg;
use crate::math::{sqrt, theta};
use crate::operators::{dual_pairing, OperatorBundle, Tolerances};
use crate::sde::Trajectory;

/// `Θ(x) = log(1 + log(1 + x))`, rejecting negative arguments.
pub fn theta_checked(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::NegativeArgument(x));
    }
    Ok(theta(x))
}

/// Flat key-value audit output.
#[derive(Clone, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AuditReport {
    pub name: String,
    pub labels: Vec<(String, String)>,
    pub values: Vec<(String, f64)>,
    pub samples: usize,
}

impl AuditReport {
    pub fn new(name: &str) -> Self {
        AuditReport { name: name.to_string(), ..Default::default() }
    }

    pub fn label(&mut self, key: &str, value: &str) -> &mut Self {
        self.labels.push((key.to_string(), value.to_string()));
        self
    }

    pub fn set(&mut self, key: &str, value: f64) -> &mut Self {
        match self.values.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.values.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|(_, v)| v.is_finite())
    }

    /// `key = value` lines, labels first.
    pub fn to_text(&self) -> String {
        let mut out = format!("audit = {}\nsamples = {}\n", self.name, self.samples);
        for (k, v) in &self.labels {
            out.push_str(&format!("{k} = {v}\n"));
        }
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v:e}\n"));
        }
        out
    }
}

/// Trajectories of one ensemble run at a fixed cutoff level.
#[derive(Clone, Debug)]
pub struct MomentGroup {
    pub cutoff: f64,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentAudit {
    /// `(N, E sup Θ, standard error)` per level.
    pub levels: Vec<(f64, f64, f64)>,
    /// `Θ(‖u0‖²_{H1})`.
    pub baseline: f64,
    /// Smallest `C` with `E sup Θ <= Θ(‖u0‖²_{H1}) + C (1 + ‖u0‖²_{L2})` for all levels.
    pub c_fit: f64,
    /// `(max - min) / max` of the per-level estimates.
    pub spread: f64,
}

impl MomentAudit {
    pub fn report(&self) -> AuditReport {
        let mut r = AuditReport::new("moment");
        r.samples = self.levels.len();
        for (n, est, se) in &self.levels {
            r.set(&format!("estimate_n{n}"), *est);
            r.set(&format!("stderr_n{n}"), *se);
        }
        r.set("baseline", self.baseline).set("c_fit", self.c_fit).set("spread", self.spread);
        r
    }
}

/// Monte Carlo estimate of `E sup_s Θ(‖v(s)‖²_{1,s})` per cutoff level.
/// `h1_sq` and `l2_sq` are `‖u0‖²_{H1}` and `‖u0‖²_{L2}`.
pub fn moment_audit(groups: &[MomentGroup], h1_sq: f64, l2_sq: f64) -> Result<MomentAudit> {
    if groups.is_empty() {
        return Err(Error::NotEnoughSamples("moment audit needs at least one cutoff level"));
    }
    let baseline = theta_checked(h1_sq)?;
    let mut levels = Vec::with_capacity(groups.len());
    for g in groups {
        let m = g.trajectories.len();
        if m < 2 {
            return Err(Error::NotEnoughSamples("moment audit needs at least two trajectories per level"));
        }
        let sups: Vec<f64> = g
            .trajectories
            .iter()
            .map(|t| t.rows.iter().map(|r| r.theta).fold(0.0, f64::max))
            .collect();
        let mean = sups.iter().sum::<f64>() / m as f64;
        let var = sups.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (m - 1) as f64;
        levels.push((g.cutoff, mean, sqrt(var / m as f64)));
    }
    let c_fit = levels
        .iter()
        .map(|(_, e, _)| (e - baseline) / (1.0 + l2_sq))
        .fold(0.0, f64::max);
    let hi = levels.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = levels.iter().map(|l| l.1).fold(f64::INFINITY, f64::min);
    let spread = if hi > 0.0 { (hi - lo) / hi } else { 0.0 };
    Ok(MomentAudit { levels, baseline, c_fit, spread })
}

/// Solve the discrete Stokes problem `P Δ x = P b` for solenoidal `x`.
fn stokes_solve(b: &VectorField, tol: f64) -> Result<VectorField> {
    let g = b.grid();
    let mut rhs = leray_project(b)?;
    rhs.scale(-1.0);
    let mut x = VectorField::zeros(g);
    let floor = tol * norm_l2(&rhs);
    cg(
        |p, out| {
            let pv = leray_project(&VectorField::from_flat(g, p.to_vec()))?;
            let mut y = leray_project(&laplacian(&pv))?;
            y.scale(-1.0);
            out.copy_from_slice(y.as_slice());
            Ok(())
        },
        rhs.as_slice(),
        x.as_mut_slice(),
        tol,
        floor,
        4 * g.node_count() + 100,
        "stokes-cg",
    )?;
    leray_project(&x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IotaAudit {
    pub t: f64,
    /// `max ‖ι_t v‖_{H2} / ‖v‖_{H2}`.
    pub c2: f64,
    /// `max ‖ι_t⁻¹ v‖_{H2} / ‖v‖_{H2}` from the Neumann series.
    pub c3: f64,
    /// `max ‖(ι_t - I) v‖_{H2} / ‖v‖_{H2}`.
    pub deviation: f64,
    pub within_half: bool,
    pub neumann_iterations: usize,
}

impl IotaAudit {
    pub fn report(&self) -> AuditReport {
        let mut r = AuditReport::new("iota");
        r.set("t", self.t)
            .set("c2", self.c2)
            .set("c3", self.c3)
            .set("deviation", self.deviation)
            .set("within_half", if self.within_half { 1.0 } else { 0.0 })
            .set("neumann_iterations", self.neumann_iterations as f64);
        r
    }
}

/// `ι_t v = A0⁻¹ P0 L^#(t) v` on the computational square.
pub fn iota_apply(bundle: &OperatorBundle, v: &VectorField, tol: f64) -> Result<VectorField> {
    let lv = bundle.lh_base(&bundle.to_base(v));
    stokes_solve(&lv, tol)
}

/// Audit `ι_t` on the given probe fields.
pub fn iota_audit(motion: &DomainMotion, t: f64, grid: Grid, probes: &[VectorField]) -> Result<IotaAudit> {
    if probes.is_empty() {
        return Err(Error::NotEnoughSamples("iota audit needs probe fields"));
    }
    let tol = Tolerances::default();
    let bundle = OperatorBundle::new(motion, t, 0.0, grid, tol)?;
    let stol = 1e-12;
    let (mut c2, mut c3, mut dev) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut iters = 0;
    for p in probes {
        let pn = norm_h2(p);
        if pn == 0.0 {
            return Err(Error::NotEnoughSamples("zero probe field"));
        }
        let ip = iota_apply(&bundle, p, stol)?;
        c2 = c2.max(norm_h2(&ip) / pn);
        dev = dev.max(norm_h2(&ip.sub(p)) / pn);
        // ι⁻¹ p as the fixed point of u = p + (I - ι) u.
        let mut u = p.clone();
        let mut done = false;
        for k in 0..500 {
            let iu = iota_apply(&bundle, &u, stol)?;
            let next = p.add(&u.sub(&iu));
            let step = norm_h2(&next.sub(&u));
            u = next;
            iters = iters.max(k + 1);
            if step <= 1e-10 * pn {
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::UnderResolved("Neumann series for the inverse did not converge"));
        }
        c3 = c3.max(norm_h2(&u) / pn);
    }
    Ok(IotaAudit { t, c2, c3, deviation: dev, within_half: dev <= 0.5, neumann_iterations: iters })
}

pub const NORM_NAMES: [&str; 5] = ["h2", "n2", "n3", "n4", "n5"];

/// The five norms `(‖u‖_{H2}, ‖u‖_2, ‖u‖_3, ‖u‖_4, ‖u‖_5)` on the square.
pub fn five_norms(u: &VectorField) -> Result<[f64; 5]> {
    let l2 = norm_l2(u);
    let lap = norm_l2(&laplacian(u));
    let a = norm_a(u)?;
    Ok([
        norm_h2(u),
        sqrt(l2 * l2 + lap * lap),
        sqrt(l2 * l2 + a * a),
        lap,
        a,
    ])
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormAudit {
    /// `ratio_min[a][b]`, `ratio_max[a][b]` of `‖u‖_a / ‖u‖_b`.
    pub ratio_min: [[f64; 5]; 5],
    pub ratio_max: [[f64; 5]; 5],
    /// `max ‖u‖_{H2} / ‖A u‖`.
    pub c0_stokes: f64,
    /// `min ‖Δu‖ / ‖u‖`.
    pub c0_rayleigh: f64,
    /// Samples violating `‖u‖_3 <= ‖u‖_2 <= ‖u‖_{H2}`.
    pub ordering_violations: usize,
    pub samples: usize,
}

impl NormAudit {
    pub fn report(&self) -> AuditReport {
        let mut r = AuditReport::new("norms");
        r.samples = self.samples;
        for a in 0..5 {
            for b in 0..5 {
                if a != b {
                    r.set(&format!("min_{}_over_{}", NORM_NAMES[a], NORM_NAMES[b]), self.ratio_min[a][b]);
                    r.set(&format!("max_{}_over_{}", NORM_NAMES[a], NORM_NAMES[b]), self.ratio_max[a][b]);
                }
            }
        }
        r.set("c0_stokes", self.c0_stokes)
            .set("c0_rayleigh", self.c0_rayleigh)
            .set("ordering_violations", self.ordering_violations as f64);
        r
    }
}

/// Minimum sample count accepted by [`norm_equivalence_audit`].
pub const NORM_AUDIT_MIN_SAMPLES: usize = 50;

pub fn norm_equivalence_audit(samples: &[VectorField]) -> Result<NormAudit> {
    if samples.len() < NORM_AUDIT_MIN_SAMPLES {
        return Err(Error::NotEnoughSamples("norm audit needs at least 50 samples"));
    }
    let mut rmin = [[f64::INFINITY; 5]; 5];
    let mut rmax = [[0.0_f64; 5]; 5];
    let mut violations = 0;
    for s in samples {
        let nm = five_norms(s)?;
        if nm.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::UnderResolved("degenerate sample field"));
        }
        if !(nm[2] <= nm[1] && nm[1] <= nm[0]) {
            violations += 1;
        }
        for a in 0..5 {
            for b in 0..5 {
                let q = nm[a] / nm[b];
                rmin[a][b] = rmin[a][b].min(q);
                rmax[a][b] = rmax[a][b].max(q);
            }
        }
    }
    let c0_rayleigh = samples
        .iter()
        .map(|s| norm_l2(&laplacian(s)) / norm_l2(s))
        .fold(f64::INFINITY, f64::min);
    Ok(NormAudit {
        ratio_min: rmin,
        ratio_max: rmax,
        c0_stokes: rmax[0][4],
        c0_rayleigh,
        ordering_violations: violations,
        samples: samples.len(),
    })
}

/// `count` smooth random solenoidal fields supported away from the boundary
/// in the sense that the field and its gradient vanish there.
pub fn random_solenoidal(grid: Grid, count: usize, seed: u64) -> Result<Vec<VectorField>> {
    (0..count)
        .map(|i| {
            initial_field(
                &InitialCondition::Random { amplitude: 1.0, modes: 6, seed: seed.wrapping_add(i as u64) },
                grid,
            )
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnergyRow {
    pub step: u64,
    pub t: f64,
    pub l2: f64,
    pub h1: f64,
    pub theta: f64,
    /// `∫ ‖v‖²_{1,s} ds` over the preceding sample interval.
    pub dissipation: f64,
}

pub fn energy_series(traj: &Trajectory) -> Vec<EnergyRow> {
    let mut out: Vec<EnergyRow> = Vec::with_capacity(traj.rows.len());
    for (i, r) in traj.rows.iter().enumerate() {
        let dissipation = if i == 0 {
            0.0
        } else {
            let p = &traj.rows[i - 1];
            0.5 * (p.h1 * p.h1 + r.h1 * r.h1) * (r.t - p.t)
        };
        out.push(EnergyRow { step: r.step, t: r.t, l2: r.l2, h1: r.h1, theta: theta(r.h1 * r.h1), dissipation });
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionsAudit {
    /// Equivalence constant between `‖·‖_{1,t}` and `‖·‖_{1,0}`.
    pub c1: f64,
    /// Same for `‖·‖_{0,t}` and `‖·‖_{0,0}`.
    pub c1_l2: f64,
    /// `max |d/dt ‖x‖²_{1,t}| / ‖x‖²_{1,0}`, a proxy for `‖Φ(t)‖`.
    pub phi: f64,
    /// `max |d/dt ‖x‖²_{0,t}| / ‖x‖²_{0,0}`, a proxy for `‖Φ0(t)‖`.
    pub phi0: f64,
}

impl ConditionsAudit {
    pub fn report(&self) -> AuditReport {
        let mut r = AuditReport::new("conditions");
        r.set("c1", self.c1).set("c1_l2", self.c1_l2).set("phi", self.phi).set("phi0", self.phi0);
        r
    }
}

/// Time step of the centred differences behind the `Φ` proxies.
pub const PHI_STEP: f64 = 1e-5;

pub fn conditions_audit(
    motion: &DomainMotion,
    grid: Grid,
    times: &[f64],
    samples: &[VectorField],
) -> Result<ConditionsAudit> {
    if samples.is_empty() || times.is_empty() {
        return Err(Error::NotEnoughSamples("conditions audit needs samples and times"));
    }
    let m0 = metric_tensors(&evaluate_motion(motion, 0.0, grid)?);
    let metric_at = |t: f64| evaluate_motion(motion, t, grid).map(|s| metric_tensors(&s));
    let (mut c1, mut c1l, mut phi, mut phi0) = (1.0_f64, 1.0_f64, 0.0_f64, 0.0_f64);
    for &t in times {
        let mt = metric_at(t)?;
        let lo = (t - PHI_STEP).max(0.0);
        let hi = (t + PHI_STEP).min(motion.t_max);
        let (ml, mh) = (metric_at(lo)?, metric_at(hi)?);
        for x in samples {
            let (a0, at) = (crate::fields::norm_1t(x, &m0), crate::fields::norm_1t(x, &mt));
            let (b0, bt) = (crate::fields::norm_0t(x, &m0), crate::fields::norm_0t(x, &mt));
            c1 = c1.max(at / a0).max(a0 / at);
            c1l = c1l.max(bt / b0).max(b0 / bt);
            let d1 = (crate::fields::norm_1t(x, &mh).powi(2) - crate::fields::norm_1t(x, &ml).powi(2)) / (hi - lo);
            let d0 = (crate::fields::norm_0t(x, &mh).powi(2) - crate::fields::norm_0t(x, &ml).powi(2)) / (hi - lo);
            phi = phi.max(d1.abs() / (a0 * a0));
            phi0 = phi0.max(d0.abs() / (b0 * b0));
        }
    }
    Ok(ConditionsAudit { c1, c1_l2: c1l, phi, phi0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityAudit {
    /// Fitted coercivity constant `c`.
    pub c: f64,
    /// Fitted `C_N`.
    pub c_n: f64,
    /// Largest value of the audited quantity with the fitted constants.
    pub max_residual: f64,
    pub samples: usize,
}

impl MonotonicityAudit {
    pub fn report(&self) -> AuditReport {
        let mut r = AuditReport::new("monotonicity");
        r.samples = self.samples;
        r.set("c", self.c).set("c_n", self.c_n).set("max_residual", self.max_residual);
        r
    }
}

/// Fit `(c, C_N)` such that
/// `2⟨Ã(v) - Ã(w), v - w⟩ + (c/2)‖v - w‖²_{H2} <= C_N (1 + ‖w‖_{H2}‖w‖_{1,t}) ‖v - w‖²_{1,t}`
/// on every pair and time.
pub fn monotonicity_probe(
    motion: &DomainMotion,
    grid: Grid,
    times: &[f64],
    pairs: &[(VectorField, VectorField)],
    cutoff: Option<f64>,
) -> Result<MonotonicityAudit> {
    if pairs.is_empty() || times.is_empty() {
        return Err(Error::NotEnoughSamples("monotonicity probe needs pairs and times"));
    }
    struct Sample {
        pairing: f64,
        linear: f64,
        h2: f64,
        weight: f64,
    }
    let mut rows = Vec::new();
    for &t in times {
        let b = OperatorBundle::new(motion, t, 0.0, grid, Tolerances::default())?;
        for (v, w) in pairs {
            let d = v.sub(w);
            let da = b.drift(v, cutoff)?.sub(&b.drift(w, cutoff)?);
            let a1 = b.from_base(&b.solve_mass_base(&b.lh_base(&b.to_base(&d)))?);
            let n1 = b.norm_1t(&d);
            rows.push(Sample {
                pairing: dual_pairing(&b, &da, &d)?,
                linear: dual_pairing(&b, &a1, &d)?,
                h2: norm_h2(&d).powi(2),
                weight: (1.0 + norm_h2(w) * b.norm_1t(w)) * n1 * n1,
            });
        }
    }
    // Half of the smallest coercivity of the linear part.
    let c = rows.iter().map(|s| (-s.linear / s.h2).max(0.0)).fold(f64::INFINITY, f64::min);
    let c_n = rows
        .iter()
        .map(|s| ((2.0 * s.pairing + 0.5 * c * s.h2) / s.weight).max(0.0))
        .fold(0.0, f64::max);
    let max_residual = rows
        .iter()
        .map(|s| 2.0 * s.pairing + 0.5 * c * s.h2 - c_n * s.weight)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(MonotonicityAudit { c, c_n, max_residual, samples: rows.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MotionKind;
    use crate::math::{ln, theta_prime};

    #[test]
    fn theta_values() {
        assert_eq!(theta_checked(0.0).unwrap(), 0.0);
        let e = core::f64::consts::E;
        assert!((theta_checked(e - 1.0).unwrap() - ln(2.0)).abs() < 1e-15);
        assert!(theta_checked(-1e-300).is_err());
        for x in [0.0, 1.0, 10.0] {
            let h = 1e-6;
            let fd = (theta(x + h) - theta((x - h).max(0.0))) / (x + h - (x - h).max(0.0));
            assert!((fd - theta_prime(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn iota_is_identity_at_start() {
        let g = Grid::new(12).unwrap();
        let m = DomainMotion::new(MotionKind::Shear { amplitude: 0.3, omega: 2.0 }, 1.0).unwrap();
        let probes = random_solenoidal(g, 3, 1).unwrap();
        let a = iota_audit(&m, 0.0, g, &probes).unwrap();
        assert!(a.deviation < 1e-10, "{}", a.deviation);
        assert!((a.c2 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn report_text_is_stable() {
        let mut r = AuditReport::new("x");
        r.set("a", 1.5).label("motion", "shear");
        assert_eq!(r.to_text(), "audit = x\nsamples = 0\nmotion = shear\na = 1.5e0\n");
    }
}
