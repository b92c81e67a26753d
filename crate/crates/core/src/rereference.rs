//! Moving the reference domain forward in time.
//!
//! The state velocity is stored relative to `O_{t0}`. When the transformed
//! operator has drifted too far from the Stokes operator of `O_{t0}`, the
//! reference is advanced to the current time and the velocity is re-expressed
//! through the composed Jacobians.

use alloc::vec::Vec;

use crate::analytic::mode_shapes;
use crate::error::{Error, Result};
use crate::fields::{Grid, VectorField};
use crate::geometry::{coefficient_drift, evaluate_motion, DomainMotion};
use crate::operators::{OperatorBundle, Tolerances};
use crate::sde::{SolverState, PROBE_COUNT};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReferencePolicy {
    /// Empirical Stokes constant, `‖u‖_{H2} <= C0 ‖A0 u‖`.
    pub c0: f64,
    /// Fraction of the admissible deviation `1/(2 C0)` that triggers.
    pub safety: f64,
    /// Cap on `t - t0`.
    pub max_interval: f64,
    /// Optional threshold on the coefficient drift proxy.
    pub drift_threshold: Option<f64>,
}

impl ReferencePolicy {
    pub fn new(c0: f64, safety: f64, max_interval: f64) -> Result<Self> {
        let p = ReferencePolicy { c0, safety, max_interval, drift_threshold: None };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c0.is_finite() && self.c0 > 0.0) {
            return Err(Error::InvalidConfig("policy C0 must be positive"));
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return Err(Error::InvalidConfig("policy safety must lie in (0, 1)"));
        }
        if !(self.max_interval.is_finite() && self.max_interval > 0.0) {
            return Err(Error::InvalidConfig("policy max_interval must be positive"));
        }
        if let Some(d) = self.drift_threshold {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::InvalidConfig("policy drift threshold must be positive"));
            }
        }
        Ok(())
    }

    /// Deviation level at which re-referencing is triggered.
    pub fn deviation_threshold(&self) -> f64 {
        self.safety / (2.0 * self.c0)
    }
}

/// Measured quantities behind a re-reference decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceDecision {
    pub deviation: f64,
    pub drift: f64,
    pub elapsed: f64,
    pub by_deviation: bool,
    pub by_drift: bool,
    pub by_interval: bool,
}

impl ReferenceDecision {
    pub fn triggered(&self) -> bool {
        self.by_deviation || self.by_drift || self.by_interval
    }
}

/// Evaluate the trigger at the bundle's `(t, t0)`.
pub fn should_rereference(
    bundle: &OperatorBundle,
    motion: &DomainMotion,
    probes: &[VectorField],
    policy: &ReferencePolicy,
) -> Result<ReferenceDecision> {
    if probes.is_empty() {
        return Err(Error::InvalidConfig("re-reference monitor needs probe fields"));
    }
    let elapsed = bundle.t - bundle.t0;
    if elapsed <= 0.0 {
        return Ok(ReferenceDecision {
            deviation: 0.0,
            drift: 0.0,
            elapsed: 0.0,
            by_deviation: false,
            by_drift: false,
            by_interval: false,
        });
    }
    let deviation = bundle.stokes_deviation(probes);
    let drift = match policy.drift_threshold {
        Some(_) => coefficient_drift(motion, bundle.t0, bundle.t, bundle.grid)?,
        None => 0.0,
    };
    Ok(ReferenceDecision {
        deviation,
        drift,
        elapsed,
        by_deviation: deviation >= policy.deviation_threshold(),
        by_drift: policy.drift_threshold.is_some_and(|d| drift > d),
        by_interval: elapsed >= policy.max_interval,
    })
}

/// Advance the reference of `state` to `t_new`:
/// `v_new = J(t_new) J(t0)⁻¹ v` nodewise.
pub fn rereference(state: &SolverState, motion: &DomainMotion, t_new: f64, grid: Grid) -> Result<SolverState> {
    if t_new < state.t0 {
        return Err(Error::RereferenceBackwards { t_new, t0: state.t0 });
    }
    let mut next = state.clone();
    next.t0 = t_new;
    next.rereferences += 1;
    if t_new == state.t0 {
        return Ok(next);
    }
    let old = evaluate_motion(motion, state.t0, grid)?;
    let new = evaluate_motion(motion, t_new, grid)?;
    next.v = state.v.map_nodes(|k, x| {
        let m = new.points[k].jac * old.points[k].jac_inv;
        m.apply(x)
    });
    if !next.v.is_finite() {
        return Err(Error::DegenerateJacobian { t: t_new });
    }
    Ok(next)
}

/// Result of a scan for the uniform re-reference interval.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaEstimate {
    /// Smallest first-trigger time over the scanned reference times.
    pub delta: f64,
    /// Resolution of the trigger scan.
    pub resolution: f64,
    /// `(t0, first trigger time)` per scanned reference time.
    pub per_t0: Vec<(f64, f64)>,
}

/// Scan `t0_samples` reference times over `[0, t_max - max_interval]` and
/// return the smallest time to the first trigger, sampled at
/// `max_interval / resolution_steps`.
pub fn estimate_delta(
    policy: &ReferencePolicy,
    motion: &DomainMotion,
    grid: Grid,
    t0_samples: usize,
    resolution_steps: usize,
) -> Result<DeltaEstimate> {
    policy.validate()?;
    if t0_samples == 0 || resolution_steps < 2 {
        return Err(Error::InvalidConfig("delta scan needs t0 samples and at least two steps"));
    }
    let span = motion.t_max - policy.max_interval;
    if span < 0.0 {
        return Err(Error::InvalidConfig("max_interval exceeds the motion horizon"));
    }
    let probes = mode_shapes(grid, PROBE_COUNT)?;
    let tol = Tolerances::default();
    let m = resolution_steps;
    let mut per_t0 = Vec::with_capacity(t0_samples);
    for s in 0..t0_samples {
        let t0 = if t0_samples == 1 { 0.0 } else { span * s as f64 / (t0_samples - 1) as f64 };
        let mut first = policy.max_interval;
        for k in 1..m {
            let tau = policy.max_interval * k as f64 / m as f64;
            let bundle = OperatorBundle::new(motion, t0 + tau, t0, grid, tol)?;
            let d = should_rereference(&bundle, motion, &probes, &ReferencePolicy { max_interval: f64::INFINITY, ..*policy })?;
            if d.triggered() {
                if k == 1 {
                    return Err(Error::TriggerTooEarly { t0 });
                }
                first = tau;
                break;
            }
        }
        per_t0.push((t0, first));
    }
    let delta = per_t0.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    Ok(DeltaEstimate { delta, resolution: policy.max_interval / m as f64, per_t0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{initial_field, InitialCondition};
    use crate::geometry::MotionKind;
    use crate::rng::CounterRng;

    fn state(g: Grid) -> SolverState {
        let v = initial_field(&InitialCondition::Vortex { amplitude: 1.0 }, g).unwrap();
        SolverState::new(v, 10.0, CounterRng::new(1, 0))
    }

    #[test]
    fn rereference_at_current_reference_is_identity() {
        let g = Grid::new(12).unwrap();
        let m = DomainMotion::new(MotionKind::Shear { amplitude: 0.3, omega: 2.0 }, 1.0).unwrap();
        let s = state(g);
        let r = rereference(&s, &m, 0.0, g).unwrap();
        assert_eq!(r.v, s.v);
    }

    #[test]
    fn shear_rereference_follows_composed_jacobian() {
        let g = Grid::new(12).unwrap();
        let (a, w) = (0.3, 2.0);
        let m = DomainMotion::new(MotionKind::Shear { amplitude: a, omega: w }, 1.0).unwrap();
        let s = state(g);
        let r = rereference(&s, &m, 0.4, g).unwrap();
        let ds = a * libm::sin(w * 0.4);
        for k in 0..g.node_count() {
            let v = s.v.at(k);
            let got = r.v.at(k);
            assert!((got[0] - (v[0] + ds * v[1])).abs() < 1e-14);
            assert_eq!(got[1], v[1]);
        }
    }

    #[test]
    fn backwards_rejected() {
        let g = Grid::new(8).unwrap();
        let mut s = state(g);
        s.t0 = 0.5;
        let m = DomainMotion::identity(1.0);
        assert!(matches!(rereference(&s, &m, 0.2, g), Err(Error::RereferenceBackwards { .. })));
    }

    #[test]
    fn identity_delta_is_max_interval() {
        let g = Grid::new(8).unwrap();
        let p = ReferencePolicy::new(1.0, 0.5, 0.25).unwrap();
        let d = estimate_delta(&p, &DomainMotion::identity(1.0), g, 3, 5).unwrap();
        assert_eq!(d.delta, 0.25);
    }

    #[test]
    fn policy_validation() {
        assert!(ReferencePolicy::new(1.0, 1.0, 0.1).is_err());
        assert!(ReferencePolicy::new(0.0, 0.5, 0.1).is_err());
        assert!(ReferencePolicy::new(1.0, 0.5, 0.0).is_err());
    }
}
