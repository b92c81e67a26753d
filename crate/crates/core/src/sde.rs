//! Time stepping of the transformed stochastic equation.
//!
//! One step is semi-implicit Euler-Maruyama in the Itô sense: the viscous
//! part `(P0h)⁻¹P0 L^#` is implicit, advection, the frame term `M` and the
//! noise are explicit. Multiplying through by `P0 h` gives a single linear
//! solve per step,
//!
//! `P0(h x) - dt P0(L^# x) = P0 h (v - dt (g_N N(v,v) + M v) + Σ σ_k ΔW_k)`,
//!
//! which is solved with GMRES on the solenoidal subspace.

use alloc::vec;
use alloc::vec::Vec;

use crate::analytic::mode_shapes;
use crate::error::{Error, Result};
use crate::fields::{divergence, inner_l2, norm_1t, norm_l2, Grid, VectorField};
use crate::geometry::DomainMotion;
use crate::krylov::gmres;
use crate::math::{sqrt, theta};
use crate::operators::{cutoff_gn, OperatorBundle, Tolerances};
use crate::rereference::{rereference, should_rereference, ReferencePolicy};
use crate::rng::CounterRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Coupling {
    /// `σ_k = a_k e_k`.
    Additive,
    /// `σ_k(v) = λ_k (v, e_k) e_k`.
    Multiplicative,
}

/// Finite-rank noise on orthonormal solenoidal mode shapes `e_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    pub modes: Vec<VectorField>,
    pub coupling: Coupling,
    pub amplitudes: Vec<f64>,
}

impl NoiseModel {
    /// `amplitudes` holds one value per mode or a single value for all.
    pub fn new(grid: Grid, count: usize, coupling: Coupling, amplitudes: &[f64]) -> Result<Self> {
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidNoise("non-finite amplitude"));
        }
        let amps = match amplitudes.len() {
            0 if count == 0 => Vec::new(),
            1 => vec![amplitudes[0]; count],
            l if l == count => amplitudes.to_vec(),
            _ => return Err(Error::InvalidNoise("amplitude count does not match mode count")),
        };
        let modes = if count == 0 {
            Vec::new()
        } else {
            mode_shapes(grid, count)?
        };
        Ok(NoiseModel { modes, coupling, amplitudes: amps })
    }

    pub fn none() -> Self {
        NoiseModel { modes: Vec::new(), coupling: Coupling::Additive, amplitudes: Vec::new() }
    }

    pub fn count(&self) -> usize {
        self.modes.len()
    }

    pub fn is_silent(&self) -> bool {
        self.modes.is_empty() || self.amplitudes.iter().all(|a| *a == 0.0)
    }

    /// `σ_k(v)` on the computational square.
    pub fn sigma(&self, k: usize, v: &VectorField) -> VectorField {
        let scale = match self.coupling {
            Coupling::Additive => self.amplitudes[k],
            Coupling::Multiplicative => self.amplitudes[k] * inner_l2(v, &self.modes[k]),
        };
        self.modes[k].scaled(scale)
    }

    /// `Σ_k σ_k(v) ΔW_k`.
    pub fn apply(&self, v: &VectorField, increments: &[f64]) -> VectorField {
        let mut out = VectorField::zeros(v.grid());
        for (k, dw) in increments.iter().enumerate().take(self.count()) {
            if *dw != 0.0 {
                out.axpy(*dw, &self.sigma(k, v));
            }
        }
        out
    }

    /// Declared growth bound `f(t)` with
    /// `Σ_k ‖σ_k(v)‖²_{H1(O_t)} <= f(t) (1 + ‖v‖²_{L2(O_t)})`.
    pub fn growth_bound(&self, bundle: &OperatorBundle) -> f64 {
        let h1 = |e: &VectorField| {
            let eb = bundle.from_base(e);
            bundle.norm_0t(&eb).powi(2) + bundle.norm_1t(&eb).powi(2)
        };
        match self.coupling {
            Coupling::Additive => self
                .modes
                .iter()
                .zip(&self.amplitudes)
                .map(|(e, a)| a * a * h1(e))
                .sum(),
            Coupling::Multiplicative => {
                // (v, e_k) is the plain L2 product; bound it by the largest
                // eigenvalue of h⁻¹ times the moving-domain L2 norm.
                let hmax = bundle
                    .metric
                    .h_inv
                    .iter()
                    .map(|m| m.sym_max_eig())
                    .fold(0.0, f64::max);
                let top = self
                    .modes
                    .iter()
                    .zip(&self.amplitudes)
                    .map(|(e, a)| a * a * h1(e))
                    .fold(0.0, f64::max);
                top * hmax
            }
        }
    }

    /// Declared Lipschitz constant `L(t)` with
    /// `Σ_k ‖σ_k(v) - σ_k(w)‖²_{H1} <= L(t) ‖v - w‖²_{L2(O_t)}`.
    pub fn lipschitz_bound(&self, bundle: &OperatorBundle) -> f64 {
        match self.coupling {
            Coupling::Additive => 0.0,
            Coupling::Multiplicative => self.growth_bound(bundle),
        }
    }
}

/// Brownian increments `ΔW_k = sqrt(dt) ξ_k` for one step.
pub fn sample_increments(rng: &CounterRng, step: u64, dt: f64, count: usize) -> Vec<f64> {
    let s = sqrt(dt);
    (0..count).map(|k| s * rng.normal(step, k as u32)).collect()
}

/// Complete solver state; together with the configuration it determines the
/// remainder of a trajectory bit for bit.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverState {
    pub step: u64,
    pub t: f64,
    /// Current reference time; `v` is the Piola transform relative to it.
    pub t0: f64,
    pub v: VectorField,
    /// Active cutoff level `N`.
    pub cutoff: f64,
    pub rng: CounterRng,
    pub escalations: u32,
    pub ceiling_hit: bool,
    pub theta_sup: f64,
    pub rereferences: u32,
}

impl SolverState {
    pub fn new(v: VectorField, cutoff: f64, rng: CounterRng) -> Self {
        SolverState {
            step: 0,
            t: 0.0,
            t0: 0.0,
            v,
            cutoff,
            rng,
            escalations: 0,
            ceiling_hit: false,
            theta_sup: 0.0,
            rereferences: 0,
        }
    }
}

/// Advance one step with the given increments. `bundle` must be evaluated at
/// `(state.t, state.t0)`.
pub fn step(
    state: &SolverState,
    dt: f64,
    bundle: &OperatorBundle,
    noise: &NoiseModel,
    increments: &[f64],
) -> Result<SolverState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::BadTimeStep(dt));
    }
    let vb = bundle.to_base(&state.v);
    let norm = norm_1t(&vb, &bundle.metric);
    let g = cutoff_gn(norm, state.cutoff);
    let adv = bundle.n_base(&vb);
    let mv = bundle.m_base(&vb);
    let mut rhs = vb.clone();
    rhs.axpy(-dt * g, &adv);
    rhs.axpy(-dt, &mv);
    if !noise.is_silent() {
        rhs.axpy(1.0, &noise.apply(&vb, increments));
    }
    let hr = bundle.h_base(&rhs);
    let b = bundle.project(&hr)?;
    let grid = bundle.grid;
    let mut x = vb.clone();
    let floor = bundle.tol.implicit * sqrt(crate::krylov::dot(hr.as_slice(), hr.as_slice()));
    gmres(
        |p, out| {
            let pv = bundle.project(&VectorField::from_flat(grid, p.to_vec()))?;
            let mut y = bundle.h_base(&pv);
            y.axpy(-dt, &bundle.lh_base(&pv));
            let y = bundle.project(&y)?;
            out.copy_from_slice(y.as_slice());
            Ok(())
        },
        b.as_slice(),
        x.as_mut_slice(),
        bundle.tol.implicit,
        floor,
        bundle.tol.gmres_restart,
        40 * bundle.tol.gmres_restart,
        "implicit-gmres",
    )?;
    let x = bundle.project(&x)?;
    if !x.is_finite() {
        return Err(Error::BlowUp { t: state.t + dt });
    }
    let mut next = state.clone();
    next.v = bundle.from_base(&x);
    next.step += 1;
    next.t = (next.step as f64) * dt;
    Ok(next)
}

/// True when `‖v‖_{1,t}` exceeds the active cutoff, i.e. `τ^N` is reached.
pub fn detect_stopping(state: &SolverState, bundle: &OperatorBundle) -> bool {
    bundle.norm_1t(&state.v) > state.cutoff
}

/// Double the cutoff until the state is below it or the ceiling is reached.
/// Returns the levels passed through.
pub fn escalate(state: &mut SolverState, norm: f64, ceiling: f64) -> Vec<(f64, f64)> {
    let mut events = Vec::new();
    while norm > state.cutoff {
        let next = state.cutoff * 2.0;
        if next > ceiling {
            state.ceiling_hit = true;
            break;
        }
        events.push((state.cutoff, next));
        state.cutoff = next;
        state.escalations += 1;
    }
    events
}

/// Cutoff settings.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CutoffSpec {
    pub initial: f64,
    /// When false the cutoff stays at `initial` and the globally modified
    /// equation is solved.
    pub escalate: bool,
    pub ceiling: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseSpec {
    pub modes: usize,
    pub coupling: Coupling,
    pub amplitudes: Vec<f64>,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec { modes: 0, coupling: Coupling::Additive, amplitudes: Vec::new() }
    }
}

/// Everything `simulate` needs apart from the initial field and the seed.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub grid: Grid,
    pub motion: DomainMotion,
    pub dt: f64,
    pub steps: u64,
    pub noise: NoiseSpec,
    pub cutoff: CutoffSpec,
    pub policy: Option<ReferencePolicy>,
    /// Times at which the reference is moved unconditionally.
    pub forced_rereference: Vec<f64>,
    /// Diagnostics cadence in steps.
    pub sample_every: u64,
    /// Snapshot cadence in steps; 0 disables snapshots.
    pub snapshot_every: u64,
    pub tol: Tolerances,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::BadTimeStep(self.dt));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("number of steps must be positive"));
        }
        if (self.steps as f64) * self.dt > self.motion.t_max * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig("run horizon exceeds motion horizon"));
        }
        if self.sample_every == 0 {
            return Err(Error::InvalidConfig("sample cadence must be positive"));
        }
        let c = &self.cutoff;
        if !(c.initial.is_finite() && c.initial > 0.0 && c.ceiling >= c.initial) {
            return Err(Error::InvalidConfig("cutoff must satisfy 0 < initial <= ceiling"));
        }
        if let Some(p) = &self.policy {
            p.validate()?;
        }
        Ok(())
    }

    pub fn t_end(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    fn forced_steps(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self
            .forced_rereference
            .iter()
            .map(|t| libm::ceil(t / self.dt - 1e-9).max(0.0) as u64)
            .filter(|&k| k > 0 && k <= self.steps)
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// One diagnostics sample.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiagnosticRow {
    pub step: u64,
    pub t: f64,
    pub t0: f64,
    pub cutoff: f64,
    /// `‖u‖_{L2(O_t)}`.
    pub l2: f64,
    /// `‖v‖_{1,t}`.
    pub h1: f64,
    pub theta: f64,
    pub max_div: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Event {
    Rereference { step: u64, t: f64, from_t0: f64, deviation: f64, forced: bool },
    Escalation { step: u64, t: f64, from: f64, to: f64 },
    CeilingHit { step: u64, t: f64, norm: f64 },
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Snapshot {
    pub step: u64,
    pub t: f64,
    pub t0: f64,
    pub v: VectorField,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Trajectory {
    pub rows: Vec<DiagnosticRow>,
    pub events: Vec<Event>,
    pub snapshots: Vec<Snapshot>,
}

/// Resumable driver for one trajectory.
#[derive(Clone, Debug)]
pub struct Simulation {
    config: SimConfig,
    noise: NoiseModel,
    probes: Vec<VectorField>,
    forced: Vec<u64>,
    pub state: SolverState,
    pub trajectory: Trajectory,
}

/// Number of probe fields used by the re-reference monitor.
pub const PROBE_COUNT: usize = 4;

impl Simulation {
    pub fn new(config: SimConfig, v0: VectorField, seed: u64, member: u32) -> Result<Self> {
        let state = SolverState::new(v0, config.cutoff.initial, CounterRng::new(seed, member));
        Self::resume(config, state, Trajectory { rows: Vec::new(), events: Vec::new(), snapshots: Vec::new() })
    }

    /// Continue from a saved state and the trajectory recorded so far.
    pub fn resume(config: SimConfig, state: SolverState, trajectory: Trajectory) -> Result<Self> {
        config.validate()?;
        if state.v.grid() != config.grid {
            return Err(Error::GridMismatch { expected: config.grid.n(), found: state.v.grid().n() });
        }
        let noise = NoiseModel::new(
            config.grid,
            config.noise.modes,
            config.noise.coupling,
            &config.noise.amplitudes,
        )?;
        let probes = if config.policy.is_some() {
            mode_shapes(config.grid, PROBE_COUNT)?
        } else {
            Vec::new()
        };
        let forced = config.forced_steps();
        Ok(Simulation { config, noise, probes, forced, state, trajectory })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn is_finished(&self) -> bool {
        self.state.step > self.config.steps
    }

    /// Process the current step boundary (re-reference, escalation,
    /// diagnostics) and advance by one step unless the horizon is reached.
    pub fn advance(&mut self) -> Result<()> {
        if self.is_finished() {
            return Ok(());
        }
        let cfg = &self.config;
        let k = self.state.step;
        let t = self.state.t;
        let forced = self.forced.binary_search(&k).is_ok();
        let mut bundle = OperatorBundle::new(&cfg.motion, t, self.state.t0, cfg.grid, cfg.tol)?;
        let mut deviation = 0.0;
        let mut by_policy = false;
        if let Some(p) = &cfg.policy {
            if t > self.state.t0 {
                let d = should_rereference(&bundle, &cfg.motion, &self.probes, p)?;
                deviation = d.deviation;
                by_policy = d.triggered();
            }
        }
        if (forced || by_policy) && t > self.state.t0 {
            let from_t0 = self.state.t0;
            self.state = rereference(&self.state, &cfg.motion, t, cfg.grid)?;
            self.trajectory.events.push(Event::Rereference { step: k, t, from_t0, deviation, forced });
            bundle = OperatorBundle::new(&cfg.motion, t, self.state.t0, cfg.grid, cfg.tol)?;
        }
        let norm = bundle.norm_1t(&self.state.v);
        if !norm.is_finite() || norm > 1e150 {
            return Err(Error::BlowUp { t });
        }
        if norm > self.state.cutoff && cfg.cutoff.escalate {
            let was_hit = self.state.ceiling_hit;
            for (from, to) in escalate(&mut self.state, norm, cfg.cutoff.ceiling) {
                self.trajectory.events.push(Event::Escalation { step: k, t, from, to });
            }
            if self.state.ceiling_hit && !was_hit {
                self.trajectory.events.push(Event::CeilingHit { step: k, t, norm });
            }
        }
        let th = theta(norm * norm);
        if th > self.state.theta_sup || k == 0 {
            self.state.theta_sup = th;
        }
        if k.is_multiple_of(cfg.sample_every) || k == cfg.steps {
            let base = bundle.to_base(&self.state.v);
            self.trajectory.rows.push(DiagnosticRow {
                step: k,
                t,
                t0: self.state.t0,
                cutoff: self.state.cutoff,
                l2: bundle.norm_0t(&self.state.v),
                h1: norm,
                theta: th,
                max_div: divergence(&base).max_abs(),
            });
        }
        if cfg.snapshot_every > 0 && (k.is_multiple_of(cfg.snapshot_every) || k == cfg.steps) {
            self.trajectory.snapshots.push(Snapshot {
                step: k,
                t,
                t0: self.state.t0,
                v: self.state.v.clone(),
            });
        }
        if k == cfg.steps {
            self.state.step += 1;
            return Ok(());
        }
        let inc = sample_increments(&self.state.rng, k, cfg.dt, self.noise.count());
        self.state = step(&self.state, cfg.dt, &bundle, &self.noise, &inc)?;
        Ok(())
    }

    /// Run until the state has reached step `target` (or the end).
    pub fn run_until(&mut self, target: u64) -> Result<()> {
        while !self.is_finished() && self.state.step < target {
            self.advance()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.advance()?;
        }
        Ok(())
    }

    /// Final state with the step counter at the horizon.
    pub fn final_state(&self) -> SolverState {
        let mut s = self.state.clone();
        if self.is_finished() {
            s.step = self.config.steps;
        }
        s
    }
}

/// Run one trajectory from `v0` to the configured horizon.
pub fn simulate(config: &SimConfig, v0: VectorField, seed: u64, member: u32) -> Result<(Trajectory, SolverState)> {
    let mut sim = Simulation::new(config.clone(), v0, seed, member)?;
    sim.run()?;
    let state = sim.final_state();
    Ok((sim.trajectory, state))
}

/// Relative L2 difference `‖a - b‖ / max(‖b‖, tiny)`.
pub fn relative_l2(a: &VectorField, b: &VectorField) -> f64 {
    let d = norm_l2(&a.sub(b));
    let nb = norm_l2(b);
    if nb == 0.0 {
        d
    } else {
        d / nb
    }
}
