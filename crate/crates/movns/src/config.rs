//! Run configuration, read from a TOML file.
//!
//! ```toml
//! [grid]
//! n = 32
//!
//! [time]
//! t_end = 0.1
//! dt = 1e-3
//!
//! [motion]
//! kind = "shear"
//! amplitude = 0.3
//! omega = 2.0
//! ```
//!
//! Every other section is optional; see [`RunConfig`] for the defaults.

use std::path::{Path, PathBuf};

use movns_core::analytic::{initial_field, InitialCondition};
use movns_core::fields::{leray_project, Grid, VectorField};
use movns_core::geometry::{DomainMotion, MotionKind, WaveTerm};
use movns_core::operators::Tolerances;
use movns_core::rereference::ReferencePolicy;
use movns_core::sde::{Coupling, CutoffSpec, NoiseSpec, SimConfig};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub time: TimeSection,
    pub motion: MotionSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub cutoff: CutoffSection,
    #[serde(default)]
    pub policy: Option<PolicySection>,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
    #[serde(default)]
    pub audit: AuditSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    /// Horizon `T`; must be a whole number of steps.
    pub t_end: f64,
    pub dt: f64,
    /// Times at which the reference domain is replaced unconditionally.
    #[serde(default)]
    pub rereference_at: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MotionSection {
    Identity {},
    Rotation { omega: f64 },
    Shear { amplitude: f64, omega: f64 },
    Wave {
        amplitude: f64,
        omega: f64,
        #[serde(default = "one")]
        mode: u32,
    },
    Table { terms: Vec<WaveTermSection> },
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveTermSection {
    pub amplitude: f64,
    pub omega: f64,
    pub mode: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingName {
    Additive,
    Multiplicative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub modes: usize,
    #[serde(default = "additive")]
    pub coupling: CouplingName,
    /// One value for all modes, or one per mode.
    #[serde(default)]
    pub amplitudes: Vec<f64>,
}

fn additive() -> CouplingName {
    CouplingName::Additive
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection { modes: 0, coupling: CouplingName::Additive, amplitudes: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialSection {
    Zero {},
    Vortex { amplitude: f64 },
    Dipole { amplitude: f64 },
    Random {
        amplitude: f64,
        #[serde(default = "six")]
        modes: usize,
        #[serde(default)]
        seed: u64,
    },
    /// A snapshot sidecar (`.meta`) written by a previous run; relative paths
    /// resolve against the configuration file.
    Snapshot { path: PathBuf },
}

fn six() -> usize {
    6
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection::Vortex { amplitude: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffSection {
    #[serde(default = "default_cutoff")]
    pub initial: f64,
    #[serde(default = "yes")]
    pub escalate: bool,
    /// Defaults to `2^20` times the initial level.
    #[serde(default)]
    pub ceiling: Option<f64>,
}

fn default_cutoff() -> f64 {
    64.0
}

fn yes() -> bool {
    true
}

impl Default for CutoffSection {
    fn default() -> Self {
        CutoffSection { initial: default_cutoff(), escalate: true, ceiling: None }
    }
}

/// Either a number or `"audit"`, which takes `C0` from the norm audit on the
/// reference square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum C0Source {
    Value(f64),
    Named(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub c0: C0Source,
    #[serde(default = "half")]
    pub safety: f64,
    pub max_interval: f64,
    #[serde(default)]
    pub drift: Option<f64>,
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default = "one_usize")]
    pub members: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_usize")]
    pub workers: usize,
}

fn one_usize() -> usize {
    1
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection { members: 1, seed: 0, workers: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "one_u64")]
    pub sample_every: u64,
    /// `0` disables snapshots.
    #[serde(default)]
    pub snapshot_every: u64,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn one_u64() -> u64 {
    1
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_dir(), sample_every: 1, snapshot_every: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSection {
    #[serde(default)]
    pub poisson: Option<f64>,
    #[serde(default)]
    pub mass: Option<f64>,
    #[serde(default)]
    pub implicit: Option<f64>,
    #[serde(default)]
    pub gmres_restart: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    /// Random fields for the norm audit.
    #[serde(default = "fifty")]
    pub samples: usize,
    /// Probe fields for the `ι_t` audit.
    #[serde(default = "four")]
    pub probes: usize,
    #[serde(default)]
    pub seed: u64,
    /// Times for the `ι_t` audit; defaults to `0, T/2, T`.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default = "twenty")]
    pub t0_samples: usize,
    #[serde(default = "fifty")]
    pub resolution: usize,
    #[serde(default = "default_levels")]
    pub cutoffs: Vec<f64>,
}

fn fifty() -> usize {
    50
}

fn four() -> usize {
    4
}

fn twenty() -> usize {
    20
}

fn default_levels() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0]
}

impl Default for AuditSection {
    fn default() -> Self {
        AuditSection {
            samples: fifty(),
            probes: four(),
            seed: 0,
            times: Vec::new(),
            t0_samples: twenty(),
            resolution: fifty(),
            cutoffs: default_levels(),
        }
    }
}

fn positive(field: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(AppError::field(field, format!("must be positive and finite, got {x}")))
    }
}

fn finite(field: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(AppError::field(field, format!("must be finite, got {x}")))
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| AppError::ConfigParse { path: path.to_path_buf(), source: Box::new(e) })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Ok((Self::parse(&text, path)?, text))
    }

    /// Check every field, naming the first offending one.
    pub fn validate(&self) -> Result<()> {
        if self.grid.n < Grid::MIN_CELLS {
            return Err(AppError::field("grid.n", format!("must be at least {}", Grid::MIN_CELLS)));
        }
        let t = &self.time;
        positive("time.t_end", t.t_end)?;
        positive("time.dt", t.dt)?;
        self.steps()?;
        for &r in &t.rereference_at {
            if !(r > 0.0 && r <= t.t_end) {
                return Err(AppError::field("time.rereference_at", format!("{r} lies outside (0, t_end]")));
            }
        }
        match &self.motion {
            MotionSection::Identity {} => {}
            MotionSection::Rotation { omega } => finite("motion.omega", *omega)?,
            MotionSection::Shear { amplitude, omega } => {
                finite("motion.amplitude", *amplitude)?;
                finite("motion.omega", *omega)?;
            }
            MotionSection::Wave { amplitude, omega, mode } => {
                finite("motion.amplitude", *amplitude)?;
                finite("motion.omega", *omega)?;
                if *mode == 0 {
                    return Err(AppError::field("motion.mode", "must be at least 1"));
                }
            }
            MotionSection::Table { terms } => {
                if terms.is_empty() {
                    return Err(AppError::field("motion.terms", "needs at least one term"));
                }
                for w in terms {
                    finite("motion.terms.amplitude", w.amplitude)?;
                    finite("motion.terms.omega", w.omega)?;
                    if w.mode == 0 {
                        return Err(AppError::field("motion.terms.mode", "must be at least 1"));
                    }
                }
            }
        }
        let nz = &self.noise;
        for &a in &nz.amplitudes {
            if !(a.is_finite() && a >= 0.0) {
                return Err(AppError::field("noise.amplitudes", format!("must be finite and non-negative, got {a}")));
            }
        }
        if nz.modes > 0 && !(nz.amplitudes.len() == 1 || nz.amplitudes.len() == nz.modes) {
            return Err(AppError::field("noise.amplitudes", "give one amplitude or one per mode"));
        }
        if nz.modes == 0 && !nz.amplitudes.is_empty() {
            return Err(AppError::field("noise.modes", "amplitudes given but no modes"));
        }
        match &self.initial {
            InitialSection::Vortex { amplitude } | InitialSection::Dipole { amplitude } => {
                finite("initial.amplitude", *amplitude)?
            }
            InitialSection::Random { amplitude, modes, .. } => {
                finite("initial.amplitude", *amplitude)?;
                if *modes == 0 {
                    return Err(AppError::field("initial.modes", "must be at least 1"));
                }
            }
            InitialSection::Zero {} | InitialSection::Snapshot { .. } => {}
        }
        let c = &self.cutoff;
        positive("cutoff.initial", c.initial)?;
        let ceiling = self.ceiling();
        positive("cutoff.ceiling", ceiling)?;
        if ceiling < c.initial {
            return Err(AppError::field("cutoff.ceiling", "must not be below cutoff.initial"));
        }
        if let Some(p) = &self.policy {
            match &p.c0 {
                C0Source::Value(v) => positive("policy.c0", *v)?,
                C0Source::Named(s) if s == "audit" => {}
                C0Source::Named(s) => {
                    return Err(AppError::field("policy.c0", format!("expected a number or \"audit\", got \"{s}\"")))
                }
            }
            if !(p.safety > 0.0 && p.safety < 1.0) {
                return Err(AppError::field("policy.safety", "must lie in (0, 1)"));
            }
            positive("policy.max_interval", p.max_interval)?;
            if let Some(d) = p.drift {
                positive("policy.drift", d)?;
            }
        }
        let e = &self.ensemble;
        if e.members == 0 {
            return Err(AppError::field("ensemble.members", "must be at least 1"));
        }
        if e.members > u32::MAX as usize {
            return Err(AppError::field("ensemble.members", "too many members"));
        }
        if e.workers == 0 {
            return Err(AppError::field("ensemble.workers", "must be at least 1"));
        }
        if self.output.sample_every == 0 {
            return Err(AppError::field("output.sample_every", "must be at least 1"));
        }
        let tl = &self.tolerances;
        for (name, v) in [("tolerances.poisson", tl.poisson), ("tolerances.mass", tl.mass), ("tolerances.implicit", tl.implicit)] {
            if let Some(v) = v {
                if !(v > 0.0 && v < 1.0) {
                    return Err(AppError::field(name, "must lie in (0, 1)"));
                }
            }
        }
        if tl.gmres_restart == Some(0) {
            return Err(AppError::field("tolerances.gmres_restart", "must be at least 1"));
        }
        let a = &self.audit;
        for &s in &a.times {
            if !(s >= 0.0 && s <= t.t_end) {
                return Err(AppError::field("audit.times", format!("{s} lies outside [0, t_end]")));
            }
        }
        if a.probes == 0 {
            return Err(AppError::field("audit.probes", "must be at least 1"));
        }
        if a.t0_samples == 0 {
            return Err(AppError::field("audit.t0_samples", "must be at least 1"));
        }
        if a.resolution < 2 {
            return Err(AppError::field("audit.resolution", "must be at least 2"));
        }
        for &l in &a.cutoffs {
            positive("audit.cutoffs", l)?;
        }
        Ok(())
    }

    /// Number of steps `T / dt`, which must be a whole number.
    pub fn steps(&self) -> Result<u64> {
        let r = self.time.t_end / self.time.dt;
        let k = r.round();
        if !(k >= 1.0 && (r - k).abs() <= 1e-9 * k) || k > 1e12 {
            return Err(AppError::field("time.dt", format!("t_end / dt = {r} is not a whole number of steps")));
        }
        Ok(k as u64)
    }

    pub fn ceiling(&self) -> f64 {
        self.cutoff.ceiling.unwrap_or(self.cutoff.initial * (1u64 << 20) as f64)
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.grid.n).expect("validated grid")
    }

    pub fn motion(&self) -> Result<DomainMotion> {
        let kind = match &self.motion {
            MotionSection::Identity {} => MotionKind::Identity,
            MotionSection::Rotation { omega } => MotionKind::Rotation { omega: *omega },
            MotionSection::Shear { amplitude, omega } => MotionKind::Shear { amplitude: *amplitude, omega: *omega },
            MotionSection::Wave { amplitude, omega, mode } => {
                MotionKind::Wave { amplitude: *amplitude, omega: *omega, mode: *mode }
            }
            MotionSection::Table { terms } => MotionKind::Table(
                terms.iter().map(|w| WaveTerm { amplitude: w.amplitude, omega: w.omega, mode: w.mode }).collect(),
            ),
        };
        DomainMotion::new(kind, self.time.t_end).map_err(|e| AppError::field("motion", e.to_string()))
    }

    pub fn tolerances(&self) -> Tolerances {
        let d = Tolerances::default();
        let t = &self.tolerances;
        Tolerances {
            poisson: t.poisson.unwrap_or(d.poisson),
            mass: t.mass.unwrap_or(d.mass),
            implicit: t.implicit.unwrap_or(d.implicit),
            gmres_restart: t.gmres_restart.unwrap_or(d.gmres_restart),
        }
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            modes: self.noise.modes,
            coupling: match self.noise.coupling {
                CouplingName::Additive => Coupling::Additive,
                CouplingName::Multiplicative => Coupling::Multiplicative,
            },
            amplitudes: self.noise.amplitudes.clone(),
        }
    }

    /// Policy with `C0` resolved; `audit_c0` is called only for `c0 = "audit"`.
    pub fn policy(&self, audit_c0: impl FnOnce() -> Result<f64>) -> Result<Option<ReferencePolicy>> {
        let Some(p) = &self.policy else { return Ok(None) };
        let c0 = match &p.c0 {
            C0Source::Value(v) => *v,
            C0Source::Named(_) => audit_c0()?,
        };
        let mut policy =
            ReferencePolicy::new(c0, p.safety, p.max_interval).map_err(|e| AppError::field("policy", e.to_string()))?;
        policy.drift_threshold = p.drift;
        Ok(Some(policy))
    }

    /// Solver configuration; `policy` comes from [`RunConfig::policy`].
    pub fn sim_config(&self, policy: Option<ReferencePolicy>) -> Result<SimConfig> {
        let cfg = SimConfig {
            grid: self.grid(),
            motion: self.motion()?,
            dt: self.time.dt,
            steps: self.steps()?,
            noise: self.noise(),
            cutoff: CutoffSpec { initial: self.cutoff.initial, escalate: self.cutoff.escalate, ceiling: self.ceiling() },
            policy,
            forced_rereference: self.time.rereference_at.clone(),
            sample_every: self.output.sample_every,
            snapshot_every: self.output.snapshot_every,
            tol: self.tolerances(),
        };
        cfg.validate().map_err(|e| AppError::field("config", e.to_string()))?;
        Ok(cfg)
    }

    /// Initial transformed velocity. `base` is the directory of the
    /// configuration file.
    pub fn initial_field(&self, base: &Path) -> Result<VectorField> {
        let g = self.grid();
        let ic = match &self.initial {
            InitialSection::Zero {} => InitialCondition::Zero,
            InitialSection::Vortex { amplitude } => InitialCondition::Vortex { amplitude: *amplitude },
            InitialSection::Dipole { amplitude } => InitialCondition::Dipole { amplitude: *amplitude },
            InitialSection::Random { amplitude, modes, seed } => {
                InitialCondition::Random { amplitude: *amplitude, modes: *modes, seed: *seed }
            }
            InitialSection::Snapshot { path } => {
                let p = if path.is_absolute() { path.clone() } else { base.join(path) };
                let snap = crate::formats::read_snapshot(&p)?;
                if snap.v.grid() != g {
                    return Err(AppError::field(
                        "initial.path",
                        format!("snapshot grid n={} does not match grid.n={}", snap.v.grid().n(), g.n()),
                    ));
                }
                let mut v = snap.v;
                v.clamp_boundary();
                return Ok(leray_project(&v)?);
            }
        };
        Ok(initial_field(&ic, g)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[grid]\nn = 8\n[time]\nt_end = 0.01\ndt = 0.001\n[motion]\nkind = \"identity\"\n";

    fn parse(s: &str) -> Result<RunConfig> {
        RunConfig::parse(s, Path::new("test.toml"))
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.steps().unwrap(), 10);
        assert_eq!(c.ensemble, EnsembleSection::default());
        assert_eq!(c.initial, InitialSection::Vortex { amplitude: 1.0 });
        assert!(c.policy.is_none());
    }

    #[test]
    fn zero_dt_names_the_field() {
        let e = parse(&MINIMAL.replace("dt = 0.001", "dt = 0.0")).unwrap_err();
        assert!(e.to_string().contains("time.dt"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = parse(&format!("{MINIMAL}colour = 3\n")).unwrap_err();
        let s = e.to_string();
        assert!(s.contains("line") && s.contains("colour"), "{s}");
    }

    #[test]
    fn motion_variants_parse() {
        let c = parse(&MINIMAL.replace("kind = \"identity\"", "kind = \"wave\"\namplitude = 0.05\nomega = 2.0")).unwrap();
        assert_eq!(c.motion, MotionSection::Wave { amplitude: 0.05, omega: 2.0, mode: 1 });
        assert!(parse(&MINIMAL.replace("identity", "spiral")).is_err());
    }

    #[test]
    fn fractional_step_count_is_rejected() {
        let e = parse(&MINIMAL.replace("dt = 0.001", "dt = 0.003")).unwrap_err();
        assert!(e.to_string().contains("time.dt"));
    }

    #[test]
    fn policy_accepts_audit_source() {
        let c = parse(&format!("{MINIMAL}[policy]\nc0 = \"audit\"\nmax_interval = 0.005\n")).unwrap();
        let p = c.policy(|| Ok(1.5)).unwrap().unwrap();
        assert_eq!(p.c0, 1.5);
        assert!(parse(&format!("{MINIMAL}[policy]\nc0 = \"guess\"\nmax_interval = 0.005\n")).is_err());
    }
}
