//! Orchestration of ensemble runs, resumption and audits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use movns_core::diagnostics::{
    energy_series, iota_audit, moment_audit, norm_equivalence_audit, random_solenoidal, AuditReport, MomentGroup,
};
use movns_core::fields::VectorField;
use movns_core::geometry::MotionKind;
use movns_core::operators::OperatorBundle;
use movns_core::rereference::estimate_delta;
use movns_core::sde::{CutoffSpec, SimConfig, Simulation, SolverState, Trajectory};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{AppError, Result};
use crate::formats::{
    energy_csv, events_csv, num, sha256_hex, snapshot_meta, trajectory_csv, write_output, Checkpoint, FileEntry,
    Manifest,
};

/// A parsed configuration with everything derived from it.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub config: RunConfig,
    pub text: String,
    pub sim: SimConfig,
    pub v0: VectorField,
    /// Hash of the solver configuration, stored in checkpoints.
    pub sim_sha256: String,
}

pub fn prepare(path: &Path) -> Result<Prepared> {
    let (config, text) = RunConfig::load(path)?;
    let grid = config.grid();
    let audit = &config.audit;
    let policy = config.policy(|| {
        let fields = random_solenoidal(grid, audit.samples, audit.seed)?;
        Ok(norm_equivalence_audit(&fields)?.c0_stokes)
    })?;
    let sim = config.sim_config(policy)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let v0 = config.initial_field(base)?;
    let json = serde_json::to_string(&sim).map_err(|e| AppError::format(path, e.to_string()))?;
    let sim_sha256 = sha256_hex(json.as_bytes());
    Ok(Prepared { config, text, sim, v0, sim_sha256 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Options {
    pub out: PathBuf,
    pub seed: u64,
    pub workers: usize,
    /// Stop every member once it reaches this step and write checkpoints.
    pub halt_after: Option<u64>,
}

impl Options {
    pub fn from_config(c: &RunConfig) -> Self {
        Options { out: c.output.dir.clone(), seed: c.ensemble.seed, workers: c.ensemble.workers, halt_after: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemberSummary {
    pub member: u32,
    pub finished: bool,
    pub state: SolverState,
    pub last_l2: f64,
    pub last_h1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub members: Vec<MemberSummary>,
    pub files: Vec<FileEntry>,
}

impl RunSummary {
    pub fn halted(&self) -> bool {
        self.members.iter().any(|m| !m.finished)
    }

    pub fn ceiling_hits(&self) -> Vec<u32> {
        self.members.iter().filter(|m| m.state.ceiling_hit).map(|m| m.member).collect()
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| AppError::field("ensemble.workers", e.to_string()))
}

fn member_dir(member: u32) -> String {
    format!("member-{member:04}")
}

fn checkpoint_path(out: &Path, member: u32) -> PathBuf {
    out.join(member_dir(member)).join("checkpoint.json")
}

fn write_member(out: &Path, p: &Prepared, seed: u64, member: u32, sim: &Simulation) -> Result<(MemberSummary, Vec<FileEntry>)> {
    let dir = member_dir(member);
    let traj = &sim.trajectory;
    let mut files = vec![
        write_output(out, &format!("{dir}/trajectory.csv"), trajectory_csv(&traj.rows).as_bytes())?,
        write_output(out, &format!("{dir}/events.csv"), events_csv(&traj.events).as_bytes())?,
        write_output(out, &format!("{dir}/energy.csv"), energy_csv(&energy_series(traj)).as_bytes())?,
    ];
    for s in &traj.snapshots {
        let stem = format!("step-{:08}", s.step);
        let names = [format!("{stem}.u0.bin"), format!("{stem}.u1.bin")];
        for (c, name) in names.iter().enumerate() {
            let bytes = crate::formats::encode_component(&s.v, c as u32, s.t);
            files.push(write_output(out, &format!("{dir}/snapshots/{name}"), &bytes)?);
        }
        let meta = snapshot_meta(s, [&names[0], &names[1]]);
        files.push(write_output(out, &format!("{dir}/snapshots/{stem}.meta"), meta.as_bytes())?);
    }
    let ck = Checkpoint::new(p.sim_sha256.clone(), seed, member, sim.state.clone(), traj.clone());
    files.push(write_output(out, &format!("{dir}/checkpoint.json"), ck.to_json()?.as_bytes())?);
    let last = traj.rows.last();
    let summary = MemberSummary {
        member,
        finished: sim.is_finished(),
        state: sim.final_state(),
        last_l2: last.map_or(0.0, |r| r.l2),
        last_h1: last.map_or(0.0, |r| r.h1),
    };
    Ok((summary, files))
}

fn advance(sim: &mut Simulation, halt_after: Option<u64>) -> Result<()> {
    match halt_after {
        Some(h) => sim.run_until(h)?,
        None => sim.run()?,
    }
    Ok(())
}

fn ensemble_csv(seed: u64, members: &[MemberSummary]) -> String {
    let mut s = String::from(
        "member,seed,status,step,t,t0,cutoff,escalations,ceiling_hit,rereferences,theta_sup,l2,h1\n",
    );
    for m in members {
        let st = &m.state;
        let _ = writeln!(
            s,
            "{},{seed},{},{},{},{},{},{},{},{},{},{},{}",
            m.member,
            if m.finished { "complete" } else { "halted" },
            st.step,
            num(st.t),
            num(st.t0),
            num(st.cutoff),
            st.escalations,
            st.ceiling_hit,
            st.rereferences,
            num(st.theta_sup),
            num(m.last_l2),
            num(m.last_h1),
        );
    }
    s
}

fn finish(out: &Path, p: &Prepared, command: &str, seed: u64, results: Vec<Result<(MemberSummary, Vec<FileEntry>)>>) -> Result<RunSummary> {
    let mut members = Vec::with_capacity(results.len());
    let mut files = Vec::new();
    for r in results {
        let (m, f) = r?;
        members.push(m);
        files.extend(f);
    }
    files.push(write_output(out, "ensemble.csv", ensemble_csv(seed, &members).as_bytes())?);
    let manifest = Manifest::new(command, &p.text, seed, files.clone());
    write_output(out, "manifest.json", manifest.to_json().as_bytes())?;
    Ok(RunSummary { members, files })
}

/// Run every ensemble member from the initial condition.
pub fn run(p: &Prepared, opts: &Options) -> Result<RunSummary> {
    std::fs::create_dir_all(&opts.out).map_err(|e| AppError::io(&opts.out, e))?;
    let members = p.config.ensemble.members as u32;
    let results = pool(opts.workers)?.install(|| {
        (0..members)
            .into_par_iter()
            .map(|m| {
                let mut sim = Simulation::new(p.sim.clone(), p.v0.clone(), opts.seed, m)?;
                advance(&mut sim, opts.halt_after)?;
                write_member(&opts.out, p, opts.seed, m, &sim)
            })
            .collect::<Vec<_>>()
    });
    finish(&opts.out, p, "run", opts.seed, results)
}

/// Continue every member from the checkpoints in the output directory.
pub fn resume(p: &Prepared, opts: &Options) -> Result<RunSummary> {
    let members = p.config.ensemble.members as u32;
    let mut checkpoints = Vec::with_capacity(members as usize);
    for m in 0..members {
        let path = checkpoint_path(&opts.out, m);
        let text = std::fs::read_to_string(&path).map_err(|e| AppError::io(&path, e))?;
        let ck = Checkpoint::from_json(&text, &path)?;
        if ck.sim_sha256 != p.sim_sha256 {
            return Err(AppError::format(&path, "checkpoint was written for a different configuration"));
        }
        if ck.member != m {
            return Err(AppError::format(&path, format!("checkpoint belongs to member {}", ck.member)));
        }
        checkpoints.push(ck);
    }
    let seed = checkpoints.first().map_or(opts.seed, |c| c.seed);
    if checkpoints.iter().any(|c| c.seed != seed) {
        return Err(AppError::format(&opts.out, "checkpoints disagree on the seed"));
    }
    let results = pool(opts.workers)?.install(|| {
        checkpoints
            .into_par_iter()
            .map(|ck| {
                let mut sim = Simulation::resume(p.sim.clone(), ck.state, ck.trajectory)?;
                advance(&mut sim, opts.halt_after)?;
                write_member(&opts.out, p, seed, ck.member, &sim)
            })
            .collect::<Vec<_>>()
    });
    finish(&opts.out, p, "resume", seed, results)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuditKind {
    Norms,
    Iota,
    Delta,
    Moment,
}

impl AuditKind {
    pub fn name(self) -> &'static str {
        match self {
            AuditKind::Norms => "norms",
            AuditKind::Iota => "iota",
            AuditKind::Delta => "delta",
            AuditKind::Moment => "moment",
        }
    }
}

fn motion_name(k: &MotionKind) -> &'static str {
    match k {
        MotionKind::Identity => "identity",
        MotionKind::Rotation { .. } => "rotation",
        MotionKind::Shear { .. } => "shear",
        MotionKind::Wave { .. } => "wave",
        MotionKind::Table(_) => "table",
    }
}

fn labelled(mut r: AuditReport, p: &Prepared) -> AuditReport {
    r.label("motion", motion_name(&p.sim.motion.kind)).label("n", &p.sim.grid.n().to_string());
    r
}

/// Run one audit and write its report files plus a manifest.
pub fn audit(p: &Prepared, which: AuditKind, opts: &Options) -> Result<Vec<FileEntry>> {
    std::fs::create_dir_all(&opts.out).map_err(|e| AppError::io(&opts.out, e))?;
    let g = p.sim.grid;
    let a = &p.config.audit;
    let name = which.name();
    let pool = pool(opts.workers)?;
    let mut files = Vec::new();
    match which {
        AuditKind::Norms => {
            let fields = random_solenoidal(g, a.samples, a.seed)?;
            let r = labelled(norm_equivalence_audit(&fields)?.report(), p);
            files.push(write_output(&opts.out, "audit-norms.txt", r.to_text().as_bytes())?);
        }
        AuditKind::Iota => {
            let t_end = p.sim.t_end();
            let times = if a.times.is_empty() { vec![0.0, 0.5 * t_end, t_end] } else { a.times.clone() };
            let probes = random_solenoidal(g, a.probes, a.seed)?;
            let audits = pool.install(|| {
                times
                    .par_iter()
                    .map(|&t| iota_audit(&p.sim.motion, t, g, &probes))
                    .collect::<std::result::Result<Vec<_>, _>>()
            })?;
            let mut text = String::new();
            let mut csv = String::from("t,c2,c3,deviation,within_half,neumann_iterations\n");
            for x in &audits {
                let mut r = labelled(x.report(), p);
                r.samples = probes.len();
                text.push_str(&r.to_text());
                text.push('\n');
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    num(x.t),
                    num(x.c2),
                    num(x.c3),
                    num(x.deviation),
                    x.within_half,
                    x.neumann_iterations
                );
            }
            files.push(write_output(&opts.out, "audit-iota.txt", text.as_bytes())?);
            files.push(write_output(&opts.out, "audit-iota.csv", csv.as_bytes())?);
        }
        AuditKind::Delta => {
            let policy = p.sim.policy.ok_or_else(|| AppError::field("policy", "the delta audit needs a [policy] section"))?;
            let d = estimate_delta(&policy, &p.sim.motion, g, a.t0_samples, a.resolution)?;
            let mut r = labelled(AuditReport::new("delta"), p);
            r.samples = d.per_t0.len();
            r.set("delta", d.delta)
                .set("resolution", d.resolution)
                .set("c0", policy.c0)
                .set("deviation_threshold", policy.deviation_threshold())
                .set("max_interval", policy.max_interval);
            let mut csv = String::from("t0,first_trigger\n");
            for (t0, tau) in &d.per_t0 {
                let _ = writeln!(csv, "{},{}", num(*t0), num(*tau));
            }
            files.push(write_output(&opts.out, "audit-delta.txt", r.to_text().as_bytes())?);
            files.push(write_output(&opts.out, "audit-delta.csv", csv.as_bytes())?);
        }
        AuditKind::Moment => {
            let members = p.config.ensemble.members as u32;
            let mut groups = Vec::with_capacity(a.cutoffs.len());
            for &level in &a.cutoffs {
                let mut sim = p.sim.clone();
                sim.cutoff = CutoffSpec { initial: level, escalate: false, ceiling: level };
                let trajectories = pool.install(|| {
                    (0..members)
                        .into_par_iter()
                        .map(|m| {
                            let mut s = Simulation::new(sim.clone(), p.v0.clone(), opts.seed, m)?;
                            s.run()?;
                            Ok(s.trajectory)
                        })
                        .collect::<std::result::Result<Vec<Trajectory>, movns_core::Error>>()
                })?;
                groups.push(MomentGroup { cutoff: level, trajectories });
            }
            let b = OperatorBundle::new(&p.sim.motion, 0.0, 0.0, g, p.sim.tol)?;
            let (h1, l2) = (b.norm_1t(&p.v0), b.norm_0t(&p.v0));
            let m = moment_audit(&groups, h1 * h1, l2 * l2)?;
            let r = labelled(m.report(), p);
            let mut csv = String::from("cutoff,estimate,stderr\n");
            for (n, e, se) in &m.levels {
                let _ = writeln!(csv, "{},{},{}", num(*n), num(*e), num(*se));
            }
            files.push(write_output(&opts.out, "audit-moment.txt", r.to_text().as_bytes())?);
            files.push(write_output(&opts.out, "audit-moment.csv", csv.as_bytes())?);
        }
    }
    let manifest = Manifest::new(&format!("audit {name}"), &p.text, opts.seed, files.clone());
    write_output(&opts.out, &format!("manifest-audit-{name}.json"), manifest.to_json().as_bytes())?;
    Ok(files)
}
