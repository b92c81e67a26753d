//! On-disk formats: diagnostic CSVs, binary field snapshots with a text
//! sidecar, JSON checkpoints and the run manifest.
//!
//! Floats in text outputs use Rust's shortest round-trip exponent form, so
//! files are byte-identical whenever the values are bit-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use movns_core::diagnostics::EnergyRow;
use movns_core::fields::{Grid, VectorField};
use movns_core::sde::{DiagnosticRow, Event, Snapshot, SolverState, Trajectory};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

pub const SNAPSHOT_MAGIC: [u8; 8] = *b"MOVNSNAP";
pub const SNAPSHOT_VERSION: u32 = 1;
/// Bytes before the first value: magic, version, n, component, padding, time.
pub const SNAPSHOT_HEADER: usize = 8 + 4 * 4 + 8;
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn trajectory_csv(rows: &[DiagnosticRow]) -> String {
    let mut s = String::from("step,t,t0,cutoff,l2,h1,theta,max_div\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.step,
            num(r.t),
            num(r.t0),
            num(r.cutoff),
            num(r.l2),
            num(r.h1),
            num(r.theta),
            num(r.max_div)
        );
    }
    s
}

/// Event log. Columns that do not apply to an event kind are left empty.
pub fn events_csv(events: &[Event]) -> String {
    let mut s = String::from("step,t,kind,old_t0,deviation,forced,from_cutoff,to_cutoff,norm\n");
    for e in events {
        let _ = match e {
            Event::Rereference { step, t, from_t0, deviation, forced } => writeln!(
                s,
                "{step},{},rereference,{},{},{forced},,,",
                num(*t),
                num(*from_t0),
                num(*deviation)
            ),
            Event::Escalation { step, t, from, to } => {
                writeln!(s, "{step},{},escalation,,,,{},{},", num(*t), num(*from), num(*to))
            }
            Event::CeilingHit { step, t, norm } => writeln!(s, "{step},{},ceiling,,,,,,{}", num(*t), num(*norm)),
        };
    }
    s
}

pub fn energy_csv(rows: &[EnergyRow]) -> String {
    let mut s = String::from("step,t,l2,h1,theta,dissipation\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.step,
            num(r.t),
            num(r.l2),
            num(r.h1),
            num(r.theta),
            num(r.dissipation)
        );
    }
    s
}

/// One component of a field in the binary snapshot layout. Values are
/// row-major: node `(i, j)` is at index `j * (n + 1) + i`.
pub fn encode_component(v: &VectorField, component: u32, t: f64) -> Vec<u8> {
    let data = v.comp(component as usize);
    let mut out = Vec::with_capacity(SNAPSHOT_HEADER + 8 * data.len());
    out.extend_from_slice(&SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(v.grid().n() as u32).to_le_bytes());
    out.extend_from_slice(&component.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentHeader {
    pub n: usize,
    pub component: u32,
    pub t: f64,
}

pub fn decode_component(bytes: &[u8], path: &Path) -> Result<(ComponentHeader, Vec<f64>)> {
    let bad = |m: &str| AppError::format(path, m.to_string());
    if bytes.len() < SNAPSHOT_HEADER || bytes[..8] != SNAPSHOT_MAGIC {
        return Err(bad("not a snapshot file"));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if word(8) != SNAPSHOT_VERSION {
        return Err(bad(&format!("unsupported snapshot version {}", word(8))));
    }
    let n = word(12) as usize;
    let component = word(16);
    let t = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let count = (n + 1) * (n + 1);
    if bytes.len() != SNAPSHOT_HEADER + 8 * count {
        return Err(bad("length does not match header"));
    }
    let data = bytes[SNAPSHOT_HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((ComponentHeader { n, component, t }, data))
}

/// Sidecar text for a snapshot whose component files are `files`.
pub fn snapshot_meta(s: &Snapshot, files: [&str; 2]) -> String {
    format!(
        "format = movns-snapshot\nversion = {SNAPSHOT_VERSION}\nn = {}\nstep = {}\nt = {}\nt0 = {}\n\
         frame = reference domain at t0\nlayout = row-major f64 little-endian, node (i, j) at j*(n+1)+i\n\
         component0 = {}\ncomponent1 = {}\n",
        s.v.grid().n(),
        s.step,
        num(s.t),
        num(s.t0),
        files[0],
        files[1]
    )
}

fn meta_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| {
        let (k, v) = l.split_once('=')?;
        (k.trim() == key).then(|| v.trim())
    })
}

/// Read a snapshot through its `.meta` sidecar.
pub fn read_snapshot(meta: &Path) -> Result<Snapshot> {
    let text = std::fs::read_to_string(meta).map_err(|e| AppError::io(meta, e))?;
    let bad = |m: &str| AppError::format(meta, m.to_string());
    let get = |k: &str| meta_value(&text, k).ok_or_else(|| bad(&format!("missing `{k}`")));
    if get("format")? != "movns-snapshot" {
        return Err(bad("not a snapshot sidecar"));
    }
    let n: usize = get("n")?.parse().map_err(|_| bad("bad `n`"))?;
    let step: u64 = get("step")?.parse().map_err(|_| bad("bad `step`"))?;
    let t: f64 = get("t")?.parse().map_err(|_| bad("bad `t`"))?;
    let t0: f64 = get("t0")?.parse().map_err(|_| bad("bad `t0`"))?;
    let grid = Grid::new(n).map_err(|e| bad(&e.to_string()))?;
    let dir = meta.parent().unwrap_or(Path::new("."));
    let mut comps = Vec::with_capacity(2);
    for c in 0..2u32 {
        let p = dir.join(get(&format!("component{c}"))?);
        let bytes = std::fs::read(&p).map_err(|e| AppError::io(&p, e))?;
        let (h, data) = decode_component(&bytes, &p)?;
        if h.n != n || h.component != c || h.t.to_bits() != t.to_bits() {
            return Err(AppError::format(&p, "header disagrees with sidecar"));
        }
        comps.push(data);
    }
    let c1 = comps.pop().unwrap();
    let c0 = comps.pop().unwrap();
    let v = VectorField::from_components(grid, c0, c1).map_err(|e| bad(&e.to_string()))?;
    Ok(Snapshot { step, t, t0, v })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Hash of the solver configuration the state belongs to.
    pub sim_sha256: String,
    pub seed: u64,
    pub member: u32,
    pub state: SolverState,
    pub trajectory: Trajectory,
}

impl Checkpoint {
    pub fn new(sim_sha256: String, seed: u64, member: u32, state: SolverState, trajectory: Trajectory) -> Self {
        Checkpoint { format: "movns-checkpoint".into(), version: CHECKPOINT_VERSION, sim_sha256, seed, member, state, trajectory }
    }

    pub fn to_json(&self) -> Result<String> {
        let finite = self.state.v.is_finite()
            && [self.state.t, self.state.t0, self.state.cutoff, self.state.theta_sup].iter().all(|x| x.is_finite());
        if !finite {
            return Err(AppError::Numerical(movns_core::Error::NonFinite("checkpoint state")));
        }
        serde_json::to_string(self).map_err(|e| AppError::format("checkpoint", e.to_string()))
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| AppError::format(path, e.to_string()))?;
        if c.format != "movns-checkpoint" || c.version != CHECKPOINT_VERSION {
            return Err(AppError::format(path, "not a version 1 checkpoint"));
        }
        let g = c.state.v.grid();
        let ok = Grid::new(g.n()).is_ok() && c.state.v.as_slice().len() == 2 * g.node_count();
        if !ok || c.trajectory.snapshots.iter().any(|s| s.v.grid() != g || s.v.as_slice().len() != 2 * g.node_count()) {
            return Err(AppError::format(path, "field storage does not match its grid"));
        }
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub tool: String,
    pub core: String,
    pub config_sha256: String,
    pub seed: u64,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn new(command: &str, config_text: &str, seed: u64, mut files: Vec<FileEntry>) -> Self {
        files.sort_by(|a, b| a.path.cmp(&b.path));
        files.dedup_by(|a, b| a.path == b.path);
        Manifest {
            format: "movns-manifest".into(),
            version: MANIFEST_VERSION,
            command: command.into(),
            tool: format!("movns {}", env!("CARGO_PKG_VERSION")),
            core: format!("movns-core {}", movns_core::VERSION),
            config_sha256: sha256_hex(config_text.as_bytes()),
            seed,
            files,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Write `bytes` to `root/rel`, creating directories, and describe the file.
pub fn write_output(root: &Path, rel: &str, bytes: &[u8]) -> Result<FileEntry> {
    let path: PathBuf = root.join(rel);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    std::fs::write(&path, bytes).map_err(|e| AppError::io(&path, e))?;
    Ok(FileEntry { path: rel.to_string(), bytes: bytes.len() as u64, sha256: sha256_hex(bytes) })
}

/// Check every file listed in a manifest against its recorded hash.
pub fn verify_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    for f in &manifest.files {
        let p = root.join(&f.path);
        let bytes = std::fs::read(&p).map_err(|e| AppError::io(&p, e))?;
        if sha256_hex(&bytes) != f.sha256 || bytes.len() as u64 != f.bytes {
            return Err(AppError::format(&p, "content does not match manifest"));
        }
    }
    Ok(())
}
