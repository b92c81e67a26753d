use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Result;
use crate::runner::{self, AuditKind, Options};

#[derive(Debug, Parser)]
#[command(name = "movns", version, about = "Stochastic Navier-Stokes on moving domains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override `ensemble.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override `ensemble.workers`.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the ensemble and write trajectories, snapshots and checkpoints.
    Run {
        #[command(flatten)]
        common: Common,
        /// Stop at this step and leave checkpoints for `resume`.
        #[arg(long)]
        halt_after: Option<u64>,
    },
    /// Continue a run from the checkpoints in the output directory.
    Resume {
        #[command(flatten)]
        common: Common,
    },
    /// Run one of the audits.
    Audit {
        #[arg(value_enum)]
        which: AuditName,
        #[command(flatten)]
        common: Common,
    },
    /// Parse and check a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AuditName {
    Norms,
    Iota,
    Delta,
    Moment,
}

impl From<AuditName> for AuditKind {
    fn from(a: AuditName) -> Self {
        match a {
            AuditName::Norms => AuditKind::Norms,
            AuditName::Iota => AuditKind::Iota,
            AuditName::Delta => AuditKind::Delta,
            AuditName::Moment => AuditKind::Moment,
        }
    }
}

fn options(p: &runner::Prepared, c: &Common, halt_after: Option<u64>) -> Result<Options> {
    let mut o = Options::from_config(&p.config);
    if let Some(s) = c.seed {
        o.seed = s;
    }
    if let Some(d) = &c.out {
        o.out = d.clone();
    }
    if let Some(w) = c.workers {
        if w == 0 {
            return Err(crate::error::AppError::field("--workers", "must be at least 1"));
        }
        o.workers = w;
    }
    o.halt_after = halt_after;
    Ok(o)
}

/// Execute a parsed command line and return the line to print on success.
pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Run { common, halt_after } => {
            let p = runner::prepare(&common.config)?;
            let o = options(&p, &common, halt_after)?;
            let s = runner::run(&p, &o)?;
            Ok(report("run", &o, &s))
        }
        Command::Resume { common } => {
            let p = runner::prepare(&common.config)?;
            let o = options(&p, &common, None)?;
            let s = runner::resume(&p, &o)?;
            Ok(report("resume", &o, &s))
        }
        Command::Audit { which, common } => {
            let p = runner::prepare(&common.config)?;
            let o = options(&p, &common, None)?;
            let kind = AuditKind::from(which);
            let files = runner::audit(&p, kind, &o)?;
            Ok(format!("audit {}: wrote {} files to {}", kind.name(), files.len(), o.out.display()))
        }
        Command::Validate { config } => {
            let p = runner::prepare(&config)?;
            Ok(format!(
                "ok: n = {}, steps = {}, members = {}, noise modes = {}",
                p.sim.grid.n(),
                p.sim.steps,
                p.config.ensemble.members,
                p.sim.noise.modes
            ))
        }
    }
}

fn report(cmd: &str, o: &Options, s: &runner::RunSummary) -> String {
    let mut line = format!("{cmd}: {} members, {} files in {}", s.members.len(), s.files.len(), o.out.display());
    if s.halted() {
        line.push_str(", halted before the horizon");
    }
    let hits = s.ceiling_hits();
    if !hits.is_empty() {
        line.push_str(&format!(", cutoff ceiling hit by members {hits:?}"));
    }
    line
}
