//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::actuator::build_efficiency_map;
use crate::bilevel::{solve_outer, ActuatorSet, BilevelResult};
use crate::config::{parse_json, sha256_hex, LoadedRun};
use crate::control::{lyapunov_audit, simulate_tracking, tracking_errors};
use crate::error::{Error, Result};
use crate::report::{self, InputEntry, Manifest, OutputEntry, TrackingReport};
use crate::trajopt::{solve_inner, summary};

#[derive(Debug, Parser)]
#[command(name = "emla", version, about = "Actuator maps, trajectory optimization and tracking control for EMLA-driven manipulators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run config (JSON); built-in data is used for anything it omits.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the disturbance seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Print progress to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Efficiency map of every actuator.
    Map,
    /// Inner trajectory optimization at the configured weights.
    Trajopt,
    /// Bilevel optimization of the criterion weights.
    #[command(alias = "optimize")]
    Bilevel,
    /// Closed-loop tracking of a trajectory.
    Track,
    /// Summary of earlier run artifacts.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Map => "map",
            Command::Trajopt => "trajopt",
            Command::Bilevel => "bilevel",
            Command::Track => "track",
            Command::Report => "report",
        }
    }
}

type Files = Vec<(String, Vec<u8>)>;

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s.into_bytes()
}

fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c.to_ascii_lowercase() } else { '_' })
        .collect();
    if s.is_empty() { "actuator".into() } else { s }
}

fn log(cli: &Cli, msg: impl AsRef<str>) {
    if cli.verbose > 0 {
        eprintln!("{}", msg.as_ref());
    }
}

fn produce(cli: &Cli, run: &mut LoadedRun) -> Result<(Files, Option<u64>)> {
    let mut files: Files = vec![];
    let mut seed = None;
    match cli.command {
        Command::Map => {
            for a in run.actuators()? {
                let m = build_efficiency_map(&a, &a.map_forces, &a.map_velocities)?;
                let name = format!("map_{}.csv", slug(&a.name));
                if files.iter().any(|(n, _)| *n == name) {
                    return Err(Error::Config(format!("two actuators map to {name}")));
                }
                log(cli, format!("{name}: {} x {} cells", m.force_axis.len(), m.velocity_axis.len()));
                files.push((name, m.to_csv().into_bytes()));
            }
        }
        Command::Trajopt => {
            let model = run.manipulator()?;
            let r = solve_inner(&model, &run.problem()?)?;
            log(cli, summary(&r));
            files.push((report::TRAJECTORY_JSON.into(), json(&r)));
            files.push((report::TRAJECTORY_CSV.into(), r.to_csv().into_bytes()));
        }
        Command::Bilevel => {
            let model = run.manipulator()?;
            let acts = ActuatorSet::new(run.actuators()?)?;
            let b = solve_outer(&model, &acts, &run.bilevel()?)?;
            log(cli, format!("omega* = {:?}, F = {}, total efficiency = {}", b.omega, b.outer_cost, b.total_efficiency));
            files.push((report::BILEVEL_JSON.into(), json(&b)));
            files.push((report::TRAJECTORY_JSON.into(), json(&b.trajectory)));
            files.push((report::TRAJECTORY_CSV.into(), b.trajectory.to_csv().into_bytes()));
            files.push((report::TRACE_CSV.into(), b.trace_csv().into_bytes()));
        }
        Command::Track => {
            let model = run.manipulator()?;
            let acts = run.actuators()?;
            let traj = run.trajectory()?;
            if traj.t.is_empty() {
                return Err(Error::invalid("trajectory", "empty trajectory"));
            }
            let ctl = run.controller()?.resolve(&model, &acts, &traj.q[0])?;
            let mut dist = run.disturbance()?;
            if let Some(s) = cli.seed {
                dist.seed = s;
            }
            seed = Some(dist.seed);
            let tc = run.tracking()?;
            let trace = simulate_tracking(&model, &acts, &traj, &ctl, &dist, &tc)?;
            let errors = tracking_errors(&trace)?;
            let audit = lyapunov_audit(&trace, &ctl, 1e-12)?;
            log(cli, format!("force rms/peak {:?}, velocity rms/peak {:?}", errors.force_relative, errors.velocity_relative));
            let rep = TrackingReport::new(&trace, errors, &audit, ctl);
            files.push((report::TRACKING_CSV.into(), trace.to_csv().into_bytes()));
            files.push((report::TRACKING_JSON.into(), json(&rep)));
        }
        Command::Report => {
            let dirs: Vec<PathBuf> = if run.run.artifacts.is_empty() {
                vec![cli.out.clone()]
            } else {
                run.run.artifacts.iter().map(|p| run.resolve(p)).collect()
            };
            let found = report::locate(&dirs)?;
            let acts = ActuatorSet::new(run.actuators()?)?;
            let read = |p: &Path| report::read_text(p);
            let tp = found.trajectory.as_deref().expect("located");
            let traj = parse_json(&read(tp)?, &tp.display().to_string())?;
            let bilevel: Option<BilevelResult> = match &found.bilevel {
                Some(p) => Some(parse_json(&read(p)?, &p.display().to_string())?),
                None => None,
            };
            let tracking = match (&found.tracking_csv, &found.tracking_json) {
                (Some(c), Some(j)) => {
                    let rep: TrackingReport = parse_json(&read(j)?, &j.display().to_string())?;
                    Some(report::tracking_from_csv(&read(c)?, rep.transient)?)
                }
                _ => None,
            };
            let s = report::summarize(&traj, &acts, run.run.efficiency, bilevel.as_ref(), tracking)?;
            log(cli, format!("total efficiency {}", s.efficiency.total_efficiency));
            files.push((report::SUMMARY_JSON.into(), json(&s)));
        }
    }
    Ok((files, seed))
}

/// Writes all files or none of them.
fn write_all(dir: &Path, files: &Files) -> Result<()> {
    let created = !dir.exists();
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut written = vec![];
    let mut res = Ok(());
    for (name, bytes) in files {
        let p = dir.join(name);
        if let Err(e) = std::fs::write(&p, bytes) {
            res = Err(Error::Io(format!("{}: {e}", p.display())));
            break;
        }
        written.push(p);
    }
    if res.is_err() {
        for p in &written {
            let _ = std::fs::remove_file(p);
        }
        if created {
            let _ = std::fs::remove_dir(dir);
        }
    }
    res
}

/// Runs one subcommand and returns the paths written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let mut loaded = LoadedRun::load(cli.config.as_deref())?;
    let work = |loaded: &mut LoadedRun| produce(cli, loaded);
    let (mut files, seed) = match cli.jobs {
        Some(0) => return Err(Error::invalid("jobs", "must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| work(&mut loaded))?,
        None => work(&mut loaded)?,
    };
    let manifest = Manifest {
        tool: "emla".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: cli.command.name().into(),
        seed,
        config_sha256: loaded.sha256.clone(),
        inputs: loaded.inputs.iter().map(|(role, sha256)| InputEntry { role: role.clone(), sha256: sha256.clone() }).collect(),
        outputs: files
            .iter()
            .map(|(file, bytes)| OutputEntry { file: file.clone(), bytes: bytes.len(), sha256: sha256_hex(bytes) })
            .collect(),
    };
    files.push((report::MANIFEST_JSON.into(), json(&manifest)));
    write_all(&cli.out, &files)?;
    Ok(files.iter().map(|(n, _)| cli.out.join(n)).collect())
}

/// Parses arguments, runs, and maps the outcome to a process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                log(&cli, format!("wrote {}", p.display()));
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidParam { .. } => 2,
                _ => 1,
            }
        }
    }
}
