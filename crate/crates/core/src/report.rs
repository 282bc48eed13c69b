//! Run artifacts and the summary computed from them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bilevel::{evaluate_efficiency, ActuatorSet, BilevelResult, EfficiencySource};
use crate::config::parse_json;
use crate::control::{ControllerConfig, StabilityAudit, TrackingErrors, TrackingTrace};
use crate::error::{Error, Result};
use crate::trajopt::TrajectoryResult;

pub const TRAJECTORY_JSON: &str = "trajectory.json";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const BILEVEL_JSON: &str = "bilevel.json";
pub const TRACE_CSV: &str = "trace.csv";
pub const TRACKING_CSV: &str = "tracking.csv";
pub const TRACKING_JSON: &str = "tracking.json";
pub const SUMMARY_JSON: &str = "summary.json";
pub const MANIFEST_JSON: &str = "manifest.json";

/// Scalar results of a tracking run, written next to `tracking.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub dt: f64,
    pub rows: usize,
    pub transient: f64,
    pub errors: TrackingErrors,
    pub zeta: f64,
    pub zeta_fit: f64,
    pub strictly_decreasing: bool,
    pub descent_violations: usize,
    pub max_descent_excess: f64,
    pub disturbance_bound: f64,
    pub v_initial: f64,
    pub v_final: f64,
    pub controller: ControllerConfig,
}

impl TrackingReport {
    pub fn new(trace: &TrackingTrace, errors: TrackingErrors, audit: &StabilityAudit, controller: ControllerConfig) -> Self {
        TrackingReport {
            dt: trace.dt,
            rows: trace.t.len(),
            transient: trace.transient,
            errors,
            zeta: audit.zeta,
            zeta_fit: audit.zeta_fit,
            strictly_decreasing: audit.strictly_decreasing,
            descent_violations: audit.descent_violations,
            max_descent_excess: audit.max_descent_excess,
            disturbance_bound: audit.disturbance_bound,
            v_initial: audit.v.first().copied().unwrap_or(0.0),
            v_final: audit.v.last().copied().unwrap_or(0.0),
            controller,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub weights: Vec<f64>,
    pub t_m: f64,
    pub psi: Vec<f64>,
    pub cost: f64,
    pub max_residual: f64,
    pub converged: bool,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySummary {
    pub source: EfficiencySource,
    pub outer_cost: f64,
    pub total_efficiency: f64,
    pub joint_efficiency: Vec<f64>,
    pub top_quartile_fraction: Vec<f64>,
    pub motoring_samples: Vec<usize>,
    pub flagged_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilevelSummary {
    pub omega: Vec<f64>,
    pub outer_cost: f64,
    pub total_efficiency: f64,
    pub joint_efficiency: Vec<f64>,
    pub evaluations: usize,
    pub valid_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub transient: f64,
    pub errors: TrackingErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trajectory: TrajectorySummary,
    pub efficiency: EfficiencySummary,
    pub bilevel: Option<BilevelSummary>,
    pub tracking: Option<TrackingSummary>,
}

/// Recomputes efficiency statistics of `traj` and gathers the rest.
pub fn summarize(
    traj: &TrajectoryResult,
    actuators: &ActuatorSet,
    source: EfficiencySource,
    bilevel: Option<&BilevelResult>,
    tracking: Option<TrackingSummary>,
) -> Result<Summary> {
    if traj.t.is_empty() || traj.n_joints() == 0 {
        return Err(Error::invalid("trajectory", "empty trajectory"));
    }
    let eff = evaluate_efficiency(traj, actuators, source)?;
    Ok(Summary {
        trajectory: TrajectorySummary {
            weights: traj.weights.clone(),
            t_m: traj.t_m,
            psi: traj.psi.clone(),
            cost: traj.cost,
            max_residual: traj.residuals.max(),
            converged: traj.converged,
            samples: traj.t.len(),
        },
        efficiency: EfficiencySummary {
            source,
            outer_cost: eff.outer_cost,
            total_efficiency: eff.total_efficiency,
            joint_efficiency: eff.joint_efficiency,
            top_quartile_fraction: eff.top_quartile_fraction,
            motoring_samples: eff.motoring_samples,
            flagged_samples: eff.flagged_samples,
        },
        bilevel: bilevel.map(|b| BilevelSummary {
            omega: b.omega.clone(),
            outer_cost: b.outer_cost,
            total_efficiency: b.total_efficiency,
            joint_efficiency: b.joint_efficiency.clone(),
            evaluations: b.trace.len(),
            valid_evaluations: b.trace.iter().filter(|p| p.cost.is_some()).count(),
        }),
        tracking,
    })
}

/// Tracking RMS errors recomputed from the columns of `tracking.csv`.
pub fn tracking_from_csv(text: &str, transient: f64) -> Result<TrackingSummary> {
    let mut lines = text.lines();
    let head: Vec<&str> = lines.next().ok_or_else(|| Error::invalid(TRACKING_CSV, "empty file"))?.split(',').collect();
    let col = |name: &str| {
        head.iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::invalid(TRACKING_CSV, format!("missing column `{name}`")))
    };
    let n = (1..).take_while(|i| head.contains(&format!("f_x{i}").as_str())).count();
    if head.first() != Some(&"t") || n == 0 {
        return Err(Error::invalid(TRACKING_CSV, "unexpected header"));
    }
    let mut rows = vec![];
    for (k, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::invalid(TRACKING_CSV, format!("line {}: {e}", k + 2)))?;
        if row.len() != head.len() {
            return Err(Error::invalid(TRACKING_CSV, format!("line {}: expected {} fields", k + 2, head.len())));
        }
        rows.push(row);
    }
    let pick = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<_>>();
    let mut trace_cols = Vec::with_capacity(n);
    for i in 1..=n {
        trace_cols.push([
            pick(col(&format!("f_x{i}"))?),
            pick(col(&format!("f_x_ref{i}"))?),
            pick(col(&format!("v_x{i}"))?),
            pick(col(&format!("v_x_ref{i}"))?),
        ]);
    }
    let by_row = |c: usize| (0..rows.len()).map(|k| trace_cols.iter().map(|j| j[c][k]).collect()).collect();
    let trace = TrackingTrace {
        dt: 0.0,
        t: pick(0),
        f_x: by_row(0),
        f_x_ref: by_row(1),
        v_x: by_row(2),
        v_x_ref: by_row(3),
        stroke: vec![],
        stroke_ref: vec![],
        i_q: vec![],
        i_d: vec![],
        v_q: vec![],
        v_d: vec![],
        q: vec![],
        phi: vec![],
        v_lyap: vec![],
        sample_rows: vec![],
        disturbance_bound: 0.0,
        transient,
    };
    Ok(TrackingSummary { transient, errors: crate::control::tracking_errors(&trace)? })
}

/// Artifact files found in the searched directories.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub trajectory: Option<PathBuf>,
    pub bilevel: Option<PathBuf>,
    pub tracking_csv: Option<PathBuf>,
    pub tracking_json: Option<PathBuf>,
}

fn find(dirs: &[PathBuf], name: &str) -> Option<PathBuf> {
    dirs.iter().map(|d| d.join(name)).find(|p| p.is_file())
}

/// Locates artifacts; every file named in a manifest must exist, and a
/// tracking run needs both of its files.
pub fn locate(dirs: &[PathBuf]) -> Result<Artifacts> {
    if dirs.is_empty() {
        return Err(Error::Config("`artifacts` lists no directory".into()));
    }
    let mut missing = vec![];
    for d in dirs {
        let m = d.join(MANIFEST_JSON);
        if let Ok(text) = std::fs::read_to_string(&m) {
            let manifest: Manifest = parse_json(&text, &m.display().to_string())?;
            for o in manifest.outputs {
                if !d.join(&o.file).is_file() {
                    missing.push(d.join(&o.file).display().to_string());
                }
            }
        }
    }
    let a = Artifacts {
        trajectory: find(dirs, TRAJECTORY_JSON),
        bilevel: find(dirs, BILEVEL_JSON),
        tracking_csv: find(dirs, TRACKING_CSV),
        tracking_json: find(dirs, TRACKING_JSON),
    };
    if a.trajectory.is_none() {
        missing.push(TRAJECTORY_JSON.into());
    }
    match (&a.tracking_csv, &a.tracking_json) {
        (Some(_), None) => missing.push(TRACKING_JSON.into()),
        (None, Some(_)) => missing.push(TRACKING_CSV.into()),
        _ => {}
    }
    if missing.is_empty() {
        Ok(a)
    } else {
        Err(Error::Config(format!("missing artifacts: {}", missing.join(", "))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEntry {
    pub role: String,
    pub sha256: String,
}

/// Provenance of one run; holds no timestamps or paths so that identical
/// runs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub inputs: Vec<InputEntry>,
    pub outputs: Vec<OutputEntry>,
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{default_manipulator, default_task, emlas};

    fn still() -> TrajectoryResult {
        let q0 = default_task().q_initial;
        TrajectoryResult::from_control_points(&default_manipulator(), 5, vec![q0; 12], 2.0, 10, vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn empty_trajectory_is_an_error() {
        let acts = ActuatorSet::new(emlas()).unwrap();
        let mut t = still();
        t.t.clear();
        t.q.clear();
        assert!(summarize(&t, &acts, EfficiencySource::Map, None, None).is_err());
        assert!(summarize(&still(), &acts, EfficiencySource::Map, None, None).is_ok());
    }

    #[test]
    fn missing_artifacts_are_named() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(TRACKING_CSV), "t\n").unwrap();
        let msg = locate(&[dir.path().to_path_buf()]).unwrap_err().to_string();
        assert!(msg.contains(TRAJECTORY_JSON) && msg.contains(TRACKING_JSON), "{msg}");
    }

    #[test]
    fn csv_errors_match_direct_computation() {
        let csv = "t,f_x1,f_x_ref1,v_x1,v_x_ref1\n0,1,0,0,0\n0.5,2,1,0.5,1\n1,3,2,1,1\n";
        let s = tracking_from_csv(csv, 0.5).unwrap();
        assert!((s.errors.force_rms[0] - 1.0).abs() < 1e-15);
        assert!((s.errors.force_relative[0] - 0.5).abs() < 1e-15);
        assert!((s.errors.velocity_rms[0] - (0.125f64).sqrt()).abs() < 1e-15);
        assert!(tracking_from_csv("t,a\n", 0.0).is_err());
        assert!(tracking_from_csv("t,f_x1,f_x_ref1,v_x1,v_x_ref1\n0,1\n", 0.0).is_err());
    }
}
