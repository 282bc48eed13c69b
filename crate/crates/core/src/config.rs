//! Run configuration for the command-line front end.
//!
//! A run config is a JSON object holding paths to the component configs.
//! Relative paths resolve against the directory of the run config. Absent
//! entries fall back to the built-in dataset.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actuator::EmlaParams;
use crate::bilevel::{BilevelConfig, EfficiencySource, OuterMethod};
use crate::control::{design_controller, ActuatorGains, Bandwidths, ControllerConfig, DisturbanceProfile, SubsystemGains, TrackingConfig};
use crate::error::{Error, Result};
use crate::manipulator::{ChainModel, ManipulatorSpec};
use crate::presets;
use crate::trajopt::{NlpProblem, TrajectoryResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manipulator: Option<PathBuf>,
    /// One file per joint, in joint order.
    pub actuators: Vec<PathBuf>,
    pub problem: Option<PathBuf>,
    pub bilevel: Option<PathBuf>,
    /// Trajectory JSON consumed by `track`.
    pub trajectory: Option<PathBuf>,
    pub controller: Option<PathBuf>,
    pub disturbance: Option<PathBuf>,
    pub tracking: Option<PathBuf>,
    /// Directories searched by `report`, in order.
    pub artifacts: Vec<PathBuf>,
    pub efficiency: EfficiencySource,
}

/// Controller settings: explicit gains per joint, or gains designed from
/// bandwidths at the first reference pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSpec {
    pub base: SubsystemGains,
    pub bandwidths: Bandwidths,
    pub phi_star: f64,
    pub joints: Option<Vec<ActuatorGains>>,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        ControllerSpec { base: SubsystemGains::standard(), bandwidths: Bandwidths::default(), phi_star: 0.0, joints: None }
    }
}

impl ControllerSpec {
    pub fn resolve(&self, model: &ChainModel, actuators: &[EmlaParams], q: &[f64]) -> Result<ControllerConfig> {
        let mut cfg = match &self.joints {
            Some(j) => ControllerConfig { joints: j.clone(), phi_star: 0.0 },
            None => design_controller(model, actuators, q, &self.bandwidths, self.base)?,
        };
        cfg.phi_star = self.phi_star;
        cfg.validate(actuators.len())?;
        Ok(cfg)
    }
}

/// Parses JSON text with the offending field path and position in errors.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let v = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Config(format!("{origin}: field `{path}`: {inner}"))
    })?;
    Ok(v)
}

/// A file read from disk together with its digest.
#[derive(Debug, Clone)]
pub struct Input<T> {
    pub value: T,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Input<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let value = parse_json(&text, &path.display().to_string())?;
    Ok(Input { value, sha256: sha256_hex(text.as_bytes()) })
}

/// Run config plus the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub run: RunConfig,
    pub base: PathBuf,
    /// Digest of the run config file, or of the empty config when none was given.
    pub sha256: String,
    /// (role, digest) of every component file read so far.
    pub inputs: Vec<(String, String)>,
}

impl LoadedRun {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let input: Input<RunConfig> = read_json(p)?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                Ok(LoadedRun { run: input.value, base, sha256: input.sha256, inputs: vec![] })
            }
            None => Ok(LoadedRun {
                run: RunConfig::default(),
                base: PathBuf::new(),
                sha256: sha256_hex(b"{}"),
                inputs: vec![],
            }),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.base.join(p) }
    }

    fn component<T: DeserializeOwned>(&mut self, role: &str, path: &Path) -> Result<T> {
        let input: Input<T> = read_json(&self.resolve(path))?;
        self.inputs.push((role.to_string(), input.sha256));
        Ok(input.value)
    }

    pub fn manipulator(&mut self) -> Result<ChainModel> {
        match self.run.manipulator.clone() {
            Some(p) => ChainModel::new(self.component::<ManipulatorSpec>("manipulator", &p)?),
            None => Ok(presets::default_manipulator()),
        }
    }

    pub fn actuators(&mut self) -> Result<Vec<EmlaParams>> {
        if self.run.actuators.is_empty() {
            return Ok(presets::emlas());
        }
        let paths = self.run.actuators.clone();
        let acts = paths
            .iter()
            .enumerate()
            .map(|(i, p)| self.component::<EmlaParams>(&format!("actuator{}", i + 1), p))
            .collect::<Result<Vec<_>>>()?;
        for a in &acts {
            a.validate()?;
        }
        Ok(acts)
    }

    pub fn problem(&mut self) -> Result<NlpProblem> {
        match self.run.problem.clone() {
            Some(p) => self.component("problem", &p),
            None => Ok(presets::default_task()),
        }
    }

    pub fn bilevel(&mut self) -> Result<BilevelConfig> {
        match self.run.bilevel.clone() {
            Some(p) => self.component("bilevel", &p),
            None => Ok(default_bilevel()),
        }
    }

    pub fn trajectory(&mut self) -> Result<TrajectoryResult> {
        let p = self
            .run
            .trajectory
            .clone()
            .ok_or_else(|| Error::Config("`trajectory` is required for tracking".into()))?;
        self.component("trajectory", &p)
    }

    pub fn controller(&mut self) -> Result<ControllerSpec> {
        match self.run.controller.clone() {
            Some(p) => self.component("controller", &p),
            None => Ok(ControllerSpec::default()),
        }
    }

    pub fn disturbance(&mut self) -> Result<DisturbanceProfile> {
        match self.run.disturbance.clone() {
            Some(p) => self.component("disturbance", &p),
            None => Ok(DisturbanceProfile::default()),
        }
    }

    pub fn tracking(&mut self) -> Result<TrackingConfig> {
        match self.run.tracking.clone() {
            Some(p) => self.component("tracking", &p),
            None => Ok(TrackingConfig::default()),
        }
    }
}

/// 5×5 grid over [0, 1]² on the built-in task.
pub fn default_bilevel() -> BilevelConfig {
    BilevelConfig {
        omega_lower: vec![0.0, 0.0],
        omega_upper: vec![1.0, 1.0],
        method: OuterMethod::Grid { points: 5 },
        efficiency: EfficiencySource::Map,
        warm_start: false,
        normalize_weights: false,
        problem: presets::default_task(),
    }
}
