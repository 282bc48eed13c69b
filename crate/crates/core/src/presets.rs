//! Built-in illustrative dataset.
//!
//! The actuator sets are sized to 6.0, 4.7 and 2.5 kW ratings. They are not
//! datasheet values.

use crate::actuator::EmlaParams;
use crate::manipulator::{ChainModel, ManipulatorSpec};
use crate::trajopt::NlpProblem;

const LIFT: &str = include_str!("../configs/lift_emla.json");
const TILT: &str = include_str!("../configs/tilt_emla.json");
const TELESCOPE: &str = include_str!("../configs/telescope_emla.json");
const MANIPULATOR: &str = include_str!("../configs/default_manipulator.json");
const TASK: &str = include_str!("../configs/default_task.json");

fn parse<T: serde::de::DeserializeOwned>(text: &str) -> T {
    serde_json::from_str(text).expect("built-in preset is valid JSON")
}

pub fn lift_emla() -> EmlaParams {
    parse(LIFT)
}

pub fn tilt_emla() -> EmlaParams {
    parse(TILT)
}

pub fn telescope_emla() -> EmlaParams {
    parse(TELESCOPE)
}

pub fn default_manipulator_spec() -> ManipulatorSpec {
    parse(MANIPULATOR)
}

pub fn default_manipulator() -> ChainModel {
    ChainModel::new(default_manipulator_spec()).expect("built-in manipulator is valid")
}

/// Point-to-point task for the default manipulator.
pub fn default_task() -> NlpProblem {
    parse(TASK)
}

/// The three actuators in joint order.
pub fn emlas() -> Vec<EmlaParams> {
    vec![lift_emla(), tilt_emla(), telescope_emla()]
}
