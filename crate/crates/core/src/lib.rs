//! Modeling, trajectory optimization and control of a hydraulic-free heavy-duty
//! manipulator driven by electro-mechanical linear actuators.

pub mod actuator;
pub mod bilevel;
pub mod cli;
pub mod config;
pub mod control;
pub mod error;
pub mod io;
pub mod manipulator;
pub mod presets;
pub mod report;
pub mod spatial;
pub mod spline;
pub mod trajopt;

pub use error::{Error, Result};
