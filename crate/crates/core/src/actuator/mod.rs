//! Electro-mechanical linear actuator (EMLA) model.
//!
//! A permanent magnet synchronous motor drives a gearbox and a ball screw.
//! The motor is described in the rotor-fixed dq frame, the drivetrain by
//! lumped equivalent inertia, damping and compliance.

mod drivetrain;
mod dynamics;
mod electrical;
mod losses;
mod map;

pub use drivetrain::{equivalent_params, rotary_linear_map, EquivalentParams};
pub use dynamics::{
    linearize, rk4_step, state_derivative, step_dynamics, stored_energy, LinearModel,
};
pub use electrical::{
    current_derivatives, dq_voltage_residual, electromagnetic_torque, inverse_park_transform,
    park_transform, q_current_for_torque,
};
pub use losses::{efficiency, loss_breakdown, LossBreakdown};
pub use map::{build_efficiency_map, map_cell, steady_state, EfficiencyMap, MapCell, SteadyState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// dq-frame constants of the motor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmsmParams {
    /// Stator resistance R_s in ohm.
    pub stator_resistance: f64,
    /// d-axis inductance L_d in henry.
    pub inductance_d: f64,
    /// q-axis inductance L_q in henry.
    pub inductance_q: f64,
    pub pole_pairs: u32,
    /// Permanent magnet flux linkage Ψ_PM in weber.
    pub pm_flux: f64,
}

impl PmsmParams {
    pub fn validate(&self) -> Result<()> {
        positive("stator_resistance", self.stator_resistance)?;
        positive("inductance_d", self.inductance_d)?;
        positive("inductance_q", self.inductance_q)?;
        positive("pm_flux", self.pm_flux)?;
        if self.pole_pairs < 1 {
            return Err(Error::invalid("pole_pairs", "must be at least 1"));
        }
        Ok(())
    }

    pub fn p(&self) -> f64 {
        f64::from(self.pole_pairs)
    }

    /// α = L_d / L_q.
    pub fn alpha(&self) -> f64 {
        self.inductance_d / self.inductance_q
    }

    /// ΔL = L_d − L_q.
    pub fn delta_l(&self) -> f64 {
        self.inductance_d - self.inductance_q
    }
}

/// Gearbox, screw and load constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveTrainParams {
    pub motor_inertia: f64,
    pub coupling_inertia: f64,
    pub gearbox_inertia: f64,
    pub screw_mass: f64,
    pub load_mass: f64,
    pub viscous_motor: f64,
    pub gear_friction: f64,
    pub screw_viscous: f64,
    pub coupling_stiffness: f64,
    pub gear_stiffness: f64,
    pub k_bearing: f64,
    pub k_screw: f64,
    pub k_nut: f64,
    pub k_tube: f64,
    pub gear_ratio: f64,
    /// Screw lead ρ in metres per revolution.
    pub screw_lead: f64,
}

impl DriveTrainParams {
    pub fn validate(&self) -> Result<()> {
        positive("motor_inertia", self.motor_inertia)?;
        positive("coupling_inertia", self.coupling_inertia)?;
        positive("gearbox_inertia", self.gearbox_inertia)?;
        positive("screw_mass", self.screw_mass)?;
        positive("load_mass", self.load_mass)?;
        non_negative("viscous_motor", self.viscous_motor)?;
        non_negative("gear_friction", self.gear_friction)?;
        non_negative("screw_viscous", self.screw_viscous)?;
        positive("coupling_stiffness", self.coupling_stiffness)?;
        positive("gear_stiffness", self.gear_stiffness)?;
        positive("k_bearing", self.k_bearing)?;
        positive("k_screw", self.k_screw)?;
        positive("k_nut", self.k_nut)?;
        positive("k_tube", self.k_tube)?;
        positive("gear_ratio", self.gear_ratio)?;
        positive("screw_lead", self.screw_lead)?;
        Ok(())
    }
}

/// Switches for the individual loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossTerms {
    pub copper: bool,
    pub hysteresis: bool,
    pub eddy: bool,
    pub additional: bool,
    pub switching: bool,
    pub conduction: bool,
    pub mechanical: bool,
    pub screw: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        LossTerms {
            copper: true,
            hysteresis: true,
            eddy: true,
            additional: true,
            switching: true,
            conduction: true,
            mechanical: true,
            screw: true,
        }
    }
}

/// Drive electronics, loss coefficients and operating limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    /// Hysteresis coefficient k_h (W per rad/s per Wb²).
    pub k_hys: f64,
    /// Eddy-current coefficient k_e (W per (rad/s)² per Wb²).
    pub k_eddy: f64,
    /// Excess loss coefficient k_add (W per (rad/s)^1.5 per Wb²).
    pub k_add: f64,
    /// Switching energy coefficient (J per A per V).
    pub k_sw: f64,
    /// Switching frequency in Hz.
    pub f_sw: f64,
    pub v_dc: f64,
    /// Device on-state voltage drop.
    pub v_on: f64,
    /// Device on-state resistance.
    pub r_on: f64,
    pub eta_screw: f64,
    /// Current magnitude limit in A.
    pub i_max: f64,
    /// dq voltage magnitude limit in V.
    pub v_max: f64,
    #[serde(default)]
    pub regeneration: bool,
    #[serde(default)]
    pub terms: LossTerms,
}

impl DriveConfig {
    pub fn validate(&self) -> Result<()> {
        non_negative("k_hys", self.k_hys)?;
        non_negative("k_eddy", self.k_eddy)?;
        non_negative("k_add", self.k_add)?;
        non_negative("k_sw", self.k_sw)?;
        non_negative("f_sw", self.f_sw)?;
        non_negative("v_dc", self.v_dc)?;
        non_negative("v_on", self.v_on)?;
        non_negative("r_on", self.r_on)?;
        positive("i_max", self.i_max)?;
        positive("v_max", self.v_max)?;
        if !(self.eta_screw > 0.0 && self.eta_screw <= 1.0) {
            return Err(Error::invalid("eta_screw", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// One complete actuator description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmlaParams {
    pub name: String,
    #[serde(default)]
    pub note: String,
    /// Rated mechanical power in W.
    pub rated_power: f64,
    pub pmsm: PmsmParams,
    pub drivetrain: DriveTrainParams,
    pub drive: DriveConfig,
    /// Force axis of the efficiency map (N).
    pub map_forces: Vec<f64>,
    /// Velocity axis of the efficiency map (m/s).
    pub map_velocities: Vec<f64>,
}

impl EmlaParams {
    pub fn validate(&self) -> Result<()> {
        self.pmsm.validate()?;
        self.drivetrain.validate()?;
        self.drive.validate()?;
        positive("rated_power", self.rated_power)
    }

    pub fn equivalent(&self) -> EquivalentParams {
        equivalent_params(&self.drivetrain)
    }
}

/// Motor-side state x = [θ_m, ω_m, i_q, i_d].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EmlaState {
    pub theta_m: f64,
    pub omega_m: f64,
    pub i_q: f64,
    pub i_d: f64,
}

impl EmlaState {
    pub fn to_array(self) -> [f64; 4] {
        [self.theta_m, self.omega_m, self.i_q, self.i_d]
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        EmlaState {
            theta_m: x[0],
            omega_m: x[1],
            i_q: x[2],
            i_d: x[3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Linearization point (x₂⁰, x₃⁰, x₄⁰).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub omega0: f64,
    pub iq0: f64,
    pub id0: f64,
}

pub(crate) fn positive(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(what, format!("must be positive and finite, got {v}")))
    }
}

pub(crate) fn non_negative(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(what, format!("must be non-negative and finite, got {v}")))
    }
}
