//! Robust decomposed tracking control of the actuators.
//!
//! Each actuator is split into four first-order subsystems: stroke, stroke
//! velocity, q-axis current and d-axis current. Every subsystem has a tracking
//! error Q, a feedback law κ and an adaptive bound estimate φ̂. Errors are
//! normalized per subsystem by a state scale before they enter the laws and
//! the Lyapunov function; κ is mapped back to physical units by an output
//! scale.

mod audit;
mod sim;

use serde::{Deserialize, Serialize};

use crate::actuator::{equivalent_params, EmlaParams};
use crate::error::{Error, Result};
use crate::manipulator::{rnea, ChainModel};

pub use audit::{lyapunov_audit, lyapunov_value, StabilityAudit};
pub use sim::{simulate_tracking, tracking_errors, LoadModel, TrackingConfig, TrackingErrors, TrackingTrace};

/// Number of subsystems per actuator.
pub const SUBSYSTEMS: usize = 4;

/// Gains and scales of one subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemGains {
    pub delta: f64,
    pub epsilon: f64,
    pub k: f64,
    pub sigma: f64,
    /// Physical error corresponding to one normalized unit.
    pub state_scale: f64,
    /// Physical output per normalized unit of κ.
    pub output_scale: f64,
}

impl SubsystemGains {
    /// δ = 75000, ε = 9, k = 7, σ = 9 with unit scales.
    pub fn standard() -> Self {
        SubsystemGains { delta: 75000.0, epsilon: 9.0, k: 7.0, sigma: 9.0, state_scale: 1.0, output_scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("delta", self.delta),
            ("epsilon", self.epsilon),
            ("k", self.k),
            ("sigma", self.sigma),
            ("state_scale", self.state_scale),
            ("output_scale", self.output_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(what, "must be finite and strictly positive"));
            }
        }
        Ok(())
    }

    /// Effective proportional gain of κ on the physical error with φ̂ = 0.
    pub fn effective_gain(&self) -> f64 {
        0.5 * self.delta * self.output_scale / self.state_scale
    }
}

/// The four subsystems of one actuator, in the order stroke, velocity, i_q, i_d.
pub type ActuatorGains = [SubsystemGains; SUBSYSTEMS];

/// Closed-loop bandwidths used to derive the scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bandwidths {
    /// Stroke loop (1/s).
    pub position: f64,
    /// Velocity loop (1/s).
    pub velocity: f64,
    /// Current loops (1/s).
    pub current: f64,
    /// Stroke error mapped to one normalized unit (m).
    pub position_scale: f64,
}

impl Default for Bandwidths {
    fn default() -> Self {
        Bandwidths { position: 30.0, velocity: 150.0, current: 3000.0, position_scale: 1e-3 }
    }
}

/// Derives state and output scales so that `base` gains give the requested
/// bandwidths on an actuator driving `reflected_mass` (kg, in stroke
/// coordinates).
///
/// State scales are chosen so that the cross terms of the cascade cancel in
/// the normalized Lyapunov function.
pub fn design_gains(emla: &EmlaParams, reflected_mass: f64, bw: &Bandwidths, base: SubsystemGains) -> Result<ActuatorGains> {
    emla.validate()?;
    for (what, v) in [
        ("position bandwidth", bw.position),
        ("velocity bandwidth", bw.velocity),
        ("current bandwidth", bw.current),
        ("position_scale", bw.position_scale),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(what, "must be finite and strictly positive"));
        }
    }
    if !(reflected_mass.is_finite() && reflected_mass >= 0.0) {
        return Err(Error::invalid("reflected_mass", "must be finite and non-negative"));
    }
    let eq = equivalent_params(&emla.drivetrain);
    let f = eq.f_eq;
    let j_eff = eq.j_eq + f * f * reflected_mass;
    let kt = 1.5 * emla.pmsm.p() * emla.pmsm.pm_flux;
    let k1 = bw.position;
    let k2 = bw.velocity * j_eff / f;
    let k3 = bw.current * emla.pmsm.inductance_q;
    let k4 = bw.current * emla.pmsm.inductance_d;
    let s1 = bw.position_scale;
    let s2 = k1 * s1;
    let s3 = s2 * j_eff * bw.velocity / (f * kt);
    let s4 = s3;
    let half = 0.5 * base.delta;
    let make = |s: f64, k: f64| SubsystemGains { state_scale: s, output_scale: k * s / half, ..base };
    Ok([make(s1, k1), make(s2, k2), make(s3, k3), make(s4, k4)])
}

/// Designs gains for every actuator of `model`, using the diagonal of the
/// stroke-space mass matrix at `q` as reflected mass.
pub fn design_controller(
    model: &ChainModel,
    actuators: &[EmlaParams],
    q: &[f64],
    bw: &Bandwidths,
    base: SubsystemGains,
) -> Result<ControllerConfig> {
    let n = model.n_joints();
    if actuators.len() != n || q.len() != n {
        return Err(Error::invalid("actuators", format!("expected {n} actuators and strokes")));
    }
    let zero = vec![0.0; n];
    let h = rnea(model, q, &zero, &zero)?.f_x;
    let mut joints = Vec::with_capacity(n);
    for (i, a) in actuators.iter().enumerate() {
        let mut e = zero.clone();
        e[i] = 1.0;
        let m_ii = rnea(model, q, &zero, &e)?.f_x[i] - h[i];
        joints.push(design_gains(a, m_ii.max(0.0), bw, base)?);
    }
    Ok(ControllerConfig { joints, phi_star: 0.0 })
}

/// Tracking error Q_ν; the velocity subsystem subtracts the virtual control κ₁.
pub fn tracking_transform(nu: usize, x: f64, x_ref: f64, kappa_prev: f64) -> f64 {
    if nu == 2 {
        x - x_ref - kappa_prev
    } else {
        x - x_ref
    }
}

/// κ = −½ (δ + ε φ̂) Q̄ in normalized units.
pub fn control_law(g: &SubsystemGains, phi_hat: f64, q_norm: f64) -> f64 {
    -0.5 * (g.delta + g.epsilon * phi_hat) * q_norm
}

/// Integrates φ̂̇ = −kσφ̂ + ½εk|Q̄|² over `dt` with Q̄ held constant.
pub fn adaptive_update(g: &SubsystemGains, phi_hat: f64, q_norm: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let rate = g.k * g.sigma;
    let target = g.epsilon * q_norm * q_norm / (2.0 * g.sigma);
    let decay = (-rate * dt).exp();
    Ok(target + (phi_hat - target) * decay)
}

/// Additive load disturbance, plant parameter spread and sensor noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceProfile {
    /// Standard deviation of the band-limited load noise as a fraction of the
    /// peak reference force of each joint.
    pub load_noise: f64,
    /// Corner frequency of the load noise (Hz).
    pub load_noise_bandwidth: f64,
    /// Optional load step per joint (N) applied from `step_time`.
    pub step_force: Vec<f64>,
    pub step_time: f64,
    /// Relative spread of the plant parameters, drawn uniformly in ±spread.
    pub parameter_spread: f64,
    /// Measurement noise standard deviations for stroke (m), velocity (m/s)
    /// and currents (A).
    pub sensor_noise: [f64; 3],
    pub seed: u64,
}

impl Default for DisturbanceProfile {
    fn default() -> Self {
        DisturbanceProfile {
            load_noise: 0.02,
            load_noise_bandwidth: 5.0,
            step_force: vec![],
            step_time: 0.0,
            parameter_spread: 0.05,
            sensor_noise: [0.0; 3],
            seed: 0,
        }
    }
}

impl DisturbanceProfile {
    /// Nominal plant without disturbances.
    pub fn none() -> Self {
        DisturbanceProfile { load_noise: 0.0, parameter_spread: 0.0, ..Default::default() }
    }

    pub fn validate(&self, n_joints: usize) -> Result<()> {
        if !(self.load_noise >= 0.0 && self.load_noise.is_finite()) {
            return Err(Error::invalid("load_noise", "must be finite and non-negative"));
        }
        if !(self.load_noise_bandwidth > 0.0 && self.load_noise_bandwidth.is_finite()) {
            return Err(Error::invalid("load_noise_bandwidth", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.parameter_spread) {
            return Err(Error::invalid("parameter_spread", "must lie in [0, 1)"));
        }
        if self.sensor_noise.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::invalid("sensor_noise", "must be finite and non-negative"));
        }
        if !self.step_force.is_empty() && self.step_force.len() != n_joints {
            return Err(Error::invalid("step_force", format!("expected {n_joints} entries")));
        }
        if self.step_force.iter().any(|f| !f.is_finite()) || !self.step_time.is_finite() {
            return Err(Error::NonFinite("step disturbance".into()));
        }
        Ok(())
    }
}

/// Controller configuration for all actuators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub joints: Vec<ActuatorGains>,
    /// Assumed value φ* used by the Lyapunov audit.
    #[serde(default)]
    pub phi_star: f64,
}

impl ControllerConfig {
    pub fn validate(&self, n_joints: usize) -> Result<()> {
        if self.joints.len() != n_joints {
            return Err(Error::invalid("gains", format!("expected {n_joints} actuators, got {}", self.joints.len())));
        }
        for g in self.joints.iter().flatten() {
            g.validate()?;
        }
        if !self.phi_star.is_finite() {
            return Err(Error::NonFinite("phi_star".into()));
        }
        Ok(())
    }

    /// ζ = min over all subsystems of δ and kσ.
    pub fn zeta(&self) -> f64 {
        self.joints
            .iter()
            .flatten()
            .map(|g| g.delta.min(g.k * g.sigma))
            .fold(f64::INFINITY, f64::min)
    }
}
