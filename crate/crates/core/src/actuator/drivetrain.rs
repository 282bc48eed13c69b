use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::DriveTrainParams;

/// Lumped drivetrain constants referred to the motor shaft.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalentParams {
    pub j_eq: f64,
    pub b_eq: f64,
    pub k_eq: f64,
    /// Transmission factor ρ/(2πn) in m/rad.
    pub f_eq: f64,
    /// Series stiffness of bearing, screw, nut and tube (N/m).
    pub k_l: f64,
}

/// Ideal screw transmission: `(τ_m, ω_m)` for load force and velocity.
pub fn rotary_linear_map(dt: &DriveTrainParams, f_x: f64, v_x: f64) -> (f64, f64) {
    let k = dt.screw_lead / (2.0 * PI * dt.gear_ratio);
    (k * f_x, v_x / k)
}

/// Equivalent inertia, damping, stiffness term and transmission factor.
pub fn equivalent_params(dt: &DriveTrainParams) -> EquivalentParams {
    let n = dt.gear_ratio;
    let rho = dt.screw_lead;
    let k_l = 1.0 / (1.0 / dt.k_bearing + 1.0 / dt.k_screw + 1.0 / dt.k_nut + 1.0 / dt.k_tube);
    let j_eq = dt.motor_inertia
        + dt.coupling_inertia
        + dt.gearbox_inertia / (n * n)
        + rho * rho / (4.0 * PI * PI * n * n) * (dt.screw_mass + dt.load_mass);
    let b_eq = dt.viscous_motor + n * dt.gear_friction + n * rho / (2.0 * PI) * dt.screw_viscous;
    let g = 2.0 * PI * n / rho;
    let k_eq = 1.0 / dt.coupling_stiffness + n * n / dt.gear_stiffness + g * g / k_l;
    EquivalentParams {
        j_eq,
        b_eq,
        k_eq,
        f_eq: rho / (2.0 * PI * n),
        k_l,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn sample() -> DriveTrainParams {
        DriveTrainParams {
            motor_inertia: 1.1e-3,
            coupling_inertia: 2.0e-4,
            gearbox_inertia: 3.0e-4,
            screw_mass: 4.0,
            load_mass: 25.0,
            viscous_motor: 1.0e-3,
            gear_friction: 2.0e-4,
            screw_viscous: 30.0,
            coupling_stiffness: 2.0e4,
            gear_stiffness: 5.0e4,
            k_bearing: 4.0e8,
            k_screw: 2.0e8,
            k_nut: 5.0e8,
            k_tube: 8.0e8,
            gear_ratio: 2.5,
            screw_lead: 0.01,
        }
    }

    #[test]
    fn unit_transmission() {
        let mut d = sample();
        d.gear_ratio = 1.0;
        d.screw_lead = 2.0 * PI;
        let (t, w) = rotary_linear_map(&d, 12.5, -0.75);
        assert_relative_eq!(t, 12.5, max_relative = 1e-15);
        assert_relative_eq!(w, -0.75, max_relative = 1e-15);
        assert_eq!(rotary_linear_map(&d, 0.0, 0.0), (0.0, 0.0));
    }

    #[test]
    fn equal_linear_stiffnesses_series() {
        let mut d = sample();
        d.k_bearing = 3.0e8;
        d.k_screw = 3.0e8;
        d.k_nut = 3.0e8;
        d.k_tube = 3.0e8;
        assert_relative_eq!(equivalent_params(&d).k_l, 0.75e8, max_relative = 1e-14);
    }

    #[test]
    fn inertia_without_screw_masses() {
        let mut d = sample();
        d.gear_ratio = 1.0;
        d.screw_lead = 2.0 * PI;
        d.screw_mass = 0.0;
        d.load_mass = 0.0;
        let e = equivalent_params(&d);
        assert_relative_eq!(e.j_eq, 1.1e-3 + 2.0e-4 + 3.0e-4, max_relative = 1e-14);
    }

    #[test]
    fn term_by_term() {
        let d = sample();
        let e = equivalent_params(&d);
        let n = 2.5_f64;
        let rho = 0.01_f64;
        let kl = 1.0 / (1.0 / 4.0e8 + 1.0 / 2.0e8 + 1.0 / 5.0e8 + 1.0 / 8.0e8);
        let j = 1.1e-3 + 2.0e-4 + 3.0e-4 / 6.25 + 0.0001 / (4.0 * PI * PI * 6.25) * 29.0;
        let b = 1.0e-3 + 2.5 * 2.0e-4 + 2.5 * 0.01 / (2.0 * PI) * 30.0;
        let k = 1.0 / 2.0e4 + 6.25 / 5.0e4 + (2.0 * PI * n / rho).powi(2) / kl;
        assert_relative_eq!(e.j_eq, j, max_relative = 1e-14);
        assert_relative_eq!(e.b_eq, b, max_relative = 1e-14);
        assert_relative_eq!(e.k_eq, k, max_relative = 1e-14);
        assert_relative_eq!(e.f_eq, rho / (2.0 * PI * n), max_relative = 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn transmission_conserves_power(f in -1.0e5..1.0e5f64, v in -1.0..1.0f64, n in 0.5..20.0f64, rho in 1e-3..0.05f64) {
            let mut d = sample();
            d.gear_ratio = n;
            d.screw_lead = rho;
            let (t, w) = rotary_linear_map(&d, f, v);
            let scale = (f * v).abs().max(1e-300);
            proptest::prop_assert!((t * w - f * v).abs() <= 4.0 * f64::EPSILON * scale);
        }
    }
}
