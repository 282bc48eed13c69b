use nalgebra::{Matrix4, Matrix4x2, Vector4};

use super::{electromagnetic_torque, EmlaState, EquivalentParams, OperatingPoint, PmsmParams};
use crate::error::{Error, Result};

/// Right-hand side of the coupled mechanical and electrical ODE.
///
/// `u = (V_q, V_d)`, `f_x` is the load force on the screw.
pub fn state_derivative(
    params: &PmsmParams,
    eq: &EquivalentParams,
    x: &[f64; 4],
    u: (f64, f64),
    f_x: f64,
) -> [f64; 4] {
    let [theta, omega, i_q, i_d] = *x;
    let p = params.p();
    let tau = electromagnetic_torque(params, i_d, i_q);
    let domega = (tau - eq.b_eq * omega - eq.k_eq * theta - eq.f_eq * f_x) / eq.j_eq;
    let diq = (u.0
        - params.stator_resistance * i_q
        - p * omega * params.inductance_d * i_d
        - p * omega * params.pm_flux)
        / params.inductance_q;
    let did = (u.1 - params.stator_resistance * i_d + p * omega * params.inductance_q * i_q)
        / params.inductance_d;
    [omega, domega, diq, did]
}

/// One classical fourth-order Runge–Kutta step of `dx/dt = f(x)`.
pub fn rk4_step<const N: usize>(f: impl Fn(&[f64; N]) -> [f64; N], x: &[f64; N], dt: f64) -> [f64; N] {
    let add = |a: &[f64; N], k: &[f64; N], h: f64| {
        let mut out = *a;
        for i in 0..N {
            out[i] += h * k[i];
        }
        out
    };
    let k1 = f(x);
    let k2 = f(&add(x, &k1, 0.5 * dt));
    let k3 = f(&add(x, &k2, 0.5 * dt));
    let k4 = f(&add(x, &k3, dt));
    let mut out = *x;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Advances the actuator state by `dt` with voltages and load held constant.
pub fn step_dynamics(
    params: &PmsmParams,
    eq: &EquivalentParams,
    state: &EmlaState,
    u: (f64, f64),
    f_x: f64,
    dt: f64,
) -> Result<EmlaState> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    if !state.is_finite() || !u.0.is_finite() || !u.1.is_finite() || !f_x.is_finite() {
        return Err(Error::NonFinite("actuator state or input".into()));
    }
    let x = rk4_step(|x| state_derivative(params, eq, x, u, f_x), &state.to_array(), dt);
    let next = EmlaState::from_array(x);
    if !next.is_finite() {
        return Err(Error::NonFinite("actuator state after step".into()));
    }
    Ok(next)
}

/// Kinetic, spring and magnetic energy stored in the actuator.
pub fn stored_energy(params: &PmsmParams, eq: &EquivalentParams, state: &EmlaState) -> f64 {
    0.5 * eq.j_eq * state.omega_m * state.omega_m
        + 0.5 * eq.k_eq * state.theta_m * state.theta_m
        + 0.75 * (params.inductance_d * state.i_d * state.i_d + params.inductance_q * state.i_q * state.i_q)
}

/// Affine model `ẋ ≈ A x + B u + r` with x = [θ_m, ω_m, i_q, i_d], u = [V_q, V_d].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    pub a: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
    pub r: Vector4<f64>,
}

/// Linearizes the bilinear products ω·i_q, ω·i_d and i_q·i_d about `op`.
pub fn linearize(
    params: &PmsmParams,
    eq: &EquivalentParams,
    op: &OperatingPoint,
    f_x: f64,
) -> LinearModel {
    let p = params.p();
    let alpha = params.alpha();
    let dl = params.delta_l();
    let beta = 2.0 * eq.j_eq / (3.0 * p);
    let (x2, x3, x4) = (op.omega0, op.iq0, op.id0);
    let ld = params.inductance_d;
    let lq = params.inductance_q;
    let rs = params.stator_resistance;
    let psi = params.pm_flux;

    #[rustfmt::skip]
    let a = Matrix4::new(
        0.0, 1.0, 0.0, 0.0,
        -eq.k_eq / eq.j_eq, -eq.b_eq / eq.j_eq, (dl * x4 + psi) / beta, dl * x3 / beta,
        0.0, -(p * alpha * x4 + p * psi / lq), -rs / lq, -p * alpha * x2,
        0.0, p / alpha * x3, p / alpha * x2, -rs / ld,
    );
    #[rustfmt::skip]
    let b = Matrix4x2::new(
        0.0, 0.0,
        0.0, 0.0,
        1.0 / lq, 0.0,
        0.0, 1.0 / ld,
    );
    let r = Vector4::new(
        0.0,
        -dl / beta * x3 * x4 - eq.f_eq * f_x / eq.j_eq,
        p * alpha * x2 * x4,
        -p / alpha * x2 * x3,
    );
    LinearModel { a, b, r }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuator::{equivalent_params, DriveTrainParams};
    use approx::assert_relative_eq;

    fn motor() -> PmsmParams {
        PmsmParams {
            stator_resistance: 0.25,
            inductance_d: 1.5e-3,
            inductance_q: 2.1e-3,
            pole_pairs: 4,
            pm_flux: 0.11,
        }
    }

    fn eqp() -> EquivalentParams {
        equivalent_params(&DriveTrainParams {
            motor_inertia: 1.2e-3,
            coupling_inertia: 1e-4,
            gearbox_inertia: 2e-4,
            screw_mass: 3.0,
            load_mass: 20.0,
            viscous_motor: 1e-3,
            gear_friction: 1e-4,
            screw_viscous: 10.0,
            coupling_stiffness: 1e4,
            gear_stiffness: 2e4,
            k_bearing: 2e8,
            k_screw: 3e8,
            k_nut: 4e8,
            k_tube: 5e8,
            gear_ratio: 4.0,
            screw_lead: 0.01,
        })
    }

    #[test]
    fn equilibrium_is_preserved() {
        let s = step_dynamics(&motor(), &eqp(), &EmlaState::default(), (0.0, 0.0), 0.0, 1e-4).unwrap();
        assert_eq!(s, EmlaState::default());
    }

    #[test]
    fn rejects_non_finite_and_bad_step() {
        let bad = EmlaState { theta_m: f64::NAN, ..EmlaState::default() };
        assert!(step_dynamics(&motor(), &eqp(), &bad, (0.0, 0.0), 0.0, 1e-4).is_err());
        assert!(step_dynamics(&motor(), &eqp(), &EmlaState::default(), (0.0, 0.0), 0.0, 0.0).is_err());
    }

    #[test]
    fn zero_operating_point() {
        let e = eqp();
        let lm = linearize(&motor(), &e, &OperatingPoint::default(), 500.0);
        assert_eq!(lm.a[(2, 3)], 0.0);
        assert_eq!(lm.a[(3, 2)], 0.0);
        assert_eq!(lm.a[(3, 1)], 0.0);
        assert_eq!(lm.a[(1, 3)], 0.0);
        assert_eq!(lm.r, Vector4::new(0.0, -e.f_eq * 500.0 / e.j_eq, 0.0, 0.0));
        assert_eq!(lm.b[(2, 0)], 1.0 / 2.1e-3);
        assert_eq!(lm.b[(3, 1)], 1.0 / 1.5e-3);
    }

    #[test]
    fn affine_model_reproduces_field_at_operating_point() {
        let m = motor();
        let e = eqp();
        let op = OperatingPoint { omega0: 120.0, iq0: 14.0, id0: -3.0 };
        let x = [0.4, op.omega0, op.iq0, op.id0];
        let u = (40.0, -12.0);
        let lm = linearize(&m, &e, &op, 2000.0);
        let lin = lm.a * Vector4::from(x) + lm.b * nalgebra::Vector2::new(u.0, u.1) + lm.r;
        let f = state_derivative(&m, &e, &x, u, 2000.0);
        for i in 0..4 {
            assert_relative_eq!(lin[i], f[i], max_relative = 1e-12, epsilon = 1e-9);
        }
    }

    #[test]
    fn fourth_order_convergence() {
        let m = motor();
        let e = eqp();
        let run = |dt: f64| {
            let n = (0.02 / dt).round() as usize;
            let mut s = EmlaState { theta_m: 0.0, omega_m: 10.0, i_q: 5.0, i_d: 0.0 };
            for _ in 0..n {
                s = step_dynamics(&m, &e, &s, (30.0, -2.0), 800.0, dt).unwrap();
            }
            s.to_array()
        };
        let a = run(2e-4);
        let b = run(1e-4);
        let c = run(5e-5);
        let e1 = (0..4).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max);
        let e2 = (0..4).map(|i| (b[i] - c[i]).abs()).fold(0.0, f64::max);
        let order = (e1 / e2).log2();
        assert!(order > 3.7 && order < 4.3, "observed order {order}");
    }
}
