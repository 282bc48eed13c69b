use std::f64::consts::PI;

use super::{EmlaState, PmsmParams};

const SHIFT: f64 = 2.0 * PI / 3.0;

/// Park transform of phase quantities into (d, q, 0) at electrical angle `theta`.
pub fn park_transform(abc: [f64; 3], theta: f64) -> [f64; 3] {
    let angles = [theta, theta - SHIFT, theta + SHIFT];
    let mut d = 0.0;
    let mut q = 0.0;
    let mut z = 0.0;
    for (v, a) in abc.iter().zip(angles) {
        d += a.cos() * v;
        q -= a.sin() * v;
        z += 0.5 * v;
    }
    [2.0 / 3.0 * d, 2.0 / 3.0 * q, 2.0 / 3.0 * z]
}

/// Inverse of [`park_transform`].
pub fn inverse_park_transform(dq0: [f64; 3], theta: f64) -> [f64; 3] {
    let angles = [theta, theta - SHIFT, theta + SHIFT];
    angles.map(|a| a.cos() * dq0[0] - a.sin() * dq0[1] + dq0[2])
}

/// dq stator voltages `(V_d, V_q)` for a state and given current derivatives.
pub fn dq_voltage_residual(
    params: &PmsmParams,
    state: &EmlaState,
    di_d_dt: f64,
    di_q_dt: f64,
) -> (f64, f64) {
    let p = params.p();
    let w = state.omega_m;
    let v_d = params.stator_resistance * state.i_d + params.inductance_d * di_d_dt
        - p * w * params.inductance_q * state.i_q;
    let v_q = params.stator_resistance * state.i_q
        + params.inductance_q * di_q_dt
        + p * w * state.i_d * params.inductance_d
        + p * w * params.pm_flux;
    (v_d, v_q)
}

/// Current derivatives `(di_d/dt, di_q/dt)` that produce the given voltages.
pub fn current_derivatives(params: &PmsmParams, state: &EmlaState, v_d: f64, v_q: f64) -> (f64, f64) {
    let (vd0, vq0) = dq_voltage_residual(params, state, 0.0, 0.0);
    ((v_d - vd0) / params.inductance_d, (v_q - vq0) / params.inductance_q)
}

/// Electromagnetic torque τ_m = 1.5·p·i_q·(Ψ_PM + (L_d − L_q)·i_d).
pub fn electromagnetic_torque(params: &PmsmParams, i_d: f64, i_q: f64) -> f64 {
    1.5 * params.p() * i_q * (params.pm_flux + params.delta_l() * i_d)
}

/// q-axis current giving `torque` at the specified d-axis current.
pub fn q_current_for_torque(params: &PmsmParams, torque: f64, i_d: f64) -> f64 {
    torque / (1.5 * params.p() * (params.pm_flux + params.delta_l() * i_d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn motor() -> PmsmParams {
        PmsmParams {
            stator_resistance: 0.4,
            inductance_d: 2.0e-3,
            inductance_q: 3.0e-3,
            pole_pairs: 3,
            pm_flux: 0.2,
        }
    }

    #[test]
    fn balanced_set_maps_to_d_axis() {
        let th: f64 = 0.0;
        let v = [th.cos(), (th - SHIFT).cos(), (th + SHIFT).cos()];
        let dq0 = park_transform(v, th);
        assert_abs_diff_eq!(dq0[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dq0[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dq0[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn common_mode_is_zero_sequence() {
        let dq0 = park_transform([2.5; 3], 1.1);
        assert_abs_diff_eq!(dq0[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(dq0[1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(dq0[2], 2.5, epsilon = 1e-14);
    }

    #[test]
    fn park_matches_matrix_product() {
        let th: f64 = 0.7;
        let v = [0.3, -1.2, 2.2];
        let t = [
            [th.cos(), (th - 2.0 * PI / 3.0).cos(), (th + 2.0 * PI / 3.0).cos()],
            [-th.sin(), -(th - 2.0 * PI / 3.0).sin(), -(th + 2.0 * PI / 3.0).sin()],
            [0.5, 0.5, 0.5],
        ];
        let got = park_transform(v, th);
        for r in 0..3 {
            let want = 2.0 / 3.0 * (t[r][0] * v[0] + t[r][1] * v[1] + t[r][2] * v[2]);
            assert_abs_diff_eq!(got[r], want, epsilon = 1e-14);
        }
    }

    #[test]
    fn steady_state_voltages() {
        let m = motor();
        let s = EmlaState { theta_m: 0.0, omega_m: 50.0, i_q: 12.0, i_d: 0.0 };
        let (vd, vq) = dq_voltage_residual(&m, &s, 0.0, 0.0);
        assert_abs_diff_eq!(vd, -3.0 * 50.0 * 3.0e-3 * 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vq, 0.4 * 12.0 + 3.0 * 50.0 * 0.2, epsilon = 1e-12);
        let zero = dq_voltage_residual(&m, &EmlaState::default(), 0.0, 0.0);
        assert_eq!(zero, (0.0, 0.0));
    }

    #[test]
    fn voltage_terms_match_hand_derivation() {
        let m = motor();
        let s = EmlaState { theta_m: 0.3, omega_m: -17.0, i_q: 4.5, i_d: -2.5 };
        let (did, diq) = (130.0, -75.0);
        let (vd, vq) = dq_voltage_residual(&m, &s, did, diq);
        let vd_ref = 0.4 * -2.5 + 2.0e-3 * 130.0 - 3.0 * -17.0 * 3.0e-3 * 4.5;
        let vq_ref = 0.4 * 4.5 + 3.0e-3 * -75.0 + 3.0 * -17.0 * -2.5 * 2.0e-3 + 3.0 * -17.0 * 0.2;
        assert_abs_diff_eq!(vd, vd_ref, epsilon = 1e-12);
        assert_abs_diff_eq!(vq, vq_ref, epsilon = 1e-12);
        let (d1, q1) = current_derivatives(&m, &s, vd, vq);
        assert_abs_diff_eq!(d1, did, epsilon = 1e-9);
        assert_abs_diff_eq!(q1, diq, epsilon = 1e-9);
    }

    #[test]
    fn torque_hand_value() {
        let m = PmsmParams {
            stator_resistance: 0.1,
            inductance_d: 2.0e-3,
            inductance_q: 3.0e-3,
            pole_pairs: 3,
            pm_flux: 0.2,
        };
        assert_abs_diff_eq!(electromagnetic_torque(&m, -10.0, 20.0), 18.9, epsilon = 1e-12);
        assert_eq!(electromagnetic_torque(&m, 5.0, 0.0), 0.0);
    }

    #[test]
    fn torque_without_saliency_ignores_id() {
        let mut m = motor();
        m.inductance_q = m.inductance_d;
        let t = electromagnetic_torque(&m, 37.0, 2.0);
        assert_eq!(t, 1.5 * 3.0 * 0.2 * 2.0);
    }

    #[test]
    fn torque_inversion() {
        let m = motor();
        let iq = q_current_for_torque(&m, 7.3, 0.0);
        assert_abs_diff_eq!(electromagnetic_torque(&m, 0.0, iq), 7.3, epsilon = 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn park_round_trip(a in -100.0..100.0f64, b in -100.0..100.0f64, c in -100.0..100.0f64, th in -10.0..10.0f64) {
            let back = inverse_park_transform(park_transform([a, b, c], th), th);
            for (x, y) in back.iter().zip([a, b, c]) {
                proptest::prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }
}
