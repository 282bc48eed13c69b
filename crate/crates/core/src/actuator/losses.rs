use serde::{Deserialize, Serialize};

use super::{equivalent_params, DriveConfig, DriveTrainParams, EmlaState, PmsmParams};
use crate::error::{Error, Result};

/// Power loss components in W.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub p_sw: f64,
    pub p_d: f64,
    pub p_cu: f64,
    pub p_co: f64,
    pub p_hys: f64,
    pub p_eddy: f64,
    pub p_add: f64,
    pub p_mech: f64,
    pub p_sc: f64,
    /// Electric to electromagnetic conversion losses.
    pub p_ee: f64,
    /// Electromagnetic to mechanical conversion losses.
    pub p_em: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.p_ee + self.p_em
    }
}

/// Evaluates every loss source at a given electrical state and load point.
///
/// Core losses use the stator flux linkage magnitude
/// `Ψ = |(Ψ_PM + L_d i_d, L_q i_q)|` and the electrical speed `ω_e = p ω_m`.
pub fn loss_breakdown(
    params: &PmsmParams,
    drivetrain: &DriveTrainParams,
    drive: &DriveConfig,
    state: &EmlaState,
    f_x: f64,
    v_x: f64,
) -> Result<LossBreakdown> {
    drive.validate()?;
    if params.stator_resistance < 0.0 {
        return Err(Error::invalid("stator_resistance", "negative resistance"));
    }
    for (what, v) in [
        ("viscous_motor", drivetrain.viscous_motor),
        ("gear_friction", drivetrain.gear_friction),
        ("screw_viscous", drivetrain.screw_viscous),
    ] {
        if v < 0.0 {
            return Err(Error::invalid(what, "negative friction"));
        }
    }
    let t = drive.terms;
    let on = |flag: bool, v: f64| if flag { v } else { 0.0 };

    let i2 = state.i_d * state.i_d + state.i_q * state.i_q;
    let i_abs = i2.sqrt();
    let w_e = (params.p() * state.omega_m).abs();
    let psi_d = params.pm_flux + params.inductance_d * state.i_d;
    let psi_q = params.inductance_q * state.i_q;
    let psi2 = psi_d * psi_d + psi_q * psi_q;

    let p_cu = on(t.copper, 1.5 * params.stator_resistance * i2);
    let p_hys = on(t.hysteresis, drive.k_hys * w_e * psi2);
    let p_eddy = on(t.eddy, drive.k_eddy * w_e * w_e * psi2);
    let p_add = on(t.additional, drive.k_add * w_e.powf(1.5) * psi2);
    let p_co = p_hys + p_eddy + p_add;
    let p_sw = on(t.switching, drive.k_sw * drive.f_sw * i_abs * drive.v_dc);
    let p_d = on(t.conduction, drive.v_on * i_abs + drive.r_on * i2);
    let b_eq = equivalent_params(drivetrain).b_eq;
    let p_mech = on(t.mechanical, b_eq * state.omega_m * state.omega_m);
    let p_sc = on(t.screw, (1.0 - drive.eta_screw) * (f_x * v_x).abs());

    Ok(LossBreakdown {
        p_sw,
        p_d,
        p_cu,
        p_co,
        p_hys,
        p_eddy,
        p_add,
        p_mech,
        p_sc,
        p_ee: p_sw + p_d + p_cu + p_co,
        p_em: p_mech + p_sc,
    })
}

/// Actuator efficiency for delivered power `f_x·v_x`.
///
/// With `regeneration` enabled, a negative power point returns the fraction of
/// absorbed power that is recovered, clipped at zero.
pub fn efficiency(f_x: f64, v_x: f64, losses: &LossBreakdown, regeneration: bool) -> Result<f64> {
    let p = f_x * v_x;
    let lost = losses.p_ee + losses.p_em;
    if !p.is_finite() || !lost.is_finite() {
        return Err(Error::NonFinite("efficiency inputs".into()));
    }
    if p < 0.0 {
        if !regeneration {
            return Err(Error::Domain(format!(
                "generating point f_x·v_x = {p} with regeneration disabled"
            )));
        }
        let absorbed = -p;
        return Ok(((absorbed - lost) / absorbed).clamp(0.0, 1.0));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    Ok(p / (p + lost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuator::LossTerms;
    use approx::assert_relative_eq;

    fn setup() -> (PmsmParams, DriveTrainParams, DriveConfig) {
        let m = PmsmParams {
            stator_resistance: 0.3,
            inductance_d: 2.0e-3,
            inductance_q: 2.5e-3,
            pole_pairs: 4,
            pm_flux: 0.1,
        };
        let d = DriveTrainParams {
            motor_inertia: 1e-3,
            coupling_inertia: 1e-4,
            gearbox_inertia: 1e-4,
            screw_mass: 3.0,
            load_mass: 10.0,
            viscous_motor: 1e-3,
            gear_friction: 1e-4,
            screw_viscous: 20.0,
            coupling_stiffness: 1e4,
            gear_stiffness: 1e4,
            k_bearing: 1e8,
            k_screw: 1e8,
            k_nut: 1e8,
            k_tube: 1e8,
            gear_ratio: 3.0,
            screw_lead: 0.01,
        };
        let c = DriveConfig {
            k_hys: 2.0,
            k_eddy: 0.01,
            k_add: 0.05,
            k_sw: 1e-6,
            f_sw: 1e4,
            v_dc: 560.0,
            v_on: 1.2,
            r_on: 0.02,
            eta_screw: 0.9,
            i_max: 100.0,
            v_max: 320.0,
            regeneration: false,
            terms: LossTerms::default(),
        };
        (m, d, c)
    }

    #[test]
    fn no_flow_no_loss() {
        let (m, d, c) = setup();
        let l = loss_breakdown(&m, &d, &c, &EmlaState::default(), 0.0, 0.0).unwrap();
        assert_eq!(l, LossBreakdown::default());
    }

    #[test]
    fn copper_and_mechanical_oracles() {
        let (m, d, mut c) = setup();
        c.terms = LossTerms {
            copper: true,
            mechanical: true,
            hysteresis: false,
            eddy: false,
            additional: false,
            switching: false,
            conduction: false,
            screw: false,
        };
        let s = EmlaState { theta_m: 0.0, omega_m: 40.0, i_q: 7.0, i_d: 0.0 };
        let l = loss_breakdown(&m, &d, &c, &s, 100.0, 0.5).unwrap();
        assert_relative_eq!(l.p_cu, 1.5 * 0.3 * 49.0, max_relative = 1e-14);
        let b = equivalent_params(&d).b_eq;
        assert_relative_eq!(l.p_mech, b * 1600.0, max_relative = 1e-14);
        assert_eq!(l.p_co, 0.0);
    }

    #[test]
    fn aggregates_hold() {
        let (m, d, c) = setup();
        let s = EmlaState { theta_m: 1.0, omega_m: -80.0, i_q: -11.0, i_d: 2.0 };
        let l = loss_breakdown(&m, &d, &c, &s, -900.0, -0.2).unwrap();
        assert_eq!(l.p_ee, l.p_sw + l.p_d + l.p_cu + l.p_co);
        assert_eq!(l.p_em, l.p_mech + l.p_sc);
        assert_eq!(l.p_co, l.p_hys + l.p_eddy + l.p_add);
        for v in [l.p_sw, l.p_d, l.p_cu, l.p_hys, l.p_eddy, l.p_add, l.p_mech, l.p_sc] {
            assert!(v > 0.0);
        }
    }

    #[test]
    fn rejects_negative_configuration() {
        let (m, mut d, c) = setup();
        d.viscous_motor = -1.0;
        assert!(loss_breakdown(&m, &d, &c, &EmlaState::default(), 0.0, 0.0).is_err());
        let (mut m, d, mut c) = setup();
        m.stator_resistance = -0.1;
        assert!(loss_breakdown(&m, &d, &c, &EmlaState::default(), 0.0, 0.0).is_err());
        c.k_eddy = -1.0;
        let (m, _, _) = setup();
        assert!(loss_breakdown(&m, &d, &c, &EmlaState::default(), 0.0, 0.0).is_err());
    }

    #[test]
    fn efficiency_cases() {
        let zero = LossBreakdown::default();
        assert_eq!(efficiency(10.0, 2.0, &zero, false).unwrap(), 1.0);
        let half = LossBreakdown { p_ee: 12.0, p_em: 8.0, ..zero };
        assert_eq!(efficiency(10.0, 2.0, &half, false).unwrap(), 0.5);
        assert_eq!(efficiency(0.0, 2.0, &half, false).unwrap(), 0.0);
        assert_eq!(efficiency(5.0, 0.0, &half, false).unwrap(), 0.0);
        assert!(matches!(efficiency(-10.0, 2.0, &half, false), Err(Error::Domain(_))));
        assert_eq!(efficiency(-10.0, 2.0, &half, true).unwrap(), 0.0);
        let small = LossBreakdown { p_ee: 2.0, p_em: 3.0, ..zero };
        assert_eq!(efficiency(-10.0, 2.0, &small, true).unwrap(), 0.75);
    }

    proptest::proptest! {
        #[test]
        fn efficiency_in_unit_interval(f in 0.0..1e5f64, v in 0.0..1.0f64, a in 0.0..1e4f64, b in 0.0..1e4f64) {
            let l = LossBreakdown { p_ee: a, p_em: b, ..LossBreakdown::default() };
            let e = efficiency(f, v, &l, false).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&e));
        }
    }
}
