use std::ffi::{CStr, CString};
use std::ptr;

use emla_core::actuator::map_cell;
use emla_core::manipulator::rnea;
use emla_core::presets;
use emla_ffi::*;

fn last_error() -> String {
    let n = emla_last_error_length();
    let mut buf = vec![0 as std::ffi::c_char; n.max(1)];
    assert_eq!(unsafe { emla_last_error_message(buf.as_mut_ptr(), buf.len()) }, EmlaStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn actuator_efficiency_matches_core() {
    let name = CString::new("lift").unwrap();
    let mut a = ptr::null_mut();
    assert_eq!(unsafe { emla_actuator_preset(name.as_ptr(), &mut a) }, EmlaStatus::Ok);
    let (mut eta, mut ok) = (0.0, false);
    assert_eq!(unsafe { emla_actuator_efficiency(a, 30000.0, 0.05, &mut eta, &mut ok) }, EmlaStatus::Ok);
    let cell = map_cell(&presets::lift_emla(), 30000.0, 0.05).unwrap();
    assert!(ok);
    assert_eq!(Some(eta), cell.eta);

    let mut m = ptr::null_mut();
    assert_eq!(unsafe { emla_map_build(a, &mut m) }, EmlaStatus::Ok);
    let mut inside = false;
    assert_eq!(unsafe { emla_map_interpolate(m, 30000.0, 0.05, &mut eta, &mut inside) }, EmlaStatus::Ok);
    assert!(inside && eta > 0.0 && eta < 1.0);
    assert_eq!(unsafe { emla_map_interpolate(m, 1e7, 0.05, &mut eta, &mut inside) }, EmlaStatus::Ok);
    assert!(!inside);
    let mut thr = 0.0;
    assert_eq!(unsafe { emla_map_top_quartile_threshold(m, &mut thr) }, EmlaStatus::Ok);
    assert!(thr > 0.0);
    unsafe {
        emla_map_free(m);
        emla_actuator_free(a);
    }
}

#[test]
fn stepping_moves_the_state() {
    let name = CString::new("tilt").unwrap();
    let mut a = ptr::null_mut();
    assert_eq!(unsafe { emla_actuator_preset(name.as_ptr(), &mut a) }, EmlaStatus::Ok);
    let mut x = [0.0; 4];
    assert_eq!(unsafe { emla_actuator_step(a, x.as_mut_ptr(), 10.0, 0.0, 0.0, 1e-4) }, EmlaStatus::Ok);
    assert!(x[2] > 0.0);
    assert_eq!(unsafe { emla_actuator_step(a, x.as_mut_ptr(), 10.0, 0.0, 0.0, -1.0) }, EmlaStatus::InvalidArgument);
    assert!(last_error().contains("dt"));
    unsafe { emla_actuator_free(a) };
}

#[test]
fn inverse_dynamics_matches_core() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { emla_manipulator_default(&mut m) }, EmlaStatus::Ok);
    assert_eq!(unsafe { emla_manipulator_joint_count(m) }, 3);
    let (q, qd, qdd) = ([0.2, 0.2, 0.3], [0.05, -0.02, 0.1], [0.1, 0.0, -0.2]);
    let mut f = [0.0; 3];
    assert_eq!(
        unsafe { emla_manipulator_inverse_dynamics(m, 3, q.as_ptr(), qd.as_ptr(), qdd.as_ptr(), f.as_mut_ptr()) },
        EmlaStatus::Ok
    );
    let want = rnea(&presets::default_manipulator(), &q, &qd, &qdd).unwrap().f_x;
    assert_eq!(f.to_vec(), want);
    assert_eq!(
        unsafe { emla_manipulator_inverse_dynamics(m, 2, q.as_ptr(), qd.as_ptr(), qdd.as_ptr(), f.as_mut_ptr()) },
        EmlaStatus::InvalidArgument
    );
    let bad = [5.0, 0.2, 0.3];
    assert_eq!(
        unsafe { emla_manipulator_inverse_dynamics(m, 3, bad.as_ptr(), qd.as_ptr(), qdd.as_ptr(), f.as_mut_ptr()) },
        EmlaStatus::Infeasible
    );
    unsafe { emla_manipulator_free(m) };
}

#[test]
fn null_and_parse_errors() {
    let mut a = ptr::null_mut();
    assert_eq!(unsafe { emla_actuator_preset(ptr::null(), &mut a) }, EmlaStatus::NullPointer);
    let bad = CString::new("{\"name\": 3}").unwrap();
    assert_eq!(unsafe { emla_actuator_from_json(bad.as_ptr(), &mut a) }, EmlaStatus::Parse);
    assert!(last_error().contains("name"));
    let unknown = CString::new("crane").unwrap();
    assert_eq!(unsafe { emla_actuator_preset(unknown.as_ptr(), &mut a) }, EmlaStatus::InvalidArgument);
    let mut eta = 0.0;
    let mut ok = false;
    assert_eq!(unsafe { emla_actuator_efficiency(ptr::null(), 1.0, 1.0, &mut eta, &mut ok) }, EmlaStatus::NullPointer);
    let mut tiny = [0 as std::ffi::c_char; 2];
    assert_eq!(unsafe { emla_last_error_message(tiny.as_mut_ptr(), 2) }, EmlaStatus::BufferTooSmall);
    unsafe {
        emla_actuator_free(ptr::null_mut());
        emla_map_free(ptr::null_mut());
        emla_manipulator_free(ptr::null_mut());
        emla_string_free(ptr::null_mut());
    }
}

#[test]
fn json_round_trip() {
    let json = CString::new(serde_json::to_string(&presets::telescope_emla()).unwrap()).unwrap();
    let mut a = ptr::null_mut();
    assert_eq!(unsafe { emla_actuator_from_json(json.as_ptr(), &mut a) }, EmlaStatus::Ok);
    assert_eq!(emla_last_error_length(), 0);
    unsafe { emla_actuator_free(a) };
    let spec = CString::new(serde_json::to_string(&presets::default_manipulator_spec()).unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { emla_manipulator_from_json(spec.as_ptr(), &mut m) }, EmlaStatus::Ok);
    unsafe { emla_manipulator_free(m) };
}

#[test]
fn trajectory_solve_returns_json() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { emla_manipulator_default(&mut m) }, EmlaStatus::Ok);
    let mut p = presets::default_task();
    p.spline.n_ctrl = 6;
    p.spline.m = 12;
    let json = CString::new(serde_json::to_string(&p).unwrap()).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { emla_trajopt_solve(m, json.as_ptr(), &mut out) }, EmlaStatus::Ok);
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["t"].as_array().unwrap().len(), 13);
    unsafe {
        emla_string_free(out);
        emla_manipulator_free(m);
    }
    assert!(!unsafe { CStr::from_ptr(emla_version()) }.to_str().unwrap().is_empty());
}
