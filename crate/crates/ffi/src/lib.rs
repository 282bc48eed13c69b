//! C ABI over `emla-core`.
//!
//! Objects are opaque handles created by `*_new`/`*_from_json`/`*_preset`
//! functions and released by the matching `*_free`. Every fallible call
//! returns an [`EmlaStatus`]; on failure a message is kept per thread and can
//! be copied out with [`emla_last_error_message`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use emla_core::actuator::{build_efficiency_map, map_cell, step_dynamics, EfficiencyMap, EmlaParams, EmlaState};
use emla_core::manipulator::{rnea, ChainModel, ManipulatorSpec};
use emla_core::trajopt::{solve_inner, NlpProblem};
use emla_core::{presets, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmlaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Domain = 4,
    NonFinite = 5,
    Infeasible = 6,
    Solver = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

impl From<&Error> for EmlaStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidParam { .. } => EmlaStatus::InvalidArgument,
            Error::Domain(_) | Error::Singular { .. } => EmlaStatus::Domain,
            Error::NonFinite(_) => EmlaStatus::NonFinite,
            Error::InfeasibleStroke { .. } => EmlaStatus::Infeasible,
            Error::Config(_) => EmlaStatus::Parse,
            Error::Io(_) => EmlaStatus::Io,
            Error::Solver(_) => EmlaStatus::Solver,
        }
    }
}

/// Actuator parameters.
pub struct EmlaActuator {
    params: EmlaParams,
}

/// Steady-state efficiency map of one actuator.
pub struct EmlaMap {
    map: EfficiencyMap,
}

/// Closed-chain manipulator model.
pub struct EmlaManipulator {
    model: ChainModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

struct Fail(EmlaStatus);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        set_error(e.to_string());
        Fail(EmlaStatus::from(&e))
    }
}

fn fail(status: EmlaStatus, msg: &str) -> Fail {
    set_error(msg);
    Fail(status)
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EmlaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EmlaStatus::Ok,
        Ok(Err(Fail(s))) => s,
        Err(_) => {
            set_error("internal panic");
            EmlaStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(EmlaStatus::NullPointer, &format!("`{what}` is null")))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(EmlaStatus::NullPointer, &format!("`{what}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(EmlaStatus::InvalidArgument, &format!("`{what}` is not UTF-8")))
}

unsafe fn out<T>(p: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(fail(EmlaStatus::NullPointer, &format!("`{what}` is null")));
    }
    p.write(v);
    Ok(())
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(fail(EmlaStatus::NullPointer, &format!("`{what}` is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn parse<T: serde::de::DeserializeOwned>(json: &str, what: &str) -> Result<T, Fail> {
    Ok(emla_core::config::parse_json(json, what)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn emla_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Bytes needed to hold the last error message including the terminator;
/// zero when the last call on this thread succeeded.
#[no_mangle]
pub extern "C" fn emla_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |s| s.as_bytes_with_nul().len()))
}

/// Copies the last error message of this thread into `buf`.
#[no_mangle]
pub unsafe extern "C" fn emla_last_error_message(buf: *mut c_char, len: usize) -> EmlaStatus {
    if buf.is_null() {
        return EmlaStatus::NullPointer;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[0u8][..], |s| s.as_bytes_with_nul());
        if bytes.len() > len {
            return EmlaStatus::BufferTooSmall;
        }
        std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, bytes.len());
        EmlaStatus::Ok
    })
}

/// Built-in actuator by name: `lift`, `tilt` or `telescope`.
#[no_mangle]
pub unsafe extern "C" fn emla_actuator_preset(name: *const c_char, actuator: *mut *mut EmlaActuator) -> EmlaStatus {
    guard(|| {
        let params = match text(name, "name")? {
            "lift" => presets::lift_emla(),
            "tilt" => presets::tilt_emla(),
            "telescope" => presets::telescope_emla(),
            other => return Err(fail(EmlaStatus::InvalidArgument, &format!("unknown actuator `{other}`"))),
        };
        out(actuator, Box::into_raw(Box::new(EmlaActuator { params })), "actuator")
    })
}

/// Actuator from its JSON description.
#[no_mangle]
pub unsafe extern "C" fn emla_actuator_from_json(json: *const c_char, actuator: *mut *mut EmlaActuator) -> EmlaStatus {
    guard(|| {
        let params: EmlaParams = parse(text(json, "json")?, "actuator")?;
        params.validate()?;
        out(actuator, Box::into_raw(Box::new(EmlaActuator { params })), "actuator")
    })
}

#[no_mangle]
pub unsafe extern "C" fn emla_actuator_free(actuator: *mut EmlaActuator) {
    if !actuator.is_null() {
        drop(Box::from_raw(actuator));
    }
}

/// Steady-state efficiency at load force `f_x` (N) and velocity `v_x` (m/s).
/// `feasible` is false beyond the current or voltage limit, and `eta` is then 0.
#[no_mangle]
pub unsafe extern "C" fn emla_actuator_efficiency(
    actuator: *const EmlaActuator,
    f_x: f64,
    v_x: f64,
    eta: *mut f64,
    feasible: *mut bool,
) -> EmlaStatus {
    guard(|| {
        let a = borrow(actuator, "actuator")?;
        let cell = map_cell(&a.params, f_x, v_x)?;
        out(eta, cell.eta.unwrap_or(0.0), "eta")?;
        out(feasible, cell.eta.is_some(), "feasible")
    })
}

/// Advances `state = [theta_m, omega_m, i_q, i_d]` in place by `dt` with
/// voltages and load force held.
#[no_mangle]
pub unsafe extern "C" fn emla_actuator_step(
    actuator: *const EmlaActuator,
    state: *mut f64,
    v_q: f64,
    v_d: f64,
    f_x: f64,
    dt: f64,
) -> EmlaStatus {
    guard(|| {
        let a = borrow(actuator, "actuator")?;
        let x: [f64; 4] = slice(state, 4, "state")?.try_into().expect("four entries");
        let next = step_dynamics(&a.params.pmsm, &a.params.equivalent(), &EmlaState::from_array(x), (v_q, v_d), f_x, dt)?;
        std::ptr::copy_nonoverlapping(next.to_array().as_ptr(), state, 4);
        Ok(())
    })
}

/// Efficiency map over the actuator's configured force and velocity axes.
#[no_mangle]
pub unsafe extern "C" fn emla_map_build(actuator: *const EmlaActuator, map: *mut *mut EmlaMap) -> EmlaStatus {
    guard(|| {
        let a = borrow(actuator, "actuator")?;
        let m = build_efficiency_map(&a.params, &a.params.map_forces, &a.params.map_velocities)?;
        out(map, Box::into_raw(Box::new(EmlaMap { map: m })), "map")
    })
}

/// Bilinear lookup at (|f_x|, |v_x|); `inside` is false outside the grid or next to an
/// infeasible cell, and `eta` is then 0.
#[no_mangle]
pub unsafe extern "C" fn emla_map_interpolate(map: *const EmlaMap, f_x: f64, v_x: f64, eta: *mut f64, inside: *mut bool) -> EmlaStatus {
    guard(|| {
        let m = borrow(map, "map")?;
        let e = m.map.interpolate(f_x, v_x);
        out(eta, e.unwrap_or(0.0), "eta")?;
        out(inside, e.is_some(), "inside")
    })
}

/// Efficiency at the lower edge of the best quarter of feasible cells.
#[no_mangle]
pub unsafe extern "C" fn emla_map_top_quartile_threshold(map: *const EmlaMap, threshold: *mut f64) -> EmlaStatus {
    guard(|| out(threshold, borrow(map, "map")?.map.top_quartile_threshold(), "threshold"))
}

#[no_mangle]
pub unsafe extern "C" fn emla_map_free(map: *mut EmlaMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Built-in three-joint manipulator.
#[no_mangle]
pub unsafe extern "C" fn emla_manipulator_default(manipulator: *mut *mut EmlaManipulator) -> EmlaStatus {
    guard(|| out(manipulator, Box::into_raw(Box::new(EmlaManipulator { model: presets::default_manipulator() })), "manipulator"))
}

/// Manipulator from its JSON description.
#[no_mangle]
pub unsafe extern "C" fn emla_manipulator_from_json(json: *const c_char, manipulator: *mut *mut EmlaManipulator) -> EmlaStatus {
    guard(|| {
        let spec: ManipulatorSpec = parse(text(json, "json")?, "manipulator")?;
        let model = ChainModel::new(spec)?;
        out(manipulator, Box::into_raw(Box::new(EmlaManipulator { model })), "manipulator")
    })
}

/// Number of actuated joints; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn emla_manipulator_joint_count(manipulator: *const EmlaManipulator) -> usize {
    manipulator.as_ref().map_or(0, |m| m.model.n_joints())
}

/// Actuator forces `f_x` (N) for strokes, stroke velocities and
/// accelerations; all arrays hold `n` entries.
#[no_mangle]
pub unsafe extern "C" fn emla_manipulator_inverse_dynamics(
    manipulator: *const EmlaManipulator,
    n: usize,
    q: *const f64,
    qd: *const f64,
    qdd: *const f64,
    f_x: *mut f64,
) -> EmlaStatus {
    guard(|| {
        let m = borrow(manipulator, "manipulator")?;
        if n != m.model.n_joints() {
            return Err(fail(EmlaStatus::InvalidArgument, &format!("expected {} joints, got {n}", m.model.n_joints())));
        }
        let r = rnea(&m.model, slice(q, n, "q")?, slice(qd, n, "qd")?, slice(qdd, n, "qdd")?)?;
        if f_x.is_null() {
            return Err(fail(EmlaStatus::NullPointer, "`f_x` is null"));
        }
        std::ptr::copy_nonoverlapping(r.f_x.as_ptr(), f_x, n);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn emla_manipulator_free(manipulator: *mut EmlaManipulator) {
    if !manipulator.is_null() {
        drop(Box::from_raw(manipulator));
    }
}

/// Solves the trajectory problem given as JSON; `result` receives the
/// trajectory JSON, to be released with [`emla_string_free`].
#[no_mangle]
pub unsafe extern "C" fn emla_trajopt_solve(
    manipulator: *const EmlaManipulator,
    problem_json: *const c_char,
    result: *mut *mut c_char,
) -> EmlaStatus {
    guard(|| {
        let m = borrow(manipulator, "manipulator")?;
        let prob: NlpProblem = parse(text(problem_json, "problem_json")?, "problem")?;
        let r = solve_inner(&m.model, &prob)?;
        let s = CString::new(serde_json::to_string(&r).expect("result serializes")).expect("JSON has no NUL");
        out(result, s.into_raw(), "result")
    })
}

#[no_mangle]
pub unsafe extern "C" fn emla_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
