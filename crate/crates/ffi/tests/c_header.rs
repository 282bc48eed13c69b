//! Compiles and runs a C program against the generated header and the static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "emla.h"

int main(void) {
    EmlaActuator *a = NULL;
    if (emla_actuator_preset("lift", &a) != EMLA_STATUS_OK) return 1;
    double eta = 0.0;
    bool ok = false;
    if (emla_actuator_efficiency(a, 30000.0, 0.05, &eta, &ok) != EMLA_STATUS_OK || !ok) return 2;
    emla_actuator_free(a);

    EmlaManipulator *m = NULL;
    if (emla_manipulator_default(&m) != EMLA_STATUS_OK) return 3;
    double q[3] = {0.2, 0.2, 0.3}, z[3] = {0.0, 0.0, 0.0}, f[3];
    if (emla_manipulator_inverse_dynamics(m, 3, q, z, z, f) != EMLA_STATUS_OK) return 4;
    if (emla_manipulator_inverse_dynamics(m, 2, q, z, z, f) != EMLA_STATUS_INVALID_ARGUMENT) return 5;
    char msg[256];
    if (emla_last_error_message(msg, sizeof msg) != EMLA_STATUS_OK) return 6;
    emla_manipulator_free(m);
    printf("%.12g %.12g %.12g %.12g\n", eta, f[0], f[1], f[2]);
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap().to_path_buf();
    let lib = profile_dir.join("libemla_ffi.a");
    if !lib.exists() {
        panic!("static library not found at {}", lib.display());
    }
    let tmp = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let src = tmp.join("emla_ffi_check.c");
    let bin = tmp.join("emla_ffi_check");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let vals: Vec<f64> = String::from_utf8(out.stdout).unwrap().split_whitespace().map(|s| s.parse().unwrap()).collect();
    assert_eq!(vals.len(), 4);
    assert!(vals[0] > 0.0 && vals[0] < 1.0);
    let f = emla_core::manipulator::rnea(&emla_core::presets::default_manipulator(), &[0.2, 0.2, 0.3], &[0.0; 3], &[0.0; 3])
        .unwrap()
        .f_x;
    for (a, b) in vals[1..].iter().zip(&f) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
    }
}
