use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use dimless_mpc_ffi::*;

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name).display().to_string()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(dm_last_error()) }.to_str().unwrap().to_string()
}

fn load(name: &str) -> *mut DmSystem {
    let json = CString::new(std::fs::read_to_string(data(name)).unwrap()).unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { dm_system_from_json(json.as_ptr(), &mut sys) }, DmStatus::Ok);
    sys
}

fn pi_values(sys: *const DmSystem) -> Vec<f64> {
    let mut n = 0;
    unsafe {
        assert_eq!(dm_system_pi_count(sys, &mut n), DmStatus::Ok);
        let mut v = vec![0.0; n];
        assert_eq!(dm_system_pi_values(sys, v.as_mut_ptr(), n), DmStatus::Ok);
        v
    }
}

#[test]
fn version_matches_the_package() {
    let v = unsafe { CStr::from_ptr(dm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn groups_and_matching_round_trip() {
    let reference = load("cartpole.json");
    let groups = pi_values(reference);
    assert_eq!(groups.len(), 2);
    assert!((groups[0] - 0.1).abs() < 1e-15);

    let name = CString::new("l").unwrap();
    let names = [name.as_ptr()];
    let mut small = ptr::null_mut();
    let status = unsafe { dm_system_match(reference, names.as_ptr(), [0.1].as_ptr(), 1, &mut small) };
    assert_eq!(status, DmStatus::Ok, "{}", last_error());
    let mut d = f64::NAN;
    assert_eq!(unsafe { dm_system_pi_distance(reference, small, &mut d) }, DmStatus::Ok);
    assert!(d < 1e-12);

    let mut needed = 0;
    let status = unsafe { dm_system_to_json(small, ptr::null_mut(), 0, &mut needed) };
    assert_eq!(status, DmStatus::BufferTooSmall);
    let mut buf = vec![0 as c_char; needed];
    assert_eq!(unsafe { dm_system_to_json(small, buf.as_mut_ptr(), needed, &mut needed) }, DmStatus::Ok);
    let json = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string();
    let copy = CString::new(json).unwrap();
    let mut again = ptr::null_mut();
    assert_eq!(unsafe { dm_system_from_json(copy.as_ptr(), &mut again) }, DmStatus::Ok);
    assert_eq!(pi_values(again), pi_values(small));

    unsafe {
        dm_system_free(again);
        dm_system_free(small);
        dm_system_free(reference);
    }
}

#[test]
fn failures_report_status_and_message() {
    let bad = CString::new("{\"dimensions\": [").unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { dm_system_from_json(bad.as_ptr(), &mut sys) }, DmStatus::Parse);
    assert!(sys.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { dm_system_from_json(ptr::null(), &mut sys) }, DmStatus::NullArgument);
    let mut n = 0;
    assert_eq!(unsafe { dm_system_pi_count(ptr::null(), &mut n) }, DmStatus::NullArgument);

    let cart = load("cartpole.json");
    let race = load("race_car.json");
    let mut d = 0.0;
    assert_eq!(unsafe { dm_system_pi_distance(cart, race, &mut d) }, DmStatus::Dissimilar);
    let mut short = [0.0; 1];
    assert_eq!(unsafe { dm_system_pi_values(cart, short.as_mut_ptr(), 1) }, DmStatus::BufferTooSmall);
    assert_eq!(unsafe { dm_system_pi_count(cart, &mut n) }, DmStatus::Ok);
    assert!(last_error().is_empty());
    unsafe {
        dm_system_free(cart);
        dm_system_free(race);
    }
}

#[test]
fn controller_steps_from_a_task_file() {
    let path = CString::new(data("cartpole_task.json")).unwrap();
    let weights = [640.0, 1000.0, 0.0785, 0.1226, 0.9624];
    let mut c = ptr::null_mut();
    let status = unsafe { dm_controller_from_task_file(path.as_ptr(), weights.as_ptr(), weights.len(), &mut c) };
    assert_eq!(status, DmStatus::Ok, "{}", last_error());
    let (mut nx, mut nu) = (0, 0);
    unsafe {
        assert_eq!(dm_controller_n_states(c, &mut nx), DmStatus::Ok);
        assert_eq!(dm_controller_n_inputs(c, &mut nu), DmStatus::Ok);
    }
    assert_eq!((nx, nu), (4, 1));
    let mut u = [f64::NAN];
    let state = [0.0; 4];
    assert_eq!(unsafe { dm_controller_step(c, state.as_ptr(), 4, u.as_mut_ptr(), 1) }, DmStatus::Ok);
    assert!(u[0].is_finite());
    assert_eq!(unsafe { dm_controller_step(c, state.as_ptr(), 3, u.as_mut_ptr(), 1) }, DmStatus::Config);
    assert_eq!(unsafe { dm_controller_reset(c) }, DmStatus::Ok);
    unsafe { dm_controller_free(c) };

    let zero = [1.0, 1.0, 0.1, 0.1, 0.0];
    let mut bad = ptr::null_mut();
    let status = unsafe { dm_controller_from_task_file(path.as_ptr(), zero.as_ptr(), zero.len(), &mut bad) };
    assert_eq!(status, DmStatus::Config);
    assert!(bad.is_null());
}
