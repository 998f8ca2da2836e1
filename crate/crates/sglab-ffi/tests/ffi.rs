use std::ffi::{CStr, CString};
use std::ptr;

use sglab_ffi::*;

fn last_error() -> String {
    let p = sglab_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn renorm_constants_match_library() {
    let (mut s, mut g) = (0.0, 0.0);
    let st = unsafe { sglab_renorm_constants(32.0, 2.0 * std::f64::consts::PI, &mut s, &mut g) };
    assert_eq!(st, SglabStatus::Ok);
    let lat = sglab::spectral_torus::FrequencyLattice::for_cutoff(32.0).unwrap();
    let expect = sglab::random_fields::compute_sigma_n(&lat, 32.0).unwrap();
    assert_eq!(s, expect);
    assert!((g - (std::f64::consts::PI * expect).exp()).abs() < 1e-12 * g);
}

#[test]
fn invalid_arguments_set_codes_and_messages() {
    let (mut s, mut g) = (0.0, 0.0);
    let st = unsafe { sglab_renorm_constants(-1.0, 1.0, &mut s, &mut g) };
    assert_eq!(st, SglabStatus::InvalidParameter);
    assert!(last_error().contains("cutoff"));
    let st = unsafe { sglab_renorm_constants(4.0, 1.0, ptr::null_mut(), &mut g) };
    assert_eq!(st, SglabStatus::NullPointer);
    let mut out = ptr::null_mut();
    let name = CString::new("no-such-experiment").unwrap();
    assert_eq!(
        unsafe { sglab_default_config(name.as_ptr(), &mut out) },
        SglabStatus::NotFound
    );
    assert!(out.is_null());
}

#[test]
fn two_point_on_diagonal_is_gamma_squared() {
    let b2 = std::f64::consts::PI;
    let (mut s, mut g) = (0.0, 0.0);
    unsafe { sglab_renorm_constants(16.0, b2, &mut s, &mut g) };
    let mut v = 0.0;
    let st = unsafe { sglab_chaos_two_point(16.0, b2, 0.5, 1.0, 2.0, 0.5, 1.0, 2.0, &mut v) };
    assert_eq!(st, SglabStatus::Ok);
    assert!((v - g * g).abs() < 1e-9 * g * g, "{v} vs {}", g * g);
}

#[test]
fn experiment_round_trip() {
    let mut names = ptr::null_mut();
    assert_eq!(unsafe { sglab_experiment_names(&mut names) }, SglabStatus::Ok);
    let list = unsafe { CStr::from_ptr(names) }.to_str().unwrap().to_owned();
    unsafe { sglab_string_free(names) };
    assert_eq!(list.lines().count(), 14);
    assert!(list.lines().any(|l| l == "sigma-scaling"));

    let cfg = CString::new(r#"{"experiment":"sigma-scaling","lattice":{"N":[16,64,256]}}"#).unwrap();
    let mut rep = ptr::null_mut();
    assert_eq!(unsafe { sglab_run_experiment(cfg.as_ptr(), 1, &mut rep) }, SglabStatus::Ok);
    let mut pass = -1;
    assert_eq!(unsafe { sglab_report_pass(rep, &mut pass) }, SglabStatus::Ok);
    assert_eq!(pass, 1);
    let mut slope = 0.0;
    let key = CString::new("slope").unwrap();
    assert_eq!(unsafe { sglab_report_metric(rep, key.as_ptr(), &mut slope) }, SglabStatus::Ok);
    assert!((slope * 2.0 * std::f64::consts::PI - 1.0).abs() < 0.05);
    let json = unsafe { CStr::from_ptr(sglab_report_json(rep)) }.to_str().unwrap();
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(v["experiment"], "sigma-scaling");
    unsafe { sglab_report_free(rep) };

    let bad = CString::new(r#"{"experiment":"sigma-scaling","bogus":1}"#).unwrap();
    let mut rep = ptr::null_mut();
    assert_eq!(
        unsafe { sglab_run_experiment(bad.as_ptr(), 0, &mut rep) },
        SglabStatus::ConfigError
    );
    assert!(last_error().contains("bogus"));
    assert!(rep.is_null());
}

#[test]
fn flow_handle_steps_and_rejects_large_dt() {
    let mut f = ptr::null_mut();
    let st = unsafe { sglab_flow_new(8.0, 2.0 * std::f64::consts::PI, 0.5, 1, 3, 0, &mut f) };
    assert_eq!(st, SglabStatus::Ok);
    let mut e0 = 0.0;
    assert_eq!(unsafe { sglab_flow_energy(f, &mut e0) }, SglabStatus::Ok);
    assert_eq!(unsafe { sglab_flow_step(f, 1e-3, 100) }, SglabStatus::Ok);
    let mut t = 0.0;
    unsafe { sglab_flow_time(f, &mut t) };
    assert!((t - 0.1).abs() < 1e-12);
    let mut e1 = 0.0;
    unsafe { sglab_flow_energy(f, &mut e1) };
    assert!((e1 - e0).abs() < 1e-2 * e0.abs(), "{e0} -> {e1}");
    let (mut re, mut im) = (0.0, 0.0);
    assert_eq!(
        unsafe { sglab_flow_coefficient(f, 1, 0, 0, &mut re, &mut im) },
        SglabStatus::Ok
    );
    assert!(re.is_finite() && im.is_finite());
    assert_eq!(
        unsafe { sglab_flow_coefficient(f, 100, 0, 0, &mut re, &mut im) },
        SglabStatus::NotFound
    );
    assert_eq!(unsafe { sglab_flow_step(f, 1.0, 1) }, SglabStatus::TimestepTooLarge);
    unsafe { sglab_flow_free(f) };
    unsafe { sglab_flow_free(ptr::null_mut()) };
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sglab.h"))
        .expect("generated header");
    for f in [
        "sglab_last_error",
        "sglab_version",
        "sglab_string_free",
        "sglab_renorm_constants",
        "sglab_chaos_two_point",
        "sglab_default_config",
        "sglab_experiment_names",
        "sglab_run_experiment",
        "sglab_report_pass",
        "sglab_report_metric_count",
        "sglab_report_metric",
        "sglab_report_json",
        "sglab_report_free",
        "sglab_flow_new",
        "sglab_flow_step",
        "sglab_flow_time",
        "sglab_flow_coefficient",
        "sglab_flow_energy",
        "sglab_flow_free",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct SglabFlow SglabFlow;"));
}
