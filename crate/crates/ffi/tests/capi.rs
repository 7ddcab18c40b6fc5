use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use fedagg_ffi::*;

fn last_error() -> String {
    let p = fedagg_last_error_message();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

const TINY: &str = r#"
seeds = [0, 1]
[dataset]
samples_per_client = 40
[federated]
rounds = 2
local_iters = 2
weight_steps = 2
[[strategy]]
name = "fedavg_sized"
[[strategy]]
name = "autofedavg"
parameterization = "dirichlet"
granularity = "network"
"#;

#[test]
fn run_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let text = CString::new(TINY).unwrap();
    let out_dir = CString::new(dir.path().to_str().unwrap()).unwrap();
    unsafe {
        let mut desc = ptr::null_mut();
        assert_eq!(
            fedagg_descriptor_from_str(text.as_ptr(), &mut desc),
            FedaggStatus::Ok
        );
        assert_eq!(
            fedagg_descriptor_set_output_dir(desc, out_dir.as_ptr()),
            FedaggStatus::Ok
        );
        let mut report = ptr::null_mut();
        assert_eq!(fedagg_run(desc, &mut report), FedaggStatus::Ok);
        let mut len = 0usize;
        assert_eq!(fedagg_report_len(report, &mut len), FedaggStatus::Ok);
        assert_eq!(len, 2);
        let mut label = ptr::null();
        let mut summary = FedaggSummary::default();
        assert_eq!(
            fedagg_report_summary(report, 1, &mut label, &mut summary),
            FedaggStatus::Ok
        );
        assert_eq!(
            CStr::from_ptr(label).to_str().unwrap(),
            "autofedavg_n_dirichlet"
        );
        assert_eq!(summary.runs, 2);
        assert!((0.0..=1.0).contains(&summary.global_test_avg_mean));
        assert_eq!(
            fedagg_report_summary(report, 2, &mut label, &mut summary),
            FedaggStatus::InvalidArgument
        );
        assert!(last_error().contains("out of range"));
        fedagg_report_free(report);
        fedagg_descriptor_free(desc);
    }
    assert!(dir.path().join("summary.csv").is_file());
    assert!(dir.path().join("fedavg_sized/1/rounds.csv").is_file());
}

#[test]
fn config_errors_map_to_status_codes() {
    let bad = CString::new("[federated]\nrounds = 2\ninterval = 5\n").unwrap();
    let missing = CString::new("/nonexistent/run.toml").unwrap();
    unsafe {
        let mut desc = ptr::null_mut();
        assert_eq!(
            fedagg_descriptor_from_str(bad.as_ptr(), &mut desc),
            FedaggStatus::Config
        );
        assert!(desc.is_null());
        assert!(last_error().contains("federated.interval"));
        assert_eq!(
            fedagg_descriptor_from_file(missing.as_ptr(), &mut desc),
            FedaggStatus::Io
        );
        assert_eq!(
            fedagg_descriptor_from_str(ptr::null(), &mut desc),
            FedaggStatus::NullPointer
        );
    }
}

#[test]
fn successful_call_clears_last_error() {
    let mut r = 0.0;
    unsafe {
        assert_eq!(
            fedagg_extra_comm_ratio(0, 1, &mut r),
            FedaggStatus::InvalidArgument
        );
        assert!(!fedagg_last_error_message().is_null());
        assert_eq!(fedagg_extra_comm_ratio(3, 10, &mut r), FedaggStatus::Ok);
    }
    assert_eq!(r, 0.1);
    assert!(fedagg_last_error_message().is_null());
}

#[test]
fn numeric_helpers() {
    let mut out = [0.0; 3];
    unsafe {
        assert_eq!(
            fedagg_dirichlet_mode([6.0, 6.0, 6.0].as_ptr(), 3, out.as_mut_ptr()),
            FedaggStatus::Ok
        );
        for v in out {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(
            fedagg_dirichlet_mode([0.5, 2.0, 2.0].as_ptr(), 3, out.as_mut_ptr()),
            FedaggStatus::Numerical
        );
        assert_eq!(
            fedagg_softmax([0.0, 0.0, 0.0].as_ptr(), 3, out.as_mut_ptr()),
            FedaggStatus::Ok
        );
        assert_eq!(out, [1.0 / 3.0; 3]);
        assert_eq!(
            fedagg_softmax(ptr::null(), 3, out.as_mut_ptr()),
            FedaggStatus::NullPointer
        );
        assert_eq!(
            fedagg_softmax(out.as_ptr(), 0, out.as_mut_ptr()),
            FedaggStatus::InvalidArgument
        );
    }
}

#[test]
fn null_handles_are_rejected_and_free_accepts_null() {
    let mut len = 0usize;
    unsafe {
        assert_eq!(
            fedagg_report_len(ptr::null(), &mut len),
            FedaggStatus::NullPointer
        );
        fedagg_report_free(ptr::null_mut());
        fedagg_descriptor_free(ptr::null_mut());
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fedagg.h");
    assert!(header.is_file(), "header not generated");
    let status = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "C compiler rejected the header"),
        Err(e) => eprintln!("cc unavailable, header syntax not checked: {e}"),
    }
}
