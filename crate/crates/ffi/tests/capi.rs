use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use denseleaf_ffi::*;

fn last_error() -> String {
    let len = dl_last_error_length();
    let mut buf = vec![0 as c_char; len + 1];
    let written = unsafe { dl_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(written, len);
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_string_lossy()
        .into_owned()
}

fn model(json: &str) -> *mut DlModel {
    let j = CString::new(json).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { dl_model_from_json(j.as_ptr(), &mut m) },
        DlStatus::Ok
    );
    m
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(dl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn model_sample_and_eval() {
    let m = model(r#"{"family": "NBm", "d": 2, "seed": 3}"#);
    let mut d = 0usize;
    assert_eq!(unsafe { dl_model_dim(m, &mut d) }, DlStatus::Ok);
    assert_eq!(d, 2);
    let mut pts = vec![0.0; 20];
    assert_eq!(
        unsafe { dl_model_sample(m, 10, 7, pts.as_mut_ptr()) },
        DlStatus::Ok
    );
    assert!(pts.iter().all(|v| (0.0..=1.0).contains(v)));
    let mut vals = vec![0.0; 10];
    assert_eq!(
        unsafe { dl_model_eval(m, pts.as_ptr(), 10, 2, vals.as_mut_ptr()) },
        DlStatus::Ok
    );
    assert!(vals.iter().all(|v| *v >= 0.0));
    let st = unsafe { dl_model_eval(m, pts.as_ptr(), 10, 3, vals.as_mut_ptr()) };
    assert_eq!(st, DlStatus::DimensionMismatch);
    assert!(last_error().contains("dimension mismatch"));
    unsafe { dl_model_free(m) };
}

#[test]
fn bad_inputs_report_codes() {
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { dl_model_from_json(ptr::null(), &mut m) },
        DlStatus::NullPointer
    );
    assert!(last_error().contains("null"));
    let j = CString::new("{not json").unwrap();
    assert_eq!(
        unsafe { dl_model_from_json(j.as_ptr(), &mut m) },
        DlStatus::Config
    );
    assert!(m.is_null());
    dl_clear_last_error();
    assert_eq!(dl_last_error_length(), 0);
    let mut out = 0.0;
    assert_eq!(
        unsafe { dl_entropy_bound(1, 1, 1, 1, 0.0, &mut out) },
        DlStatus::InvalidArgument
    );
    let data = [0.5; 8];
    let mut e = ptr::null_mut();
    let st =
        unsafe { dl_estimator_fit(9, data.as_ptr(), 8, 1, 0, 0.5, 1.0, ptr::null(), 0, &mut e) };
    assert_eq!(st, DlStatus::InvalidArgument);
    unsafe {
        dl_model_free(ptr::null_mut());
        dl_estimator_free(ptr::null_mut());
        dl_string_free(ptr::null_mut());
    }
}

#[test]
fn error_message_truncates() {
    let mut m = ptr::null_mut();
    unsafe { dl_model_from_json(ptr::null(), &mut m) };
    let mut buf = [1 as c_char; 4];
    let n = unsafe { dl_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, 3);
    assert_eq!(buf[3], 0);
}

#[test]
fn formula_evaluators() {
    let mut phi = 0.0;
    let (t, a) = ([1usize], [0.5f64]);
    assert_eq!(
        unsafe { dl_rate_phi(t.as_ptr(), a.as_ptr(), 1, 10_000, &mut phi) },
        DlStatus::Ok
    );
    assert!((phi - 0.01).abs() < 1e-12);
    let mut e = 0.0;
    assert_eq!(
        unsafe { dl_entropy_bound(1, 1, 1, 1, 1.0, &mut e) },
        DlStatus::Ok
    );
    assert!((e - 2.0 * 256f64.ln()).abs() < 1e-9);
}

#[test]
fn network_fit_round_trips_through_json() {
    let m = model(r#"{"family": "linear", "d": 1}"#);
    let mut data = vec![0.0; 40];
    assert_eq!(
        unsafe { dl_model_sample(m, 40, 1, data.as_mut_ptr()) },
        DlStatus::Ok
    );
    let cfg = CString::new(r#"{"schedule": {"epochs": 10}, "sup_cap": 2.0}"#).unwrap();
    let mut est = ptr::null_mut();
    let st = unsafe {
        dl_estimator_fit(
            DlMethod::SplitData as i32,
            data.as_ptr(),
            40,
            1,
            0,
            0.8,
            1.0,
            cfg.as_ptr(),
            5,
            &mut est,
        )
    };
    assert_eq!(st, DlStatus::Ok, "{}", last_error());
    let mut json = ptr::null_mut();
    assert_eq!(
        unsafe { dl_estimator_to_json(est, &mut json) },
        DlStatus::Ok
    );
    let mut back = ptr::null_mut();
    assert_eq!(
        unsafe { dl_estimator_from_json(json, &mut back) },
        DlStatus::Ok
    );
    let xs = [0.1, 0.4, 0.9];
    let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
    unsafe {
        assert_eq!(
            dl_estimator_eval(est, xs.as_ptr(), 3, 1, a.as_mut_ptr()),
            DlStatus::Ok
        );
        assert_eq!(
            dl_estimator_eval(back, xs.as_ptr(), 3, 1, b.as_mut_ptr()),
            DlStatus::Ok
        );
        dl_string_free(json);
        dl_estimator_free(est);
        dl_estimator_free(back);
        dl_model_free(m);
    }
    assert_eq!(a, b);
    assert!(a.iter().all(|v| v.is_finite() && v.abs() <= 2.0));
}

#[test]
fn kde_fit_evaluates_to_zero_far_away() {
    let data = [0.2, 0.4, 0.6, 0.8];
    let mut est = ptr::null_mut();
    let st = unsafe {
        dl_estimator_fit(
            DlMethod::Kde as i32,
            data.as_ptr(),
            4,
            1,
            0,
            0.5,
            1.0,
            ptr::null(),
            0,
            &mut est,
        )
    };
    assert_eq!(st, DlStatus::Ok);
    let x = [10.0];
    let mut y = [1.0];
    assert_eq!(
        unsafe { dl_estimator_eval(est, x.as_ptr(), 1, 1, y.as_mut_ptr()) },
        DlStatus::Ok
    );
    assert_eq!(y[0], 0.0);
    unsafe { dl_estimator_free(est) };
}

#[test]
fn theory_battery_passes() {
    let mut out = ptr::null_mut();
    let mut pass = 0;
    assert_eq!(
        unsafe { dl_theory_check(10_000, 1, &mut out, &mut pass) },
        DlStatus::Ok
    );
    let text = unsafe { CStr::from_ptr(out) }
        .to_string_lossy()
        .into_owned();
    unsafe { dl_string_free(out) };
    assert_eq!(pass, 1);
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn header_compiles_as_c() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/denseleaf.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "dl_model_from_json",
        "dl_estimator_fit",
        "dl_last_error_message",
        "DL_STATUS_OK",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(cc) = which_cc() else { return };
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"denseleaf.h\"\nint main(void) {\n  DlModel *m = 0;\n  DlStatus s = dl_model_from_json(\"{}\", &m);\n  dl_model_free(m);\n  return s == DL_STATUS_OK ? 0 : (int)dl_last_error_length();\n}\n",
    )
    .unwrap();
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| {
            Command::new(c)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .ok_or(())
}
