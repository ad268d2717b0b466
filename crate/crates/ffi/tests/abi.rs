use pompkit_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

fn model(name: &str) -> *mut PkModel {
    let n = CString::new(name).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { pk_model_builtin(n.as_ptr(), &mut m) }, PkStatus::Ok);
    m
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(pk_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn ou2_round_trip() {
    let m = model("ou2");
    let p = unsafe { pk_model_n_params(m) };
    assert_eq!(p, 10);
    let mut theta = vec![0.0; p];
    assert_eq!(unsafe { pk_model_defaults(m, theta.as_mut_ptr(), p) }, PkStatus::Ok);
    assert_eq!(theta[0], 0.8);
    let mut buf = [0 as std::ffi::c_char; 16];
    assert_eq!(unsafe { pk_model_param_name(m, 7, buf.as_mut_ptr(), buf.len()) }, PkStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), "tau");

    let mut d = ptr::null_mut();
    assert_eq!(unsafe { pk_simulate(m, theta.as_ptr(), p, 50, 7, &mut d) }, PkStatus::Ok);
    assert_eq!(unsafe { pk_data_len(d) }, 50);
    assert_eq!(unsafe { pk_data_dim(d) }, 2);

    let mut exact = 0.0;
    assert_eq!(unsafe { pk_kalman_loglik(m, d, theta.as_ptr(), p, &mut exact) }, PkStatus::Ok);
    let mut est = 0.0;
    assert_eq!(unsafe { pk_pfilter(m, d, theta.as_ptr(), p, 4000, 1, &mut est) }, PkStatus::Ok);
    assert!((est - exact).abs() < 3.0, "{est} vs {exact}");
    let mut again = 0.0;
    unsafe { pk_pfilter(m, d, theta.as_ptr(), p, 4000, 1, &mut again) };
    assert_eq!(est.to_bits(), again.to_bits());
    unsafe {
        pk_data_free(d);
        pk_model_free(m);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let n = CString::new("nope").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { pk_model_builtin(n.as_ptr(), &mut m) }, PkStatus::InvalidArgument);
    assert!(last_error().contains("nope"));
    assert_eq!(unsafe { pk_model_builtin(ptr::null(), &mut m) }, PkStatus::NullPointer);

    let g = model("gompertz");
    let mut d = ptr::null_mut();
    let t = [1.0, 2.0];
    let y = [1.0, f64::NAN];
    assert_eq!(unsafe { pk_data_new(t.as_ptr(), 2, y.as_ptr(), 1, &mut d) }, PkStatus::ModelError);
    let y = [1.0, 0.9];
    assert_eq!(unsafe { pk_data_new(t.as_ptr(), 2, y.as_ptr(), 1, &mut d) }, PkStatus::Ok);
    let theta = [0.1, 1.0, 0.1];
    let mut ll = 0.0;
    assert_eq!(unsafe { pk_pfilter(g, d, theta.as_ptr(), 3, 10, 1, &mut ll) }, PkStatus::InvalidArgument);
    assert!(last_error().contains("5 parameters"));
    unsafe {
        pk_data_free(d);
        pk_model_free(g);
        pk_model_free(ptr::null_mut());
    }
}

#[test]
fn runs_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let out = dir.path().join("out");
    std::fs::write(
        &cfg,
        format!("model = \"gompertz\"\ncommand = \"kalman\"\nout = \"{}\"\n", out.display()),
    )
    .unwrap();
    let c = CString::new(cfg.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { pk_run_config(c.as_ptr()) }, PkStatus::Ok);
    assert!(out.join("summary.json").is_file());

    std::fs::write(&cfg, "model = \"ou2\"\ncommand = \"pfilter\"\n").unwrap();
    assert_eq!(unsafe { pk_run_config(c.as_ptr()) }, PkStatus::Validation);
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/pompkit.h")).unwrap();
    for f in [
        "pk_last_error",
        "pk_version",
        "pk_model_builtin",
        "pk_model_free",
        "pk_data_new",
        "pk_data_read_csv",
        "pk_simulate",
        "pk_pfilter",
        "pk_kalman_loglik",
        "pk_run_config",
    ] {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(h.contains("PK_STATUS_FILTERING_LIMIT = 4"));
}
