//! Exercise the C ABI from Rust the way a foreign caller would.

use std::ffi::{CStr, CString};
use std::ptr;

use safemil_ffi::*;

fn last_error() -> String {
    let p = safemil_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn default_env_solve_and_evaluate() {
    unsafe {
        let mut env = ptr::null_mut();
        assert_eq!(safemil_env_default(SafemilEnvKind::SpeedChain, &mut env), SafemilStatus::Ok);
        assert!(safemil_last_error().is_null());
        let (mut ns, mut na, mut t) = (0, 0, 0);
        assert_eq!(safemil_env_shape(env, &mut ns, &mut na, &mut t), SafemilStatus::Ok);
        assert_eq!((na, t), (3, 14));

        let mut reference = ptr::null_mut();
        let mut uniform = ptr::null_mut();
        assert_eq!(safemil_solve_constrained(env, &mut reference), SafemilStatus::Ok);
        assert_eq!(safemil_policy_uniform(env, &mut uniform), SafemilStatus::Ok);

        let (mut r, mut c) = (0.0, 0.0);
        assert_eq!(safemil_policy_eval(env, reference, 1.0, &mut r, &mut c), SafemilStatus::Ok);
        let (mut ur, mut uc) = (0.0, 0.0);
        assert_eq!(safemil_policy_eval(env, uniform, 1.0, &mut ur, &mut uc), SafemilStatus::Ok);
        let (mut nr, mut nc) = (0.0, 0.0);
        assert_eq!(safemil_normalize(r, c, r, c, ur, &mut nr, &mut nc), SafemilStatus::Ok);
        assert_eq!((nr, nc), (1.0, 0.0));

        let mut probs = vec![0.0; na];
        assert_eq!(safemil_policy_probs(uniform, env, 0, 0, probs.as_mut_ptr(), na), SafemilStatus::Ok);
        assert!(probs.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));
        assert_eq!(
            safemil_policy_probs(uniform, env, 0, 0, probs.as_mut_ptr(), 1),
            SafemilStatus::BufferTooSmall
        );
        assert_eq!(
            safemil_policy_probs(uniform, env, 0, ns, probs.as_mut_ptr(), na),
            SafemilStatus::Contract
        );

        safemil_policy_free(reference);
        safemil_policy_free(uniform);
        safemil_env_free(env);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut env = ptr::null_mut();
        let bad = CString::new(r#"{"kind":"speed_chain","horizon":8}"#).unwrap();
        let status = safemil_env_from_json(bad.as_ptr(), &mut env);
        assert_eq!(status, SafemilStatus::Parse);
        assert!(env.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(safemil_env_shape(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()), SafemilStatus::NullPointer);
        assert!(last_error().contains("env"));

        let mut p = 0.0;
        assert_eq!(safemil_lemma1_probability(0.5, 0, &mut p), SafemilStatus::Contract);
        assert_eq!(safemil_lemma1_probability(0.5, 2, &mut p), SafemilStatus::Ok);
        assert_eq!(p, 0.75);

        let missing = CString::new("/nonexistent/policy.ckpt").unwrap();
        let mut policy = ptr::null_mut();
        assert_eq!(safemil_policy_load_checkpoint(missing.as_ptr(), &mut policy), SafemilStatus::Io);
    }
}

#[test]
fn env_from_json_matches_preset() {
    unsafe {
        let json = CString::new(r#"{"kind":"speed_chain","length":10,"horizon":8,"threshold":2.0,"gamma":0.99}"#).unwrap();
        let mut env = ptr::null_mut();
        assert_eq!(safemil_env_from_json(json.as_ptr(), &mut env), SafemilStatus::Ok);
        let (mut ns, mut na, mut t) = (0, 0, 0);
        safemil_env_shape(env, &mut ns, &mut na, &mut t);
        assert_eq!((ns, na, t), (10, 3, 8));
        safemil_env_free(env);
    }
}

#[test]
fn scalar_metrics() {
    assert!((safemil_bt_loss(0.3, 0.3) - 2f64.ln()).abs() < 1e-15);
    let costs = [0.0, 0.0, 0.0, 0.0, 10.0];
    let mut v = 0.0;
    unsafe {
        assert_eq!(safemil_cvar_cost(costs.as_ptr(), costs.len(), 20.0, 1.0, &mut v), SafemilStatus::Ok);
        assert_eq!(v, 9.0);
        assert_eq!(safemil_cvar_cost(ptr::null(), 0, 20.0, 0.0, &mut v), SafemilStatus::Contract);
    }
    let version = unsafe { CStr::from_ptr(safemil_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/safemil.h");
    let source = include_str!("../src/lib.rs");
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .filter_map(|rest| rest.split('(').next())
        .collect();
    assert!(exports.len() >= 18);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "header lacks {name}");
    }
    assert!(header.contains("typedef struct SafemilEnv SafemilEnv;"));
    assert!(header.contains("SAFEMIL_STATUS_OK = 0"));
}
