use std::ffi::CString;
use std::ptr;

use stochrecon_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { sr_last_error(buf.as_mut_ptr().cast(), buf.len()) };
    buf.truncate(n.min(255));
    String::from_utf8(buf).unwrap()
}

#[test]
fn sheet_corner_matches_walsh_primitive_and_sewing() {
    unsafe {
        let mut noise = ptr::null_mut();
        assert_eq!(sr_noise_sample(16, 1.0, 2, 8, 7, &mut noise), SrStatus::Ok);

        let mut sheet = ptr::null_mut();
        assert_eq!(sr_brownian_sheet(noise, &mut sheet), SrStatus::Ok);
        let (mut n, mut d, mut m) = (0, 0, 0);
        assert_eq!(sr_field_shape(sheet, &mut n, &mut d, &mut m), SrStatus::Ok);
        assert_eq!((n, d, m), (16, 2, 8));

        let mut prim = ptr::null_mut();
        assert_eq!(sr_walsh_primitive(noise, &mut prim), SrStatus::Ok);
        let mut walsh = vec![0.0; 8];
        assert_eq!(sr_field_corner(prim, [16usize, 16].as_ptr(), 2, walsh.as_mut_ptr(), 8), SrStatus::Ok);

        let mut sewn = vec![0.0; 8];
        let status = sr_sew_frozen_increment(noise, [0usize, 0].as_ptr(), [16usize, 16].as_ptr(), 2, sewn.as_mut_ptr(), 8);
        assert_eq!(status, SrStatus::Ok, "{}", last_error());
        for (a, b) in walsh.iter().zip(&sewn) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
        }

        sr_field_free(prim);
        sr_field_free(sheet);
        sr_noise_free(noise);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut noise = ptr::null_mut();
        assert_eq!(sr_noise_sample(12, 1.0, 2, 4, 1, &mut noise), SrStatus::InvalidArgument);
        assert!(noise.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(sr_brownian_sheet(ptr::null(), &mut ptr::null_mut()), SrStatus::NullPointer);
        assert_eq!(last_error(), "noise is null");

        let bad = CString::new("kind = \"walsh-check\"\nseed = 1\nbogus = 3\n").unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(sr_run_config(bad.as_ptr(), &mut out), SrStatus::Config);
        assert!(out.is_null());

        // A buffer too short for every sample.
        assert_eq!(sr_noise_sample(8, 1.0, 2, 4, 1, &mut noise), SrStatus::Ok);
        let mut v = [0.0; 2];
        let s = sr_sew_frozen_increment(noise, [0usize, 0].as_ptr(), [8usize, 8].as_ptr(), 2, v.as_mut_ptr(), 2);
        assert_eq!(s, SrStatus::InvalidArgument);
        sr_noise_free(noise);
    }
}

#[test]
fn runs_a_config() {
    let cfg = CString::new("kind = \"walsh-check\"\nseed = 3\nn = 32\nsamples = 16\n").unwrap();
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(sr_run_config(cfg.as_ptr(), &mut out), SrStatus::Ok, "{}", last_error());
        let count = sr_outcome_check_count(out);
        assert!(count > 0);
        let mut passed = 0;
        for i in 0..count {
            assert_eq!(sr_outcome_check(out, i, ptr::null_mut(), &mut passed), SrStatus::Ok);
            assert_eq!(passed, 1);
        }
        assert_eq!(sr_outcome_passed(out), 1);
        assert_eq!(sr_outcome_check(out, count, ptr::null_mut(), ptr::null_mut()), SrStatus::InvalidArgument);
        sr_outcome_free(out);
    }
}

#[test]
fn solves_the_default_regime() {
    unsafe {
        let mut u = ptr::null_mut();
        let mut q = f64::NAN;
        assert_eq!(sr_spde_solve_default(16, 4, 5, &mut u, &mut q), SrStatus::Ok, "{}", last_error());
        assert!(q.is_finite() && q < 1.0);
        let (mut n, mut d) = (0, 0);
        sr_field_shape(u, &mut n, &mut d, ptr::null_mut());
        assert_eq!((n, d), (16, 2));
        sr_field_free(u);
    }
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/stochrecon.h")).unwrap();
    for f in ["sr_noise_sample", "sr_noise_free", "sr_brownian_sheet", "sr_walsh_primitive", "sr_sew_frozen_increment",
        "sr_spde_solve_default", "sr_field_corner", "sr_run_config", "sr_outcome_check", "sr_last_error", "SR_STATUS_PANIC"] {
        assert!(h.contains(f), "{f} missing from header");
    }
    assert!(!std::ffi::CStr::from_bytes_until_nul(unsafe { std::slice::from_raw_parts(sr_version().cast(), 16) }).unwrap().is_empty());
}
