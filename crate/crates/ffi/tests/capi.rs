use std::ffi::{CStr, CString};
use std::ptr;

use spin1_forge_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(s1f_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn molecule_handles_and_errors() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(s1f_molecule_cacl(&mut m), S1fStatus::Ok);
        let mut u = 0.0;
        assert_eq!(s1f_dipole_energy_mhz(m, 200.0, &mut u), S1fStatus::Ok);
        assert!((u - 0.343156).abs() < 1e-6);
        assert_eq!(s1f_dipole_energy_mhz(m, -1.0, &mut u), S1fStatus::Domain);
        assert!(last_error().contains("positive"));
        s1f_molecule_free(m);

        let text = CString::new("B_MHz = 4563.746\ngamma_MHz = 42.208\n").unwrap();
        let mut m2 = ptr::null_mut();
        assert_eq!(s1f_molecule_from_toml(text.as_ptr(), &mut m2), S1fStatus::Config);
        assert!(m2.is_null());
        assert!(last_error().contains("missing key"));
        assert_eq!(s1f_molecule_from_toml(ptr::null(), &mut m2), S1fStatus::InvalidArgument);
        s1f_molecule_free(ptr::null_mut());
    }
}

#[test]
fn design_round_trip() {
    let fields = CString::new(include_str!("../../../data/table2_circle.fields")).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        s1f_molecule_cacl(&mut m);
        let mut d = ptr::null_mut();
        assert_eq!(s1f_design_evaluate(m, fields.as_ptr(), 200.0, 2, &mut d), S1fStatus::Ok);
        let mut s = S1fDesignSummary::default();
        assert_eq!(s1f_design_summary(d, &mut s), S1fStatus::Ok);
        assert!(s.nn_error < 0.08);
        assert_eq!(s.n_fields, 4);
        assert!(s.n3_ratio.is_nan());
        let mut h = [0.0; 162];
        assert_eq!(s1f_design_interaction(d, 0, h.as_mut_ptr()), S1fStatus::Ok);
        // Hermitian
        for r in 0..9 {
            for c in 0..9 {
                let (a, b) = (2 * (9 * r + c), 2 * (9 * c + r));
                assert!((h[a] - h[b]).abs() < 1e-9 && (h[a + 1] + h[b + 1]).abs() < 1e-9);
            }
        }
        assert_eq!(s1f_design_interaction(d, 5, h.as_mut_ptr()), S1fStatus::Domain);
        let mut len = 0;
        assert_eq!(s1f_design_fields(d, ptr::null_mut(), 0, &mut len), S1fStatus::Ok);
        let mut buf = vec![0 as std::ffi::c_char; len + 1];
        assert_eq!(s1f_design_fields(d, buf.as_mut_ptr(), buf.len(), &mut len), S1fStatus::Ok);
        let text = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
        assert!(text.starts_with("rabi_kHz"));
        assert_eq!(text.lines().count(), 5);
        s1f_design_free(d);

        let bad = CString::new("1, 0, 2, 0, 1\n").unwrap();
        let mut d2 = ptr::null_mut();
        assert_eq!(s1f_design_evaluate(m, bad.as_ptr(), 200.0, 2, &mut d2), S1fStatus::Parse);
        assert_eq!(s1f_design_optimize(m, 0.3, 0, 1, 1, 200.0, 2, &mut d2), S1fStatus::Precondition);
        s1f_molecule_free(m);
    }
}

#[test]
fn aklt_chain() {
    unsafe {
        let mut h = [0.0; 162];
        assert_eq!(s1f_bilinear_biquadratic((1.0f64 / 3.0).atan(), 1.0, h.as_mut_ptr()), S1fStatus::Ok);
        let mut c = ptr::null_mut();
        assert_eq!(s1f_chain_itebd(h.as_ptr(), 2, &mut c), S1fStatus::Ok);
        let mut e = 0.0;
        s1f_chain_energy(c, &mut e);
        assert!((e + 2.0 / 10f64.sqrt()).abs() < 1e-8);
        let mut z = 0.0;
        s1f_chain_sz_correlator(c, 1, &mut z);
        assert!((z + 4.0 / 9.0).abs() < 1e-8);
        let q = [std::f64::consts::PI];
        let mut s = [0.0];
        assert_eq!(s1f_chain_sz_structure_factor(c, q.as_ptr(), 1, 200, s.as_mut_ptr()), S1fStatus::Ok);
        assert!((s[0] - 2.0).abs() < 1e-8);
        s1f_chain_free(c);

        assert_eq!(s1f_chain_itebd(h.as_ptr(), 0, &mut c), S1fStatus::Precondition);
        assert_eq!(s1f_chain_exact(h.as_ptr(), 20, &mut c), S1fStatus::Resource);
        assert_eq!(s1f_chain_exact(h.as_ptr(), 4, &mut c), S1fStatus::Ok);
        s1f_chain_energy(c, &mut e);
        assert!((e + 3.0 * 2.0 / 10f64.sqrt()).abs() < 1e-10);
        s1f_chain_free(c);
        assert_eq!(s1f_bilinear_biquadratic(0.0, -1.0, h.as_mut_ptr()), S1fStatus::Domain);
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = include_str!("../include/spin1_forge.h");
    for name in [
        "s1f_last_error",
        "s1f_molecule_cacl",
        "s1f_molecule_from_toml",
        "s1f_design_evaluate",
        "s1f_design_optimize",
        "s1f_design_summary",
        "s1f_chain_itebd",
        "s1f_chain_exact",
        "s1f_chain_sz_structure_factor",
        "S1F_STATUS_NON_CONVERGENCE = 4",
        "typedef struct S1fChain S1fChain;",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
