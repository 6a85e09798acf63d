//! C interface to spin1-forge.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Every fallible call returns an
//! `S1fStatus`; on failure `s1f_last_error` describes the problem. Pair
//! operators are passed as 162 doubles: the 9×9 matrix row-major with
//! interleaved real and imaginary parts.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use spin1_forge::chain::{self, Boundary, ChainState, ItebdOptions};
use spin1_forge::designer::{DesignContext, DesignResult, OptimizerConfig};
use spin1_forge::effective::{PairOperator, C64};
use spin1_forge::io;
use spin1_forge::molecule::MoleculeSpec;
use spin1_forge::pairpot::PairSystem;
use spin1_forge::Error;

/// Result codes. The numeric values of the first five match the CLI exit codes
/// where they overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum S1fStatus {
    Ok = 0,
    InvalidArgument = 1,
    Config = 2,
    Singularity = 3,
    NonConvergence = 4,
    Domain = 5,
    Precondition = 6,
    Resource = 7,
    Parse = 8,
    Io = 9,
    Panic = 10,
}

impl From<&Error> for S1fStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => S1fStatus::Config,
            Error::Singularity { .. } => S1fStatus::Singularity,
            Error::NonConvergence { .. } => S1fStatus::NonConvergence,
            Error::Domain(_) | Error::UnsupportedSpin(_) => S1fStatus::Domain,
            Error::Precondition(_) => S1fStatus::Precondition,
            Error::Resource(_) => S1fStatus::Resource,
            Error::Parse { .. } => S1fStatus::Parse,
            Error::Io(_) => S1fStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), (S1fStatus, String)>>(f: F) -> S1fStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            S1fStatus::Ok
        }
        Ok(Err((code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            S1fStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (S1fStatus, String) {
    ((&e).into(), e.to_string())
}

fn null_arg(name: &str) -> (S1fStatus, String) {
    (S1fStatus::InvalidArgument, format!("{name} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, (S1fStatus, String)> {
    if p.is_null() {
        return Err(null_arg(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (S1fStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn read_operator(p: *const f64) -> Result<PairOperator, (S1fStatus, String)> {
    if p.is_null() {
        return Err(null_arg("operator"));
    }
    let v = std::slice::from_raw_parts(p, 162);
    let mut op = PairOperator::zero();
    for r in 0..9 {
        for c in 0..9 {
            let k = 2 * (9 * r + c);
            op.matrix[(r, c)] = C64::new(v[k], v[k + 1]);
        }
    }
    Ok(op)
}

unsafe fn write_operator(op: &PairOperator, out: *mut f64) -> Result<(), (S1fStatus, String)> {
    if out.is_null() {
        return Err(null_arg("out"));
    }
    let v = std::slice::from_raw_parts_mut(out, 162);
    for r in 0..9 {
        for c in 0..9 {
            let k = 2 * (9 * r + c);
            v[k] = op.matrix[(r, c)].re;
            v[k + 1] = op.matrix[(r, c)].im;
        }
    }
    Ok(())
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), (S1fStatus, String)> {
    if out.is_null() {
        return Err(null_arg("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, (S1fStatus, String)> {
    p.as_ref().ok_or_else(|| null_arg(name))
}

/// Message for the last failed call on this thread (empty after success).
/// The pointer stays valid until the next call into the library.
#[no_mangle]
pub extern "C" fn s1f_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Molecular constants.
pub struct S1fMolecule(MoleculeSpec);

/// Evaluated or optimized field design.
pub struct S1fDesign(DesignResult);

/// Ground state of a chain (finite or infinite).
pub struct S1fChain(ChainState);

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn s1f_molecule_cacl(out: *mut *mut S1fMolecule) -> S1fStatus {
    guard(|| store(out, S1fMolecule(MoleculeSpec::cacl())))
}

/// Parses molecule constants from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn s1f_molecule_from_toml(toml: *const c_char, out: *mut *mut S1fMolecule) -> S1fStatus {
    guard(|| {
        let text = read_str(toml, "toml")?;
        let spec = io::parse_molecule(text).map_err(lib_err)?;
        store(out, S1fMolecule(spec))
    })
}

/// # Safety
/// `m` must come from a molecule constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn s1f_molecule_free(m: *mut S1fMolecule) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Writes u(r) = d²/(4πε₀r³) in MHz.
///
/// # Safety
/// `m` must be a live molecule handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn s1f_dipole_energy_mhz(m: *const S1fMolecule, r_nm: f64, out: *mut f64) -> S1fStatus {
    guard(|| {
        let m = deref(m, "molecule")?;
        if out.is_null() {
            return Err(null_arg("out"));
        }
        if !(r_nm > 0.0) {
            return Err((S1fStatus::Domain, format!("separation must be positive, got {r_nm}")));
        }
        *out = spin1_forge::pairpot::u_mhz(r_nm, m.0.dipole_debye);
        Ok(())
    })
}

/// Evaluates a field set (text in the field-file format) at spacing `dz_nm`
/// over `ranges` separations.
///
/// # Safety
/// `m` must be a live molecule handle, `fields` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn s1f_design_evaluate(
    m: *const S1fMolecule,
    fields: *const c_char,
    dz_nm: f64,
    ranges: usize,
    out: *mut *mut S1fDesign,
) -> S1fStatus {
    guard(|| {
        let m = deref(m, "molecule")?;
        let fields = io::parse_fields(read_str(fields, "fields")?).map_err(lib_err)?;
        let sys = PairSystem::from_spec(&m.0).map_err(lib_err)?;
        let ctx = DesignContext::new(&sys, dz_nm, ranges).map_err(lib_err)?;
        store(out, S1fDesign(ctx.evaluate(&fields).map_err(lib_err)?))
    })
}

/// Searches for `n_fields` ẑ-polarized fields approximating the target angle.
///
/// # Safety
/// `m` must be a live molecule handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn s1f_design_optimize(
    m: *const S1fMolecule,
    theta: f64,
    n_fields: usize,
    seed: u64,
    starts: usize,
    dz_nm: f64,
    ranges: usize,
    out: *mut *mut S1fDesign,
) -> S1fStatus {
    guard(|| {
        let m = deref(m, "molecule")?;
        let sys = PairSystem::from_spec(&m.0).map_err(lib_err)?;
        let ctx = DesignContext::new(&sys, dz_nm, ranges).map_err(lib_err)?;
        let cfg = OptimizerConfig { seed, starts, ..Default::default() };
        let res = spin1_forge::designer::optimize_fields(theta, n_fields, &ctx, &cfg).map_err(lib_err)?;
        store(out, S1fDesign(res))
    })
}

/// Summary numbers of a design.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct S1fDesignSummary {
    pub nn_error: f64,
    pub theta: f64,
    pub u_khz: f64,
    pub nnn_ratio: f64,
    /// NaN when fewer than three separations were evaluated.
    pub n3_ratio: f64,
    pub max_saturation: f64,
    pub n_fields: usize,
    pub n_warnings: usize,
}

/// # Safety
/// `d` must be a live design handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn s1f_design_summary(d: *const S1fDesign, out: *mut S1fDesignSummary) -> S1fStatus {
    guard(|| {
        let d = &deref(d, "design")?.0;
        if out.is_null() {
            return Err(null_arg("out"));
        }
        *out = S1fDesignSummary {
            nn_error: d.nn_error,
            theta: d.fitted.theta,
            u_khz: d.fitted.u,
            nnn_ratio: d.nnn_ratio,
            n3_ratio: d.n3_ratio.unwrap_or(f64::NAN),
            max_saturation: d.max_saturation,
            n_fields: d.fields.len(),
            n_warnings: d.warnings.len(),
        };
        Ok(())
    })
}

/// Copies the interaction at separation `(range + 1)·dz` into `out[162]`.
///
/// # Safety
/// `d` must be a live design handle and `out` must hold 162 doubles.
#[no_mangle]
pub unsafe extern "C" fn s1f_design_interaction(d: *const S1fDesign, range: usize, out: *mut f64) -> S1fStatus {
    guard(|| {
        let d = &deref(d, "design")?.0;
        let op = d
            .interactions
            .get(range)
            .ok_or_else(|| (S1fStatus::Domain, format!("range {range} not evaluated")))?;
        write_operator(op, out)
    })
}

/// Writes the design's fields in the field-file format. Returns the number
/// of bytes needed (excluding the NUL) through `len`; the text is copied
/// only when `cap` is large enough.
///
/// # Safety
/// `d` must be a live design handle, `buf` writable for `cap` bytes (or
/// null with `cap == 0`), `len` writable.
#[no_mangle]
pub unsafe extern "C" fn s1f_design_fields(d: *const S1fDesign, buf: *mut c_char, cap: usize, len: *mut usize) -> S1fStatus {
    guard(|| {
        let d = &deref(d, "design")?.0;
        if len.is_null() {
            return Err(null_arg("len"));
        }
        let mut text = Vec::new();
        io::write_fields(&d.fields, &mut text).map_err(lib_err)?;
        *len = text.len();
        if !buf.is_null() && cap > text.len() {
            ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
            *buf.add(text.len()) = 0;
        }
        Ok(())
    })
}

/// # Safety
/// `d` must come from a design constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn s1f_design_free(d: *mut S1fDesign) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// U(cosθ S·S + sinθ (S·S)²) into `out[162]`.
///
/// # Safety
/// `out` must hold 162 doubles.
#[no_mangle]
pub unsafe extern "C" fn s1f_bilinear_biquadratic(theta: f64, u: f64, out: *mut f64) -> S1fStatus {
    guard(|| write_operator(&chain::bilinear_biquadratic(theta, u).map_err(lib_err)?, out))
}

/// Infinite-chain ground state by imaginary-time evolution with the default
/// schedule.
///
/// # Safety
/// `h2` must hold 162 doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn s1f_chain_itebd(h2: *const f64, chi: usize, out: *mut *mut S1fChain) -> S1fStatus {
    guard(|| {
        let h = read_operator(h2)?;
        let mps = chain::itebd_ground_state(&h, chi, &ItebdOptions::default()).map_err(lib_err)?;
        store(out, S1fChain(ChainState::Infinite(mps)))
    })
}

/// Ground level of an open chain of `n` sites by exact diagonalization.
///
/// # Safety
/// `h2` must hold 162 doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn s1f_chain_exact(h2: *const f64, n: usize, out: *mut *mut S1fChain) -> S1fStatus {
    guard(|| {
        let h = read_operator(h2)?;
        let (_, st) = chain::exact_ground_state(&h, n, Boundary::Open).map_err(lib_err)?;
        store(out, S1fChain(ChainState::Finite(st)))
    })
}

/// Energy per site (infinite) or total energy (finite).
///
/// # Safety
/// `c` must be a live chain handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn s1f_chain_energy(c: *const S1fChain, out: *mut f64) -> S1fStatus {
    guard(|| {
        let c = &deref(c, "chain")?.0;
        if out.is_null() {
            return Err(null_arg("out"));
        }
        *out = match c {
            ChainState::Infinite(m) => m.energy,
            ChainState::Finite(f) => f.energy,
        };
        Ok(())
    })
}

/// ⟨S^z_0 S^z_r⟩.
///
/// # Safety
/// `c` must be a live chain handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn s1f_chain_sz_correlator(c: *const S1fChain, r: usize, out: *mut f64) -> S1fStatus {
    guard(|| {
        let c = &deref(c, "chain")?.0;
        if out.is_null() {
            return Err(null_arg("out"));
        }
        *out = chain::correlator(c, &chain::sz(), r).map_err(lib_err)?.re;
        Ok(())
    })
}

/// S_{S^z}(q) at `n` momenta.
///
/// # Safety
/// `c` must be a live chain handle; `q` and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn s1f_chain_sz_structure_factor(
    c: *const S1fChain,
    q: *const f64,
    n: usize,
    cutoff: usize,
    out: *mut f64,
) -> S1fStatus {
    guard(|| {
        let c = &deref(c, "chain")?.0;
        if q.is_null() || out.is_null() {
            return Err(null_arg("q/out"));
        }
        let qs = std::slice::from_raw_parts(q, n);
        let sf = chain::structure_factor(c, &chain::sz(), qs, cutoff).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&sf.values);
        Ok(())
    })
}

/// # Safety
/// `c` must come from a chain constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn s1f_chain_free(c: *mut S1fChain) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}
