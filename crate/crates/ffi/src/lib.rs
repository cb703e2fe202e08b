//! C ABI over `dwsnet`.
//!
//! Every fallible function returns a [`DwsStatus`]; on failure a message is
//! kept per thread and can be read with [`dws_last_error_message`]. Specs and
//! trained models are passed around as opaque handles that the caller frees
//! with the matching `*_free` function. Strings returned through out
//! parameters are owned by the caller and released with [`dws_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dwsnet::experiment::Predictor;
use dwsnet::symmetry::orbit_count;
use dwsnet::verifier::{verify_tables, VerifyMode, VerifyOptions};
use dwsnet::weight_space::{
    apply_action, GroupElement, Permutation, WeightSpaceSpec, WeightSpaceVector,
};
use dwsnet::zoo::{mlp_forward, ActivationKind};
use dwsnet::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DwsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidSpec = 3,
    InvalidPermutation = 4,
    ShapeMismatch = 5,
    TooLarge = 6,
    Io = 7,
    Checkpoint = 8,
    Diverged = 9,
    Internal = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DwsActivation {
    Relu = 0,
    Sine = 1,
    None = 2,
}

/// Layer dimensions of an MLP.
pub struct DwsSpec(WeightSpaceSpec);

/// A trained model loaded from a checkpoint.
pub struct DwsModel(Predictor);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DwsStatus {
    match e {
        Error::InvalidSpec(_) => DwsStatus::InvalidSpec,
        Error::InvalidPermutation { .. } => DwsStatus::InvalidPermutation,
        Error::Shape { .. } => DwsStatus::ShapeMismatch,
        Error::GroupTooLarge { .. } | Error::SystemTooLarge { .. } => DwsStatus::TooLarge,
        Error::Io { .. } => DwsStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) => DwsStatus::Checkpoint,
        Error::Diverged { .. } => DwsStatus::Diverged,
        Error::Config(_) | Error::Dataset(_) | Error::CapacityMismatch { .. } => {
            DwsStatus::InvalidArgument
        }
        _ => DwsStatus::Internal,
    }
}

/// Runs `f`, recording any error or panic for [`dws_last_error_message`].
fn guard(f: impl FnOnce() -> Result<(), (DwsStatus, String)>) -> DwsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DwsStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("panic inside dwsnet".into());
            DwsStatus::Panic
        }
    }
}

fn lib(e: Error) -> (DwsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DwsStatus, String) {
    (DwsStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn slice<'a, T>(
    p: *const T,
    len: usize,
    what: &str,
) -> Result<&'a [T], (DwsStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn spec_ref<'a>(spec: *const DwsSpec) -> Result<&'a WeightSpaceSpec, (DwsStatus, String)> {
    spec.as_ref().map(|s| &s.0).ok_or_else(|| null("spec"))
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), (DwsStatus, String)> {
    if got == want {
        Ok(())
    } else {
        Err((
            DwsStatus::ShapeMismatch,
            format!("`{what}` has length {got}, expected {want}"),
        ))
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn dws_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn dws_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Static version string.
#[no_mangle]
pub extern "C" fn dws_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a spec from `len >= 3` positive dimensions `d_0..d_M`.
///
/// # Safety
/// `dims` must point to `len` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dws_spec_new(
    dims: *const usize,
    len: usize,
    out: *mut *mut DwsSpec,
) -> DwsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let d = slice(dims, len, "dims")?;
        let spec = WeightSpaceSpec::new(d.to_vec()).map_err(lib)?;
        *out = Box::into_raw(Box::new(DwsSpec(spec)));
        Ok(())
    })
}

/// # Safety
/// `spec` must come from [`dws_spec_new`] and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn dws_spec_free(spec: *mut DwsSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Length of a flattened single-channel weight vector; 0 for a null spec.
///
/// # Safety
/// `spec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dws_spec_flat_dim(spec: *const DwsSpec) -> usize {
    spec.as_ref().map_or(0, |s| s.0.flat_dim())
}

/// Number of orbits of the symmetry group on weight coordinates; 0 for a null spec.
///
/// # Safety
/// `spec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dws_spec_orbit_count(spec: *const DwsSpec) -> usize {
    spec.as_ref().map_or(0, |s| orbit_count(&s.0))
}

/// Runs the verifier. `mc_samples == 0` selects exhaustive mode. Writes the
/// overall verdict to `out_pass` and, when `out_json` is not null, the full
/// report as a JSON string to free with [`dws_string_free`].
///
/// # Safety
/// `spec` must be a live handle; `out_pass` must be writable; `out_json` must
/// be null or writable.
#[no_mangle]
pub unsafe extern "C" fn dws_verify(
    spec: *const DwsSpec,
    mc_samples: usize,
    tol: f64,
    out_pass: *mut bool,
    out_json: *mut *mut c_char,
) -> DwsStatus {
    guard(|| {
        let spec = spec_ref(spec)?;
        if out_pass.is_null() {
            return Err(null("out_pass"));
        }
        let opts = VerifyOptions {
            mode: if mc_samples == 0 {
                VerifyMode::Exhaustive
            } else {
                VerifyMode::MonteCarlo(mc_samples)
            },
            tol,
            ..VerifyOptions::default()
        };
        let report = verify_tables(spec, &opts).map_err(lib)?;
        *out_pass = report.pass;
        if !out_json.is_null() {
            let text = serde_json::to_string(&report).map_err(|e| lib(e.into()))?;
            *out_json = CString::new(text).expect("JSON has no nul").into_raw();
        }
        Ok(())
    })
}

/// Applies a group element to a flat single-channel weight vector.
/// `perms` holds the permutations of hidden layers `1..M-1` back to back
/// (`d_1 + ... + d_{M-1}` entries, each a 0-based image list).
///
/// # Safety
/// Pointers must reference buffers of the stated lengths; `output` must hold
/// `len` values and may not overlap `input`.
#[no_mangle]
pub unsafe extern "C" fn dws_apply_action(
    spec: *const DwsSpec,
    perms: *const usize,
    perms_len: usize,
    input: *const f64,
    output: *mut f64,
    len: usize,
) -> DwsStatus {
    guard(|| {
        let spec = spec_ref(spec)?;
        let m = spec.layers();
        let want: usize = (1..m).map(|l| spec.dim(l)).sum();
        check_len("perms", perms_len, want)?;
        check_len("input", len, spec.flat_dim())?;
        if output.is_null() {
            return Err(null("output"));
        }
        let images = slice(perms, perms_len, "perms")?;
        let x = slice(input, len, "input")?;
        let mut ps = Vec::with_capacity(m - 1);
        let mut pos = 0;
        for l in 1..m {
            let d = spec.dim(l);
            ps.push(
                Permutation::new(images[pos..pos + d].to_vec()).map_err(|e| match e {
                    Error::InvalidPermutation { message, .. } => {
                        lib(Error::InvalidPermutation { layer: l, message })
                    }
                    e => lib(e),
                })?,
            );
            pos += d;
        }
        let g = GroupElement::new(ps);
        g.check(spec).map_err(lib)?;
        let v = WeightSpaceVector::unflatten(spec, 1, x).map_err(lib)?;
        let y = apply_action(&g, &v).map_err(lib)?.flatten();
        std::slice::from_raw_parts_mut(output, len).copy_from_slice(y.data());
        Ok(())
    })
}

/// Evaluates the MLP whose flat weights are `weights` at `x` (`d_0` values),
/// writing `d_M` values to `out`.
///
/// # Safety
/// Pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn dws_mlp_forward(
    spec: *const DwsSpec,
    weights: *const f64,
    weights_len: usize,
    x: *const f64,
    x_len: usize,
    activation: DwsActivation,
    out: *mut f64,
    out_len: usize,
) -> DwsStatus {
    guard(|| {
        let spec = spec_ref(spec)?;
        check_len("weights", weights_len, spec.flat_dim())?;
        check_len("x", x_len, spec.dim(0))?;
        check_len("out", out_len, spec.dim(spec.layers()))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let v = WeightSpaceVector::unflatten(spec, 1, slice(weights, weights_len, "weights")?)
            .map_err(lib)?;
        let act = match activation {
            DwsActivation::Relu => ActivationKind::Relu,
            DwsActivation::Sine => ActivationKind::Sine,
            DwsActivation::None => ActivationKind::None,
        };
        let y = mlp_forward(&v, slice(x, x_len, "x")?, act).map_err(lib)?;
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(&y);
        Ok(())
    })
}

/// Loads a checkpoint written by `dws train`.
///
/// # Safety
/// `path` must be a nul-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dws_model_load(path: *const c_char, out: *mut *mut DwsModel) -> DwsStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (DwsStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let model = Predictor::load(Path::new(p)).map_err(lib)?;
        *out = Box::into_raw(Box::new(DwsModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`dws_model_load`] and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn dws_model_free(model: *mut DwsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input length the model expects per row; 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dws_model_flat_dim(model: *const DwsModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.spec.flat_dim())
}

/// Predicts labels for `rows` raw weight vectors stored back to back
/// (`rows * row_len` values), writing `rows` values to `out`.
///
/// # Safety
/// `inputs` must hold `rows * row_len` values and `out` must hold `rows`.
#[no_mangle]
pub unsafe extern "C" fn dws_model_predict(
    model: *const DwsModel,
    inputs: *const f64,
    rows: usize,
    row_len: usize,
    out: *mut f64,
) -> DwsStatus {
    guard(|| {
        let model = model.as_ref().map(|m| &m.0).ok_or_else(|| null("model"))?;
        check_len("row_len", row_len, model.spec.flat_dim())?;
        if rows == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let data = slice(inputs, rows * row_len, "inputs")?;
        let refs: Vec<&[f64]> = data.chunks(row_len).collect();
        let y = model.predict(&refs).map_err(lib)?;
        std::slice::from_raw_parts_mut(out, rows).copy_from_slice(&y);
        Ok(())
    })
}
