//! C interface to the unbalsens library.
//!
//! Networks, operating points and sensitivity sets are opaque handles, each
//! released with its own `ubs_*_free`. Every fallible call returns a
//! [`UbsStatus`]; on failure the message is kept per thread and can be copied
//! out with [`ubs_last_error`]. Matrices are copied row-major into caller
//! buffers. Angles are in radians.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;

use unbalsens::netmodel::{parse_feeder, Network};
use unbalsens::powerflow::{solve_power_flow, OperatingPoint, SolverConfig};
use unbalsens::sensitivity::{solve_all, SensitivityMatrices};
use unbalsens::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UbsStatus {
    Ok = 0,
    /// Null pointer, bad index or malformed string argument.
    InvalidArgument = 1,
    /// Unreadable or invalid feeder, out-of-range tap.
    InputError = 2,
    /// Non-convergence or a singular system.
    NumericalError = 3,
    /// The output buffer is shorter than required; nothing was written.
    BufferTooSmall = 4,
    /// A panic was caught at the boundary.
    InternalError = 5,
}

/// Selects one of the six sensitivity matrices: voltage magnitude or angle
/// with respect to active power, reactive power or regulator tap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UbsMatrix {
    MagnitudeP = 0,
    AngleP = 1,
    MagnitudeQ = 2,
    AngleQ = 3,
    MagnitudeTap = 4,
    AngleTap = 5,
}

/// A loaded feeder.
pub struct UbsNetwork(Network);

/// A converged power flow solution.
pub struct UbsOperatingPoint(OperatingPoint);

/// The six sensitivity matrices at one operating point.
pub struct UbsSensitivities(SensitivityMatrices);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: UbsStatus, msg: impl Into<String>) -> UbsStatus {
    set_error(msg);
    status
}

fn from_error(err: Error) -> UbsStatus {
    let status = if err.is_input_error() {
        UbsStatus::InputError
    } else {
        UbsStatus::NumericalError
    };
    fail(status, err.to_string())
}

fn guard(f: impl FnOnce() -> UbsStatus) -> UbsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == UbsStatus::Ok {
                set_error("");
            }
            status
        }
        Err(_) => fail(UbsStatus::InternalError, "internal panic"),
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, UbsStatus> {
    if s.is_null() {
        return Err(fail(UbsStatus::InvalidArgument, "null string"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(UbsStatus::InvalidArgument, "string is not UTF-8"))
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> UbsStatus {
    if out.is_null() {
        return fail(UbsStatus::InvalidArgument, "null output buffer");
    }
    if len < src.len() {
        return fail(
            UbsStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    UbsStatus::Ok
}

unsafe fn boxed_out<T>(out: *mut *mut T, value: T) -> UbsStatus {
    *out = Box::into_raw(Box::new(value));
    UbsStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ubs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to fit) and returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ubs_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads and validates a feeder file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ubs_network_load(
    path: *const c_char,
    out: *mut *mut UbsNetwork,
) -> UbsStatus {
    guard(|| {
        if out.is_null() {
            return fail(UbsStatus::InvalidArgument, "null output handle");
        }
        let path = match read_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Network::from_file(path) {
            Ok(net) => boxed_out(out, UbsNetwork(net)),
            Err(e) => from_error(e),
        }
    })
}

/// Parses and validates feeder JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ubs_network_parse(
    json: *const c_char,
    out: *mut *mut UbsNetwork,
) -> UbsStatus {
    guard(|| {
        if out.is_null() {
            return fail(UbsStatus::InvalidArgument, "null output handle");
        }
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_feeder(text).and_then(Network::new) {
            Ok(net) => boxed_out(out, UbsNetwork(net)),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `net` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ubs_network_free(net: *mut UbsNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of nodes, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ubs_network_node_count(net: *const UbsNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.node_count())
}

/// Number of regulators, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ubs_network_regulator_count(net: *const UbsNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.regulator_count())
}

/// Copies the label of node `index` (e.g. `b2.a`) into `buf` as a
/// NUL-terminated string. `needed` (optional) receives the byte count
/// including the NUL.
///
/// # Safety
/// `net` must be a live handle; `buf` must point to `len` writable bytes;
/// `needed` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn ubs_network_node_label(
    net: *const UbsNetwork,
    index: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> UbsStatus {
    guard(|| {
        let Some(net) = net.as_ref() else {
            return fail(UbsStatus::InvalidArgument, "null network");
        };
        if index >= net.0.node_count() {
            return fail(
                UbsStatus::InvalidArgument,
                format!("node index {index} out of range"),
            );
        }
        let label = net.0.index.node(index).to_string();
        if !needed.is_null() {
            *needed = label.len() + 1;
        }
        if buf.is_null() || len < label.len() + 1 {
            return fail(
                UbsStatus::BufferTooSmall,
                format!("label needs {} bytes", label.len() + 1),
            );
        }
        ptr::copy_nonoverlapping(label.as_ptr().cast(), buf, label.len());
        *buf.add(label.len()) = 0;
        UbsStatus::Ok
    })
}

/// Solves the power flow. `taps` may be null to use the feeder's taps;
/// otherwise it holds one value per regulator. A non-positive `tolerance`
/// selects the default of 1e-10 p.u.
///
/// # Safety
/// `net` must be a live handle, `taps` null or `n_taps` readable values, and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ubs_solve(
    net: *const UbsNetwork,
    taps: *const f64,
    n_taps: usize,
    tolerance: f64,
    out: *mut *mut UbsOperatingPoint,
) -> UbsStatus {
    guard(|| {
        let Some(net) = net.as_ref() else {
            return fail(UbsStatus::InvalidArgument, "null network");
        };
        if out.is_null() {
            return fail(UbsStatus::InvalidArgument, "null output handle");
        }
        let taps = if taps.is_null() {
            net.0.model.initial_taps()
        } else {
            std::slice::from_raw_parts(taps, n_taps).to_vec()
        };
        let mut config = SolverConfig::default();
        if tolerance > 0.0 {
            config.tolerance = tolerance;
        }
        match solve_power_flow(&net.0, &taps, &config, None) {
            Ok(op) => boxed_out(out, UbsOperatingPoint(op)),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `op` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ubs_operating_point_free(op: *mut UbsOperatingPoint) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Copies node voltage magnitudes (p.u.) and angles (rad); either buffer may
/// be null to skip it.
///
/// # Safety
/// `op` must be a live handle; non-null buffers must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn ubs_operating_point_voltages(
    op: *const UbsOperatingPoint,
    magnitudes: *mut f64,
    angles: *mut f64,
    len: usize,
) -> UbsStatus {
    guard(|| {
        let Some(op) = op.as_ref() else {
            return fail(UbsStatus::InvalidArgument, "null operating point");
        };
        for (buf, values) in [(magnitudes, op.0.magnitudes()), (angles, op.0.angles())] {
            if buf.is_null() {
                continue;
            }
            let status = copy_out(values.as_slice(), buf, len);
            if status != UbsStatus::Ok {
                return status;
            }
        }
        UbsStatus::Ok
    })
}

/// Iterations used by the power flow, or 0 for a null handle.
///
/// # Safety
/// `op` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ubs_operating_point_iterations(op: *const UbsOperatingPoint) -> usize {
    op.as_ref().map_or(0, |o| o.0.iterations)
}

/// Final power mismatch (p.u.), or NaN for a null handle.
///
/// # Safety
/// `op` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ubs_operating_point_mismatch(op: *const UbsOperatingPoint) -> f64 {
    op.as_ref().map_or(f64::NAN, |o| o.0.mismatch)
}

/// Computes all six sensitivity matrices at `op`.
///
/// # Safety
/// `net` and `op` must be live handles, with `op` solved on `net`; `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ubs_sensitivities_compute(
    net: *const UbsNetwork,
    op: *const UbsOperatingPoint,
    out: *mut *mut UbsSensitivities,
) -> UbsStatus {
    guard(|| {
        let (Some(net), Some(op)) = (net.as_ref(), op.as_ref()) else {
            return fail(
                UbsStatus::InvalidArgument,
                "null network or operating point",
            );
        };
        if out.is_null() {
            return fail(UbsStatus::InvalidArgument, "null output handle");
        }
        if op.0.voltages.len() != net.0.node_count() {
            return fail(
                UbsStatus::InvalidArgument,
                "operating point belongs to another network",
            );
        }
        match solve_all(&net.0, &op.0) {
            Ok(s) => boxed_out(out, UbsSensitivities(s)),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `sens` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ubs_sensitivities_free(sens: *mut UbsSensitivities) {
    if !sens.is_null() {
        drop(Box::from_raw(sens));
    }
}

fn select(sens: &SensitivityMatrices, which: UbsMatrix) -> &DMatrix<f64> {
    match which {
        UbsMatrix::MagnitudeP => &sens.de_dp,
        UbsMatrix::AngleP => &sens.dtheta_dp,
        UbsMatrix::MagnitudeQ => &sens.de_dq,
        UbsMatrix::AngleQ => &sens.dtheta_dq,
        UbsMatrix::MagnitudeTap => &sens.de_dgamma,
        UbsMatrix::AngleTap => &sens.dtheta_dgamma,
    }
}

/// Writes the row and column counts of one matrix.
///
/// # Safety
/// `sens` must be a live handle; `rows` and `cols` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ubs_sensitivities_shape(
    sens: *const UbsSensitivities,
    which: UbsMatrix,
    rows: *mut usize,
    cols: *mut usize,
) -> UbsStatus {
    guard(|| {
        let Some(sens) = sens.as_ref() else {
            return fail(UbsStatus::InvalidArgument, "null sensitivities");
        };
        if rows.is_null() || cols.is_null() {
            return fail(UbsStatus::InvalidArgument, "null shape output");
        }
        let m = select(&sens.0, which);
        *rows = m.nrows();
        *cols = m.ncols();
        UbsStatus::Ok
    })
}

/// Copies one matrix row-major into `out`, which must hold rows × cols values.
///
/// # Safety
/// `sens` must be a live handle and `out` point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn ubs_sensitivities_matrix(
    sens: *const UbsSensitivities,
    which: UbsMatrix,
    out: *mut f64,
    len: usize,
) -> UbsStatus {
    guard(|| {
        let Some(sens) = sens.as_ref() else {
            return fail(UbsStatus::InvalidArgument, "null sensitivities");
        };
        let row_major: Vec<f64> = select(&sens.0, which).transpose().as_slice().to_vec();
        copy_out(&row_major, out, len)
    })
}
