//! C ABI for `fedagg`.
//!
//! Every function returns a [`FedaggStatus`]; on failure a message is kept per
//! thread and can be read with [`fedagg_last_error_message`]. Handles are
//! opaque and must be released with their `_free` function. No function
//! unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fedagg::aggregate::{dirichlet_mode, softmax_map, Concentration, KpMatrix, Parameterization};
use fedagg::cli::{parse_config, parse_config_str, run, RunDescriptor, RunReport};
use fedagg::fedsim::extra_comm_ratio;
use fedagg::Error;

/// Result of every exported call. Codes 2 to 4 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedaggStatus {
    Ok = 0,
    Config = 2,
    Numerical = 3,
    Io = 4,
    NullPointer = 10,
    InvalidArgument = 11,
    Panic = 12,
}

/// Mean and sample standard deviation of one strategy's run summaries.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FedaggSummary {
    pub global_test_avg_mean: f64,
    pub global_test_avg_std: f64,
    pub local_avg_mean: f64,
    pub local_avg_std: f64,
    pub local_gen_mean: f64,
    pub local_gen_std: f64,
    pub runs: usize,
}

/// Validated run descriptor.
pub struct FedaggDescriptor {
    inner: RunDescriptor,
}

/// Per-strategy results of a completed run.
pub struct FedaggReport {
    inner: RunReport,
    labels: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> FedaggStatus {
    match err.exit_code() {
        2 => FedaggStatus::Config,
        4 => FedaggStatus::Io,
        _ => FedaggStatus::Numerical,
    }
}

fn fail(status: FedaggStatus, msg: impl Into<String>) -> FedaggStatus {
    set_last_error(msg.into());
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), FedaggStatus>) -> FedaggStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FedaggStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(FedaggStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn lift<T>(r: fedagg::Result<T>) -> Result<T, FedaggStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, FedaggStatus> {
    if s.is_null() {
        return Err(fail(FedaggStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        fail(
            FedaggStatus::InvalidArgument,
            format!("{what} is not valid UTF-8"),
        )
    })
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), FedaggStatus> {
    if p.is_null() {
        Err(fail(FedaggStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fedagg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses and validates a TOML descriptor file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedagg_descriptor_from_file(
    path: *const c_char,
    out: *mut *mut FedaggDescriptor,
) -> FedaggStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = read_str(path, "path")?;
        let inner = lift(parse_config(&PathBuf::from(path)))?;
        *out = Box::into_raw(Box::new(FedaggDescriptor { inner }));
        Ok(())
    })
}

/// Parses and validates descriptor text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedagg_descriptor_from_str(
    text: *const c_char,
    out: *mut *mut FedaggDescriptor,
) -> FedaggStatus {
    guard(|| {
        non_null(out, "out")?;
        let text = read_str(text, "text")?;
        let inner = lift(parse_config_str(text))?;
        *out = Box::into_raw(Box::new(FedaggDescriptor { inner }));
        Ok(())
    })
}

/// Replaces the descriptor's output directory.
///
/// # Safety
/// `desc` must come from a `fedagg_descriptor_from_*` call; `dir` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedagg_descriptor_set_output_dir(
    desc: *mut FedaggDescriptor,
    dir: *const c_char,
) -> FedaggStatus {
    guard(|| {
        non_null(desc, "descriptor")?;
        let dir = read_str(dir, "dir")?;
        (*desc).inner.output_dir = PathBuf::from(dir);
        Ok(())
    })
}

/// # Safety
/// `desc` must be null or come from a `fedagg_descriptor_from_*` call, and
/// must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedagg_descriptor_free(desc: *mut FedaggDescriptor) {
    if !desc.is_null() {
        drop(Box::from_raw(desc));
    }
}

/// Runs every strategy and seed, writing the artifact tree.
///
/// # Safety
/// `desc` must be a live descriptor; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedagg_run(
    desc: *const FedaggDescriptor,
    out: *mut *mut FedaggReport,
) -> FedaggStatus {
    guard(|| {
        non_null(desc, "descriptor")?;
        non_null(out, "out")?;
        let inner = lift(run(&(*desc).inner))?;
        let labels = inner
            .summaries
            .iter()
            .map(|s| CString::new(s.label.clone()).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(FedaggReport { inner, labels }));
        Ok(())
    })
}

/// Number of strategy rows in the report.
///
/// # Safety
/// `report` must be a live report; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedagg_report_len(
    report: *const FedaggReport,
    out: *mut usize,
) -> FedaggStatus {
    guard(|| {
        non_null(report, "report")?;
        non_null(out, "out")?;
        *out = (*report).inner.summaries.len();
        Ok(())
    })
}

/// Summary row `index`. `label` receives a pointer owned by the report.
///
/// # Safety
/// `report` must be a live report; `label` and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedagg_report_summary(
    report: *const FedaggReport,
    index: usize,
    label: *mut *const c_char,
    out: *mut FedaggSummary,
) -> FedaggStatus {
    guard(|| {
        non_null(report, "report")?;
        non_null(label, "label")?;
        non_null(out, "out")?;
        let r = &*report;
        let s = r.inner.summaries.get(index).ok_or_else(|| {
            fail(
                FedaggStatus::InvalidArgument,
                format!(
                    "index {index} out of range ({} rows)",
                    r.inner.summaries.len()
                ),
            )
        })?;
        *label = r.labels[index].as_ptr();
        *out = FedaggSummary {
            global_test_avg_mean: s.global_test_avg.0,
            global_test_avg_std: s.global_test_avg.1,
            local_avg_mean: s.local_avg.0,
            local_avg_std: s.local_avg.1,
            local_gen_mean: s.local_gen.0,
            local_gen_std: s.local_gen.1,
            runs: s.runs,
        };
        Ok(())
    })
}

/// # Safety
/// `report` must be null or come from [`fedagg_run`], and must not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedagg_report_free(report: *mut FedaggReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Extra communication of weight learning relative to plain rounds:
/// `(K - 1) / (2 t0)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedagg_extra_comm_ratio(
    clients: usize,
    interval: usize,
    out: *mut f64,
) -> FedaggStatus {
    guard(|| {
        non_null(out, "out")?;
        if clients == 0 || interval == 0 {
            return Err(fail(
                FedaggStatus::InvalidArgument,
                "clients and interval must be positive",
            ));
        }
        *out = extra_comm_ratio(clients, interval);
        Ok(())
    })
}

unsafe fn slices<'a>(
    input: *const f64,
    output: *mut f64,
    len: usize,
) -> Result<(&'a [f64], &'a mut [f64]), FedaggStatus> {
    non_null(input, "input")?;
    non_null(output, "output")?;
    if len == 0 {
        return Err(fail(
            FedaggStatus::InvalidArgument,
            "length must be positive",
        ));
    }
    Ok((
        std::slice::from_raw_parts(input, len),
        std::slice::from_raw_parts_mut(output, len),
    ))
}

/// Mode of a Dirichlet distribution, `(beta_k - 1) / (sum beta - K)`.
/// Every `beta_k` must exceed 1.
///
/// # Safety
/// `beta` and `out` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn fedagg_dirichlet_mode(
    beta: *const f64,
    len: usize,
    out: *mut f64,
) -> FedaggStatus {
    guard(|| {
        let (beta, out) = slices(beta, out, len)?;
        out.copy_from_slice(&lift(dirichlet_mode(beta))?);
        Ok(())
    })
}

/// Softmax of `len` unconstrained values.
///
/// # Safety
/// `beta` and `out` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn fedagg_softmax(
    beta: *const f64,
    len: usize,
    out: *mut f64,
) -> FedaggStatus {
    guard(|| {
        let (beta, out) = slices(beta, out, len)?;
        let c = lift(
            KpMatrix::from_columns(&[beta.to_vec()])
                .and_then(|m| Concentration::new(m, Parameterization::Softmax)),
        )?;
        out.copy_from_slice(lift(softmax_map(&c))?.column(0));
        Ok(())
    })
}
