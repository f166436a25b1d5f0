//! C ABI for the `ddm-sim` simulator.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free` function. Every fallible call returns a
//! [`DdmStatus`]; on failure `ddm_last_error` describes the most recent
//! error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ddm_sim::{
    compute_cd, decode_demand, encode_demand, parse_scenario, select_action, DemandRecord, Error,
    MsrWord,
};

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Scenario text or an argument failed validation.
    Invalid = 3,
    /// The cycle budget ran out. A partial result is still returned.
    Deadline = 4,
    Runtime = 5,
    Panic = 6,
}

/// A parsed, validated scenario.
pub struct DdmScenario(ddm_sim::Scenario);

/// The outcome of one simulation run.
pub struct DdmResult(ddm_sim::SimResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(err: &Error) -> DdmStatus {
    set_error(err.to_string());
    match err {
        Error::Deadline { .. } => DdmStatus::Deadline,
        e if e.is_validation() => DdmStatus::Invalid,
        _ => DdmStatus::Runtime,
    }
}

fn guard(f: impl FnOnce() -> DdmStatus) -> DdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            DdmStatus::Panic
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            set_error(concat!("`", stringify!($p), "` is null"));
            return DdmStatus::NullPointer;
        })+
    };
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ddm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ddm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Packs a demand record into a 64-bit register image.
///
/// # Safety
/// `out` must be a valid pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn ddm_encode_demand(pid: u32, sd: u8, pd: u8, out: *mut u64) -> DdmStatus {
    guard(|| {
        non_null!(out);
        match DemandRecord::new(pid, sd, pd) {
            Ok(rec) => {
                *out = encode_demand(&rec).0;
                DdmStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Unpacks a register image. Words with reserved bits set are rejected.
///
/// # Safety
/// `pid`, `sd` and `pd` must be valid pointers to writable memory.
#[no_mangle]
pub unsafe extern "C" fn ddm_decode_demand(
    word: u64,
    pid: *mut u32,
    sd: *mut u8,
    pd: *mut u8,
) -> DdmStatus {
    guard(|| {
        non_null!(pid, sd, pd);
        match decode_demand(MsrWord(word)) {
            Ok(rec) => {
                *pid = rec.user_pid();
                *sd = rec.sd();
                *pd = rec.pd();
                DdmStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Action code selected by the default policy: 0 (A00), 1 (A01) or 2 (A10).
///
/// # Safety
/// `action` must be a valid pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn ddm_select_action(sd: u8, pd: u8, action: *mut u8) -> DdmStatus {
    guard(|| {
        non_null!(action);
        match compute_cd(sd, pd) {
            Ok(cd) => {
                *action = select_action(cd).code();
                DdmStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Parses scenario text. On success `*out` receives a new handle.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddm_scenario_parse(
    text: *const c_char,
    out: *mut *mut DdmScenario,
) -> DdmStatus {
    guard(|| {
        non_null!(text, out);
        *out = ptr::null_mut();
        let Ok(text) = CStr::from_ptr(text).to_str() else {
            set_error("scenario text is not valid UTF-8");
            return DdmStatus::InvalidUtf8;
        };
        match parse_scenario(text) {
            Ok(scn) => {
                *out = Box::into_raw(Box::new(DdmScenario(scn)));
                DdmStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `scenario` must be null or a handle from `ddm_scenario_parse` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddm_scenario_free(scenario: *mut DdmScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs a scenario. On `Ok` or `Deadline`, `*out` receives a result handle.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddm_run(
    scenario: *const DdmScenario,
    out: *mut *mut DdmResult,
) -> DdmStatus {
    guard(|| {
        non_null!(scenario, out);
        *out = ptr::null_mut();
        let outcome = (*scenario).0.build(None, 0).and_then(|w| ddm_sim::run(&w));
        match outcome {
            Ok(r) => {
                *out = Box::into_raw(Box::new(DdmResult(r)));
                DdmStatus::Ok
            }
            Err(e @ Error::Deadline { .. }) => {
                let status = fail(&e);
                if let Error::Deadline { partial, .. } = e {
                    *out = Box::into_raw(Box::new(DdmResult(*partial)));
                }
                status
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `result` must be null or a handle from `ddm_run` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddm_result_free(result: *mut DdmResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// # Safety
/// `result` must be a live handle and `cycles` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddm_result_total_cycles(
    result: *const DdmResult,
    cycles: *mut u64,
) -> DdmStatus {
    guard(|| {
        non_null!(result, cycles);
        *cycles = (*result).0.total_cycles;
        DdmStatus::Ok
    })
}

/// Completion cycle of process `index` (scenario order), or `Runtime` if it
/// never finished.
///
/// # Safety
/// `result` must be a live handle and `cycle` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddm_result_completion(
    result: *const DdmResult,
    index: usize,
    cycle: *mut u64,
) -> DdmStatus {
    guard(|| {
        non_null!(result, cycle);
        let result = &*result;
        match result.0.completions.get(index) {
            Some(Some(c)) => {
                *cycle = *c;
                DdmStatus::Ok
            }
            Some(None) => {
                set_error(format!("process {index} did not complete"));
                DdmStatus::Runtime
            }
            None => {
                set_error(format!("no process {index}"));
                DdmStatus::Invalid
            }
        }
    })
}

/// Timeline as `cycle,event,core,pid` text. Free with `ddm_string_free`.
///
/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddm_result_timeline(
    result: *const DdmResult,
    out: *mut *mut c_char,
) -> DdmStatus {
    guard(|| {
        non_null!(result, out);
        let text = (*result).0.render_timeline();
        *out = CString::new(text).expect("timeline has no NUL").into_raw();
        DdmStatus::Ok
    })
}

/// # Safety
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
