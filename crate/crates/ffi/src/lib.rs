//! C ABI for annotation sessions.
//!
//! Sessions are opaque handles created by `cseg_session_new*` and released
//! with `cseg_session_free`. Every fallible call returns a [`CsegStatus`];
//! the message of the most recent failure on the calling thread is available
//! through `cseg_last_error`. Strings returned by the library are freed with
//! `cseg_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cseg::metrics;
use cseg::raster::{self, ImagePlane, PanopticTruth, SuperpixelMap};
use cseg::{Session, SessionConfig, SessionError, SessionInputs, ScribbleSet};

/// Result codes of all fallible calls.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsegStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidInput = 2,
    PolicyViolation = 3,
    NoSolution = 4,
    NoRound = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// Opaque session handle.
pub struct CsegSession {
    session: Session,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(CsegStatus, String);

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::Policy(_) => CsegStatus::PolicyViolation,
            SessionError::NoSolution(_) => CsegStatus::NoSolution,
            SessionError::NoRound => CsegStatus::NoRound,
            _ => CsegStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure(CsegStatus::InvalidInput, e.to_string())
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CsegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsegStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CsegStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CsegStatus::NullArgument, format!("{what} is null"))
}

unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn req_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    opt_str(p, what)?.ok_or_else(|| null(what))
}

unsafe fn session_mut<'a>(s: *mut CsegSession) -> Result<&'a mut CsegSession, Failure> {
    s.as_mut().ok_or_else(|| null("session"))
}

fn parse_config(json: Option<&str>) -> Result<SessionConfig, Failure> {
    match json {
        Some(j) => serde_json::from_str(j).map_err(|e| invalid(format!("config: {e}"))),
        None => Ok(SessionConfig::default()),
    }
}

fn finish(inputs: SessionInputs, config: SessionConfig, out: *mut *mut CsegSession) {
    let handle = Box::new(CsegSession {
        session: Session::new(inputs, config),
    });
    // SAFETY: checked non-null by the caller before any work.
    unsafe { *out = Box::into_raw(handle) };
}

/// Opens a session from files. `superpixels_path`, `probmap_path` and
/// `config_json` may be null; without superpixels a grid is used.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cseg_session_new(
    image_path: *const c_char,
    superpixels_path: *const c_char,
    probmap_path: *const c_char,
    config_json: *const c_char,
    out: *mut *mut CsegSession,
) -> CsegStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let image = raster::load_image(req_str(image_path, "image_path")?).map_err(invalid)?;
        let sp = opt_str(superpixels_path, "superpixels_path")?
            .map(raster::load_superpixels)
            .transpose()
            .map_err(invalid)?;
        let prob = opt_str(probmap_path, "probmap_path")?
            .map(|p| raster::load_field(p, true))
            .transpose()
            .map_err(invalid)?;
        let config = parse_config(opt_str(config_json, "config_json")?)?;
        let inputs = SessionInputs::new(image, sp, None, prob, config.superpixels)?;
        finish(inputs, config, out);
        Ok(())
    })
}

/// Opens a session from an interleaved 8-bit RGB buffer of `width*height*3`
/// bytes and optional superpixel labels of `width*height` entries.
///
/// # Safety
/// Buffers must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cseg_session_new_rgb8(
    width: usize,
    height: usize,
    rgb: *const u8,
    superpixels: *const u32,
    config_json: *const c_char,
    out: *mut *mut CsegSession,
) -> CsegStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        let n = width * height;
        let image = ImagePlane::from_u8(width, height, 3, std::slice::from_raw_parts(rgb, n * 3)).map_err(invalid)?;
        let sp = if superpixels.is_null() {
            None
        } else {
            let labels = std::slice::from_raw_parts(superpixels, n).to_vec();
            Some(SuperpixelMap::from_labels(width, height, labels).map_err(invalid)?)
        };
        let config = parse_config(opt_str(config_json, "config_json")?)?;
        let inputs = SessionInputs::new(image, sp, None, None, config.superpixels)?;
        finish(inputs, config, out);
        Ok(())
    })
}

/// Releases a session. Null is ignored.
///
/// # Safety
/// `session` must come from `cseg_session_new*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cseg_session_free(session: *mut CsegSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Image size of the session.
///
/// # Safety
/// Pointers must be valid; `width`/`height` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cseg_session_size(
    session: *mut CsegSession,
    width: *mut usize,
    height: *mut usize,
) -> CsegStatus {
    guard(|| {
        let s = session_mut(session)?;
        if width.is_null() || height.is_null() {
            return Err(null("width/height"));
        }
        *width = s.session.inputs.width();
        *height = s.session.inputs.height();
        Ok(())
    })
}

/// Adds the scribbles in `scribbles_json` (null for none) and runs a round.
/// The new round's index is written to `round` when non-null.
///
/// # Safety
/// `session` must be a live handle; `scribbles_json` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cseg_session_run_round(
    session: *mut CsegSession,
    scribbles_json: *const c_char,
    round: *mut usize,
) -> CsegStatus {
    guard(|| {
        let s = session_mut(session)?;
        let set = opt_str(scribbles_json, "scribbles_json")?
            .map(ScribbleSet::from_json)
            .transpose()
            .map_err(invalid)?;
        let r = s.session.run_round(set, None)?.round;
        if !round.is_null() {
            *round = r;
        }
        Ok(())
    })
}

/// Number of completed rounds.
///
/// # Safety
/// `session` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cseg_session_round_count(session: *const CsegSession) -> usize {
    session.as_ref().map_or(0, |s| s.session.history().len())
}

/// Copies the class map of `round` into `buffer`, which holds `len`
/// entries; `len` must be at least `width*height`.
///
/// # Safety
/// `buffer` must be writable for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn cseg_session_class_map(
    session: *mut CsegSession,
    round: usize,
    buffer: *mut u32,
    len: usize,
) -> CsegStatus {
    guard(|| {
        let s = session_mut(session)?;
        let r = s
            .session
            .round(round)
            .ok_or_else(|| Failure(CsegStatus::NoRound, format!("round {round} does not exist")))?;
        let ids = &r.rendered.class_ids;
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        if len < ids.len() {
            return Err(Failure(
                CsegStatus::BufferTooSmall,
                format!("buffer holds {len} entries, {} needed", ids.len()),
            ));
        }
        ptr::copy_nonoverlapping(ids.as_ptr(), buffer, ids.len());
        Ok(())
    })
}

/// Report of `round` as a JSON string, or null on failure. Free the result
/// with `cseg_string_free`.
///
/// # Safety
/// `session` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cseg_session_report_json(session: *mut CsegSession, round: usize) -> *mut c_char {
    let mut out = ptr::null_mut();
    let status = guard(|| {
        let s = session_mut(session)?;
        let r = s
            .session
            .round(round)
            .ok_or_else(|| Failure(CsegStatus::NoRound, format!("round {round} does not exist")))?;
        out = CString::new(r.report.to_json()).map_err(invalid)?.into_raw();
        Ok(())
    });
    if status == CsegStatus::Ok {
        out
    } else {
        ptr::null_mut()
    }
}

/// Mean IoU of class maps `pred` against `truth`, both `len` entries long.
/// Truth pixels equal to 255 are ignored.
///
/// # Safety
/// Both buffers must hold `len` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cseg_miou(pred: *const u32, truth: *const u32, len: usize, out: *mut f64) -> CsegStatus {
    guard(|| {
        if pred.is_null() || truth.is_null() || out.is_null() {
            return Err(null("pred/truth/out"));
        }
        let t = std::slice::from_raw_parts(truth, len).to_vec();
        let truth = PanopticTruth::new(len, 1, t, vec![0; len]).map_err(invalid)?;
        let report = metrics::miou(std::slice::from_raw_parts(pred, len), &truth).map_err(invalid)?;
        *out = report.mean;
        Ok(())
    })
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cseg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn cseg_status_string(status: CsegStatus) -> *const c_char {
    let s: &'static CStr = match status {
        CsegStatus::Ok => c"ok",
        CsegStatus::NullArgument => c"null argument",
        CsegStatus::InvalidInput => c"invalid input",
        CsegStatus::PolicyViolation => c"scribble policy violation",
        CsegStatus::NoSolution => c"no solution within budget",
        CsegStatus::NoRound => c"no such round",
        CsegStatus::BufferTooSmall => c"buffer too small",
        CsegStatus::Internal => c"internal error",
    };
    s.as_ptr()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cseg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
