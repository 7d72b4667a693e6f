//! C ABI over protocol sessions. Handles are opaque. Every call returns an
//! [`AbcdeStatus`] and writes results through out-pointers; strings handed
//! out must be released with [`abcde_string_free`].

use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use abcde::catalog::Catalog;
use abcde::protocol::{Connection, ServerContext};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbcdeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Panic = 3,
    /// Rejected input, e.g. a catalog that fails validation.
    Invalid = 4,
}

/// One protocol connection with its own session.
pub struct AbcdeSession {
    conn: Connection,
}

fn guard(f: impl FnOnce() -> AbcdeStatus) -> AbcdeStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(AbcdeStatus::Panic)
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, AbcdeStatus> {
    if p.is_null() {
        return Err(AbcdeStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| AbcdeStatus::InvalidUtf8)
}

fn hand_out(s: String, out: *mut *mut c_char) -> AbcdeStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            AbcdeStatus::Ok
        }
        Err(_) => AbcdeStatus::Invalid,
    }
}

/// Creates a session. `catalog_json` may be NULL for the built-in catalog.
/// `config_json` is the CreateSession payload (NULL for defaults).
///
/// # Safety
/// String arguments must be NUL-terminated or NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abcde_session_new(
    catalog_json: *const c_char,
    config_json: *const c_char,
    out: *mut *mut AbcdeSession,
) -> AbcdeStatus {
    guard(|| {
        if out.is_null() {
            return AbcdeStatus::NullPointer;
        }
        *out = ptr::null_mut();
        let catalog = if catalog_json.is_null() {
            Catalog::desk()
        } else {
            let text = match read_str(catalog_json) {
                Ok(t) => t,
                Err(s) => return s,
            };
            match Catalog::from_json(text) {
                Ok(c) => c,
                Err(_) => return AbcdeStatus::Invalid,
            }
        };
        let payload = if config_json.is_null() {
            "null"
        } else {
            match read_str(config_json) {
                Ok(t) => t,
                Err(s) => return s,
            }
        };
        let mut conn = Connection::new(ServerContext::new(Arc::new(catalog), 1));
        let line = format!("{{\"request_id\":0,\"verb\":\"CreateSession\",\"payload\":{payload}}}");
        conn.handle_line(&line);
        if conn.session().is_none() {
            return AbcdeStatus::Invalid;
        }
        *out = Box::into_raw(Box::new(AbcdeSession { conn }));
        AbcdeStatus::Ok
    })
}

/// # Safety
/// `session` must come from [`abcde_session_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn abcde_session_free(session: *mut AbcdeSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Sends one request line and returns the response line, followed by any
/// push lines, joined with '\n'. Protocol errors come back inside the
/// response document with status `AbcdeStatus::Ok`. Request ids start
/// above 0, which the session itself used.
///
/// # Safety
/// `session` must be live, `request` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn abcde_session_request(
    session: *mut AbcdeSession,
    request: *const c_char,
    out: *mut *mut c_char,
) -> AbcdeStatus {
    guard(|| {
        if session.is_null() || out.is_null() {
            return AbcdeStatus::NullPointer;
        }
        *out = ptr::null_mut();
        let line = match read_str(request) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let lines = (*session).conn.handle_line(line);
        hand_out(lines.join("\n"), out)
    })
}

/// Current 64-bit scene hash.
///
/// # Safety
/// `session` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn abcde_session_scene_hash(session: *const AbcdeSession, out: *mut u64) -> AbcdeStatus {
    guard(|| {
        if session.is_null() || out.is_null() {
            return AbcdeStatus::NullPointer;
        }
        match (*session).conn.session() {
            Some(s) => {
                *out = s.scene().state_hash();
                AbcdeStatus::Ok
            }
            None => AbcdeStatus::Invalid,
        }
    })
}

/// Episode log (header, events, footer) as JSONL.
///
/// # Safety
/// `session` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn abcde_session_episode(session: *const AbcdeSession, out: *mut *mut c_char) -> AbcdeStatus {
    guard(|| {
        if session.is_null() || out.is_null() {
            return AbcdeStatus::NullPointer;
        }
        *out = ptr::null_mut();
        match (*session).conn.session() {
            Some(s) => hand_out(s.episode_jsonl(), out),
            None => AbcdeStatus::Invalid,
        }
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn abcde_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn abcde_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
