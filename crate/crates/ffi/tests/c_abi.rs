use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use abcde_ffi::*;
use serde_json::Value;

fn request(h: *mut AbcdeSession, line: &str) -> Value {
    let req = CString::new(line).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { abcde_session_request(h, req.as_ptr(), &mut out) }, AbcdeStatus::Ok);
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
    unsafe { abcde_string_free(out) };
    serde_json::from_str(&text).unwrap()
}

fn new_session(seed: u64) -> *mut AbcdeSession {
    let cfg = CString::new(format!("{{\"seed\":{seed}}}")).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { abcde_session_new(ptr::null(), cfg.as_ptr(), &mut h) }, AbcdeStatus::Ok);
    assert!(!h.is_null());
    h
}

#[test]
fn request_roundtrip_and_hash() {
    let h = new_session(11);
    let r = request(h, r#"{"request_id":1,"verb":"Step","payload":{"n":5}}"#);
    assert_eq!(r["status"], "ok");
    assert_eq!(r["payload"]["tick"], 5);
    let r = request(h, "not json");
    assert_eq!(r["error"]["code"], "MalformedRequest");
    let r = request(h, r#"{"request_id":2,"verb":"GetScene"}"#);
    let mut hash = 0u64;
    assert_eq!(unsafe { abcde_session_scene_hash(h, &mut hash) }, AbcdeStatus::Ok);
    assert_eq!(r["payload"]["hash"], format!("{hash:016x}"));

    let mut ep = ptr::null_mut();
    assert_eq!(unsafe { abcde_session_episode(h, &mut ep) }, AbcdeStatus::Ok);
    let text = unsafe { CStr::from_ptr(ep) }.to_str().unwrap().to_string();
    unsafe { abcde_string_free(ep) };
    assert!(text.starts_with("{\"header\""));
    assert!(text.trim_end().ends_with(&format!("{{\"footer\":{{\"final_hash\":\"{hash:016x}\"}}}}")));
    unsafe { abcde_session_free(h) };
}

#[test]
fn same_seed_same_hash() {
    let (a, b) = (new_session(4), new_session(4));
    let (mut ha, mut hb) = (0, 1);
    unsafe {
        abcde_session_scene_hash(a, &mut ha);
        abcde_session_scene_hash(b, &mut hb);
        abcde_session_free(a);
        abcde_session_free(b);
    }
    assert_eq!(ha, hb);
}

#[test]
fn error_statuses() {
    let h = new_session(1);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { abcde_session_request(h, ptr::null(), &mut out) }, AbcdeStatus::NullPointer);
    let bad = [0xffu8, 0xfe, 0];
    let s = unsafe { abcde_session_request(h, bad.as_ptr().cast(), &mut out) };
    assert_eq!(s, AbcdeStatus::InvalidUtf8);
    assert!(out.is_null());
    assert_eq!(unsafe { abcde_session_scene_hash(ptr::null(), &mut 0) }, AbcdeStatus::NullPointer);
    let cat = CString::new("{\"version\":\"x\",\"classes\":[]}").unwrap();
    let mut h2 = ptr::null_mut();
    assert_eq!(unsafe { abcde_session_new(cat.as_ptr(), ptr::null(), &mut h2) }, AbcdeStatus::Invalid);
    unsafe {
        abcde_session_free(h);
        abcde_session_free(ptr::null_mut());
        abcde_string_free(ptr::null_mut());
    }
    let v = unsafe { CStr::from_ptr(abcde_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_lists_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/abcde.h")).unwrap();
    for name in [
        "abcde_session_new",
        "abcde_session_free",
        "abcde_session_request",
        "abcde_session_scene_hash",
        "abcde_session_episode",
        "abcde_string_free",
        "abcde_version",
        "ABCDE_STATUS_OK = 0",
        "ABCDE_STATUS_NULL_POINTER = 1",
        "ABCDE_STATUS_INVALID_UTF8 = 2",
        "ABCDE_STATUS_PANIC = 3",
        "ABCDE_STATUS_INVALID = 4",
        "typedef struct AbcdeSession AbcdeSession;",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

/// Compiles and runs a C program against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf();
    let lib = profile_dir.join("libabcde_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let src = dir.join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "abcde.h"
int main(void) {
    AbcdeSession *s = NULL;
    if (abcde_session_new(NULL, "{\"seed\":7}", &s) != ABCDE_STATUS_OK) return 10;
    char *out = NULL;
    if (abcde_session_request(s, "{\"request_id\":1,\"verb\":\"Step\",\"payload\":{\"n\":3}}", &out) != ABCDE_STATUS_OK) return 11;
    if (strstr(out, "\"tick\":3") == NULL) return 12;
    abcde_string_free(out);
    uint64_t h = 0;
    if (abcde_session_scene_hash(s, &h) != ABCDE_STATUS_OK || h == 0) return 13;
    printf("%016llx\n", (unsigned long long)h);
    abcde_session_free(s);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg(format!("-I{}", concat!(env!("CARGO_MANIFEST_DIR"), "/include")))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("cc is available");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim().len(), 16);
}
