//! C ABI for the netlang toolkit.
//!
//! Grammars and fused STC-AOGs are opaque handles created from their
//! JSON forms. Functions return `NlStatus`; string-returning calls
//! allocate with `CString` and the caller frees via `nl_string_free`.
//! The last error message is kept per thread and fetched with
//! `nl_last_error`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;

use netlang::error::Error;
use netlang::fol::{describe_aog, describe_pg, render_numbered};
use netlang::fusion::StcAog;
use netlang::grammar::Grammar;
use netlang::induction::{induce_layers, log_to_csv, InductionConfig};
use netlang::naming::NamingMap;
use netlang::parsing::{viterbi_parse, ParseGraph};
use netlang::sim::{simulate, SimConfig};
use netlang::trace::{Corpus, Trace};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlStatus {
    Ok = 0,
    NullArgument = 1,
    Utf8 = 2,
    Json = 3,
    InvalidGrammar = 4,
    Unparseable = 5,
    Domain = 6,
}

pub struct NlGrammar {
    inner: Grammar,
}

pub struct NlStcAog {
    inner: StcAog,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let cleaned: String = message.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(cleaned).ok();
    });
}

fn status_of(err: &Error) -> NlStatus {
    match err {
        Error::Json(_) | Error::Format(_) => NlStatus::Json,
        Error::InvalidGrammar(_) => NlStatus::InvalidGrammar,
        Error::UnparseableTrace(_) => NlStatus::Unparseable,
        _ => NlStatus::Domain,
    }
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string valid for the call.
unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, NlStatus> {
    if ptr.is_null() {
        set_error("null argument");
        return Err(NlStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        NlStatus::Utf8
    })
}

fn give_string(s: String) -> *mut c_char {
    let cleaned: String = s.chars().filter(|c| *c != '\0').collect();
    CString::new(cleaned).map_or(std::ptr::null_mut(), CString::into_raw)
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn nl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Last error message on this thread, or null. Caller frees with
/// `nl_string_free`.
#[no_mangle]
pub extern "C" fn nl_last_error() -> *mut c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(msg) => msg.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be a pointer previously returned by a string-returning
/// function of this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a grammar from canonical JSON into a new handle.
///
/// # Safety
/// `json` must be a valid NUL-terminated string; `out` must be a valid
/// pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn nl_grammar_from_json(
    json: *const c_char,
    out: *mut *mut NlGrammar,
) -> NlStatus {
    if out.is_null() {
        set_error("null output pointer");
        return NlStatus::NullArgument;
    }
    let text = match read_str(json) {
        Ok(t) => t,
        Err(status) => return status,
    };
    match Grammar::from_json(text) {
        Ok(grammar) => {
            *out = Box::into_raw(Box::new(NlGrammar { inner: grammar }));
            NlStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// # Safety
/// `g` must be a handle from `nl_grammar_from_json`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nl_grammar_free(g: *mut NlGrammar) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Canonical JSON of the grammar. Caller frees.
///
/// # Safety
/// `g` must be a live grammar handle.
#[no_mangle]
pub unsafe extern "C" fn nl_grammar_to_json(g: *const NlGrammar) -> *mut c_char {
    match g.as_ref() {
        Some(g) => give_string(g.inner.to_json()),
        None => {
            set_error("null grammar handle");
            std::ptr::null_mut()
        }
    }
}

/// Validation report as a JSON array of strings (empty when valid).
/// Caller frees.
///
/// # Safety
/// `g` must be a live grammar handle.
#[no_mangle]
pub unsafe extern "C" fn nl_grammar_validate(g: *const NlGrammar) -> *mut c_char {
    match g.as_ref() {
        Some(g) => {
            let report: Vec<String> = g.inner.validate().iter().map(|v| v.to_string()).collect();
            give_string(serde_json::to_string(&report).unwrap_or_else(|_| "[]".to_string()))
        }
        None => {
            set_error("null grammar handle");
            std::ptr::null_mut()
        }
    }
}

/// Non-terminals plus terminals reachable from the start symbol.
///
/// # Safety
/// `g` must be a live grammar handle.
#[no_mangle]
pub unsafe extern "C" fn nl_grammar_node_count(g: *const NlGrammar) -> u64 {
    g.as_ref().map_or(0, |g| g.inner.node_count() as u64)
}

/// Seeded derivation: the terminal frontier as a space-joined string.
/// Caller frees; null on invalid grammars.
///
/// # Safety
/// `g` must be a live grammar handle.
#[no_mangle]
pub unsafe extern "C" fn nl_grammar_sample(g: *const NlGrammar, seed: u64) -> *mut c_char {
    let Some(g) = g.as_ref() else {
        set_error("null grammar handle");
        return std::ptr::null_mut();
    };
    match g.inner.sample_derivation(seed) {
        Ok(frontier) => {
            let names: Vec<&str> = frontier.iter().map(|s| s.name.as_str()).collect();
            give_string(names.join(" "))
        }
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// DOT text of the grammar. Caller frees; null on invalid grammars.
///
/// # Safety
/// `g` must be a live grammar handle.
#[no_mangle]
pub unsafe extern "C" fn nl_grammar_to_dot(g: *const NlGrammar) -> *mut c_char {
    let Some(g) = g.as_ref() else {
        set_error("null grammar handle");
        return std::ptr::null_mut();
    };
    match g.inner.export_dot() {
        Ok(dot) => give_string(dot),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Parses a fused STC-AOG from JSON into a new handle.
///
/// # Safety
/// `json` must be a valid NUL-terminated string; `out` must be a valid
/// pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn nl_stc_from_json(
    json: *const c_char,
    out: *mut *mut NlStcAog,
) -> NlStatus {
    if out.is_null() {
        set_error("null output pointer");
        return NlStatus::NullArgument;
    }
    let text = match read_str(json) {
        Ok(t) => t,
        Err(status) => return status,
    };
    match StcAog::from_json(text) {
        Ok(aog) => {
            *out = Box::into_raw(Box::new(NlStcAog { inner: aog }));
            NlStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// # Safety
/// `aog` must be a handle from `nl_stc_from_json`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nl_stc_free(aog: *mut NlStcAog) {
    if !aog.is_null() {
        drop(Box::from_raw(aog));
    }
}

/// # Safety
/// `aog` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nl_stc_to_json(aog: *const NlStcAog) -> *mut c_char {
    match aog.as_ref() {
        Some(a) => give_string(a.inner.to_json()),
        None => {
            set_error("null aog handle");
            std::ptr::null_mut()
        }
    }
}

/// Viterbi interpretation of one trace (JSON in, parse-graph JSON out).
/// Caller frees; null with `nl_last_error` set on failures.
///
/// # Safety
/// `aog` must be a live handle and `trace_json` a valid string.
#[no_mangle]
pub unsafe extern "C" fn nl_stc_parse_trace(
    aog: *const NlStcAog,
    trace_json: *const c_char,
) -> *mut c_char {
    let Some(a) = aog.as_ref() else {
        set_error("null aog handle");
        return std::ptr::null_mut();
    };
    let Ok(text) = read_str(trace_json) else {
        return std::ptr::null_mut();
    };
    let trace: Trace = match serde_json::from_str(text) {
        Ok(t) => t,
        Err(e) => {
            set_error(&format!("json: {e}"));
            return std::ptr::null_mut();
        }
    };
    match viterbi_parse(&a.inner, &trace) {
        Ok(pg) => give_string(pg.to_json()),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Numbered first-order-logic description of the whole grammar.
/// Caller frees.
///
/// # Safety
/// `aog` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nl_stc_describe(aog: *const NlStcAog) -> *mut c_char {
    let Some(a) = aog.as_ref() else {
        set_error("null aog handle");
        return std::ptr::null_mut();
    };
    match describe_aog(&a.inner) {
        Ok(sentences) => give_string(render_numbered(&sentences)),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Numbered description of one parse graph (JSON in). Caller frees.
///
/// # Safety
/// `aog` must be a live handle and `pg_json` a valid string.
#[no_mangle]
pub unsafe extern "C" fn nl_stc_describe_pg(
    aog: *const NlStcAog,
    pg_json: *const c_char,
) -> *mut c_char {
    let Some(a) = aog.as_ref() else {
        set_error("null aog handle");
        return std::ptr::null_mut();
    };
    let Ok(text) = read_str(pg_json) else {
        return std::ptr::null_mut();
    };
    let pg = match ParseGraph::from_json(text) {
        Ok(pg) => pg,
        Err(e) => {
            set_error(&e.to_string());
            return std::ptr::null_mut();
        }
    };
    match describe_pg(&pg, &a.inner) {
        Ok(sentences) => give_string(render_numbered(&sentences)),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Runs the offload simulator (config JSON or null for defaults) and
/// returns the trace corpus as JSONL. Caller frees.
///
/// # Safety
/// `config_json` must be null or a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nl_simulate(config_json: *const c_char) -> *mut c_char {
    let config = if config_json.is_null() {
        SimConfig::default()
    } else {
        let Ok(text) = read_str(config_json) else {
            return std::ptr::null_mut();
        };
        match SimConfig::from_json(text) {
            Ok(c) => c,
            Err(e) => {
                set_error(&e.to_string());
                return std::ptr::null_mut();
            }
        }
    };
    match simulate(&config) {
        Ok(output) => {
            let mut buf = Vec::new();
            if output.corpus.write_jsonl(&mut buf).is_err() {
                set_error("serialization failed");
                return std::ptr::null_mut();
            }
            give_string(String::from_utf8_lossy(&buf).into_owned())
        }
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Induces one layer grammar (`layer` 0 = spatial, 1 = temporal) from
/// JSONL traces. On success writes the grammar JSON to `out_grammar`
/// and the iteration log CSV to `out_log` (either may be null to skip).
///
/// # Safety
/// `traces_jsonl` must be a valid string; `config_json` null or valid;
/// the out pointers null or valid to receive allocations.
#[no_mangle]
pub unsafe extern "C" fn nl_induce(
    traces_jsonl: *const c_char,
    layer: i32,
    config_json: *const c_char,
    out_grammar: *mut *mut c_char,
    out_log: *mut *mut c_char,
) -> NlStatus {
    let text = match read_str(traces_jsonl) {
        Ok(t) => t,
        Err(status) => return status,
    };
    let corpus = match Corpus::read_jsonl(std::io::Cursor::new(text.as_bytes())) {
        Ok(c) => c,
        Err(e) => {
            set_error(&e.to_string());
            return status_of(&e);
        }
    };
    let config: InductionConfig = if config_json.is_null() {
        InductionConfig::default()
    } else {
        let Ok(cfg_text) = read_str(config_json) else {
            return NlStatus::Utf8;
        };
        match serde_json::from_str(cfg_text) {
            Ok(c) => c,
            Err(e) => {
                set_error(&format!("json: {e}"));
                return NlStatus::Json;
            }
        }
    };
    let layered = match induce_layers(&corpus, &config, &NamingMap::shipped()) {
        Ok(l) => l,
        Err(e) => {
            set_error(&e.to_string());
            return status_of(&e);
        }
    };
    let grammar = match layer {
        0 => layered.s,
        1 => layered.t,
        other => {
            set_error(&format!("unknown layer {other}; expected 0 or 1"));
            return NlStatus::Domain;
        }
    };
    if !out_grammar.is_null() {
        *out_grammar = give_string(grammar.to_json());
    }
    if !out_log.is_null() {
        *out_log = give_string(log_to_csv(&layered.log));
    }
    NlStatus::Ok
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cstring(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    unsafe fn take_string(ptr: *mut c_char) -> String {
        assert!(!ptr.is_null());
        let s = CStr::from_ptr(ptr).to_str().unwrap().to_string();
        nl_string_free(ptr);
        s
    }

    #[test]
    fn grammar_round_trip_through_handles() {
        let json = r#"{
            "layer": "Temporal",
            "start": "Task",
            "terminals": ["A1", "A2", "A3", "A4"],
            "nodes": [
                {"id": "Task", "kind": "And", "children": [
                    {"id": "Enc", "p": 1.0}, {"id": "Route", "p": 1.0}, {"id": "Dec", "p": 1.0}
                ]},
                {"id": "Enc", "kind": "And", "children": [{"id": "A3", "p": 1.0}, {"id": "A2", "p": 1.0}]},
                {"id": "Route", "kind": "And", "children": [{"id": "A3", "p": 1.0}, {"id": "A4", "p": 1.0}]},
                {"id": "Dec", "kind": "And", "children": [{"id": "A3", "p": 1.0}, {"id": "A1", "p": 1.0}]}
            ]
        }"#;
        unsafe {
            let mut handle: *mut NlGrammar = std::ptr::null_mut();
            let status = nl_grammar_from_json(cstring(json).as_ptr(), &mut handle);
            assert_eq!(status, NlStatus::Ok);
            assert_eq!(nl_grammar_node_count(handle), 8);

            let report = take_string(nl_grammar_validate(handle));
            assert_eq!(report, "[]");

            let frontier = take_string(nl_grammar_sample(handle, 7));
            assert_eq!(frontier, "A3 A2 A3 A4 A3 A1");

            let dot = take_string(nl_grammar_to_dot(handle));
            assert!(dot.contains("shape=box"));

            nl_grammar_free(handle);
        }
    }

    #[test]
    fn bad_json_sets_error() {
        unsafe {
            let mut handle: *mut NlGrammar = std::ptr::null_mut();
            let status = nl_grammar_from_json(cstring("{").as_ptr(), &mut handle);
            assert_eq!(status, NlStatus::Json);
            let err = take_string(nl_last_error());
            assert!(err.contains("json"));
        }
    }

    #[test]
    fn simulate_and_induce_through_ffi() {
        unsafe {
            let config = cstring(r#"{"n_tasks": 400, "seed": 9}"#);
            let jsonl = take_string(nl_simulate(config.as_ptr()));
            assert_eq!(jsonl.lines().count(), 400);

            let traces = cstring(&jsonl);
            let mut grammar_out: *mut c_char = std::ptr::null_mut();
            let mut log_out: *mut c_char = std::ptr::null_mut();
            let status = nl_induce(
                traces.as_ptr(),
                0,
                std::ptr::null(),
                &mut grammar_out,
                &mut log_out,
            );
            assert_eq!(status, NlStatus::Ok);
            let grammar_json = take_string(grammar_out);
            let log_csv = take_string(log_out);
            assert!(grammar_json.contains("\"layer\": \"Spatial\""));
            assert!(log_csv.starts_with("iter,fragment,log_prior,log_likelihood,log_posterior"));

            let mut handle: *mut NlGrammar = std::ptr::null_mut();
            assert_eq!(nl_grammar_from_json(cstring(&grammar_json).as_ptr(), &mut handle), NlStatus::Ok);
            assert_eq!(take_string(nl_grammar_validate(handle)), "[]");
            nl_grammar_free(handle);
        }
    }
}
