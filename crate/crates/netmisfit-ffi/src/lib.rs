//! C ABI for the misspecification-test library.
//!
//! Graphs are opaque handles created from an edge-list file or from an
//! in-memory edge array; test results come back as JSON strings plus a
//! decision code, so bindings in any language can parse one stable
//! format. Every function returns an [`NmfStatus`]; on failure a
//! per-thread message is available through [`nmf_last_error_message`].
//!
//! Strings returned by this library must be released with
//! [`nmf_string_free`], graphs with [`nmf_graph_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use netmisfit::erg::{erg_mle, erg_observations, erg_test_with_fit, ErgSizeFactor, ErgTestMode};
use netmisfit::graph::{read_graph, Graph};
use netmisfit::report::{erg_fit_block, erg_test_block, sbm_fit_block, sbm_test_block, JsonReport};
use netmisfit::samplers::Seed;
use netmisfit::sbm::{
    fit_with, sbm_test_with_fit, BoundaryPolicy, IsolatedPolicy, SbmFitSpec, SbmSizeFactor,
    SbmTestMode, SbmTestOptions,
};
use netmisfit::{Decision, Error};

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    DataFormat = 3,
    EstimationFailed = 4,
    Internal = 5,
}

/// Test decisions, matching the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmfDecision {
    WellSpecified = 0,
    Misspecified = 1,
    Degenerate = 2,
}

/// ERG variance-bracket form.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmfErgMode {
    General = 0,
    PaperLiteral = 1,
}

/// SBM decision path.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmfSbmMode {
    Paper = 0,
    Reduced = 1,
}

/// Statistic multiplier.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmfSizeFactor {
    /// C(n,2) for either model.
    Pairs = 0,
    /// F = 1 (pairs with the paper-literal ERG statistic).
    One = 1,
    /// F = n, the vertex count (the SBM default).
    Vertices = 2,
}

/// Opaque graph handle.
pub struct NmfGraph {
    inner: Graph,
}

fn status_of(err: &Error) -> NmfStatus {
    match err {
        Error::Parse { .. }
        | Error::Io { .. }
        | Error::SelfLoop { .. }
        | Error::InvalidVertex { .. }
        | Error::InvalidLabel { .. }
        | Error::MissingLabels
        | Error::CapacityExceeded { .. } => NmfStatus::DataFormat,
        Error::InvalidArgument { .. }
        | Error::InvalidProbability { .. }
        | Error::IndivisibleN { .. }
        | Error::MismatchedSpecs { .. } => NmfStatus::InvalidArgument,
        Error::DegenerateEstimate { .. }
        | Error::IsolatedVertex { .. }
        | Error::EmptyBlock { .. } => NmfStatus::EstimationFailed,
        Error::SingularAn { .. }
        | Error::InvalidIndex { .. }
        | Error::NonFiniteEvaluation { .. } => NmfStatus::Internal,
    }
}

fn fail(err: &Error) -> NmfStatus {
    set_error(err.to_string());
    status_of(err)
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn nmf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread, or NULL. The
/// returned string is owned by the caller; free with `nmf_string_free`.
#[no_mangle]
pub extern "C" fn nmf_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match slot.borrow().as_ref() {
        Some(msg) => msg.clone().into_raw(),
        None => ptr::null_mut(),
    })
}

/// Free a string allocated by this library.
///
/// # Safety
/// `s` must be NULL or a pointer previously returned by this library and
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nmf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Read a graph (and optional labels file) from disk.
///
/// # Safety
/// `path` must be a NUL-terminated string; `labels_path` may be NULL;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nmf_graph_read(
    path: *const c_char,
    labels_path: *const c_char,
    out: *mut *mut NmfGraph,
) -> NmfStatus {
    if path.is_null() || out.is_null() {
        set_error("path and out must be non-NULL".into());
        return NmfStatus::NullArgument;
    }
    let path = PathBuf::from(CStr::from_ptr(path).to_string_lossy().into_owned());
    let labels = if labels_path.is_null() {
        None
    } else {
        Some(PathBuf::from(CStr::from_ptr(labels_path).to_string_lossy().into_owned()))
    };
    match read_graph(&path, labels.as_ref()) {
        Ok(graph) => {
            *out = Box::into_raw(Box::new(NmfGraph { inner: graph }));
            NmfStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Build a graph from a flat 1-based edge array [i1, j1, i2, j2, ...].
///
/// # Safety
/// `edges` must point to `2 * n_edges` readable u32 values (or be NULL
/// when `n_edges` is 0); `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nmf_graph_from_edges(
    n_vertices: usize,
    edges: *const u32,
    n_edges: usize,
    out: *mut *mut NmfGraph,
) -> NmfStatus {
    if out.is_null() || (edges.is_null() && n_edges > 0) {
        set_error("edges and out must be non-NULL".into());
        return NmfStatus::NullArgument;
    }
    let mut graph = match Graph::new(n_vertices) {
        Ok(g) => g,
        Err(e) => return fail(&e),
    };
    for idx in 0..n_edges {
        let i = *edges.add(2 * idx) as usize;
        let j = *edges.add(2 * idx + 1) as usize;
        if let Err(e) = graph.add_edge(i, j) {
            return fail(&e);
        }
    }
    *out = Box::into_raw(Box::new(NmfGraph { inner: graph }));
    NmfStatus::Ok
}

/// Attach 1-based block labels (length must equal the vertex count).
///
/// # Safety
/// `graph` must be a live handle; `labels` must point to `n_labels`
/// readable u32 values.
#[no_mangle]
pub unsafe extern "C" fn nmf_graph_set_labels(
    graph: *mut NmfGraph,
    labels: *const u32,
    n_labels: usize,
) -> NmfStatus {
    if graph.is_null() || labels.is_null() {
        set_error("graph and labels must be non-NULL".into());
        return NmfStatus::NullArgument;
    }
    let slice = std::slice::from_raw_parts(labels, n_labels);
    let labels: Vec<usize> = slice.iter().map(|&l| l as usize).collect();
    match (*graph).inner.set_labels(labels) {
        Ok(()) => NmfStatus::Ok,
        Err(e) => fail(&e),
    }
}

/// # Safety
/// `graph` must be NULL or a live handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nmf_graph_free(graph: *mut NmfGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Vertex count of a live handle; 0 for NULL.
///
/// # Safety
/// `graph` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nmf_graph_vertex_count(graph: *const NmfGraph) -> usize {
    if graph.is_null() {
        return 0;
    }
    (*graph).inner.vertex_count()
}

/// Edge count of a live handle; 0 for NULL.
///
/// # Safety
/// `graph` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nmf_graph_edge_count(graph: *const NmfGraph) -> usize {
    if graph.is_null() {
        return 0;
    }
    (*graph).inner.edge_count()
}

fn emit_json(
    report: JsonReport,
    decision: Decision,
    out_json: *mut *mut c_char,
    out_decision: *mut NmfDecision,
) -> NmfStatus {
    if !out_decision.is_null() {
        unsafe {
            *out_decision = match decision {
                Decision::WellSpecified => NmfDecision::WellSpecified,
                Decision::Misspecified => NmfDecision::Misspecified,
                Decision::Degenerate => NmfDecision::Degenerate,
            };
        }
    }
    if !out_json.is_null() {
        let text = report.to_stdout();
        match CString::new(text) {
            Ok(c) => unsafe { *out_json = c.into_raw() },
            Err(_) => {
                set_error("report contained an interior NUL".into());
                return NmfStatus::Internal;
            }
        }
    }
    NmfStatus::Ok
}

/// Run the one-parameter ERG misspecification test.
///
/// On success `out_decision` (if non-NULL) receives the decision and
/// `out_json` (if non-NULL) a JSON report string owned by the caller.
///
/// # Safety
/// `graph` must be a live handle; out pointers may be NULL when the
/// caller does not need them.
#[no_mangle]
pub unsafe extern "C" fn nmf_erg_test(
    graph: *const NmfGraph,
    alpha: f64,
    mode: NmfErgMode,
    size_factor: NmfSizeFactor,
    out_decision: *mut NmfDecision,
    out_json: *mut *mut c_char,
) -> NmfStatus {
    if graph.is_null() {
        set_error("graph must be non-NULL".into());
        return NmfStatus::NullArgument;
    }
    let mode = match mode {
        NmfErgMode::General => ErgTestMode::General,
        NmfErgMode::PaperLiteral => ErgTestMode::PaperLiteral,
    };
    let size_factor = match size_factor {
        NmfSizeFactor::Pairs => ErgSizeFactor::PairCount,
        NmfSizeFactor::One => ErgSizeFactor::PaperLiteralNone,
        NmfSizeFactor::Vertices => {
            set_error("size factor `vertices` applies to the SBM test".into());
            return NmfStatus::InvalidArgument;
        }
    };
    let g = &(*graph).inner;
    let obs = match erg_observations(g) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    let fit = match erg_mle(&obs) {
        Ok(f) => f,
        Err(e) => return fail(&e),
    };
    let test = match erg_test_with_fit(&obs, &fit, alpha, mode, size_factor) {
        Ok(t) => t,
        Err(e) => return fail(&e),
    };
    let mut report = JsonReport::new("test", "erg", None);
    report.fit = Some(erg_fit_block(&fit));
    report.test = Some(erg_test_block(&test));
    emit_json(report, test.decision, out_json, out_decision)
}

/// Run the SBM misspecification test.
///
/// With `blocks == 0` the graph's attached labels feed the closed-form
/// estimator; otherwise a variational fit with `blocks` blocks,
/// `restarts` restarts, and `seed` recovers labels first. A negative
/// `clamp_eps` selects the strict boundary policy.
///
/// # Safety
/// `graph` must be a live handle; out pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn nmf_sbm_test(
    graph: *const NmfGraph,
    alpha: f64,
    mode: NmfSbmMode,
    size_factor: NmfSizeFactor,
    blocks: usize,
    restarts: usize,
    seed: u64,
    clamp_eps: f64,
    drop_isolated: bool,
    out_decision: *mut NmfDecision,
    out_json: *mut *mut c_char,
) -> NmfStatus {
    if graph.is_null() {
        set_error("graph must be non-NULL".into());
        return NmfStatus::NullArgument;
    }
    let mode = match mode {
        NmfSbmMode::Paper => SbmTestMode::Paper,
        NmfSbmMode::Reduced => SbmTestMode::Reduced,
    };
    let size_factor = match size_factor {
        NmfSizeFactor::Pairs => SbmSizeFactor::PairCount,
        NmfSizeFactor::Vertices => SbmSizeFactor::VertexCount,
        NmfSizeFactor::One => {
            set_error("size factor `one` applies to the ERG test".into());
            return NmfStatus::InvalidArgument;
        }
    };
    let boundary = if clamp_eps < 0.0 {
        BoundaryPolicy::Strict
    } else {
        BoundaryPolicy::Clamp(clamp_eps)
    };
    let g = &(*graph).inner;
    let fit_spec = if blocks == 0 {
        SbmFitSpec::ObservedLabels { boundary }
    } else {
        SbmFitSpec::VariationalEm {
            m: blocks,
            restarts: restarts.max(1),
            seed: Seed::new(seed, 0),
            boundary,
        }
    };
    let fit = match fit_with(g, fit_spec) {
        Ok(f) => f,
        Err(e) => return fail(&e),
    };
    let opts = SbmTestOptions {
        alpha,
        mode,
        size_factor,
        isolated: if drop_isolated {
            IsolatedPolicy::DropIncident
        } else {
            IsolatedPolicy::Reject
        },
    };
    let test = match sbm_test_with_fit(g, &fit, &opts) {
        Ok(t) => t,
        Err(e) => return fail(&e),
    };
    let mut report = JsonReport::new("test", "sbm", Some(seed));
    report.fit = Some(sbm_fit_block(&fit));
    report.test = Some(sbm_test_block(&test));
    emit_json(report, test.decision, out_json, out_decision)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize) -> *mut NmfGraph {
        let edges: Vec<u32> = (1..n as u32).flat_map(|v| [v + 1, v]).collect();
        let mut handle: *mut NmfGraph = ptr::null_mut();
        let status =
            unsafe { nmf_graph_from_edges(n, edges.as_ptr(), edges.len() / 2, &mut handle) };
        assert_eq!(status, NmfStatus::Ok);
        handle
    }

    #[test]
    fn version_is_static() {
        let v = unsafe { CStr::from_ptr(nmf_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn graph_lifecycle_and_accessors() {
        let g = path_graph(6);
        unsafe {
            assert_eq!(nmf_graph_vertex_count(g), 6);
            assert_eq!(nmf_graph_edge_count(g), 5);
            nmf_graph_free(g);
            nmf_graph_free(ptr::null_mut());
        }
    }

    #[test]
    fn null_arguments_are_rejected() {
        let status = unsafe { nmf_graph_read(ptr::null(), ptr::null(), ptr::null_mut()) };
        assert_eq!(status, NmfStatus::NullArgument);
        let msg = nmf_last_error_message();
        assert!(!msg.is_null());
        unsafe { nmf_string_free(msg) };
    }

    #[test]
    fn erg_test_via_ffi() {
        let g = path_graph(20);
        let mut decision = NmfDecision::Degenerate;
        let mut json: *mut c_char = ptr::null_mut();
        let status = unsafe {
            nmf_erg_test(
                g,
                0.05,
                NmfErgMode::PaperLiteral,
                NmfSizeFactor::Pairs,
                &mut decision,
                &mut json,
            )
        };
        assert_eq!(status, NmfStatus::Ok);
        assert_eq!(decision, NmfDecision::WellSpecified);
        let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_string();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["model"], "erg");
        unsafe {
            nmf_string_free(json);
            nmf_graph_free(g);
        }
    }

    #[test]
    fn erg_general_mode_is_degenerate_via_ffi() {
        let g = path_graph(20);
        let mut decision = NmfDecision::WellSpecified;
        let status = unsafe {
            nmf_erg_test(
                g,
                0.05,
                NmfErgMode::General,
                NmfSizeFactor::Pairs,
                &mut decision,
                ptr::null_mut(),
            )
        };
        assert_eq!(status, NmfStatus::Ok);
        assert_eq!(decision, NmfDecision::Degenerate);
        unsafe { nmf_graph_free(g) };
    }

    #[test]
    fn sbm_test_via_ffi_with_labels() {
        // sample through the core library, feed through the ABI
        use netmisfit::samplers::{sample_sbm, SbmParams};
        let params =
            SbmParams::new(vec![0.5, 0.5], vec![vec![0.6, 0.15], vec![0.15, 0.6]]).unwrap();
        let sampled = sample_sbm(60, &params, Seed::new(3, 0), None).unwrap();
        let edges: Vec<u32> = sampled
            .canonical_edges()
            .into_iter()
            .flat_map(|(i, j)| [i as u32, j as u32])
            .collect();
        let mut handle: *mut NmfGraph = ptr::null_mut();
        unsafe {
            assert_eq!(
                nmf_graph_from_edges(60, edges.as_ptr(), edges.len() / 2, &mut handle),
                NmfStatus::Ok
            );
            let labels: Vec<u32> =
                sampled.labels().unwrap().iter().map(|&l| l as u32).collect();
            assert_eq!(
                nmf_graph_set_labels(handle, labels.as_ptr(), labels.len()),
                NmfStatus::Ok
            );
            let mut decision = NmfDecision::Misspecified;
            let mut json: *mut c_char = ptr::null_mut();
            let status = nmf_sbm_test(
                handle,
                0.05,
                NmfSbmMode::Reduced,
                NmfSizeFactor::Vertices,
                0,
                0,
                0,
                -1.0,
                false,
                &mut decision,
                &mut json,
            );
            assert_eq!(status, NmfStatus::Ok);
            let text = CStr::from_ptr(json).to_str().unwrap().to_string();
            let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
            assert_eq!(
                parsed["test"]["diagnostics"]["retained"],
                serde_json::json!([3, 5])
            );
            nmf_string_free(json);
            nmf_graph_free(handle);
        }
    }

    #[test]
    fn sbm_test_without_labels_needs_blocks() {
        let g = path_graph(10);
        let status = unsafe {
            nmf_sbm_test(
                g,
                0.05,
                NmfSbmMode::Reduced,
                NmfSizeFactor::Vertices,
                0,
                0,
                0,
                -1.0,
                false,
                ptr::null_mut(),
                ptr::null_mut(),
            )
        };
        assert_eq!(status, NmfStatus::DataFormat);
        unsafe { nmf_graph_free(g) };
    }
}
