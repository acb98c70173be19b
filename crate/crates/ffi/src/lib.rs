//! C interface to `dode-core`.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free` function. Every fallible call returns a
//! [`DodeStatus`]; on failure a message is kept per thread and can be read with
//! [`dode_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dode_core::dnl::{assign_path_flows, run_dnl, DnlConfig, LinkStateTensor};
use dode_core::estimator::{default_route_proportions, DemandTensor};
use dode_core::network::{load_network, load_node_coords, Network, PathSet};
use dode_core::observation::{match_detections, Detection, DetectionClass, MatchStatus};
use dode_core::scenario::{run_scenario, ScenarioConfig};
use dode_core::synthetic::toy_network;
use dode_core::{Error, NUM_CLASSES};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DodeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Topology = 5,
    Dimension = 6,
    Numerical = 7,
    Config = 8,
    Panic = 9,
}

/// Link state selected by [`dode_states_get`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DodeStateKind {
    /// Arrivals per interval, vehicles.
    Flow = 0,
    /// Through travel time, seconds.
    TravelTime = 1,
    /// Smoothed vehicles present at interval end.
    Density = 2,
}

/// A network with its candidate paths and loader settings.
pub struct DodeNetwork {
    net: Network,
    paths: PathSet,
    dnl: DnlConfig,
}

/// Link states from one loader run.
pub struct DodeStates {
    states: LinkStateTensor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DodeStatus {
    match e {
        Error::Io { .. } => DodeStatus::Io,
        Error::Parse { .. } => DodeStatus::Parse,
        Error::Topology(_) | Error::Unreachable { .. } | Error::DegenerateOd(_) => DodeStatus::Topology,
        Error::Dimension(_) => DodeStatus::Dimension,
        Error::NonFinite(_) | Error::Diverged { .. } | Error::Invariant(_) => DodeStatus::Numerical,
        Error::Config(_) => DodeStatus::Config,
        _ => DodeStatus::InvalidArgument,
    }
}

struct Fail(DodeStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DodeStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DodeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DodeStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            DodeStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(DodeStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed_network(net: Network, k_paths: usize, out: *mut *mut DodeNetwork) -> Result<(), Fail> {
    let paths = PathSet::per_class(&net, k_paths)?;
    let handle = Box::new(DodeNetwork {
        net,
        paths,
        dnl: DnlConfig::default(),
    });
    // SAFETY: caller checked `out` for null.
    unsafe { *out = Box::into_raw(handle) };
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn dode_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds the built-in 18-link test network with `k_paths` paths per OD pair.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dode_network_toy(k_paths: usize, out: *mut *mut DodeNetwork) -> DodeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        boxed_network(toy_network(), k_paths, out)
    })
}

/// Loads a network from link and OD CSV files. `nodes_path` may be null.
///
/// # Safety
/// Paths must be null or NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dode_network_load(
    links_path: *const c_char,
    od_path: *const c_char,
    nodes_path: *const c_char,
    k_paths: usize,
    out: *mut *mut DodeNetwork,
) -> DodeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let links = path_arg(links_path, "links_path")?;
        let od = path_arg(od_path, "od_path")?;
        let mut net = load_network(&links, &od)?;
        if !nodes_path.is_null() {
            let nodes = path_arg(nodes_path, "nodes_path")?;
            net.set_coords(load_node_coords(&nodes)?);
        }
        boxed_network(net, k_paths, out)
    })
}

/// Releases a network handle. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dode_network_free(net: *mut DodeNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Writes the link count, OD pair count and horizon length in intervals.
/// Any output pointer may be null.
///
/// # Safety
/// `net` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dode_network_counts(
    net: *const DodeNetwork,
    num_links: *mut usize,
    num_od: *mut usize,
    intervals: *mut usize,
) -> DodeStatus {
    guard(|| {
        let h = net.as_ref().ok_or_else(|| null("net"))?;
        if let Some(p) = num_links.as_mut() {
            *p = h.net.num_links();
        }
        if let Some(p) = num_od.as_mut() {
            *p = h.net.num_od();
        }
        if let Some(p) = intervals.as_mut() {
            *p = h.dnl.horizon_intervals;
        }
        Ok(())
    })
}

/// Loads demand onto the network under free-flow logit route choice.
///
/// `car` and `truck` hold `num_od * intervals` values each, OD-major
/// (`od * intervals + t`).
///
/// # Safety
/// `net` must be a live handle, the demand arrays must hold `len` values and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dode_run_dnl(
    net: *const DodeNetwork,
    car: *const f64,
    truck: *const f64,
    len: usize,
    seed: u64,
    out: *mut *mut DodeStates,
) -> DodeStatus {
    guard(|| {
        let h = net.as_ref().ok_or_else(|| null("net"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let t = h.dnl.horizon_intervals;
        let q = DemandTensor::from_values(
            h.net.num_od(),
            t,
            [slice_arg(car, len, "car")?.to_vec(), slice_arg(truck, len, "truck")?.to_vec()],
        )?;
        let p = default_route_proportions(&h.paths, &h.dnl)?;
        let f = assign_path_flows(&q, &p, &h.paths)?;
        let states = run_dnl(&h.net, &h.paths, &f, &h.dnl, seed)?.states;
        *out = Box::into_raw(Box::new(DodeStates { states }));
        Ok(())
    })
}

/// Copies one state for one class (0 car, 1 truck) into `buf`, link-major
/// (`link * intervals + t`). `len` must equal `num_links * intervals`.
///
/// # Safety
/// `states` must be a live handle and `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn dode_states_get(
    states: *const DodeStates,
    kind: DodeStateKind,
    class: u32,
    buf: *mut f64,
    len: usize,
) -> DodeStatus {
    guard(|| {
        let s = &states.as_ref().ok_or_else(|| null("states"))?.states;
        let c = class as usize;
        if c >= NUM_CLASSES {
            return Err(Fail(DodeStatus::InvalidArgument, format!("class {class} out of range")));
        }
        let src = match kind {
            DodeStateKind::Flow => &s.flow[c],
            DodeStateKind::TravelTime => &s.travel_time[c],
            DodeStateKind::Density => &s.density[c],
        };
        if len != src.len() {
            return Err(Fail(
                DodeStatus::Dimension,
                format!("buffer holds {len} values, states have {}", src.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(src);
        Ok(())
    })
}

/// Releases a states handle. Null is ignored.
///
/// # Safety
/// `states` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dode_states_free(states: *mut DodeStates) {
    if !states.is_null() {
        drop(Box::from_raw(states));
    }
}

/// Matches `n` detections to road segments within `buffer_m` meters.
///
/// `classes` uses 0 car, 1 truck, anything else for other. `out_links`
/// receives the matched link index, -1 when no segment is close enough and
/// -2 for classes that are not modelled.
///
/// # Safety
/// `net` must be a live handle; every array must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn dode_match_detections(
    net: *const DodeNetwork,
    xs: *const f64,
    ys: *const f64,
    classes: *const u8,
    n: usize,
    buffer_m: f64,
    out_links: *mut i64,
) -> DodeStatus {
    guard(|| {
        let h = net.as_ref().ok_or_else(|| null("net"))?;
        let xs = slice_arg(xs, n, "xs")?;
        let ys = slice_arg(ys, n, "ys")?;
        let cls = slice_arg(classes, n, "classes")?;
        if n > 0 && out_links.is_null() {
            return Err(null("out_links"));
        }
        let dets: Vec<Detection> = (0..n)
            .map(|i| Detection {
                id: i as u64,
                x: xs[i],
                y: ys[i],
                class: match cls[i] {
                    0 => DetectionClass::Car,
                    1 => DetectionClass::Truck,
                    _ => DetectionClass::Other,
                },
                snapshot_id: 0,
                interval: 0,
            })
            .collect();
        let matched = match_detections(&dets, &h.net, buffer_m)?;
        if n == 0 {
            return Ok(());
        }
        let out = std::slice::from_raw_parts_mut(out_links, n);
        for (o, m) in out.iter_mut().zip(matched) {
            *o = match m {
                MatchStatus::Matched { link, .. } => link as i64,
                MatchStatus::Unmatched => -1,
                MatchStatus::Dropped => -2,
            };
        }
        Ok(())
    })
}

/// Runs the scenario described by a TOML config. A non-null `out_dir`
/// replaces the output directory named in the file.
///
/// # Safety
/// Both arguments must be null or NUL-terminated strings (`config_path` may
/// not be null).
#[no_mangle]
pub unsafe extern "C" fn dode_run_scenario_file(config_path: *const c_char, out_dir: *const c_char) -> DodeStatus {
    guard(|| {
        let path = path_arg(config_path, "config_path")?;
        let mut cfg = ScenarioConfig::from_file(&path)?;
        if !out_dir.is_null() {
            cfg.out_dir = path_arg(out_dir, "out_dir")?;
        }
        cfg.validate()?;
        run_scenario(&cfg)?;
        Ok(())
    })
}
