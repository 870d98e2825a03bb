//! C interface: quantity sets with their Π-groups and similar-system
//! matching, and receding-horizon controllers built from task files.
//!
//! Every function returns a [`DmStatus`]. On failure the message is kept
//! per thread and read with [`dm_last_error`]. Handles are opaque and must
//! be released with their `_free` function.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dimless_mpc::dimensional::{compute_pi_groups, match_similar_system, pi_distance, DimensionalError, QuantitySet};
use dimless_mpc::envs::{EnvError, TaskSpec};
use dimless_mpc::mpc::{MpcController, MpcError};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DmStatus {
    Ok = 0,
    NullArgument = 1,
    Parse = 2,
    Dimensional = 3,
    Config = 4,
    Dissimilar = 5,
    Solver = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Quantity set with named dimensions and repeating quantities.
pub struct DmSystem {
    set: QuantitySet,
}

/// Controller taking physical states to physical inputs. Warm-starts from
/// its previous solution, so one handle serves one closed loop.
pub struct DmController {
    controller: MpcController,
}

struct Failure {
    status: DmStatus,
    message: String,
}

impl Failure {
    fn new(status: DmStatus, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

fn dimensional_status(e: &DimensionalError) -> DmStatus {
    match e {
        DimensionalError::IncomparableSets => DmStatus::Dissimilar,
        _ => DmStatus::Dimensional,
    }
}

fn mpc_status(e: &MpcError) -> DmStatus {
    match e {
        MpcError::Qp(_) | MpcError::Divergence(_) | MpcError::AtState { .. } => DmStatus::Solver,
        MpcError::Json(_) => DmStatus::Parse,
        _ => DmStatus::Config,
    }
}

impl From<DimensionalError> for Failure {
    fn from(e: DimensionalError) -> Self {
        Failure::new(dimensional_status(&e), e.to_string())
    }
}

impl From<EnvError> for Failure {
    fn from(e: EnvError) -> Self {
        let status = match &e {
            EnvError::Dimensional(d) => dimensional_status(d),
            EnvError::Mpc(m) => mpc_status(m),
            EnvError::Io { .. } | EnvError::Json { .. } => DmStatus::Parse,
            _ => DmStatus::Config,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<MpcError> for Failure {
    fn from(e: MpcError) -> Self {
        Failure::new(mpc_status(&e), e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DmStatus {
    set_last_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DmStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(_) => {
            set_last_error("internal panic");
            DmStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::new(DmStatus::NullArgument, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::new(DmStatus::Parse, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    match (p.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(null(what)),
        (false, _) => Ok(std::slice::from_raw_parts(p, len)),
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a quantity-set JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dm_system_from_json(json: *const c_char, out: *mut *mut DmSystem) -> DmStatus {
    guard(|| {
        let set: QuantitySet =
            serde_json::from_str(text(json, "json")?).map_err(|e| Failure::new(DmStatus::Parse, e.to_string()))?;
        compute_pi_groups(&set)?;
        emit(out, DmSystem { set })
    })
}

/// Writes the set as JSON into `buf` (NUL included). `written` receives the
/// required size, also when the buffer is too small.
///
/// # Safety
/// `buf` must hold `len` bytes; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn dm_system_to_json(
    system: *const DmSystem,
    buf: *mut c_char,
    len: usize,
    written: *mut usize,
) -> DmStatus {
    guard(|| {
        let system = handle(system, "system")?;
        let json = serde_json::to_string(&system.set).map_err(|e| Failure::new(DmStatus::Config, e.to_string()))?;
        let needed = json.len() + 1;
        if !written.is_null() {
            *written = needed;
        }
        if len < needed {
            return Err(Failure::new(DmStatus::BufferTooSmall, format!("{needed} bytes needed, {len} given")));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(json.as_ptr(), buf.cast(), json.len());
        *buf.add(json.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `system` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dm_system_free(system: *mut DmSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Number of Π-groups.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_system_pi_count(system: *const DmSystem, out: *mut usize) -> DmStatus {
    guard(|| {
        let n = compute_pi_groups(&handle(system, "system")?.set)?.len();
        *handle_mut(out, "out")? = n;
        Ok(())
    })
}

/// Π-group values in order, `len` at least [`dm_system_pi_count`].
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dm_system_pi_values(system: *const DmSystem, out: *mut f64, len: usize) -> DmStatus {
    guard(|| {
        let groups = compute_pi_groups(&handle(system, "system")?.set)?;
        if len < groups.len() {
            return Err(Failure::new(DmStatus::BufferTooSmall, format!("{} groups, room for {len}", groups.len())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        for (i, g) in groups.iter().enumerate() {
            *out.add(i) = g.value;
        }
        Ok(())
    })
}

/// Log-space distance between the Π-groups of two comparable sets.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_system_pi_distance(a: *const DmSystem, b: *const DmSystem, out: *mut f64) -> DmStatus {
    guard(|| {
        let d = pi_distance(&handle(a, "a")?.set, &handle(b, "b")?.set)?;
        *handle_mut(out, "out")? = d;
        Ok(())
    })
}

/// Similar system with `names[i]` set to `values[i]`; the remaining
/// quantities follow from equal Π-groups.
///
/// # Safety
/// `names` and `values` must hold `n` entries, names NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dm_system_match(
    reference: *const DmSystem,
    names: *const *const c_char,
    values: *const f64,
    n: usize,
    out: *mut *mut DmSystem,
) -> DmStatus {
    guard(|| {
        let reference = handle(reference, "reference")?;
        let names = slice(names, n, "names")?;
        let values = slice(values, n, "values")?;
        let mut set = BTreeMap::new();
        for (&name, &v) in names.iter().zip(values) {
            let name = text(name, "name")?;
            if set.insert(name.to_string(), v).is_some() {
                return Err(Failure::new(DmStatus::Config, format!("`{name}` is set twice")));
            }
        }
        let matched = match_similar_system(&reference.set, &[], &set)?;
        emit(out, DmSystem { set: matched })
    })
}

/// Controller for the task in the file at `path` (relative paths inside it
/// resolve against its directory) with dimensionless tunable weights.
///
/// # Safety
/// `path` must be NUL-terminated and `weights` hold `n_weights` doubles.
#[no_mangle]
pub unsafe extern "C" fn dm_controller_from_task_file(
    path: *const c_char,
    weights: *const f64,
    n_weights: usize,
    out: *mut *mut DmController,
) -> DmStatus {
    guard(|| {
        let path = Path::new(text(path, "path")?);
        let weights = slice(weights, n_weights, "weights")?;
        let spec = TaskSpec::load(path)?;
        let task = spec.build(path.parent().unwrap_or(Path::new(".")))?;
        let controller = task.controller(weights)?;
        emit(out, DmController { controller })
    })
}

/// # Safety
/// `controller` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dm_controller_free(controller: *mut DmController) {
    if !controller.is_null() {
        drop(Box::from_raw(controller));
    }
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_controller_n_states(controller: *const DmController, out: *mut usize) -> DmStatus {
    guard(|| {
        let n = handle(controller, "controller")?.controller.problem().n_states();
        *handle_mut(out, "out")? = n;
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_controller_n_inputs(controller: *const DmController, out: *mut usize) -> DmStatus {
    guard(|| {
        let n = handle(controller, "controller")?.controller.problem().n_inputs();
        *handle_mut(out, "out")? = n;
        Ok(())
    })
}

/// First optimal input at the physical `state`.
///
/// # Safety
/// `state` must hold `n_states` doubles and `input` room for `n_inputs`.
#[no_mangle]
pub unsafe extern "C" fn dm_controller_step(
    controller: *mut DmController,
    state: *const f64,
    n_states: usize,
    input: *mut f64,
    n_inputs: usize,
) -> DmStatus {
    guard(|| {
        let c = &mut handle_mut(controller, "controller")?.controller;
        let (nx, nu) = (c.problem().n_states(), c.problem().n_inputs());
        if n_states != nx || n_inputs != nu {
            return Err(Failure::new(
                DmStatus::Config,
                format!("controller takes {nx} states and {nu} inputs, got {n_states} and {n_inputs}"),
            ));
        }
        let state = slice(state, n_states, "state")?;
        if input.is_null() {
            return Err(null("input"));
        }
        let u = c.step(state)?;
        ptr::copy_nonoverlapping(u.as_ptr(), input, nu);
        Ok(())
    })
}

/// Drops the stored warm start.
///
/// # Safety
/// `controller` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn dm_controller_reset(controller: *mut DmController) -> DmStatus {
    guard(|| {
        handle_mut(controller, "controller")?.controller.reset();
        Ok(())
    })
}
