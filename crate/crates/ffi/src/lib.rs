//! C ABI over the gridarb environment and power-flow solver.
//!
//! Handles are opaque pointers created by `*_open` and released by `*_free`.
//! Every fallible call returns a [`GridarbStatus`]; on failure the message of
//! the last error on the calling thread is available from
//! [`gridarb_last_error`]. Handles are not thread-safe; use one per thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use gridarb::config::{load_scenario, ConfigError};
use gridarb::env::{EnvError, Environment, Selector, StateVector};
use gridarb::network::{build_admittance, load_network, NetworkError};
use gridarb::power_flow::{FixedPointSolver, InjectionSet, PowerFlowError, SolveOptions};

/// Result code of every fallible call.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridarbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Config = 4,
    Network = 5,
    Data = 6,
    NotReset = 7,
    EpisodeFinished = 8,
    ActionDimensionMismatch = 9,
    NonFiniteAction = 10,
    NotConverged = 11,
    PowerFlow = 12,
    Panic = 13,
}

/// Scalar outputs of one environment step.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GridarbStepResult {
    pub reward: f64,
    pub arbitrage_term: f64,
    pub penalty_term: f64,
    pub violation_sum: f64,
    pub slack_p: f64,
    pub done: bool,
    pub converged: bool,
}

/// Dispatch environment bound to one config and dataset.
pub struct GridarbEnv {
    env: Environment,
}

/// Network with a prepared fixed-point solver.
pub struct GridarbNetwork {
    solver: FixedPointSolver,
    node_count: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn chain(err: &dyn std::error::Error) -> String {
    let mut msg = err.to_string();
    let mut source = err.source();
    while let Some(s) = source {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        source = s.source();
    }
    msg
}

struct Failure(GridarbStatus, String);

impl Failure {
    fn new(status: GridarbStatus, message: impl Into<String>) -> Self {
        Failure(status, message.into())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let status = match e {
            ConfigError::Network(_) => GridarbStatus::Network,
            ConfigError::Data(_) => GridarbStatus::Data,
            _ => GridarbStatus::Config,
        };
        Failure(status, chain(&e))
    }
}

impl From<NetworkError> for Failure {
    fn from(e: NetworkError) -> Self {
        Failure(GridarbStatus::Network, chain(&e))
    }
}

impl From<PowerFlowError> for Failure {
    fn from(e: PowerFlowError) -> Self {
        let status = match e {
            PowerFlowError::NotConverged { .. } => GridarbStatus::NotConverged,
            _ => GridarbStatus::PowerFlow,
        };
        Failure(status, chain(&e))
    }
}

impl From<EnvError> for Failure {
    fn from(e: EnvError) -> Self {
        let status = match &e {
            EnvError::NotReset => GridarbStatus::NotReset,
            EnvError::EpisodeFinished => GridarbStatus::EpisodeFinished,
            EnvError::ActionDimensionMismatch { .. } => GridarbStatus::ActionDimensionMismatch,
            EnvError::NonFiniteAction(_) => GridarbStatus::NonFiniteAction,
            EnvError::Config(_) => GridarbStatus::Config,
            EnvError::Data(_) => GridarbStatus::Data,
            EnvError::Network(_) => GridarbStatus::Network,
            EnvError::PowerFlow(_) => GridarbStatus::PowerFlow,
        };
        Failure(status, chain(&e))
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GridarbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GridarbStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {message}"));
            GridarbStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::new(
            GridarbStatus::NullPointer,
            format!("{what} is null"),
        ));
    }
    CStr::from_ptr(p).to_str().map(Path::new).map_err(|_| {
        Failure::new(
            GridarbStatus::InvalidArgument,
            format!("{what} is not UTF-8"),
        )
    })
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(
            GridarbStatus::NullPointer,
            format!("{what} is null"),
        ));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a>(
    p: *mut f64,
    len: usize,
    need: usize,
    what: &str,
) -> Result<&'a mut [f64], Failure> {
    if len < need {
        return Err(Failure::new(
            GridarbStatus::BufferTooSmall,
            format!("{what} holds {len} values, need {need}"),
        ));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::new(
            GridarbStatus::NullPointer,
            format!("{what} is null"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn env_arg<'a>(env: *mut GridarbEnv) -> Result<&'a mut GridarbEnv, Failure> {
    env.as_mut()
        .ok_or_else(|| Failure::new(GridarbStatus::NullPointer, "environment handle is null"))
}

fn write_state(state: &StateVector, out: &mut [f64]) {
    out.copy_from_slice(&state.to_vec());
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gridarb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gridarb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a config file with its network, fleet and dataset.
///
/// # Safety
/// `config_path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gridarb_env_open(
    config_path: *const c_char,
    out: *mut *mut GridarbEnv,
) -> GridarbStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(GridarbStatus::NullPointer, "out is null"));
        }
        let path = path_arg(config_path, "config_path")?;
        let s = load_scenario(path)?;
        let env = Environment::new(Arc::new(s.config), Arc::new(s.data))?;
        *out = Box::into_raw(Box::new(GridarbEnv { env }));
        Ok(())
    })
}

/// Releases an environment. Null is ignored.
///
/// # Safety
/// `env` must come from [`gridarb_env_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gridarb_env_free(env: *mut GridarbEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Length of state vectors, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gridarb_env_state_dim(env: *const GridarbEnv) -> usize {
    env.as_ref().map_or(0, |e| e.env.config().state_dim())
}

/// Number of storage units, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gridarb_env_action_dim(env: *const GridarbEnv) -> usize {
    env.as_ref().map_or(0, |e| e.env.config().action_dim())
}

/// Steps per episode, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gridarb_env_horizon(env: *const GridarbEnv) -> usize {
    env.as_ref().map_or(0, |e| e.env.config().horizon)
}

/// Complete days available for reset, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gridarb_env_day_count(env: *const GridarbEnv) -> usize {
    env.as_ref().map_or(0, |e| e.env.day_count())
}

unsafe fn reset_with(
    env: *mut GridarbEnv,
    selector: Selector,
    state_out: *mut f64,
    state_len: usize,
) -> GridarbStatus {
    guard(|| {
        let env = env_arg(env)?;
        let out = out_arg(
            state_out,
            state_len,
            env.env.config().state_dim(),
            "state_out",
        )?;
        let state = env.env.reset(selector)?;
        write_state(&state, out);
        Ok(())
    })
}

/// Starts an episode on day `day` and writes the initial state.
///
/// # Safety
/// `env` must be a live handle; `state_out` must hold `state_len` values.
#[no_mangle]
pub unsafe extern "C" fn gridarb_env_reset_day(
    env: *mut GridarbEnv,
    day: usize,
    state_out: *mut f64,
    state_len: usize,
) -> GridarbStatus {
    reset_with(env, Selector::Day(day), state_out, state_len)
}

/// Starts an episode on a day drawn from `seed`.
///
/// # Safety
/// `env` must be a live handle; `state_out` must hold `state_len` values.
#[no_mangle]
pub unsafe extern "C" fn gridarb_env_reset_random(
    env: *mut GridarbEnv,
    seed: u64,
    state_out: *mut f64,
    state_len: usize,
) -> GridarbStatus {
    reset_with(env, Selector::Random(seed), state_out, state_len)
}

/// Applies one action (kW per unit, charging positive).
///
/// Writes the next state to `state_out`, the scalar results to `result` and,
/// when `realized_out` is non-null, the clipped powers (`action_len` values).
///
/// # Safety
/// `env` must be a live handle; buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn gridarb_env_step(
    env: *mut GridarbEnv,
    action: *const f64,
    action_len: usize,
    state_out: *mut f64,
    state_len: usize,
    realized_out: *mut f64,
    result: *mut GridarbStepResult,
) -> GridarbStatus {
    guard(|| {
        let env = env_arg(env)?;
        let action = slice_arg(action, action_len, "action")?;
        let out = out_arg(
            state_out,
            state_len,
            env.env.config().state_dim(),
            "state_out",
        )?;
        if result.is_null() {
            return Err(Failure::new(GridarbStatus::NullPointer, "result is null"));
        }
        let tr = env.env.step(action)?;
        write_state(&tr.state, out);
        if !realized_out.is_null() {
            std::slice::from_raw_parts_mut(realized_out, action_len)
                .copy_from_slice(&tr.info.realized_powers);
        }
        *result = GridarbStepResult {
            reward: tr.reward,
            arbitrage_term: tr.info.arbitrage_term,
            penalty_term: tr.info.penalty_term,
            violation_sum: tr.info.violation_sum,
            slack_p: tr.info.slack_p,
            done: tr.done,
            converged: tr.info.converged,
        };
        Ok(())
    })
}

/// Loads node and line tables and prepares the fixed-point solver.
///
/// # Safety
/// Paths must be NUL-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gridarb_network_open(
    nodes_path: *const c_char,
    lines_path: *const c_char,
    base_mva: f64,
    out: *mut *mut GridarbNetwork,
) -> GridarbStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(GridarbStatus::NullPointer, "out is null"));
        }
        let model = load_network(
            path_arg(nodes_path, "nodes_path")?,
            path_arg(lines_path, "lines_path")?,
            base_mva,
        )?;
        let solver = FixedPointSolver::new(&build_admittance(&model)?)?;
        *out = Box::into_raw(Box::new(GridarbNetwork {
            solver,
            node_count: model.node_count(),
        }));
        Ok(())
    })
}

/// Releases a network. Null is ignored.
///
/// # Safety
/// `net` must come from [`gridarb_network_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gridarb_network_free(net: *mut GridarbNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of nodes including the slack, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gridarb_network_node_count(net: *const GridarbNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.node_count)
}

/// Solves the power flow for per-unit injections at the PQ nodes
/// (`node_count − 1` values each, generation positive) and writes voltage
/// magnitudes for every node, slack first.
///
/// On `NotConverged` the best iterate is still written.
///
/// # Safety
/// `net` must be a live handle; buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn gridarb_network_solve(
    net: *const GridarbNetwork,
    p: *const f64,
    q: *const f64,
    pq_len: usize,
    tolerance: f64,
    max_iterations: usize,
    v_mag_out: *mut f64,
    v_len: usize,
) -> GridarbStatus {
    guard(|| {
        let net = net
            .as_ref()
            .ok_or_else(|| Failure::new(GridarbStatus::NullPointer, "network handle is null"))?;
        let inj = InjectionSet {
            p: slice_arg(p, pq_len, "p")?.to_vec(),
            q: slice_arg(q, pq_len, "q")?.to_vec(),
        };
        let out = out_arg(v_mag_out, v_len, net.node_count, "v_mag_out")?;
        let opt = SolveOptions {
            tolerance,
            max_iterations,
        };
        match net.solver.solve(&inj, &opt) {
            Ok(sol) => {
                out.copy_from_slice(&sol.v_mag());
                Ok(())
            }
            Err(e) => {
                if let Some(best) = e.best_iterate() {
                    out.copy_from_slice(&best.v_mag());
                }
                Err(e.into())
            }
        }
    })
}
