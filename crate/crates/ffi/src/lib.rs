//! C ABI over the `safemil` library.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_from_*`
//! functions and released with the matching `*_free`. Fallible calls return a
//! [`SafemilStatus`] and write results through out-pointers; the message of
//! the most recent failure on the calling thread is available from
//! [`safemil_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use safemil::cmdp::{evaluate_exact, solve_constrained, EnvConfig, Policy, TabularCmdp, TabularPolicy};
use safemil::cmdp::PolicyValue;
use safemil::eval::{cvar_cost, normalize};
use safemil::experiment::{run_suite, ExperimentConfig};
use safemil::mil::{bt_loss, lemma1_probability};
use safemil::nn::load_checkpoint;
use safemil::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafemilStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Contract = 4,
    Infeasible = 5,
    Solver = 6,
    Generation = 7,
    Training = 8,
    Parse = 9,
    Io = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

/// Bundled environment presets.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafemilEnvKind {
    SpeedChain = 0,
    HazardGrid = 1,
}

/// Opaque constrained MDP.
pub struct SafemilEnv(TabularCmdp);

/// Opaque policy: an action-probability table or a softmax network.
pub struct SafemilPolicy(Policy);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SafemilStatus {
    match err {
        Error::Config(_) => SafemilStatus::Config,
        Error::Contract(_) => SafemilStatus::Contract,
        Error::Infeasible { .. } => SafemilStatus::Infeasible,
        Error::Solver(_) => SafemilStatus::Solver,
        Error::Generation(_) => SafemilStatus::Generation,
        Error::Training { .. } => SafemilStatus::Training,
        Error::Parse { .. } | Error::Json(_) => SafemilStatus::Parse,
        Error::Io { .. } => SafemilStatus::Io,
    }
}

struct Fail(SafemilStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SafemilStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SafemilStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside safemil".to_string());
            SafemilStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SafemilStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(SafemilStatus::InvalidUtf8, format!("`{what}`: {e}")))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next safemil call on the same thread.
#[no_mangle]
pub extern "C" fn safemil_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn safemil_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build an environment from its JSON description.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn safemil_env_from_json(json: *const c_char, out_env: *mut *mut SafemilEnv) -> SafemilStatus {
    guard(|| {
        let slot = out(out_env, "out_env")?;
        let text = c_str(json, "json")?;
        let config: EnvConfig = serde_json::from_str(text).map_err(Error::from)?;
        *slot = Box::into_raw(Box::new(SafemilEnv(config.build()?)));
        Ok(())
    })
}

/// Build one of the bundled default environments.
///
/// # Safety
/// `out_env` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn safemil_env_default(kind: SafemilEnvKind, out_env: *mut *mut SafemilEnv) -> SafemilStatus {
    guard(|| {
        let slot = out(out_env, "out_env")?;
        let config = match kind {
            SafemilEnvKind::SpeedChain => EnvConfig::speed_chain_default(),
            SafemilEnvKind::HazardGrid => EnvConfig::hazard_grid_default(),
        };
        *slot = Box::into_raw(Box::new(SafemilEnv(config.build()?)));
        Ok(())
    })
}

/// # Safety
/// `env` must come from this library and not be freed twice; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn safemil_env_free(env: *mut SafemilEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Number of states, actions, and the horizon.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn safemil_env_shape(
    env: *const SafemilEnv,
    num_states: *mut usize,
    num_actions: *mut usize,
    horizon: *mut usize,
) -> SafemilStatus {
    guard(|| {
        let env = &borrow(env, "env")?.0;
        *out(num_states, "num_states")? = env.num_states();
        *out(num_actions, "num_actions")? = env.num_actions();
        *out(horizon, "horizon")? = env.horizon();
        Ok(())
    })
}

/// Exact constrained-optimal policy (occupancy LP).
///
/// # Safety
/// `env` must be a live handle and `out_policy` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn safemil_solve_constrained(
    env: *const SafemilEnv,
    out_policy: *mut *mut SafemilPolicy,
) -> SafemilStatus {
    guard(|| {
        let slot = out(out_policy, "out_policy")?;
        let env = &borrow(env, "env")?.0;
        let policy = solve_constrained(env)?;
        *slot = Box::into_raw(Box::new(SafemilPolicy(Policy::Tabular(policy))));
        Ok(())
    })
}

/// Uniform-random policy over the environment's actions.
///
/// # Safety
/// `env` must be a live handle and `out_policy` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn safemil_policy_uniform(
    env: *const SafemilEnv,
    out_policy: *mut *mut SafemilPolicy,
) -> SafemilStatus {
    guard(|| {
        let slot = out(out_policy, "out_policy")?;
        let env = &borrow(env, "env")?.0;
        let policy = TabularPolicy::uniform(env.num_states(), env.num_actions());
        *slot = Box::into_raw(Box::new(SafemilPolicy(Policy::Tabular(policy))));
        Ok(())
    })
}

/// Load a softmax policy network from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_policy` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn safemil_policy_load_checkpoint(
    path: *const c_char,
    out_policy: *mut *mut SafemilPolicy,
) -> SafemilStatus {
    guard(|| {
        let slot = out(out_policy, "out_policy")?;
        let (net, _) = load_checkpoint(Path::new(c_str(path, "path")?))?;
        *slot = Box::into_raw(Box::new(SafemilPolicy(Policy::Mlp(net))));
        Ok(())
    })
}

/// # Safety
/// `policy` must come from this library and not be freed twice; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn safemil_policy_free(policy: *mut SafemilPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Copy `π(·|s)` at timestep `t` into `probs`, which holds `len` doubles.
///
/// # Safety
/// Handles must be live and `probs` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn safemil_policy_probs(
    policy: *const SafemilPolicy,
    env: *const SafemilEnv,
    t: usize,
    state: usize,
    probs: *mut f64,
    len: usize,
) -> SafemilStatus {
    guard(|| {
        let policy = &borrow(policy, "policy")?.0;
        let env = &borrow(env, "env")?.0;
        if probs.is_null() {
            return Err(null("probs"));
        }
        if state >= env.num_states() || t >= env.horizon() {
            return Err(Error::contract(format!("(t={t}, s={state}) outside the environment")).into());
        }
        if len < env.num_actions() {
            return Err(Fail(
                SafemilStatus::BufferTooSmall,
                format!("need {} slots, got {len}", env.num_actions()),
            ));
        }
        let table = policy.tabulate(env)?;
        let row = table.probs(t, state);
        std::slice::from_raw_parts_mut(probs, row.len()).copy_from_slice(row);
        Ok(())
    })
}

/// Exact expected return and cost, discounted by `gamma` (1 gives plain sums).
///
/// # Safety
/// Handles must be live and the out-pointers valid.
#[no_mangle]
pub unsafe extern "C" fn safemil_policy_eval(
    env: *const SafemilEnv,
    policy: *const SafemilPolicy,
    gamma: f64,
    out_return: *mut f64,
    out_cost: *mut f64,
) -> SafemilStatus {
    guard(|| {
        let env = &borrow(env, "env")?.0;
        let policy = &borrow(policy, "policy")?.0;
        let r = out(out_return, "out_return")?;
        let c = out(out_cost, "out_cost")?;
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::contract(format!("gamma must lie in (0, 1], got {gamma}")).into());
        }
        let value = evaluate_exact(env, &*policy.tabulate(env)?, gamma)?;
        *r = value.ret;
        *c = value.cost;
        Ok(())
    })
}

/// `1 - (1 - alpha)^k`.
///
/// # Safety
/// `out_p` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn safemil_lemma1_probability(alpha: f64, k: usize, out_p: *mut f64) -> SafemilStatus {
    guard(|| {
        *out(out_p, "out_p")? = lemma1_probability(alpha, k)?;
        Ok(())
    })
}

/// Bradley-Terry loss `softplus(score_u - score_n)`.
#[no_mangle]
pub extern "C" fn safemil_bt_loss(score_n: f64, score_u: f64) -> f64 {
    bt_loss(score_n, score_u)
}

/// Mean of the worst `ceil(n·k/100)` costs minus `reference_cost`.
///
/// # Safety
/// `costs` must point to `n` readable doubles and `out_value` be valid.
#[no_mangle]
pub unsafe extern "C" fn safemil_cvar_cost(
    costs: *const f64,
    n: usize,
    k_percent: f64,
    reference_cost: f64,
    out_value: *mut f64,
) -> SafemilStatus {
    guard(|| {
        let slot = out(out_value, "out_value")?;
        let costs = if n == 0 {
            &[][..]
        } else if costs.is_null() {
            return Err(null("costs"));
        } else {
            std::slice::from_raw_parts(costs, n)
        };
        *slot = cvar_cost(costs, k_percent, reference_cost)?;
        Ok(())
    })
}

/// Normalized return and cost against a reference and a random baseline.
///
/// # Safety
/// Out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn safemil_normalize(
    ret: f64,
    cost: f64,
    reference_return: f64,
    reference_cost: f64,
    random_return: f64,
    out_return: *mut f64,
    out_cost: *mut f64,
) -> SafemilStatus {
    guard(|| {
        let r = out(out_return, "out_return")?;
        let c = out(out_cost, "out_cost")?;
        let reference = PolicyValue {
            ret: reference_return,
            cost: reference_cost,
        };
        (*r, *c) = normalize(ret, cost, reference, random_return)?;
        Ok(())
    })
}

/// Run the full experiment described by a TOML config and return the summary
/// CSV, to be released with [`safemil_string_free`].
///
/// # Safety
/// `config_toml` must be NUL-terminated and `out_csv` valid.
#[no_mangle]
pub unsafe extern "C" fn safemil_run_suite(config_toml: *const c_char, out_csv: *mut *mut c_char) -> SafemilStatus {
    guard(|| {
        let slot = out(out_csv, "out_csv")?;
        let config = ExperimentConfig::from_toml(c_str(config_toml, "config_toml")?)?;
        let output = run_suite(&config)?;
        let csv = CString::new(output.summary_csv).map_err(|e| Fail(SafemilStatus::Parse, e.to_string()))?;
        *slot = csv.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn safemil_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
