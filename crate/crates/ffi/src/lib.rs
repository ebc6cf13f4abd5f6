//! C ABI for nail-lab.
//!
//! Objects are opaque handles created by `nail_*_new`-style functions and
//! released with the matching `*_free`. Every fallible function returns a
//! [`NailStatus`]; on failure [`nail_last_error`] describes the problem for the
//! calling thread. Panics never cross the boundary.

use nail_lab::demos::make_expert;
use nail_lab::mdp::{occupancy, reverse_kl, BoundWeighting, PolicyTable, RewardTable, TabularMdp};
use nail_lab::nail::{run_nail, NailConfig, NailTrace};
use nail_lab::{envs, Error};
use ndarray::{Array1, Array2, Array3};
use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NailStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Panic = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NailWeighting {
    PerStep = 0,
    Trajectory = 1,
}

/// Opaque tabular MDP.
pub struct NailMdp {
    inner: TabularMdp,
}

/// Opaque stochastic policy.
pub struct NailPolicy {
    inner: PolicyTable,
}

/// Opaque NAIL run trace.
pub struct NailTraceHandle {
    inner: NailTrace,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(NailStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::SingularSystem | Error::NoConvergence { .. } | Error::Diverged { .. } | Error::NonFiniteLoss => {
                NailStatus::Numerical
            }
            _ => NailStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(NailStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NailStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NailStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NailStatus::Panic
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn copy_into(src: &[f64], dst: &mut [f64]) -> Result<(), Failure> {
    if src.len() != dst.len() {
        return Err(Failure(
            NailStatus::InvalidArgument,
            format!("buffer holds {} values, {} required", dst.len(), src.len()),
        ));
    }
    dst.copy_from_slice(src);
    Ok(())
}

fn table(data: &[f64], rows: usize, cols: usize) -> Result<Array2<f64>, Failure> {
    Array2::from_shape_vec((rows, cols), data.to_vec()).map_err(|e| Failure(NailStatus::InvalidArgument, e.to_string()))
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nail_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds an MDP from a row-major `S × A × S` transition array and a length-`S`
/// initial distribution.
///
/// # Safety
/// `transition` must point to `S·A·S` doubles, `initial` to `S` doubles.
#[no_mangle]
pub unsafe extern "C" fn nail_mdp_new(
    transition: *const f64,
    initial: *const f64,
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    out: *mut *mut NailMdp,
) -> NailStatus {
    guard(|| {
        let len = num_states
            .checked_mul(num_actions)
            .and_then(|x| x.checked_mul(num_states))
            .ok_or_else(|| Failure(NailStatus::InvalidArgument, "dimensions overflow".into()))?;
        let p = slice(transition, len, "transition")?;
        let p0 = slice(initial, num_states, "initial")?;
        let p = Array3::from_shape_vec((num_states, num_actions, num_states), p.to_vec())
            .map_err(|e| Failure(NailStatus::InvalidArgument, e.to_string()))?;
        let mdp = TabularMdp::new(p, Array1::from(p0.to_vec()), gamma)?;
        write_out(out, NailMdp { inner: mdp })
    })
}

/// The 5×5 slippery gridworld.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nail_mdp_gridworld5(out: *mut *mut NailMdp) -> NailStatus {
    guard(|| {
        write_out(
            out,
            NailMdp {
                inner: envs::gridworld5(),
            },
        )
    })
}

/// # Safety
/// `mdp` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn nail_mdp_free(mdp: *mut NailMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nail_mdp_dims(
    mdp: *const NailMdp,
    num_states: *mut usize,
    num_actions: *mut usize,
) -> NailStatus {
    guard(|| {
        let m = handle(mdp, "mdp")?;
        if num_states.is_null() || num_actions.is_null() {
            return Err(null("output pointer"));
        }
        *num_states = m.inner.num_states();
        *num_actions = m.inner.num_actions();
        Ok(())
    })
}

/// Policy from a row-major `S × A` table of probabilities.
///
/// # Safety
/// `probs` must point to `S·A` doubles.
#[no_mangle]
pub unsafe extern "C" fn nail_policy_new(
    probs: *const f64,
    num_states: usize,
    num_actions: usize,
    out: *mut *mut NailPolicy,
) -> NailStatus {
    guard(|| {
        let len = num_states
            .checked_mul(num_actions)
            .ok_or_else(|| Failure(NailStatus::InvalidArgument, "dimensions overflow".into()))?;
        let data = slice(probs, len, "probs")?;
        let pi = PolicyTable::new(table(data, num_states, num_actions)?)?;
        write_out(out, NailPolicy { inner: pi })
    })
}

/// Maximum-entropy optimal policy of `mdp` for a row-major `S × A` reward.
///
/// # Safety
/// `reward` must point to `S·A` doubles.
#[no_mangle]
pub unsafe extern "C" fn nail_expert_policy(
    mdp: *const NailMdp,
    reward: *const f64,
    out: *mut *mut NailPolicy,
) -> NailStatus {
    guard(|| {
        let m = &handle(mdp, "mdp")?.inner;
        let (ns, na) = (m.num_states(), m.num_actions());
        let r = RewardTable::new(table(slice(reward, ns * na, "reward")?, ns, na)?)?;
        let pi = make_expert(m, &r, 1e-12)?;
        write_out(out, NailPolicy { inner: pi })
    })
}

/// # Safety
/// `policy` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn nail_policy_free(policy: *mut NailPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Copies the row-major probabilities into `out`, which must hold exactly `len = S·A` values.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nail_policy_probs(policy: *const NailPolicy, out: *mut f64, len: usize) -> NailStatus {
    guard(|| {
        let pi = &handle(policy, "policy")?.inner;
        let src: Vec<f64> = pi.probs().iter().copied().collect();
        copy_into(&src, slice_mut(out, len, "out")?)
    })
}

/// Discounted occupancy of `policy`, row-major `S × A`.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nail_occupancy(
    mdp: *const NailMdp,
    policy: *const NailPolicy,
    out: *mut f64,
    len: usize,
) -> NailStatus {
    guard(|| {
        let m = &handle(mdp, "mdp")?.inner;
        let pi = &handle(policy, "policy")?.inner;
        let occ = occupancy(m, pi)?;
        let src: Vec<f64> = occ.probs().iter().copied().collect();
        copy_into(&src, slice_mut(out, len, "out")?)
    })
}

/// `KL(p^policy ‖ p^expert)` between occupancies.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nail_reverse_kl(
    mdp: *const NailMdp,
    policy: *const NailPolicy,
    expert: *const NailPolicy,
    out: *mut f64,
) -> NailStatus {
    guard(|| {
        let m = &handle(mdp, "mdp")?.inner;
        let p = occupancy(m, &handle(policy, "policy")?.inner)?;
        let q = occupancy(m, &handle(expert, "expert")?.inner)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = reverse_kl(&p, &q, 1e-12)?;
        Ok(())
    })
}

/// Runs exact NAIL from the uniform policy towards the occupancy of `expert`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nail_run(
    mdp: *const NailMdp,
    expert: *const NailPolicy,
    iterations: usize,
    weighting: NailWeighting,
    out: *mut *mut NailTraceHandle,
) -> NailStatus {
    guard(|| {
        let m = &handle(mdp, "mdp")?.inner;
        let q = occupancy(m, &handle(expert, "expert")?.inner)?;
        let cfg = NailConfig {
            iterations,
            weighting: match weighting {
                NailWeighting::PerStep => BoundWeighting::PerStep,
                NailWeighting::Trajectory => BoundWeighting::Trajectory,
            },
            ..Default::default()
        };
        let trace = run_nail(m, &q, &cfg)?;
        write_out(out, NailTraceHandle { inner: trace })
    })
}

/// Number of records (iterations plus the initial policy); 0 for null.
///
/// # Safety
/// `trace` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn nail_trace_len(trace: *const NailTraceHandle) -> usize {
    trace.as_ref().map_or(0, |t| t.inner.len())
}

/// Copies the reverse-KL series into `out`, which must hold `nail_trace_len` values.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nail_trace_reverse_kl(trace: *const NailTraceHandle, out: *mut f64, len: usize) -> NailStatus {
    guard(|| {
        let t = &handle(trace, "trace")?.inner;
        copy_into(&t.reverse_kl_series(), slice_mut(out, len, "out")?)
    })
}

/// New policy handle holding the trace's final policy.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nail_trace_final_policy(
    trace: *const NailTraceHandle,
    out: *mut *mut NailPolicy,
) -> NailStatus {
    guard(|| {
        let t = &handle(trace, "trace")?.inner;
        let pi = t
            .final_policy()
            .ok_or_else(|| Failure(NailStatus::InvalidArgument, "empty trace".into()))?;
        write_out(out, NailPolicy { inner: pi.clone() })
    })
}

/// # Safety
/// `trace` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn nail_trace_free(trace: *mut NailTraceHandle) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}
