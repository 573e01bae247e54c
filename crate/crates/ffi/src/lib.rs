//! C ABI for `hqp-core`.
//!
//! Chains and simulations are opaque heap handles created by `hqp_chain_bundled`
//! or the `*_from_*` functions and released with the matching `*_free`. Every fallible call
//! returns an [`HqpStatus`]; on failure a message is available from
//! [`hqp_last_error`] on the same thread. Matrices are row-major `double`
//! arrays. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hqp_core::scenario::{load_scenario, parse_scenario, ScenarioError, Simulation};
use hqp_core::{KinematicChain, BUNDLED_CHAIN};
use nalgebra::DVector;

/// Result codes. Values 2-4 match the exit codes of the `hqp` command.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HqpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Unreadable, malformed or invalid input.
    Config = 2,
    /// A QP or task evaluation failed during a step.
    Solver = 3,
    /// The step penetrated an obstacle or left the joint limits.
    Safety = 4,
    /// An output buffer is shorter than required.
    BufferTooSmall = 5,
    /// The simulation has already reached its duration or failed.
    Finished = 6,
    /// Internal error; the handle involved should be freed.
    Panic = 7,
}

/// Opaque kinematic chain.
pub struct HqpChain {
    chain: KinematicChain,
}

/// Opaque closed-loop simulation of a scenario.
pub struct HqpSimulation {
    sim: Simulation,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(HqpStatus, String);

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let status = match e {
            ScenarioError::Solver { .. } | ScenarioError::Task { .. } => HqpStatus::Solver,
            _ => HqpStatus::Config,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HqpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HqpStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let what = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(format!("internal error: {what}"));
            HqpStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(HqpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s).to_str().map_err(|_| Failure(HqpStatus::Config, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, needed: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len < needed {
        return Err(Failure(HqpStatus::BufferTooSmall, format!("{what} holds {len} values, {needed} required")));
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn joint_vector(chain: &KinematicChain, q: &[f64]) -> Result<DVector<f64>, Failure> {
    if q.len() != chain.dof() {
        return Err(Failure(HqpStatus::Config, format!("expected {} joint values, got {}", chain.dof(), q.len())));
    }
    Ok(DVector::from_column_slice(q))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn hqp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn hqp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

// ---------------------------------------------------------------------------
// Chains

/// Parse a chain description (JSON text).
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hqp_chain_from_json(json: *const c_char, out: *mut *mut HqpChain) -> HqpStatus {
    guard(|| {
        let chain =
            KinematicChain::from_json(text(json, "json")?).map_err(|e| Failure(HqpStatus::Config, e.to_string()))?;
        put(out, HqpChain { chain })
    })
}

/// Load a chain description from a JSON file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hqp_chain_from_file(path: *const c_char, out: *mut *mut HqpChain) -> HqpStatus {
    guard(|| {
        let chain =
            KinematicChain::from_file(text(path, "path")?).map_err(|e| Failure(HqpStatus::Config, e.to_string()))?;
        put(out, HqpChain { chain })
    })
}

/// The bundled 7-DOF arm with a 3-DOF tool.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hqp_chain_bundled(out: *mut *mut HqpChain) -> HqpStatus {
    guard(|| {
        let chain = KinematicChain::from_json(BUNDLED_CHAIN).map_err(|e| Failure(HqpStatus::Config, e.to_string()))?;
        put(out, HqpChain { chain })
    })
}

/// # Safety
/// `chain` must be null or a handle from this library that is not used again.
#[no_mangle]
pub unsafe extern "C" fn hqp_chain_free(chain: *mut HqpChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Number of joint coordinates, or 0 for a null handle.
///
/// # Safety
/// `chain` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hqp_chain_dof(chain: *const HqpChain) -> usize {
    chain.as_ref().map_or(0, |c| c.chain.dof())
}

/// End-effector pose at `q` as a row-major 4×4 homogeneous matrix.
///
/// # Safety
/// `q` must hold `q_len` values and `out` at least `out_len`.
#[no_mangle]
pub unsafe extern "C" fn hqp_chain_end_effector_pose(
    chain: *const HqpChain,
    q: *const f64,
    q_len: usize,
    out: *mut f64,
    out_len: usize,
) -> HqpStatus {
    guard(|| {
        let chain = &chain.as_ref().ok_or_else(|| null("chain"))?.chain;
        let q = joint_vector(chain, slice(q, q_len, "q")?)?;
        let out = slice_mut(out, out_len, 16, "out")?;
        let pose = chain.end_effector_pose(&q).map_err(|e| Failure(HqpStatus::Config, e.to_string()))?;
        let m = pose.to_homogeneous();
        for r in 0..4 {
            for c in 0..4 {
                out[4 * r + c] = m[(r, c)];
            }
        }
        Ok(())
    })
}

/// Geometric Jacobian of the end effector (linear rows first) as a row-major
/// 6×dof matrix.
///
/// # Safety
/// `q` must hold `q_len` values and `out` at least `out_len`.
#[no_mangle]
pub unsafe extern "C" fn hqp_chain_jacobian(
    chain: *const HqpChain,
    q: *const f64,
    q_len: usize,
    out: *mut f64,
    out_len: usize,
) -> HqpStatus {
    guard(|| {
        let chain = &chain.as_ref().ok_or_else(|| null("chain"))?.chain;
        let q = joint_vector(chain, slice(q, q_len, "q")?)?;
        let n = chain.dof();
        let out = slice_mut(out, out_len, 6 * n, "out")?;
        let jac =
            chain.geometric_jacobian(&q, chain.end_effector).map_err(|e| Failure(HqpStatus::Config, e.to_string()))?;
        for r in 0..6 {
            for c in 0..n {
                out[n * r + c] = jac[(r, c)];
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Simulations

/// Load a scenario file. Relative chain paths resolve against its directory.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hqp_simulation_from_file(path: *const c_char, out: *mut *mut HqpSimulation) -> HqpStatus {
    guard(|| {
        let config = load_scenario(text(path, "path")?)?;
        put(out, HqpSimulation { sim: Simulation::new(config) })
    })
}

/// Parse scenario JSON text; relative chain paths resolve against `base_dir`.
///
/// # Safety
/// `json` and `base_dir` must be nul-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hqp_simulation_from_json(
    json: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut HqpSimulation,
) -> HqpStatus {
    guard(|| {
        let config = parse_scenario(text(json, "json")?, Path::new(text(base_dir, "base_dir")?))?;
        put(out, HqpSimulation { sim: Simulation::new(config) })
    })
}

/// # Safety
/// `sim` must be null or a handle from this library that is not used again.
#[no_mangle]
pub unsafe extern "C" fn hqp_simulation_free(sim: *mut HqpSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Number of chains, or 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hqp_simulation_chain_count(sim: *const HqpSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.sim.config().chains.len())
}

/// Joint count of chain `chain`, or 0 when out of range.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hqp_simulation_dof(sim: *const HqpSimulation, chain: usize) -> usize {
    sim.as_ref().and_then(|s| s.sim.config().chains.get(chain)).map_or(0, |c| c.chain.dof())
}

/// Simulated time (s), or NaN for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hqp_simulation_time(sim: *const HqpSimulation) -> f64 {
    sim.as_ref().map_or(f64::NAN, |s| s.sim.time())
}

/// Steps still to run before the configured duration is reached.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hqp_simulation_steps_remaining(sim: *const HqpSimulation) -> usize {
    sim.as_ref().map_or(0, |s| if s.sim.is_finished() { 0 } else { s.sim.config().steps() - s.sim.steps_done() })
}

/// Advance one control period. Returns `Safety` when this step recorded a
/// violation and `Finished` when there is nothing left to run.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hqp_simulation_step(sim: *mut HqpSimulation) -> HqpStatus {
    guard(|| {
        let sim = &mut sim.as_mut().ok_or_else(|| null("sim"))?.sim;
        if sim.is_finished() {
            return Err(Failure(HqpStatus::Finished, "simulation finished".into()));
        }
        let before = sim.safety_violations().len();
        sim.step()?;
        match sim.safety_violations().get(before..).unwrap_or_default() {
            [] => Ok(()),
            new => Err(Failure(HqpStatus::Safety, new.join("; "))),
        }
    })
}

/// Run to the end. Returns `Solver` if a step failed and `Safety` if any
/// violation was recorded, like the `hqp run` command.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hqp_simulation_run(sim: *mut HqpSimulation) -> HqpStatus {
    guard(|| {
        let sim = &mut sim.as_mut().ok_or_else(|| null("sim"))?.sim;
        sim.run();
        if let Some(f) = sim.failure() {
            return Err(Failure(HqpStatus::Solver, f.to_string()));
        }
        match sim.safety_violations() {
            [] => Ok(()),
            v => Err(Failure(HqpStatus::Safety, v.join("; "))),
        }
    })
}

/// Current configuration of chain `chain`.
///
/// # Safety
/// `out` must hold at least `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn hqp_simulation_q(
    sim: *const HqpSimulation,
    chain: usize,
    out: *mut f64,
    out_len: usize,
) -> HqpStatus {
    guard(|| {
        let sim = &sim.as_ref().ok_or_else(|| null("sim"))?.sim;
        if chain >= sim.config().chains.len() {
            return Err(Failure(HqpStatus::Config, format!("no chain {chain}")));
        }
        let q = sim.q(chain);
        slice_mut(out, out_len, q.len(), "out")?[..q.len()].copy_from_slice(q.as_slice());
        Ok(())
    })
}

/// Write `chain{i}_steps.csv` and `chain{i}_summary.json` for the steps run so far.
///
/// # Safety
/// `sim` must be a live handle and `dir` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hqp_simulation_write(sim: *const HqpSimulation, dir: *const c_char) -> HqpStatus {
    guard(|| {
        let sim = &sim.as_ref().ok_or_else(|| null("sim"))?.sim;
        sim.report().write(Path::new(text(dir, "dir")?))?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let p = hqp_last_error();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
    }

    #[test]
    fn version_is_the_package_version() {
        let v = unsafe { CStr::from_ptr(hqp_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn null_arguments_are_reported() {
        unsafe {
            assert_eq!(hqp_chain_from_json(ptr::null(), ptr::null_mut()), HqpStatus::NullPointer);
            assert!(last_error().contains("json"));
            assert_eq!(hqp_simulation_step(ptr::null_mut()), HqpStatus::NullPointer);
            assert_eq!(hqp_chain_dof(ptr::null()), 0);
            assert!(hqp_simulation_time(ptr::null()).is_nan());
            hqp_chain_free(ptr::null_mut());
            hqp_simulation_free(ptr::null_mut());
        }
    }

    #[test]
    fn success_clears_the_last_error() {
        unsafe {
            let bad = CString::new("{").unwrap();
            let mut chain = ptr::null_mut();
            assert_eq!(hqp_chain_from_json(bad.as_ptr(), &mut chain), HqpStatus::Config);
            assert!(chain.is_null());
            assert!(!last_error().is_empty());
            assert_eq!(hqp_chain_bundled(&mut chain), HqpStatus::Ok);
            assert!(hqp_last_error().is_null());
            hqp_chain_free(chain);
        }
    }

    #[test]
    fn short_buffers_are_rejected() {
        unsafe {
            let mut chain = ptr::null_mut();
            assert_eq!(hqp_chain_bundled(&mut chain), HqpStatus::Ok);
            let n = hqp_chain_dof(chain);
            let q = vec![0.1; n];
            let mut out = vec![0.0; 6 * n];
            assert_eq!(
                hqp_chain_jacobian(chain, q.as_ptr(), n, out.as_mut_ptr(), 6 * n - 1),
                HqpStatus::BufferTooSmall
            );
            assert_eq!(hqp_chain_jacobian(chain, q.as_ptr(), n - 1, out.as_mut_ptr(), 6 * n), HqpStatus::Config);
            assert_eq!(hqp_chain_jacobian(chain, q.as_ptr(), n, out.as_mut_ptr(), 6 * n), HqpStatus::Ok);
            hqp_chain_free(chain);
        }
    }

    #[test]
    fn solver_errors_map_to_the_solver_code() {
        let e = ScenarioError::Task { chain: 0, t: 0.0, source: hqp_core::tasks::TaskError::NoToolAxis };
        assert_eq!(Failure::from(e).0, HqpStatus::Solver);
        assert_eq!(Failure::from(ScenarioError::Validation("x".into())).0, HqpStatus::Config);
    }
}
