//! C ABI over `splap-core`.
//!
//! Every entry point returns a [`SplapStatus`]; results go through out
//! pointers. On failure the message is kept per thread and can be read with
//! [`splap_last_error_message`]. Handles are opaque and owned by the caller,
//! who releases them with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::Arc;

use splap_core::analysis::{self, PathError};
use splap_core::constitutive::GrowthParams;
use splap_core::fem::{FeFunction, FemOperators};
use splap_core::mesh::Mesh;
use splap_core::psolver::{Formulation, InteriorSystem, DEFAULT_TOL};
use splap_core::stepper::{run_trajectory, SchemeConfig, Trajectory};
use splap_core::stochastics::{sample_path, uniform_time_grid, NoiseCoefficient, NoiseMode};
use splap_core::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Validation = 3,
    Parse = 4,
    Config = 5,
    Singular = 6,
    Convergence = 7,
    StepFailed = 8,
    Correction = 9,
    Io = 10,
    Panic = 11,
}

/// Noise coefficient choices for [`splap_run_trajectory`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplapNoise {
    Zero = 0,
    /// `|x|^{-1/2}` at simplex barycenters.
    InvSqrtRadius = 1,
    Constant = 2,
}

/// Additive-noise scheme on a uniform grid, driven by one scalar Brownian path.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SplapSchemeParams {
    pub p: f64,
    pub kappa: f64,
    /// Regularization floor for `p < 2`; nonpositive selects the default.
    pub eps_reg: f64,
    pub horizon: f64,
    /// Number of time steps.
    pub steps: usize,
    /// Steps of the sampled path; a multiple of `steps`.
    pub path_steps: usize,
    pub seed: u64,
    /// One of the `SplapNoise` values.
    pub noise: u32,
    pub noise_constant: f64,
    /// Nonpositive selects the default tolerance.
    pub tol: f64,
    /// Nonzero for the componentwise gradient term.
    pub componentwise: u8,
    /// Nonzero to zero the initial state on the boundary.
    pub clip_initial: u8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SplapPathError {
    pub max_l2_sq: f64,
    pub quasi_sum: f64,
    pub total: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SplapRateFit {
    pub log_c: f64,
    pub a: f64,
    pub stderr: f64,
}

pub struct SplapMesh {
    mesh: Arc<Mesh>,
}

pub struct SplapOperators {
    system: InteriorSystem,
}

pub struct SplapTrajectory {
    traj: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SplapStatus {
    match e {
        Error::Input(_) => SplapStatus::InvalidInput,
        Error::Validation(_) => SplapStatus::Validation,
        Error::Parse { .. } => SplapStatus::Parse,
        Error::Config { .. } => SplapStatus::Config,
        Error::Singular(_) => SplapStatus::Singular,
        Error::Convergence { .. } => SplapStatus::Convergence,
        Error::Step { .. } => SplapStatus::StepFailed,
        Error::Correction(_) => SplapStatus::Correction,
        Error::Io(_) => SplapStatus::Io,
    }
}

struct Fail(SplapStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SplapStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SplapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SplapStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SplapStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn doubles<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn splap_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, nul-terminated version string.
#[no_mangle]
pub extern "C" fn splap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Uniform mesh of the unit square with `n` cells per side.
///
/// # Safety
/// `out_mesh` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn splap_mesh_unit_square(n: usize, out_mesh: *mut *mut SplapMesh) -> SplapStatus {
    guard(|| {
        let slot = out(out_mesh, "out_mesh")?;
        let mesh = Mesh::unit_square(n)?;
        *slot = Box::into_raw(Box::new(SplapMesh { mesh: Arc::new(mesh) }));
        Ok(())
    })
}

/// Mesh from its text form (`mesh v=<nv> s=<ns>` header, vertex and simplex lines).
///
/// # Safety
/// `text` must be a nul-terminated string; `out_mesh` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn splap_mesh_from_text(text: *const c_char, out_mesh: *mut *mut SplapMesh) -> SplapStatus {
    guard(|| {
        let slot = out(out_mesh, "out_mesh")?;
        if text.is_null() {
            return Err(null("text"));
        }
        let s = CStr::from_ptr(text)
            .to_str()
            .map_err(|e| Fail(SplapStatus::InvalidInput, format!("mesh text is not UTF-8: {e}")))?;
        *slot = Box::into_raw(Box::new(SplapMesh { mesh: Arc::new(Mesh::from_text(s)?) }));
        Ok(())
    })
}

/// # Safety
/// `mesh` must come from this library and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn splap_mesh_free(mesh: *mut SplapMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn splap_mesh_counts(
    mesh: *const SplapMesh,
    vertices: *mut usize,
    simplices: *mut usize,
) -> SplapStatus {
    guard(|| {
        let m = &borrow(mesh, "mesh")?.mesh;
        *out(vertices, "vertices")? = m.vertex_count();
        *out(simplices, "simplices")? = m.simplex_count();
        Ok(())
    })
}

/// Largest simplex diameter.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn splap_mesh_size(mesh: *const SplapMesh, h: *mut f64) -> SplapStatus {
    guard(|| {
        *out(h, "h")? = borrow(mesh, "mesh")?.mesh.mesh_size();
        Ok(())
    })
}

/// Largest ratio of simplex diameter to inradius.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn splap_mesh_nondegeneracy(mesh: *const SplapMesh, ratio: *mut f64) -> SplapStatus {
    guard(|| {
        *out(ratio, "ratio")? = borrow(mesh, "mesh")?.mesh.nondegeneracy()?;
        Ok(())
    })
}

/// Assembles the finite element operators and the interior Newton structure.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn splap_operators_new(mesh: *const SplapMesh, out_ops: *mut *mut SplapOperators) -> SplapStatus {
    guard(|| {
        let slot = out(out_ops, "out_ops")?;
        let m = borrow(mesh, "mesh")?.mesh.clone();
        let system = InteriorSystem::new(FemOperators::assemble_shared(m)?)?;
        *slot = Box::into_raw(Box::new(SplapOperators { system }));
        Ok(())
    })
}

/// # Safety
/// `ops` must come from this library and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn splap_operators_free(ops: *mut SplapOperators) {
    if !ops.is_null() {
        drop(Box::from_raw(ops));
    }
}

/// `‖u − v‖²` in L² for nodal vectors of length `n` (the vertex count).
///
/// # Safety
/// `u` and `v` must hold `n` doubles; `result` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn splap_l2_error_sq(
    ops: *const SplapOperators,
    u: *const f64,
    v: *const f64,
    n: usize,
    result: *mut f64,
) -> SplapStatus {
    guard(|| {
        let o = borrow(ops, "ops")?.system.ops();
        let u = FeFunction::new(doubles(u, n, "u")?.to_vec());
        let v = FeFunction::new(doubles(v, n, "v")?.to_vec());
        *out(result, "result")? = o.l2_error_sq(&u, &v)?;
        Ok(())
    })
}

/// `‖F(∇u) − F(∇v)‖²` in L².
///
/// # Safety
/// `u` and `v` must hold `n` doubles; `result` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn splap_quasinorm_error_sq(
    ops: *const SplapOperators,
    u: *const f64,
    v: *const f64,
    n: usize,
    p: f64,
    kappa: f64,
    result: *mut f64,
) -> SplapStatus {
    guard(|| {
        let o = borrow(ops, "ops")?.system.ops();
        let params = GrowthParams::new(p, kappa)?;
        let u = FeFunction::new(doubles(u, n, "u")?.to_vec());
        let v = FeFunction::new(doubles(v, n, "v")?.to_vec());
        *out(result, "result")? = o.quasinorm_error_sq(&u, &v, &params)?;
        Ok(())
    })
}

/// Runs the implicit scheme from the nodal vector `initial` (length `n`).
///
/// # Safety
/// Pointers must be valid; `initial` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn splap_run_trajectory(
    ops: *const SplapOperators,
    params: *const SplapSchemeParams,
    initial: *const f64,
    n: usize,
    out_traj: *mut *mut SplapTrajectory,
) -> SplapStatus {
    guard(|| {
        let slot = out(out_traj, "out_traj")?;
        let system = &borrow(ops, "ops")?.system;
        let sp = *borrow(params, "params")?;
        let mesh = system.ops().mesh();
        let growth = if sp.eps_reg > 0.0 {
            GrowthParams::with_eps(sp.p, sp.kappa, sp.eps_reg)?
        } else {
            GrowthParams::new(sp.p, sp.kappa)?
        };
        let noise = match sp.noise {
            n if n == SplapNoise::Zero as u32 => NoiseCoefficient::zero(mesh.simplex_count(), 1)?,
            n if n == SplapNoise::InvSqrtRadius as u32 => {
                NoiseCoefficient::inverse_sqrt_radius(mesh, 1, NoiseMode::Additive)?
            }
            n if n == SplapNoise::Constant as u32 => {
                let c = sp.noise_constant;
                NoiseCoefficient::from_fn(mesh, 1, move |_| c, NoiseMode::Additive)?
            }
            n => return Err(Fail(SplapStatus::InvalidInput, format!("unknown noise kind {n}"))),
        };
        let path = sample_path(sp.seed, sp.horizon, sp.path_steps, 1)?;
        let mut cfg = SchemeConfig::new(
            growth,
            uniform_time_grid(sp.steps, sp.horizon)?,
            &noise,
            &path,
            FeFunction::new(doubles(initial, n, "initial")?.to_vec()),
        );
        cfg.tol = if sp.tol > 0.0 { sp.tol } else { DEFAULT_TOL };
        cfg.formulation = if sp.componentwise != 0 {
            Formulation::Componentwise
        } else {
            Formulation::Euclidean
        };
        cfg.clip_initial = sp.clip_initial != 0;
        let traj = run_trajectory(system, &cfg)?;
        *slot = Box::into_raw(Box::new(SplapTrajectory { traj }));
        Ok(())
    })
}

/// # Safety
/// `traj` must come from this library and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn splap_trajectory_free(traj: *mut SplapTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of stored states (steps + 1) and their length.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn splap_trajectory_shape(
    traj: *const SplapTrajectory,
    states: *mut usize,
    vertices: *mut usize,
) -> SplapStatus {
    guard(|| {
        let t = &borrow(traj, "traj")?.traj;
        *out(states, "states")? = t.states.len();
        *out(vertices, "vertices")? = t.states.first().map_or(0, FeFunction::len);
        Ok(())
    })
}

/// Copies state `m` into `buf` (capacity `len`) and its time into `time`.
///
/// # Safety
/// `buf` must hold `len` doubles; `time` may be null.
#[no_mangle]
pub unsafe extern "C" fn splap_trajectory_state(
    traj: *const SplapTrajectory,
    m: usize,
    buf: *mut f64,
    len: usize,
    time: *mut f64,
) -> SplapStatus {
    guard(|| {
        let t = &borrow(traj, "traj")?.traj;
        let state = t
            .states
            .get(m)
            .ok_or_else(|| Fail(SplapStatus::InvalidInput, format!("state {m} out of range")))?;
        if len != state.len() {
            return Err(Fail(
                SplapStatus::InvalidInput,
                format!("buffer holds {len} values, state has {}", state.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        slice::from_raw_parts_mut(buf, len).copy_from_slice(&state.coeffs);
        if let Some(tm) = time.as_mut() {
            *tm = t.grid.points()[m];
        }
        Ok(())
    })
}

/// Error of `coarse` against the nested reference `fine`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn splap_path_error(
    ops: *const SplapOperators,
    coarse: *const SplapTrajectory,
    fine: *const SplapTrajectory,
    p: f64,
    kappa: f64,
    result: *mut SplapPathError,
) -> SplapStatus {
    guard(|| {
        let o = borrow(ops, "ops")?.system.ops();
        let params = GrowthParams::new(p, kappa)?;
        let e: PathError = analysis::path_error(
            &borrow(coarse, "coarse")?.traj,
            &borrow(fine, "fine")?.traj,
            o,
            &params,
        )?;
        *out(result, "result")? = SplapPathError {
            max_l2_sq: e.max_l2_sq,
            quasi_sum: e.quasi_sum,
            total: e.total,
        };
        Ok(())
    })
}

/// Least squares fit of `log value = log_c + a log tau`.
///
/// # Safety
/// `taus` and `values` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn splap_fit_rate(
    taus: *const f64,
    values: *const f64,
    n: usize,
    result: *mut SplapRateFit,
) -> SplapStatus {
    guard(|| {
        let fit = analysis::fit_rate(doubles(taus, n, "taus")?, doubles(values, n, "values")?)?;
        *out(result, "result")? = SplapRateFit {
            log_c: fit.log_c,
            a: fit.a,
            stderr: fit.stderr,
        };
        Ok(())
    })
}

/// `tauᵃ / (tauᵃ − tau_tildeᵃ)`.
///
/// # Safety
/// `result` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn splap_bias(tau: f64, tau_tilde: f64, a: f64, result: *mut f64) -> SplapStatus {
    guard(|| {
        *out(result, "result")? = analysis::bias(tau, tau_tilde, a)?;
        Ok(())
    })
}

/// Bias-corrected rate `a` and `alpha = a/2` from the refinement slope.
///
/// # Safety
/// `taus` must hold `n` doubles; outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn splap_corrected_rate(
    a_tilde: f64,
    taus: *const f64,
    n: usize,
    tau_tilde: f64,
    a: *mut f64,
    alpha: *mut f64,
) -> SplapStatus {
    guard(|| {
        let c = analysis::corrected_rate(a_tilde, doubles(taus, n, "taus")?, tau_tilde)?;
        *out(a, "a")? = c.a;
        *out(alpha, "alpha")? = c.alpha;
        Ok(())
    })
}
