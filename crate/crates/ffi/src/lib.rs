//! C ABI over the `rokdeepc` library.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `rk_*_new`/`rk_*_fit`/`rk_*_load` call and released by the matching
//! `rk_*_free`. Every fallible call returns an [`RkStatus`]; on failure the
//! message is kept per thread and read with [`rk_last_error`]. Panics never
//! unwind into the caller.
//!
//! Numeric buffers are plain `double` arrays. Trajectories are stored sample
//! by sample (`m` inputs of sample 0, then sample 1, ...), and windows and
//! horizons are stacked oldest first, the same layout the library uses.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};
use rokdeepc::config::{Method, RunConfig};
use rokdeepc::harness::{build_controllers, collect_dataset};
use rokdeepc::kernel::KernelSpec;
use rokdeepc::predict::{fit_kernel, fit_linear, Predictor};
use rokdeepc::solver::Controller;
use rokdeepc::trajectory::{partition, Dims, InitialWindow, SignalTrajectory};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Configuration, parse or serialization error.
    Config = 3,
    Io = 4,
    /// Factorization, infeasibility or solver failure.
    Solver = 5,
    /// An output buffer is too small; nothing was written.
    BufferTooSmall = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RkKernelKind {
    /// `(x^T y + a)^b`, `b` rounded to an integer.
    Polynomial = 0,
    /// `exp(-|x - y|^2 / a)`
    Gaussian = 1,
    /// `exp(x^T y / a)`
    Exponential = 2,
    /// Gaussian with `2 sigma^2 = a` on the past block plus the inner product of the inputs.
    Hybrid = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RkMethod {
    /// Robust kernel DeePC with the selected configured kernel.
    Rokdeepc = 0,
    /// Certainty-equivalence kernel MPC with the selected configured kernel.
    KernelMpc = 1,
    Deepc = 2,
    KoopmanMpc = 3,
}

pub struct RkConfig {
    inner: RunConfig,
}

pub struct RkTrajectory {
    inner: SignalTrajectory,
}

pub struct RkPredictor {
    inner: Box<dyn Predictor + Send>,
}

pub struct RkController {
    inner: Box<dyn Controller>,
}

struct Failure {
    status: RkStatus,
    message: String,
}

impl Failure {
    fn new(status: RkStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<rokdeepc::Error> for Failure {
    fn from(e: rokdeepc::Error) -> Self {
        use rokdeepc::Error as E;
        let status = match &e {
            E::Config { .. } | E::Parse { .. } | E::Serde(_) => RkStatus::Config,
            E::Io { .. } => RkStatus::Io,
            E::Dimension { .. } | E::InvalidArgument(_) => RkStatus::InvalidArgument,
            _ => RkStatus::Solver,
        };
        Failure::new(status, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Outcome) -> RkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RkStatus::Ok
        }
        Ok(Err(fail)) => {
            set_error(&fail.message);
            fail.status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {what}"));
            RkStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::new(RkStatus::NullPointer, format!("{what} is null"))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn obj_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// A null pointer is accepted for an empty slice.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out(src: &[f64], dst: *mut f64, cap: usize, what: &str) -> Outcome {
    if src.len() > cap {
        return Err(Failure::new(
            RkStatus::BufferTooSmall,
            format!("{what} needs {} values, buffer holds {cap}", src.len()),
        ));
    }
    if !src.is_empty() {
        if dst.is_null() {
            return Err(null(what));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
    Ok(())
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Outcome {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(RkStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn window(
    dims: &Dims,
    u_ini: *const f64,
    u_ini_len: usize,
    y_ini: *const f64,
    y_ini_len: usize,
) -> Result<InitialWindow, Failure> {
    let u = DVector::from_column_slice(slice(u_ini, u_ini_len, "u_ini")?);
    let y = DVector::from_column_slice(slice(y_ini, y_ini_len, "y_ini")?);
    Ok(InitialWindow::new(u, y, dims)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (truncated and
/// NUL-terminated). Returns the full message length without the NUL, or 0
/// when the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rk_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => {
            if !buf.is_null() && cap > 0 {
                *buf = 0;
            }
            0
        }
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && cap > 0 {
                let n = bytes.len().min(cap - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

// ---- configuration ----

/// The built-in polynomial SISO benchmark configuration.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn rk_config_example1(out: *mut *mut RkConfig) -> RkStatus {
    guard(|| {
        put(
            out,
            RkConfig {
                inner: RunConfig::example1(),
            },
        )
    })
}

/// Parse and validate a TOML configuration.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn rk_config_from_toml(
    text: *const c_char,
    out: *mut *mut RkConfig,
) -> RkStatus {
    guard(|| {
        let cfg = RunConfig::from_toml_str(c_str(text, "text")?)?;
        put(out, RkConfig { inner: cfg })
    })
}

/// Load and validate a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn rk_config_load(path: *const c_char, out: *mut *mut RkConfig) -> RkStatus {
    guard(|| {
        let cfg = RunConfig::load(c_str(path, "path")?)?;
        put(out, RkConfig { inner: cfg })
    })
}

/// Hex SHA-256 fingerprint; `buf` needs 65 bytes.
///
/// # Safety
/// `cfg` must be a live handle; `buf` must point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rk_config_fingerprint(
    cfg: *const RkConfig,
    buf: *mut c_char,
    cap: usize,
) -> RkStatus {
    guard(|| {
        let fp = obj(cfg, "config")?.inner.fingerprint();
        if buf.is_null() {
            return Err(null("buffer"));
        }
        if cap < fp.len() + 1 {
            return Err(Failure::new(
                RkStatus::BufferTooSmall,
                format!("fingerprint needs {} bytes", fp.len() + 1),
            ));
        }
        ptr::copy_nonoverlapping(fp.as_ptr().cast(), buf, fp.len());
        *buf.add(fp.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rk_config_free(cfg: *mut RkConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

// ---- trajectories ----

/// Record `experiment.t_data` samples with the configured plant and
/// excitation; measurement noise of `noise_variance` is added to the
/// measured copy only.
///
/// # Safety
/// `cfg` must be a live handle; `clean` and `measured` valid handle slots.
#[no_mangle]
pub unsafe extern "C" fn rk_collect(
    cfg: *const RkConfig,
    seed: u64,
    noise_variance: f64,
    clean: *mut *mut RkTrajectory,
    measured: *mut *mut RkTrajectory,
) -> RkStatus {
    guard(|| {
        let cfg = obj(cfg, "config")?;
        if clean.is_null() || measured.is_null() {
            return Err(null("output handle"));
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Failure::new(
                RkStatus::InvalidArgument,
                "noise variance must be finite and >= 0",
            ));
        }
        let (c, m) = collect_dataset(&cfg.inner, seed, noise_variance)?;
        put(clean, RkTrajectory { inner: c })?;
        put(measured, RkTrajectory { inner: m })
    })
}

/// Build a trajectory from `len` samples of `m` inputs and `p` outputs.
///
/// # Safety
/// `inputs` must hold `m * len` values, `outputs` `p * len`; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn rk_trajectory_new(
    m: usize,
    p: usize,
    len: usize,
    inputs: *const f64,
    outputs: *const f64,
    out: *mut *mut RkTrajectory,
) -> RkStatus {
    guard(|| {
        let u = slice(inputs, m * len, "inputs")?;
        let y = slice(outputs, p * len, "outputs")?;
        let t = SignalTrajectory::new(
            DMatrix::from_column_slice(m, len, u),
            DMatrix::from_column_slice(p, len, y),
        )?;
        put(out, RkTrajectory { inner: t })
    })
}

/// # Safety
/// `traj` must be a live handle; the size pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rk_trajectory_shape(
    traj: *const RkTrajectory,
    m: *mut usize,
    p: *mut usize,
    len: *mut usize,
) -> RkStatus {
    guard(|| {
        let t = &obj(traj, "trajectory")?.inner;
        *obj_mut(m, "m")? = t.m();
        *obj_mut(p, "p")? = t.p();
        *obj_mut(len, "len")? = t.len();
        Ok(())
    })
}

/// Copy the samples out; either buffer may be null with capacity 0 to skip it.
///
/// # Safety
/// `traj` must be a live handle; each buffer must hold its capacity.
#[no_mangle]
pub unsafe extern "C" fn rk_trajectory_read(
    traj: *const RkTrajectory,
    inputs: *mut f64,
    inputs_cap: usize,
    outputs: *mut f64,
    outputs_cap: usize,
) -> RkStatus {
    guard(|| {
        let t = &obj(traj, "trajectory")?.inner;
        if !(inputs.is_null() && inputs_cap == 0) {
            write_out(t.inputs().as_slice(), inputs, inputs_cap, "inputs")?;
        }
        if !(outputs.is_null() && outputs_cap == 0) {
            write_out(t.outputs().as_slice(), outputs, outputs_cap, "outputs")?;
        }
        Ok(())
    })
}

/// # Safety
/// `traj` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rk_trajectory_free(traj: *mut RkTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

// ---- predictors ----

/// Least-squares linear predictor on the Hankel data of `traj`.
///
/// # Safety
/// `traj` must be a live handle; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn rk_predictor_fit_linear(
    traj: *const RkTrajectory,
    t_ini: usize,
    horizon: usize,
    out: *mut *mut RkPredictor,
) -> RkStatus {
    guard(|| {
        let part = partition(&obj(traj, "trajectory")?.inner, t_ini, horizon)?;
        put(
            out,
            RkPredictor {
                inner: Box::new(fit_linear(&part)),
            },
        )
    })
}

/// Kernel ridge predictor; see [`RkKernelKind`] for the meaning of `a` and `b`.
///
/// # Safety
/// `traj` must be a live handle; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn rk_predictor_fit_kernel(
    traj: *const RkTrajectory,
    t_ini: usize,
    horizon: usize,
    kind: RkKernelKind,
    a: f64,
    b: f64,
    gamma: f64,
    out: *mut *mut RkPredictor,
) -> RkStatus {
    guard(|| {
        let spec = match kind {
            RkKernelKind::Polynomial => {
                if !(b >= 1.0 && b <= u32::MAX as f64) {
                    return Err(Failure::new(
                        RkStatus::InvalidArgument,
                        "polynomial degree must be >= 1",
                    ));
                }
                KernelSpec::Polynomial {
                    offset: a,
                    degree: b.round() as u32,
                }
            }
            RkKernelKind::Gaussian => KernelSpec::Gaussian { two_sigma_sq: a },
            RkKernelKind::Exponential => KernelSpec::Exponential { scale: a },
            RkKernelKind::Hybrid => KernelSpec::Hybrid { two_sigma_sq: a },
        };
        let part = partition(&obj(traj, "trajectory")?.inner, t_ini, horizon)?;
        put(
            out,
            RkPredictor {
                inner: Box::new(fit_kernel(&part, spec, gamma)?),
            },
        )
    })
}

/// # Safety
/// `pred` must be a live handle; the size pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rk_predictor_dims(
    pred: *const RkPredictor,
    m: *mut usize,
    p: *mut usize,
    t_ini: *mut usize,
    horizon: *mut usize,
) -> RkStatus {
    guard(|| {
        let d = obj(pred, "predictor")?.inner.dims();
        *obj_mut(m, "m")? = d.m;
        *obj_mut(p, "p")? = d.p;
        *obj_mut(t_ini, "t_ini")? = d.t_ini;
        *obj_mut(horizon, "horizon")? = d.n;
        Ok(())
    })
}

/// Predict `p * horizon` outputs for the window `(u_ini, y_ini)` and future inputs `u`.
///
/// # Safety
/// `pred` must be a live handle; every buffer must hold its stated length.
#[no_mangle]
pub unsafe extern "C" fn rk_predictor_predict(
    pred: *const RkPredictor,
    u_ini: *const f64,
    u_ini_len: usize,
    y_ini: *const f64,
    y_ini_len: usize,
    u: *const f64,
    u_len: usize,
    y_out: *mut f64,
    y_cap: usize,
) -> RkStatus {
    guard(|| {
        let p = &obj(pred, "predictor")?.inner;
        let w = window(&p.dims(), u_ini, u_ini_len, y_ini, y_ini_len)?;
        let u = DVector::from_column_slice(slice(u, u_len, "u")?);
        let y = p.predict(&w, &u)?;
        write_out(y.as_slice(), y_out, y_cap, "y_out")
    })
}

/// # Safety
/// `pred` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rk_predictor_free(pred: *mut RkPredictor) {
    if !pred.is_null() {
        drop(Box::from_raw(pred));
    }
}

// ---- controllers ----

/// A controller fitted on `data` with the settings of `cfg`. For the kernel
/// methods `kernel_index` selects among `predictors.kernels`; it is ignored otherwise.
///
/// # Safety
/// `cfg` and `data` must be live handles; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn rk_controller_new(
    cfg: *const RkConfig,
    data: *const RkTrajectory,
    method: RkMethod,
    kernel_index: usize,
    out: *mut *mut RkController,
) -> RkStatus {
    guard(|| {
        let cfg = &obj(cfg, "config")?.inner;
        let data = &obj(data, "data")?.inner;
        let (m, idx) = match method {
            RkMethod::Rokdeepc => (Method::Rokdeepc, kernel_index),
            RkMethod::KernelMpc => (Method::KernelMpc, kernel_index),
            RkMethod::Deepc => (Method::Deepc, 0),
            RkMethod::KoopmanMpc => (Method::KoopmanMpc, 0),
        };
        let kernels = cfg.predictors.kernels.len();
        if matches!(m, Method::Rokdeepc | Method::KernelMpc) && idx >= kernels {
            return Err(Failure::new(
                RkStatus::InvalidArgument,
                format!("kernel index {idx} out of range (config has {kernels})"),
            ));
        }
        let mut ctrls = build_controllers(cfg, &[m], data)?;
        put(
            out,
            RkController {
                inner: ctrls.swap_remove(idx),
            },
        )
    })
}

/// Solve one cycle; writes the `m * horizon` optimal inputs to `u_out` and
/// the solver iteration count to `iterations` (may be null).
///
/// # Safety
/// `ctrl` must be a live handle; every buffer must hold its stated length.
#[no_mangle]
pub unsafe extern "C" fn rk_controller_solve(
    ctrl: *mut RkController,
    u_ini: *const f64,
    u_ini_len: usize,
    y_ini: *const f64,
    y_ini_len: usize,
    reference: *const f64,
    reference_len: usize,
    u_out: *mut f64,
    u_cap: usize,
    iterations: *mut usize,
) -> RkStatus {
    guard(|| {
        let c = &mut obj_mut(ctrl, "controller")?.inner;
        let dims = c.dims();
        let w = window(&dims, u_ini, u_ini_len, y_ini, y_ini_len)?;
        let r = DVector::from_column_slice(slice(reference, reference_len, "reference")?);
        if r.len() != dims.y_len() {
            return Err(Failure::new(
                RkStatus::InvalidArgument,
                format!("reference needs {} values, got {}", dims.y_len(), r.len()),
            ));
        }
        let sol = c.solve(&w, &r)?;
        write_out(sol.u_star.as_slice(), u_out, u_cap, "u_out")?;
        if let Some(it) = iterations.as_mut() {
            *it = sol.iterations;
        }
        Ok(())
    })
}

/// # Safety
/// `ctrl` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rk_controller_free(ctrl: *mut RkController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}
