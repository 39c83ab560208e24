//! C ABI for the neurodiffuse simulator.
//!
//! Every function returns an `NdStatus`; on failure the message is kept per
//! thread and can be fetched with `nd_last_error_message`. Handles are opaque
//! and must be released with `nd_simulation_free`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use libc::{c_char, c_int, size_t};

use neurodiffuse::checkpoint::{checkpoint, restore};
use neurodiffuse::config::{RunConfig, Subcommand};
use neurodiffuse::constitutive::ModelSpec;
use neurodiffuse::csd::{sorted_field, WaveMetrics, WaveTracker};
use neurodiffuse::membrane::{GatingField, HhGating, TriggerParams};
use neurodiffuse::pde::BoundaryMode;
use neurodiffuse::splitting::{SchemeConfig, Simulation, Trajectory};
use neurodiffuse::state::TissueState;
use neurodiffuse::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Solver = 4,
    Io = 5,
    Restore = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> NdStatus {
    match e.root() {
        Error::Config(_) | Error::Mode(_) => NdStatus::Config,
        Error::InvalidArgument(_) => NdStatus::InvalidArgument,
        Error::Io(_) => NdStatus::Io,
        Error::Restore(_) => NdStatus::Restore,
        _ => NdStatus::Solver,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (NdStatus, String)>) -> NdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NdStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            NdStatus::Panic
        }
    }
}

fn fail(e: Error) -> (NdStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (NdStatus, String) {
    (NdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (NdStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (NdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// A CSD simulation with its state between calls.
pub struct NdSimulation {
    // declared before `model` so it is dropped first
    sim: Simulation<'static, HhGating>,
    tracker: WaveTracker,
    spec: Arc<ModelSpec>,
    _model: Box<HhGating>,
}

struct Parts {
    config: SchemeConfig,
    spec: Arc<ModelSpec>,
    trigger: Option<TriggerParams>,
    state: TissueState,
    gating: GatingField,
}

fn parts(text: &str) -> neurodiffuse::Result<Parts> {
    let mut cfg = RunConfig::defaults(Subcommand::Csd);
    cfg.apply_text(text, "config")?;
    cfg.resolve();
    cfg.validate()?;
    let mut setup = cfg.model.setup(&cfg.scheme, cfg.conventions)?;
    setup.trigger = cfg.trigger;
    Ok(Parts {
        config: cfg.scheme,
        spec: setup.spec,
        trigger: cfg.triggered.then_some(setup.trigger),
        state: setup.state,
        gating: setup.gating,
    })
}

impl NdSimulation {
    fn build(p: Parts, from: Option<&Trajectory>) -> neurodiffuse::Result<Self> {
        let model = Box::new(HhGating::new(&p.spec));
        // SAFETY: the box is never moved out of or mutated while `sim` lives,
        // and `sim` is dropped before it (field order).
        let model_ref: &'static HhGating = unsafe { &*(model.as_ref() as *const HhGating) };
        let sim = match from {
            None => Simulation::new(
                p.config,
                p.spec.clone(),
                model_ref,
                p.state,
                p.gating,
                p.trigger,
                BoundaryMode::Natural,
            )?,
            Some(tr) => {
                if !tr.last_state().layout.is_compatible(&p.state.layout) {
                    return Err(Error::Restore("checkpoint layout differs from the configuration".into()));
                }
                Simulation::resume(p.config, p.spec.clone(), model_ref, tr, p.trigger, BoundaryMode::Natural)?
            }
        };
        let tracker = WaveTracker::new(&p.spec, &sim.state().layout, sim.state());
        Ok(Self {
            sim,
            tracker,
            spec: p.spec,
            _model: model,
        })
    }

    fn current(&self) -> &TissueState {
        self.sim.state()
    }

    fn trajectory(&self) -> Trajectory {
        Trajectory {
            times: vec![self.current().t],
            states: vec![self.current().clone()],
            gating: vec![self.sim.gating().clone()],
            last_previous: self.sim.previous().cloned(),
            meta: self.sim.meta().clone(),
        }
    }

    fn advance(&mut self, steps: usize) -> neurodiffuse::Result<()> {
        for _ in 0..steps {
            self.sim.step()?;
            self.tracker.observe(&self.spec, self.sim.state());
        }
        Ok(())
    }
}

/// Wave metrics; quantities that were not detected are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NdWaveMetrics {
    /// Mean wave speed, mm/min.
    pub speed: f64,
    /// Wave width at the current time, mm.
    pub width: f64,
    /// Duration of elevated extracellular potassium, s.
    pub duration: f64,
    /// Largest neuronal potential seen, V.
    pub max_phi_n: f64,
    /// Smallest extracellular potential seen, V.
    pub min_phi_e: f64,
}

impl From<&WaveMetrics> for NdWaveMetrics {
    fn from(m: &WaveMetrics) -> Self {
        Self {
            speed: m.speed.unwrap_or(f64::NAN),
            width: m.width.unwrap_or(f64::NAN),
            duration: m.duration.unwrap_or(f64::NAN),
            max_phi_n: m.max_phi_n,
            min_phi_e: m.min_phi_e,
        }
    }
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn nd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the last error message of this thread into `buf` (nul-terminated,
/// truncated to `len`). Returns the full message length, 0 if there is none.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn nd_last_error_message(buf: *mut c_char, len: size_t) -> size_t {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Creates a CSD simulation from configuration text in the CLI format
/// (`key = value` lines; `model = full` selects the full model).
///
/// # Safety
/// `config` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nd_simulation_new(config: *const c_char, out: *mut *mut NdSimulation) -> NdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let text = text(config, "config")?;
        let sim = NdSimulation::build(parts(text).map_err(fail)?, None).map_err(fail)?;
        *out = Box::into_raw(Box::new(sim));
        Ok(())
    })
}

/// Creates a simulation from configuration text and a checkpoint file. The
/// wave tracker restarts at the restored time.
///
/// # Safety
/// `config` and `path` must be nul-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nd_simulation_restore(
    config: *const c_char,
    path: *const c_char,
    out: *mut *mut NdSimulation,
) -> NdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let p = parts(text(config, "config")?).map_err(fail)?;
        let tr = restore(text(path, "path")?, &p.spec).map_err(fail)?;
        let sim = NdSimulation::build(p, Some(&tr)).map_err(fail)?;
        *out = Box::into_raw(Box::new(sim));
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `sim` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nd_simulation_free(sim: *mut NdSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances `steps` split steps. After a solver failure the handle holds the
/// last state reached and should only be inspected or freed.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nd_simulation_step(sim: *mut NdSimulation, steps: size_t) -> NdStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        sim.advance(steps).map_err(fail)
    })
}

/// Current simulated time in seconds and the number of steps taken.
///
/// # Safety
/// `sim` must be a live handle; `t` and `steps` may be null.
#[no_mangle]
pub unsafe extern "C" fn nd_simulation_time(sim: *const NdSimulation, t: *mut f64, steps: *mut size_t) -> NdStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        if !t.is_null() {
            *t = sim.current().t;
        }
        if !steps.is_null() {
            *steps = sim.sim.steps_taken();
        }
        Ok(())
    })
}

/// Number of fields and total unknowns of the PDE system.
///
/// # Safety
/// `sim` must be a live handle; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn nd_simulation_sizes(sim: *const NdSimulation, fields: *mut size_t, dofs: *mut size_t) -> NdStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let l = &sim.current().layout;
        if !fields.is_null() {
            *fields = l.num_fields();
        }
        if !dofs.is_null() {
            *dofs = l.dofs.num_dofs();
        }
        Ok(())
    })
}

/// Writes the name of field `field` (e.g. "K_e") into `buf`.
///
/// # Safety
/// `sim` must be a live handle; `buf` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn nd_simulation_field_name(
    sim: *const NdSimulation,
    field: size_t,
    buf: *mut c_char,
    len: size_t,
) -> NdStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let l = &sim.current().layout;
        if field >= l.num_fields() {
            return Err((NdStatus::InvalidArgument, format!("field {field} out of range")));
        }
        let name = l.field_name(&sim.spec, field);
        if name.len() + 1 > len {
            return Err((NdStatus::BufferTooSmall, format!("field name needs {} bytes", name.len() + 1)));
        }
        std::ptr::copy_nonoverlapping(name.as_ptr() as *const c_char, buf, name.len());
        *buf.add(name.len()) = 0;
        Ok(())
    })
}

/// Copies the dof coordinates (m) and values of one field, sorted by
/// coordinate. `count` receives the number of dofs; with null `x` and `y`
/// only the count is returned.
///
/// # Safety
/// `sim` must be a live handle; `x` and `y` valid for `len` doubles or null.
#[no_mangle]
pub unsafe extern "C" fn nd_simulation_field(
    sim: *const NdSimulation,
    field: size_t,
    x: *mut f64,
    y: *mut f64,
    len: size_t,
    count: *mut size_t,
) -> NdStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        if field >= sim.current().layout.num_fields() {
            return Err((NdStatus::InvalidArgument, format!("field {field} out of range")));
        }
        let (xs, ys) = sorted_field(sim.current(), field);
        if !count.is_null() {
            *count = xs.len();
        }
        if x.is_null() && y.is_null() {
            return Ok(());
        }
        if len < xs.len() {
            return Err((NdStatus::BufferTooSmall, format!("field has {} dofs", xs.len())));
        }
        if !x.is_null() {
            std::ptr::copy_nonoverlapping(xs.as_ptr(), x, xs.len());
        }
        if !y.is_null() {
            std::ptr::copy_nonoverlapping(ys.as_ptr(), y, ys.len());
        }
        Ok(())
    })
}

/// Wave metrics from the steps taken so far, with the width measured now.
///
/// # Safety
/// `sim` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nd_simulation_metrics(sim: *const NdSimulation, out: *mut NdWaveMetrics) -> NdStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = (&WaveMetrics::collect(&sim.spec, &sim.tracker, sim.current())).into();
        Ok(())
    })
}

/// Writes the current state as a checkpoint file.
///
/// # Safety
/// `sim` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nd_simulation_checkpoint(sim: *const NdSimulation, path: *const c_char) -> NdStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        checkpoint(&sim.trajectory(), &sim.spec, text(path, "path")?).map_err(fail)
    })
}

/// 1 if the handle runs the full model, 0 in the zero flow limit.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nd_simulation_is_full(sim: *const NdSimulation, out: *mut c_int) -> NdStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = c_int::from(!sim.spec.zero_flow);
        Ok(())
    })
}
