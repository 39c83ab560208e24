//! Implicit time steps of the PDE subsystem: backward Euler, BDF2 and
//! Crank-Nicolson for the zero flow model and backward Euler for the full
//! model, each solved monolithically by Newton's method.

pub mod kernel;
pub mod newton;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::constitutive::ModelSpec;
use crate::error::{Error, Result};
use crate::fem::{assemble_into, BandedMatrix, ElementFamily};
use crate::fem::assembly::new_system_matrix;
use crate::membrane::{excitatory_conductance, GatingField, TriggerParams};
use crate::state::{FieldRole, SystemLayout, TissueState};

pub use kernel::{Forcing, LocalLayout, SchemeWeights, StepData, StepKernel};
pub use newton::{newton_solve, NewtonCache, NewtonConfig, NewtonReport, NonlinearSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PdeStepperKind {
    BE,
    BDF2,
    CN,
    BEFull,
}

impl PdeStepperKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "be" => Some(Self::BE),
            "bdf2" => Some(Self::BDF2),
            "cn" => Some(Self::CN),
            "be_full" | "befull" => Some(Self::BEFull),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::BE => "be",
            Self::BDF2 => "bdf2",
            Self::CN => "cn",
            Self::BEFull => "be_full",
        }
    }

    pub fn is_full(self) -> bool {
        matches!(self, Self::BEFull)
    }

    /// Weights of the step; BDF2 falls back to BE without a second level.
    pub fn weights(self, have_previous: bool) -> SchemeWeights {
        match self {
            Self::BDF2 if have_previous => SchemeWeights {
                c: [1.0, -4.0 / 3.0, 1.0 / 3.0],
                beta_imp: 2.0 / 3.0,
                beta_exp: 0.0,
                pump: 2.0 / 3.0,
            },
            Self::CN => SchemeWeights {
                c: [1.0, -1.0, 0.0],
                beta_imp: 0.5,
                beta_exp: 0.5,
                pump: 1.0,
            },
            _ => SchemeWeights {
                c: [1.0, -1.0, 0.0],
                beta_imp: 1.0,
                beta_exp: 0.0,
                pump: 1.0,
            },
        }
    }
}

/// States at levels n and n-1.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    pub current: TissueState,
    pub previous: Option<TissueState>,
}

impl HistoryBuffer {
    pub fn new(initial: TissueState) -> Self {
        Self {
            current: initial,
            previous: None,
        }
    }

    pub fn push(&mut self, next: TissueState) {
        let old = std::mem::replace(&mut self.current, next);
        self.previous = Some(old);
    }

    pub fn validate(&self, dt: f64) -> Result<()> {
        if let Some(p) = &self.previous {
            if !p.layout.is_compatible(&self.current.layout) {
                return Err(Error::InvalidArgument("history levels use different layouts".into()));
            }
            let gap = self.current.t - p.t;
            if (gap - dt).abs() > 1e-9 * dt.max(gap.abs()) {
                return Err(Error::InvalidArgument(format!(
                    "history levels are {gap:e} s apart, step is {dt:e} s"
                )));
            }
        }
        Ok(())
    }
}

/// How boundary rows are treated.
#[derive(Clone, Copy)]
pub enum BoundaryMode<'a> {
    /// Zero-flux boundaries; potentials (and pressure) pinned at the left end.
    Natural,
    /// Exact values imposed at both ends.
    Dirichlet(&'a dyn Forcing),
}

struct Prepared {
    data: StepData,
    constraints: Vec<(usize, f64)>,
    weights: SchemeWeights,
}

/// Assembled nonlinear system of one step.
struct PdeSystem<'a> {
    kernel: StepKernel<'a>,
    constraints: &'a [(usize, f64)],
    field_of: &'a [usize],
    field_floor: &'a [f64],
    nfields: usize,
}

impl<'a> PdeSystem<'a> {
    fn constrain(&self, u: &[f64], r: &mut [f64], j: Option<&mut BandedMatrix>) {
        for &(i, v) in self.constraints {
            r[i] = u[i] - v;
        }
        if let Some(j) = j {
            for &(i, _) in self.constraints {
                j.set_identity_row(i);
            }
        }
    }
}

impl<'a> NonlinearSystem for PdeSystem<'a> {
    fn dim(&self) -> usize {
        self.kernel.layout.dofs.num_dofs()
    }

    fn new_matrix(&self) -> BandedMatrix {
        new_system_matrix(&self.kernel.layout.dofs)
    }

    fn residual(&self, u: &[f64], r: &mut [f64]) -> Result<()> {
        assemble_into(&self.kernel.layout.dofs, &self.kernel, u, r, None)?;
        self.constrain(u, r, None);
        Ok(())
    }

    fn jacobian(&self, u: &[f64], r: &mut [f64], j: &mut BandedMatrix) -> Result<()> {
        assemble_into(&self.kernel.layout.dofs, &self.kernel, u, r, Some(j))?;
        self.constrain(u, r, Some(j));
        Ok(())
    }

    fn update_small(&self, u: &[f64], du: &[f64], tol: f64) -> bool {
        let mut umax = vec![0.0f64; self.nfields];
        let mut dmax = vec![0.0f64; self.nfields];
        for i in 0..u.len() {
            let f = self.field_of[i];
            umax[f] = umax[f].max(u[i].abs());
            dmax[f] = dmax[f].max(du[i].abs());
        }
        (0..self.nfields).all(|f| dmax[f] <= tol * umax[f].max(self.field_floor[f]))
    }
}

/// Advances the PDE unknowns with frozen gating variables.
pub struct PdeStepper {
    pub spec: Arc<ModelSpec>,
    pub layout: Arc<SystemLayout>,
    pub kind: PdeStepperKind,
    pub newton: NewtonConfig,
    pub trigger: Option<TriggerParams>,
    /// Start Newton from a linear extrapolation of the last two levels.
    pub predictor: bool,
    local: LocalLayout,
    pins: Vec<(usize, f64)>,
    field_of: Vec<usize>,
    field_floor: Vec<f64>,
    cache: NewtonCache,
    pub last_report: NewtonReport,
    pub total_iterations: usize,
    pub total_jacobians: usize,
}

impl PdeStepper {
    pub fn new(
        spec: Arc<ModelSpec>,
        layout: Arc<SystemLayout>,
        kind: PdeStepperKind,
        newton: NewtonConfig,
        initial: &TissueState,
    ) -> Result<Self> {
        newton.validate()?;
        if kind.is_full() == spec.zero_flow {
            return Err(Error::Mode(format!(
                "stepper {} does not match a {} model",
                kind.name(),
                if spec.zero_flow { "zero flow" } else { "full" }
            )));
        }
        let ecs = layout.ecs();
        let phi_r = layout.phi_field(ecs);
        let mut pins = vec![(layout.dofs.field_dofs(phi_r)[0], 0.0)];
        if let Some(p) = layout.pressure_field() {
            pins.push((layout.dofs.field_dofs(p)[0], 0.0));
        }
        for pin in pins.iter_mut() {
            pin.1 = initial.values[pin.0];
        }
        let n = layout.dofs.num_dofs();
        let mut field_of = vec![0; n];
        let mut field_floor = Vec::new();
        for (f, role) in layout.roles().iter().enumerate() {
            for &d in layout.dofs.field_dofs(f) {
                field_of[d] = f;
            }
            field_floor.push(match role {
                FieldRole::Alpha(_) => 1e-3,
                FieldRole::Conc(..) => 1e-3,
                FieldRole::Potential(_) => 1e-3,
                FieldRole::Pressure => 1.0,
            });
        }
        Ok(Self {
            local: LocalLayout::new(&layout),
            spec,
            layout,
            kind,
            newton,
            trigger: None,
            predictor: true,
            pins,
            field_of,
            field_floor,
            cache: NewtonCache::default(),
            last_report: NewtonReport::default(),
            total_iterations: 0,
            total_jacobians: 0,
        })
    }

    pub fn pins(&self) -> &[(usize, f64)] {
        &self.pins
    }

    pub fn reset_cache(&mut self) {
        self.cache.invalidate();
    }

    pub fn factorizations(&self) -> usize {
        self.cache.factorizations
    }

    pub fn step_zero_flow(
        &mut self,
        history: &HistoryBuffer,
        gating: &GatingField,
        dt: f64,
        boundary: BoundaryMode,
    ) -> Result<TissueState> {
        if !self.spec.zero_flow {
            return Err(Error::Mode("step_zero_flow called on a full model".into()));
        }
        self.advance(history, gating, dt, boundary)
    }

    pub fn step_full(
        &mut self,
        history: &HistoryBuffer,
        gating: &GatingField,
        dt: f64,
        boundary: BoundaryMode,
    ) -> Result<TissueState> {
        if self.spec.zero_flow {
            return Err(Error::Mode("step_full called on a zero flow model".into()));
        }
        self.advance(history, gating, dt, boundary)
    }

    /// Boundary rows: pins for natural boundaries, exact values otherwise.
    fn constraints(&self, boundary: BoundaryMode, t: f64) -> Vec<(usize, f64)> {
        match boundary {
            BoundaryMode::Natural => self.pins.clone(),
            BoundaryMode::Dirichlet(forcing) => {
                let l = &self.layout;
                let ncell = l.mesh.num_cells();
                let xr = l.mesh.length();
                let mut out = Vec::new();
                for (f, role) in l.roles().iter().enumerate() {
                    let fam = l.dofs.families()[f];
                    if fam == ElementFamily::P0 {
                        continue;
                    }
                    if matches!(role, FieldRole::Alpha(_)) && self.spec.zero_flow {
                        continue;
                    }
                    let left = l.dofs.cell_dofs(f, 0)[0];
                    let right = *l.dofs.cell_dofs(f, ncell - 1).last().unwrap();
                    out.push((left, forcing.boundary_value(f, 0.0, t)));
                    out.push((right, forcing.boundary_value(f, xr, t)));
                }
                out
            }
        }
    }

    /// Step data and boundary rows of the step from `history.current`.
    fn prepare(
        &self,
        history: &HistoryBuffer,
        gating: &GatingField,
        dt: f64,
        boundary: BoundaryMode,
    ) -> Result<Prepared> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        history.validate(dt)?;
        if !history.current.layout.is_compatible(&self.layout) {
            return Err(Error::InvalidArgument("state layout does not match the stepper".into()));
        }
        let cur = &history.current;
        let use_prev = self.kind == PdeStepperKind::BDF2 && history.previous.is_some();
        let weights = self.kind.weights(use_prev);
        let trigger = self.trigger;
        let trig = move |x: f64, t: f64| trigger.map_or(0.0, |tr| excitatory_conductance(&tr, x, t));
        let forcing = match boundary {
            BoundaryMode::Dirichlet(f) => Some(f),
            BoundaryMode::Natural => None,
        };
        let data = StepData::build(&kernel::StepInputs {
            spec: &self.spec,
            layout: &self.layout,
            local: &self.local,
            weights,
            current: cur,
            previous: if use_prev { history.previous.as_ref() } else { None },
            gating,
            trigger: &trig,
            forcing,
            dt,
        });
        Ok(Prepared {
            data,
            constraints: self.constraints(boundary, cur.t + dt),
            weights,
        })
    }

    fn system<'a>(&'a self, prep: &'a Prepared, dt: f64) -> PdeSystem<'a> {
        PdeSystem {
            kernel: StepKernel {
                spec: &self.spec,
                layout: &self.layout,
                local: &self.local,
                weights: prep.weights,
                dt,
                data: &prep.data,
                gate_offsets: kernel::gate_offsets(&self.spec),
            },
            constraints: &prep.constraints,
            field_of: &self.field_of,
            field_floor: &self.field_floor,
            nfields: self.layout.num_fields(),
        }
    }

    /// Residual of the step system at the candidate level `u`.
    pub fn residual_at(
        &self,
        history: &HistoryBuffer,
        gating: &GatingField,
        dt: f64,
        boundary: BoundaryMode,
        u: &[f64],
    ) -> Result<Vec<f64>> {
        let prep = self.prepare(history, gating, dt, boundary)?;
        let sys = self.system(&prep, dt);
        let mut r = vec![0.0; sys.dim()];
        sys.residual(u, &mut r)?;
        Ok(r)
    }

    /// Residual and Jacobian of the step system at `u`.
    pub fn linearize(
        &self,
        history: &HistoryBuffer,
        gating: &GatingField,
        dt: f64,
        boundary: BoundaryMode,
        u: &[f64],
    ) -> Result<(Vec<f64>, BandedMatrix)> {
        let prep = self.prepare(history, gating, dt, boundary)?;
        let sys = self.system(&prep, dt);
        let mut r = vec![0.0; sys.dim()];
        let mut j = sys.new_matrix();
        sys.jacobian(u, &mut r, &mut j)?;
        Ok((r, j))
    }

    /// One implicit step from `history.current` to t + dt.
    pub fn advance(
        &mut self,
        history: &HistoryBuffer,
        gating: &GatingField,
        dt: f64,
        boundary: BoundaryMode,
    ) -> Result<TissueState> {
        let prep = self.prepare(history, gating, dt, boundary)?;
        let mut cache = std::mem::take(&mut self.cache);
        let cur = &history.current;
        let constraints = &prep.constraints;
        let weights = prep.weights;
        let sys = self.system(&prep, dt);
        let mut u = cur.values.clone();
        if self.predictor {
            if let Some(p) = &history.previous {
                for (ui, pi) in u.iter_mut().zip(&p.values) {
                    *ui = 2.0 * *ui - pi;
                }
            }
        }
        for &(i, v) in constraints {
            u[i] = v;
        }
        cache.check_key([dt, weights.c[0], weights.beta_imp, self.kind as u8 as f64]);
        let solved = newton_solve(&sys, &mut u, &self.newton, &mut cache).or_else(|e| {
            if self.newton.chord {
                // retry from scratch with a fresh Jacobian at every iteration
                cache.invalidate();
                let mut u2 = cur.values.clone();
                for &(i, v) in constraints {
                    u2[i] = v;
                }
                let cfg = NewtonConfig {
                    chord: false,
                    ..self.newton
                };
                let rep = newton_solve(&sys, &mut u2, &cfg, &mut cache)?;
                cache.invalidate();
                u = u2;
                Ok(rep)
            } else {
                Err(e)
            }
        });
        self.cache = cache;
        let report = solved?;
        self.total_iterations += report.iterations;
        self.total_jacobians += report.jacobians;
        self.last_report = report;
        let next = TissueState {
            layout: self.layout.clone(),
            values: u,
            t: cur.t + dt,
        };
        check_volume_fractions(&next)?;
        Ok(next)
    }
}

/// Fails when any volume fraction leaves (0, 1).
fn check_volume_fractions(s: &TissueState) -> Result<()> {
    let l = &s.layout;
    if !s.is_finite() {
        return Err(Error::Degenerate("non-finite state after step".into()));
    }
    let ecs = l.ecs();
    let fields: Vec<Vec<f64>> = (0..ecs).map(|r| s.field_values(l.alpha_field(r))).collect();
    if fields.is_empty() {
        return Ok(());
    }
    for i in 0..fields[0].len() {
        let mut total = 0.0;
        for (r, f) in fields.iter().enumerate() {
            if !(f[i] > 0.0) {
                return Err(Error::Degenerate(format!(
                    "volume fraction of compartment {r} is {} at dof {i}",
                    f[i]
                )));
            }
            total += f[i];
        }
        if !(total < 1.0) {
            return Err(Error::Degenerate(format!("ECS volume fraction vanished at dof {i}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
