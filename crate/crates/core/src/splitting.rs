//! Operator splitting of the PDE and gating ODE subsystems over a time interval.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::constitutive::ModelSpec;
use crate::error::{Error, Result};
use crate::membrane::{GatingField, TriggerParams};
use crate::ode::{batch_step, GatingModel, OdeStepperKind};
use crate::pde::{BoundaryMode, HistoryBuffer, NewtonConfig, PdeStepper, PdeStepperKind};
use crate::state::{ElementPairing, TissueState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Splitting {
    Godunov,
    Strang,
}

impl Splitting {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "godunov" => Some(Self::Godunov),
            "strang" => Some(Self::Strang),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Godunov => "godunov",
            Self::Strang => "strang",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub pairing: ElementPairing,
    pub pde: PdeStepperKind,
    pub splitting: Splitting,
    pub ode: OdeStepperKind,
    /// Time step in seconds.
    pub dt: f64,
    pub n_cells: usize,
    /// Final time in seconds.
    pub t_end: f64,
    /// Simulated time between stored snapshots; `None` stores every step.
    pub sample_interval: Option<f64>,
    pub newton: NewtonConfig,
    /// Permit Crank-Nicolson together with an implicit ODE stepper.
    pub allow_unstable_pairing: bool,
}

impl SchemeConfig {
    /// Strang splitting with BDF2 and ESDIRK4.
    pub fn reference(n_cells: usize, dt: f64, t_end: f64) -> Self {
        Self {
            pairing: ElementPairing::zero_flow_default(),
            pde: PdeStepperKind::BDF2,
            splitting: Splitting::Strang,
            ode: OdeStepperKind::ESDIRK4,
            dt,
            n_cells,
            t_end,
            sample_interval: None,
            newton: NewtonConfig::default(),
            allow_unstable_pairing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end must be nonnegative, got {}", self.t_end)));
        }
        if self.n_cells == 0 {
            return Err(Error::Config("N must be positive".into()));
        }
        if let Some(s) = self.sample_interval {
            if !(s > 0.0) {
                return Err(Error::Config(format!("sample interval must be positive, got {s}")));
            }
        }
        if self.pde == PdeStepperKind::CN && self.ode.is_implicit() && !self.allow_unstable_pairing {
            return Err(Error::Config(format!(
                "pde = cn with ode = {} is an unstable pairing; set allow_unstable_pairing to force it",
                self.ode.name()
            )));
        }
        self.newton.validate()
    }

    /// Number of steps to reach `t_end`, rounding up unless within roundoff.
    pub fn num_steps(&self) -> usize {
        let r = self.t_end / self.dt;
        let n = r.round();
        if (r - n).abs() <= 1e-9 * r.max(1.0) {
            n as usize
        } else {
            r.ceil() as usize
        }
    }

    /// Steps between stored snapshots.
    pub fn sample_stride(&self) -> usize {
        match self.sample_interval {
            None => 1,
            Some(s) => ((s / self.dt).round() as usize).max(1),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub steps: usize,
    pub newton_iterations: usize,
    pub jacobians: usize,
    pub factorizations: usize,
    pub t_pde: f64,
    pub t_ode: f64,
    pub t_assembly: f64,
    pub t_lu: f64,
    pub t_total: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<TissueState>,
    pub gating: Vec<GatingField>,
    /// Level before the final snapshot, kept so that multistep runs can resume.
    pub last_previous: Option<TissueState>,
    pub meta: RunMeta,
}

impl Trajectory {
    pub fn last_state(&self) -> &TissueState {
        self.states.last().expect("trajectory holds at least one snapshot")
    }

    pub fn last_gating(&self) -> &GatingField {
        self.gating.last().expect("trajectory holds at least one snapshot")
    }

    fn push(&mut self, s: &TissueState, g: &GatingField) {
        self.times.push(s.t);
        self.states.push(s.clone());
        self.gating.push(g.clone());
    }
}

/// A running split simulation.
pub struct Simulation<'a, G: GatingModel> {
    pub config: SchemeConfig,
    pub spec: Arc<ModelSpec>,
    model: &'a G,
    stepper: PdeStepper,
    boundary: BoundaryMode<'a>,
    history: HistoryBuffer,
    gating: GatingField,
    coords: Vec<f64>,
    step: usize,
    meta: RunMeta,
}

impl<'a, G: GatingModel> Simulation<'a, G> {
    pub fn new(
        config: SchemeConfig,
        spec: Arc<ModelSpec>,
        model: &'a G,
        initial: TissueState,
        gating: GatingField,
        trigger: Option<TriggerParams>,
        boundary: BoundaryMode<'a>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = initial.layout.clone();
        if layout.mesh.num_cells() != config.n_cells {
            return Err(Error::Config(format!(
                "state has {} cells, configuration asks for {}",
                layout.mesh.num_cells(),
                config.n_cells
            )));
        }
        if model.num_gates() != gating.num_gates || gating.num_dofs() != layout.primary_map.num_dofs() {
            return Err(Error::InvalidArgument("gating field does not match the model or layout".into()));
        }
        let mut stepper = PdeStepper::new(spec.clone(), layout.clone(), config.pde, config.newton, &initial)?;
        stepper.trigger = trigger;
        Ok(Self {
            coords: layout.primary_map.coords().to_vec(),
            config,
            spec,
            model,
            stepper,
            boundary,
            history: HistoryBuffer::new(initial),
            gating,
            step: 0,
            meta: RunMeta::default(),
        })
    }

    /// Continues from the end of a stored trajectory.
    pub fn resume(
        config: SchemeConfig,
        spec: Arc<ModelSpec>,
        model: &'a G,
        from: &Trajectory,
        trigger: Option<TriggerParams>,
        boundary: BoundaryMode<'a>,
    ) -> Result<Self> {
        // pinned values never change, so the last state carries the same pins
        let mut sim = Self::new(
            config,
            spec,
            model,
            from.last_state().clone(),
            from.last_gating().clone(),
            trigger,
            boundary,
        )?;
        sim.history.previous = from.last_previous.clone();
        sim.step = from.meta.steps;
        sim.meta = from.meta.clone();
        Ok(sim)
    }

    pub fn state(&self) -> &TissueState {
        &self.history.current
    }

    pub fn previous(&self) -> Option<&TissueState> {
        self.history.previous.as_ref()
    }

    pub fn gating(&self) -> &GatingField {
        &self.gating
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn meta(&self) -> &RunMeta {
        &self.meta
    }

    /// Forgets the cached Jacobian so that the next step starts afresh.
    pub fn reset_solver_cache(&mut self) {
        self.stepper.reset_cache();
    }

    fn ode_stage(&mut self, t: f64, dt: f64) -> Result<()> {
        let clock = Instant::now();
        let phi_m = self.history.current.membrane_potentials();
        let out = batch_step(
            self.config.ode,
            self.model,
            &mut self.gating.values,
            &self.coords,
            &phi_m,
            t,
            dt,
        );
        self.meta.t_ode += clock.elapsed().as_secs_f64();
        out
    }

    fn pde_stage(&mut self) -> Result<()> {
        let clock = Instant::now();
        let next = self
            .stepper
            .advance(&self.history, &self.gating, self.config.dt, self.boundary);
        self.meta.t_pde += clock.elapsed().as_secs_f64();
        let rep = &self.stepper.last_report;
        self.meta.t_assembly += rep.t_assembly;
        self.meta.t_lu += rep.t_lu;
        self.meta.newton_iterations += rep.iterations;
        self.meta.jacobians += rep.jacobians;
        self.history.push(next?);
        Ok(())
    }

    /// Advances one split step.
    pub fn step(&mut self) -> Result<()> {
        let clock = Instant::now();
        let dt = self.config.dt;
        let t = self.history.current.t;
        let out = match self.config.splitting {
            Splitting::Godunov => self.ode_stage(t, dt).and_then(|_| self.pde_stage()),
            Splitting::Strang => self
                .ode_stage(t, 0.5 * dt)
                .and_then(|_| self.pde_stage())
                .and_then(|_| self.ode_stage(t + 0.5 * dt, 0.5 * dt)),
        };
        self.meta.t_total += clock.elapsed().as_secs_f64();
        self.meta.factorizations = self.stepper.factorizations();
        out.map_err(|e| Error::StepFailure {
            step: self.step + 1,
            time: t,
            source: Box::new(e),
        })?;
        self.step += 1;
        self.meta.steps = self.step;
        Ok(())
    }

    /// Runs to `config.t_end`, storing snapshots every sample stride and at the
    /// end. `observer` sees the state after every step, including the initial one.
    pub fn run(mut self, mut observer: impl FnMut(&TissueState, &GatingField)) -> Result<Trajectory> {
        let total = self.config.num_steps();
        let stride = self.config.sample_stride();
        let mut traj = Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            gating: Vec::new(),
            last_previous: None,
            meta: RunMeta::default(),
        };
        traj.push(&self.history.current, &self.gating);
        observer(&self.history.current, &self.gating);
        while self.step < total {
            self.step()?;
            observer(&self.history.current, &self.gating);
            if self.step % stride == 0 {
                // snapshots are restart points, so the solver restarts from them too
                self.stepper.reset_cache();
                traj.push(&self.history.current, &self.gating);
            }
        }
        if traj.times.last() != Some(&self.history.current.t) {
            traj.push(&self.history.current, &self.gating);
        }
        traj.last_previous = self.history.previous.clone();
        traj.meta = self.meta;
        Ok(traj)
    }
}

/// Runs a split simulation from the given initial data.
#[allow(clippy::too_many_arguments)]
pub fn run<G: GatingModel>(
    config: &SchemeConfig,
    spec: Arc<ModelSpec>,
    model: &G,
    initial: TissueState,
    gating: GatingField,
    trigger: Option<TriggerParams>,
    boundary: BoundaryMode,
    observer: impl FnMut(&TissueState, &GatingField),
) -> Result<Trajectory> {
    Simulation::new(config.clone(), spec, model, initial, gating, trigger, boundary)?.run(observer)
}
