//! Manufactured solutions for the zero flow and full models.
//!
//! Sources are obtained by pushing the exact fields through the same pointwise
//! terms the kernel assembles, with dual numbers carrying one x or one t
//! derivative. A central-difference oracle checks them before any run.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constitutive::{CompartmentParams, IonSpecies, ModelSpec, PhysicalConstants, MAX_COMP};
use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::fem::{error_norms, FieldVector, Mesh1D};
use crate::membrane::{GatingField, MembraneConventions, MembraneModel};
use crate::ode::{DofOde, GatingModel};
use crate::pde::kernel::{gate_offsets, point_terms, state_from_fields};
use crate::pde::{BoundaryMode, Forcing, PdeStepperKind};
use crate::splitting::{SchemeConfig, Simulation};
use crate::state::{ElementPairing, FieldRole, SystemLayout, TissueState, MAX_FIELDS};

/// Time factor of a profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeShape {
    /// exp(-t)
    Decay,
    /// 1 + exp(-t)
    OnePlusDecay,
    /// cos(t)
    Cos,
}

/// base + amp * S(k pi x) * T(t), with S = sin, or cos when `cosine` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile {
    pub base: f64,
    pub amp: f64,
    pub k: f64,
    pub cosine: bool,
    pub time: TimeShape,
}

/// Value and derivatives of a profile at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileJet {
    pub u: f64,
    pub ux: f64,
    pub uxx: f64,
    pub ut: f64,
    pub uxt: f64,
}

impl Profile {
    const fn sin(base: f64, amp: f64, k: f64, time: TimeShape) -> Self {
        Self {
            base,
            amp,
            k,
            cosine: false,
            time,
        }
    }

    pub fn jet(&self, x: f64, t: f64) -> ProfileJet {
        let w = self.k * PI;
        let (s, sx, sxx) = if self.cosine {
            let (sn, cs) = (w * x).sin_cos();
            (cs, -w * sn, -w * w * cs)
        } else {
            let (sn, cs) = (w * x).sin_cos();
            (sn, w * cs, -w * w * sn)
        };
        let (tt, dtt) = match self.time {
            TimeShape::Decay => ((-t).exp(), -(-t).exp()),
            TimeShape::OnePlusDecay => (1.0 + (-t).exp(), -(-t).exp()),
            TimeShape::Cos => (t.cos(), -t.sin()),
        };
        ProfileJet {
            u: self.base + self.amp * s * tt,
            ux: self.amp * sx * tt,
            uxx: self.amp * sxx * tt,
            ut: self.amp * s * dtt,
            uxt: self.amp * sx * dtt,
        }
    }

    pub fn value(&self, x: f64, t: f64) -> f64 {
        self.jet(x, t).u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseId {
    ZeroFlow2c,
    Full3c,
}

impl CaseId {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zero_flow" | "zero_flow_2c" => Some(Self::ZeroFlow2c),
            "full" | "full_3c" => Some(Self::Full3c),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::ZeroFlow2c => "zero_flow_2c",
            Self::Full3c => "full_3c",
        }
    }
}

/// A manufactured problem on the unit interval: model, exact fields in
/// layout order and exact gating variables.
#[derive(Debug, Clone)]
pub struct ManufacturedCase {
    pub id: CaseId,
    pub spec: Arc<ModelSpec>,
    pub pairing: ElementPairing,
    /// Roles and names are independent of the mesh, so a one-cell layout serves.
    pub layout: Arc<SystemLayout>,
    pub fields: Vec<Profile>,
    pub gates: Vec<Profile>,
}

const GATE: Profile = Profile {
    base: 0.0,
    amp: 1.0,
    k: 1.0,
    cosine: true,
    time: TimeShape::Cos,
};

impl ManufacturedCase {
    pub fn new(id: CaseId) -> Result<Self> {
        use TimeShape::*;
        let neuron_leak = MembraneModel::passive_leak([0.2, 0.7, 2.0]);
        let (spec, pairing, fields) = match id {
            CaseId::ZeroFlow2c => {
                let spec = ModelSpec {
                    constants: PhysicalConstants::default(),
                    ions: IonSpecies::standard(),
                    compartments: vec![CompartmentParams::neuron(), CompartmentParams::ecs()],
                    membranes: vec![neuron_leak],
                    conventions: MembraneConventions::default(),
                    zero_flow: true,
                };
                let fields = vec![
                    Profile::sin(0.3, -0.1, 2.0, Decay),
                    Profile::sin(0.7, 0.3, 1.0, Decay),
                    Profile::sin(0.3, 0.3, 1.0, Decay),
                    Profile::sin(1.0, 0.6, 1.0, Decay),
                    Profile::sin(1.0, 0.6, 1.0, Decay),
                    Profile::sin(1.0, 0.2, 1.0, Decay),
                    Profile::sin(2.0, 0.8, 1.0, Decay),
                    Profile::sin(0.0, 1.0, 2.0, Decay),
                    Profile::sin(0.0, 1.0, 2.0, OnePlusDecay),
                ];
                (spec, ElementPairing::zero_flow_default(), fields)
            }
            CaseId::Full3c => {
                let mut neuron = CompartmentParams::neuron();
                neuron.alpha0 = 0.3;
                neuron.stiffness = 2.85e3;
                let mut glia = CompartmentParams::glia();
                glia.alpha0 = 0.2;
                let mut ecs = CompartmentParams::ecs();
                ecs.kappa = 5.0e-16;
                let spec = ModelSpec {
                    constants: PhysicalConstants::default(),
                    ions: IonSpecies::standard(),
                    compartments: vec![neuron, glia, ecs],
                    membranes: vec![neuron_leak, MembraneModel::leak_glia()],
                    conventions: MembraneConventions::default(),
                    zero_flow: false,
                };
                let fields = vec![
                    Profile::sin(0.3, -0.1, 2.0, Decay),
                    Profile::sin(0.2, -0.1, 2.0, Decay),
                    Profile::sin(0.7, 0.3, 1.0, Decay),
                    Profile::sin(0.3, 0.3, 1.0, Decay),
                    Profile::sin(1.0, 0.6, 1.0, Decay),
                    Profile::sin(0.5, 0.6, 1.0, Decay),
                    Profile::sin(0.5, 0.2, 1.0, Decay),
                    Profile::sin(1.0, 0.8, 1.0, Decay),
                    Profile::sin(1.0, 0.6, 1.0, Decay),
                    Profile::sin(1.0, 0.2, 1.0, Decay),
                    Profile::sin(2.0, 0.8, 1.0, Decay),
                    Profile::sin(0.0, 1.0, 2.0, Decay),
                    Profile::sin(0.0, 1.0, 2.0, Decay),
                    Profile::sin(0.0, 1.0, 2.0, OnePlusDecay),
                    Profile::sin(0.0, 1.0, 2.0, Decay),
                ];
                (spec, ElementPairing::full_default(), fields)
            }
        };
        spec.validate()?;
        let layout = SystemLayout::new(&spec, Mesh1D::new(1.0, 1)?, pairing)?;
        debug_assert_eq!(layout.num_fields(), fields.len());
        Ok(Self {
            id,
            spec: Arc::new(spec),
            pairing,
            layout: Arc::new(layout),
            fields,
            gates: vec![GATE; 3],
        })
    }

    pub fn field_name(&self, f: usize) -> String {
        self.layout.field_name(&self.spec, f)
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        (0..self.fields.len()).find(|&f| self.field_name(f) == name)
    }

    /// Exact membrane potential phi_r - phi_R.
    pub fn membrane_potential(&self, r: usize, x: f64, t: f64) -> f64 {
        let l = &self.layout;
        self.fields[l.phi_field(r)].value(x, t) - self.fields[l.phi_field(l.ecs())].value(x, t)
    }

    /// Mass, flux and gradient terms at the exact state with one derivative
    /// carried in x (`wrt_t = false`) or in t.
    fn dual_terms(&self, x: f64, t: f64, wrt_t: bool) -> crate::pde::kernel::EqTerms<Dual<1>> {
        let mut val = [Dual::<1>::constant(0.0); MAX_FIELDS];
        let mut grad = [Dual::<1>::constant(0.0); MAX_FIELDS];
        for (f, p) in self.fields.iter().enumerate() {
            let j = p.jet(x, t);
            let (dv, dg) = if wrt_t { (j.ut, j.uxt) } else { (j.ux, j.uxx) };
            val[f] = Dual { v: j.u, d: [dv] };
            grad[f] = Dual { v: j.ux, d: [dg] };
        }
        let pt = state_from_fields(&self.layout, &val, &grad);
        point_terms(&self.spec, &self.layout, &pt, &[], 0.0, &gate_offsets(&self.spec))
    }

    /// Strong-form sources of every equation in field order.
    pub fn sources_at(&self, x: f64, t: f64, out: &mut [f64]) {
        let tx = self.dual_terms(x, t, false);
        let tt = self.dual_terms(x, t, true);
        for (f, role) in self.layout.roles().iter().enumerate() {
            out[f] = match role {
                FieldRole::Alpha(_) | FieldRole::Conc(..) => tt.mass[f].d[0] + tx.flux[f].v - tx.grad[f].d[0],
                FieldRole::Potential(_) => tx.flux[f].v,
                FieldRole::Pressure => -tx.grad[f].d[0],
            };
        }
    }

    /// Source of gate i: dg/dt - phi_ne at the exact solution.
    pub fn gate_source(&self, i: usize, x: f64, t: f64) -> f64 {
        self.gates[i].jet(x, t).ut - self.membrane_potential(0, x, t)
    }

    pub fn initial_state(&self, n: usize) -> Result<(TissueState, GatingField)> {
        let layout = Arc::new(SystemLayout::new(&self.spec, Mesh1D::new(1.0, n)?, self.pairing)?);
        let mut s = TissueState::zeros(layout.clone(), 0.0);
        for (f, p) in self.fields.iter().enumerate() {
            s.interpolate_field(f, |x| p.value(x, 0.0));
        }
        let map = layout.primary_map.clone();
        let ng = self.gates.len();
        let mut g = GatingField::new(map.clone(), ng, &vec![0.0; ng]);
        for (d, &x) in map.coords().iter().enumerate() {
            for (i, p) in self.gates.iter().enumerate() {
                g.at_mut(d)[i] = p.value(x, 0.0);
            }
        }
        Ok((s, g))
    }

    /// Checks every source against central differences of the pointwise terms
    /// at random points. Must pass before a convergence run.
    pub fn validate_sources(&self, points: usize, seed: u64) -> Result<f64> {
        check_against_oracle(self, |x, t, out| self.sources_at(x, t, out), points, seed)
    }
}

/// Worst relative disagreement between `sources` and the difference oracle,
/// or a verification error naming the first equation above 1e-6.
pub fn check_against_oracle(
    case: &ManufacturedCase,
    sources: impl Fn(f64, f64, &mut [f64]),
    points: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = SplitMix(seed);
    let mut worst = 0.0f64;
    let nf = case.fields.len();
    let mut s = vec![0.0; nf];
    for _ in 0..points {
        let x = 0.05 + 0.9 * rng.next();
        let t = 0.1 * rng.next();
        sources(x, t, &mut s);
        let o = fd_sources(case, x, t, 1e-6);
        for f in 0..nf {
            let rel = (s[f] - o.value[f]).abs() / o.scale[f].max(1.0);
            worst = worst.max(rel);
            if !(rel <= 1e-6) {
                return Err(Error::Verification(format!(
                    "source of {} at (x={x:.4}, t={t:.4}) is {:.9e}, difference oracle gives {:.9e}",
                    case.field_name(f),
                    s[f],
                    o.value[f]
                )));
            }
        }
        for i in 0..case.gates.len() {
            let h = 1e-6;
            let dgdt = (case.gates[i].value(x, t + h) - case.gates[i].value(x, t - h)) / (2.0 * h);
            let fd = dgdt - case.membrane_potential(0, x, t);
            let rel = (case.gate_source(i, x, t) - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
            if !(rel <= 1e-6) {
                return Err(Error::Verification(format!("gate {i} source disagrees with the difference oracle")));
            }
        }
    }
    Ok(worst)
}

/// Sources from central differences of the f64 pointwise terms.
pub struct FdSources {
    pub value: Vec<f64>,
    /// Magnitude of the largest contribution, for relative comparisons.
    pub scale: Vec<f64>,
}

pub fn fd_sources(case: &ManufacturedCase, x: f64, t: f64, h: f64) -> FdSources {
    let terms = |x: f64, t: f64| {
        let mut val = [0.0; MAX_FIELDS];
        let mut grad = [0.0; MAX_FIELDS];
        for (f, p) in case.fields.iter().enumerate() {
            let j = p.jet(x, t);
            val[f] = j.u;
            grad[f] = j.ux;
        }
        let pt = state_from_fields(&case.layout, &val, &grad);
        point_terms(&case.spec, &case.layout, &pt, &[], 0.0, &gate_offsets(&case.spec))
    };
    let c = terms(x, t);
    let (xp, xm) = (terms(x + h, t), terms(x - h, t));
    let (tp, tm) = (terms(x, t + h), terms(x, t - h));
    let nf = case.fields.len();
    let mut value = vec![0.0; nf];
    let mut scale = vec![0.0; nf];
    for (f, role) in case.layout.roles().iter().enumerate() {
        let dmass = (tp.mass[f] - tm.mass[f]) / (2.0 * h);
        let dgrad = (xp.grad[f] - xm.grad[f]) / (2.0 * h);
        let (v, parts) = match role {
            FieldRole::Alpha(_) | FieldRole::Conc(..) => (dmass + c.flux[f] - dgrad, [dmass, c.flux[f], dgrad]),
            FieldRole::Potential(_) => (c.flux[f], [c.flux[f], 0.0, 0.0]),
            FieldRole::Pressure => (-dgrad, [dgrad, 0.0, 0.0]),
        };
        value[f] = v;
        scale[f] = parts.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    }
    FdSources { value, scale }
}

/// Small deterministic generator for the validation points.
struct SplitMix(u64);

impl SplitMix {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl Forcing for ManufacturedCase {
    fn sources(&self, x: f64, t: f64, out: &mut [f64]) {
        self.sources_at(x, t, out);
    }

    fn boundary_value(&self, f: usize, x: f64, t: f64) -> f64 {
        self.fields[f].value(x, t)
    }
}

/// Gating ODEs dg/dt = phi_ne + source with the membrane potential frozen.
pub struct MmsGating<'a> {
    pub case: &'a ManufacturedCase,
}

pub struct MmsLocal<'a> {
    case: &'a ManufacturedCase,
    x: f64,
    phi: f64,
}

impl DofOde for MmsLocal<'_> {
    fn dim(&self) -> usize {
        self.case.gates.len()
    }

    fn eval(&self, t: f64, _y: &[f64], f: &mut [f64]) {
        for (i, v) in f.iter_mut().enumerate().take(self.case.gates.len()) {
            *v = self.phi + self.case.gate_source(i, self.x, t);
        }
    }

    fn jac_diag(&self, _t: f64, _y: &[f64], d: &mut [f64]) {
        d[..self.case.gates.len()].iter_mut().for_each(|v| *v = 0.0);
    }
}

impl<'a> GatingModel for MmsGating<'a> {
    type Local = MmsLocal<'a>;

    fn num_gates(&self) -> usize {
        self.case.gates.len()
    }

    fn at_dof(&self, x: f64, phi_m: &[f64; MAX_COMP]) -> MmsLocal<'a> {
        MmsLocal {
            case: self.case,
            x,
            phi: phi_m[0],
        }
    }

    fn rates_nonnegative(&self) -> bool {
        false
    }
}

/// L2 and H1 errors of one field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub name: String,
    pub l2: f64,
    pub h1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub dt: f64,
    /// Every field in layout order followed by the gates.
    pub errors: Vec<FieldError>,
    pub newton_iterations: usize,
    pub wall_time: f64,
}

impl ConvergenceRow {
    pub fn error(&self, name: &str) -> Option<&FieldError> {
        self.errors.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L2,
    H1,
}

/// Errors at the final time for a sequence of simultaneously refined runs.
/// Failed levels are `Err` entries holding the message.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub case: CaseId,
    pub scheme: String,
    pub t_end: f64,
    pub rows: Vec<std::result::Result<ConvergenceRow, String>>,
}

impl ConvergenceTable {
    pub fn errors(&self, name: &str, norm: Norm) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| {
                r.as_ref().ok().and_then(|r| r.error(name)).map(|e| match norm {
                    Norm::L2 => e.l2,
                    Norm::H1 => e.h1,
                })
            })
            .collect()
    }

    /// Rates between consecutive rows; the first entry is always `None`.
    pub fn rates(&self, name: &str, norm: Norm) -> Vec<Option<f64>> {
        let e = self.errors(name, norm);
        let mut out = vec![None];
        for i in 1..e.len() {
            out.push(e[i - 1].zip(e[i]).and_then(|(a, b)| compute_rate(a, b)));
        }
        out
    }

    /// Rate between the two finest rows.
    pub fn final_rate(&self, name: &str, norm: Norm) -> Option<f64> {
        self.rates(name, norm).last().copied().flatten()
    }

    /// Plain-text table in the layout "N  err(rate) ..." for the named fields.
    pub fn render(&self, names: &[&str], norm: Norm) -> String {
        let mut s = format!("{:>6}", "N");
        for n in names {
            s.push_str(&format!("  {:>22}", format!("{n} {norm:?}")));
        }
        s.push('\n');
        let rates: Vec<Vec<Option<f64>>> = names.iter().map(|n| self.rates(n, norm)).collect();
        let errs: Vec<Vec<Option<f64>>> = names.iter().map(|n| self.errors(n, norm)).collect();
        for (i, row) in self.rows.iter().enumerate() {
            let n = match row {
                Ok(r) => r.n.to_string(),
                Err(_) => "fail".into(),
            };
            s.push_str(&format!("{n:>6}"));
            for k in 0..names.len() {
                let e = errs[k][i].map_or("-".to_string(), crate::report::sci);
                let r = rates[k][i].map_or("(-----)".to_string(), |r| format!("({r:.2})"));
                s.push_str(&format!("  {:>22}", format!("{e}{r}")));
            }
            s.push('\n');
        }
        s
    }
}

impl ConvergenceTable {
    /// Machine-readable form: one row per level with error and rate columns
    /// for every field and norm. Failed levels and missing rates are `nan`.
    pub fn to_csv(&self, names: &[&str]) -> String {
        let mut header = vec!["N".to_string(), "dt".to_string()];
        for n in names {
            for norm in ["L2", "H1"] {
                header.push(format!("{n}_{norm}"));
                header.push(format!("{n}_{norm}_rate"));
            }
        }
        let cols: Vec<(Vec<Option<f64>>, Vec<Option<f64>>)> = names
            .iter()
            .flat_map(|n| [Norm::L2, Norm::H1].map(|norm| (self.errors(n, norm), self.rates(n, norm))))
            .collect();
        let rows: Vec<Vec<f64>> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let (n, dt) = r.as_ref().map_or((f64::NAN, f64::NAN), |r| (r.n as f64, r.dt));
                let mut row = vec![n, dt];
                for (e, rt) in &cols {
                    row.push(e[i].unwrap_or(f64::NAN));
                    row.push(rt[i].unwrap_or(f64::NAN));
                }
                row
            })
            .collect();
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        crate::report::render_rows(&h, &rows)
    }
}

/// log2(coarse / fine); `None` when either error is not positive.
pub fn compute_rate(err_coarse: f64, err_fine: f64) -> Option<f64> {
    (err_coarse > 0.0 && err_fine > 0.0 && err_coarse.is_finite() && err_fine.is_finite())
        .then(|| (err_coarse / err_fine).log2())
}

/// Refinement levels for a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmsPlan {
    pub ns: Vec<usize>,
    pub dt0: f64,
    pub t_end: f64,
}

impl Default for MmsPlan {
    fn default() -> Self {
        Self {
            ns: vec![8, 16, 32, 64, 128],
            dt0: 1e-3,
            t_end: 2e-3,
        }
    }
}

/// Runs one level and measures the errors at `t_end`.
pub fn run_level(case: &ManufacturedCase, config: &SchemeConfig) -> Result<ConvergenceRow> {
    let clock = std::time::Instant::now();
    let (state, gating) = case.initial_state(config.n_cells)?;
    let model = MmsGating { case };
    let cfg = SchemeConfig {
        sample_interval: Some(config.t_end.max(config.dt)),
        ..config.clone()
    };
    let sim = Simulation::new(
        cfg,
        case.spec.clone(),
        &model,
        state,
        gating,
        None,
        BoundaryMode::Dirichlet(case),
    )?;
    let traj = sim.run(|_, _| {})?;
    let s = traj.last_state();
    let g = traj.last_gating();
    let t = s.t;
    let mut errors = Vec::new();
    for (f, p) in case.fields.iter().enumerate() {
        let (l2, h1) = error_norms(&s.field(f), |x| {
            let j = p.jet(x, t);
            (j.u, j.ux)
        });
        errors.push(FieldError {
            name: case.field_name(f),
            l2,
            h1,
        });
    }
    let map = s.layout.primary_map.clone();
    for (i, p) in case.gates.iter().enumerate() {
        let values = (0..map.num_dofs()).map(|d| g.at(d)[i]).collect();
        let fv = FieldVector { map: map.clone(), values };
        let (l2, h1) = error_norms(&fv, |x| {
            let j = p.jet(x, t);
            (j.u, j.ux)
        });
        errors.push(FieldError {
            name: ["m", "h", "g"][i].into(),
            l2,
            h1,
        });
    }
    Ok(ConvergenceRow {
        n: config.n_cells,
        dt: config.dt,
        errors,
        newton_iterations: traj.meta.newton_iterations,
        wall_time: clock.elapsed().as_secs_f64(),
    })
}

/// Convergence study with h and dt halved together. `base` supplies the
/// scheme; its N, dt and end time are overridden by the plan. The source
/// check runs first and aborts the study on failure.
pub fn run_mms(case: &ManufacturedCase, base: &SchemeConfig, plan: &MmsPlan) -> Result<ConvergenceTable> {
    if plan.ns.is_empty() {
        return Err(Error::InvalidArgument("no refinement levels".into()));
    }
    if case.spec.zero_flow == base.pde.is_full() {
        return Err(Error::Config(format!(
            "PDE stepper {} does not fit case {}",
            base.pde.name(),
            case.id.name()
        )));
    }
    case.validate_sources(20, 0x5eed)?;
    let rows = plan
        .ns
        .par_iter()
        .enumerate()
        .map(|(i, &n)| {
            let cfg = SchemeConfig {
                n_cells: n,
                dt: plan.dt0 / (1u64 << i) as f64,
                t_end: plan.t_end,
                pairing: case.pairing,
                ..base.clone()
            };
            run_level(case, &cfg).map_err(|e| e.to_string())
        })
        .collect();
    Ok(ConvergenceTable {
        case: case.id,
        scheme: format!("{:?}/{}/{:?}", base.splitting, base.pde.name(), base.ode),
        t_end: plan.t_end,
        rows,
    })
}

/// Scheme used for the MMS studies of a case.
pub fn mms_scheme(id: CaseId, pde: PdeStepperKind) -> SchemeConfig {
    let mut c = SchemeConfig::reference(8, 1e-3, 2e-3);
    c.pde = pde;
    c.ode = crate::ode::OdeStepperKind::RK4;
    if id == CaseId::Full3c {
        c.pairing = ElementPairing::full_default();
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jets_match_differences() {
        let p = Profile::sin(0.3, -0.1, 2.0, TimeShape::Decay);
        let h = 1e-5;
        for (x, t) in [(0.1, 0.0), (0.37, 0.5), (0.9, 1.2)] {
            let j = p.jet(x, t);
            assert!((j.ux - (p.value(x + h, t) - p.value(x - h, t)) / (2.0 * h)).abs() < 1e-8);
            assert!((j.ut - (p.value(x, t + h) - p.value(x, t - h)) / (2.0 * h)).abs() < 1e-8);
            let d2 = (p.value(x + h, t) - 2.0 * j.u + p.value(x - h, t)) / (h * h);
            assert!((j.uxx - d2).abs() < 1e-4 * j.uxx.abs().max(1.0));
        }
        let g = GATE.jet(0.25, 0.3);
        assert!((g.u - 0.3f64.cos() * (0.25 * PI).cos()).abs() < 1e-15);
        assert!((g.ut + 0.3f64.sin() * (0.25 * PI).cos()).abs() < 1e-15);
    }

    #[test]
    fn zero_flow_sources_pass_the_oracle() {
        let c = ManufacturedCase::new(CaseId::ZeroFlow2c).unwrap();
        let worst = c.validate_sources(20, 1).unwrap();
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn full_sources_pass_the_oracle() {
        let c = ManufacturedCase::new(CaseId::Full3c).unwrap();
        let worst = c.validate_sources(20, 2).unwrap();
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn flat_point_leaves_only_membrane_coupling() {
        let mut c = ManufacturedCase::new(CaseId::ZeroFlow2c).unwrap();
        for p in c.fields.iter_mut() {
            p.amp = 0.0;
        }
        let mut s = vec![0.0; c.fields.len()];
        c.sources_at(0.5, 0.3, &mut s);
        let tx = c.dual_terms(0.5, 0.3, false);
        for (f, role) in c.layout.roles().iter().enumerate() {
            if let FieldRole::Conc(..) | FieldRole::Alpha(_) = role {
                assert!((s[f] - tx.flux[f].v).abs() <= 1e-12 * tx.flux[f].v.abs().max(1e-30));
            }
        }
    }

    #[test]
    fn uniform_equilibrium_gives_zero_conservation_sources() {
        let mut c = ManufacturedCase::new(CaseId::ZeroFlow2c).unwrap();
        for (f, role) in c.layout.roles().iter().enumerate() {
            let p = &mut c.fields[f];
            p.amp = 0.0;
            p.base = match role {
                FieldRole::Conc(..) => 1.0,
                FieldRole::Alpha(_) => 0.4,
                _ => 0.0,
            };
        }
        let mut s = vec![0.0; c.fields.len()];
        c.sources_at(0.3, 0.1, &mut s);
        for (f, role) in c.layout.roles().iter().enumerate() {
            if let FieldRole::Conc(..) | FieldRole::Alpha(_) = role {
                assert_eq!(s[f], 0.0, "{}", c.field_name(f));
            }
        }
    }

    #[test]
    fn wrong_source_is_caught() {
        let c = ManufacturedCase::new(CaseId::ZeroFlow2c).unwrap();
        let skewed = |x: f64, t: f64, out: &mut [f64]| {
            c.sources_at(x, t, out);
            out[4] *= 1.0 + 1e-4;
        };
        let err = check_against_oracle(&c, skewed, 5, 3).unwrap_err();
        assert!(matches!(err, Error::Verification(_)));
        assert!(err.to_string().contains("Na_e"), "{err}");
    }

    #[test]
    fn rate_examples() {
        assert!((compute_rate(5.74e-3, 1.45e-3).unwrap() - 1.985).abs() < 1e-3);
        assert_eq!(compute_rate(1.0, 1.0), Some(0.0));
        assert!((compute_rate(4.0, 1.0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(compute_rate(0.0, 1.0), None);
        assert_eq!(compute_rate(1.0, 0.0), None);
    }

    #[test]
    fn single_level_is_accurate() {
        let c = ManufacturedCase::new(CaseId::ZeroFlow2c).unwrap();
        let cfg = SchemeConfig {
            n_cells: 16,
            dt: 5e-4,
            t_end: 1e-3,
            ..mms_scheme(c.id, PdeStepperKind::BDF2)
        };
        let row = run_level(&c, &cfg).unwrap();
        let na_e = row.error("Na_e").unwrap();
        assert!(na_e.l2 < 1e-2, "{na_e:?}");
        assert!(row.error("m").unwrap().l2 < 1e-2);
    }
}
