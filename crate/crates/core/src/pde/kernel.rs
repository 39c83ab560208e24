//! Pointwise equation terms and the cell kernel of the coupled PDE system.
//!
//! Every equation is written as (A, v) + (B, v') with A the terms tested
//! against basis values and B those tested against basis gradients. The
//! Jacobian comes from forward-mode dual numbers seeded on the value and the
//! gradient of each field at a quadrature point.

use rayon::prelude::*;

use crate::constitutive::{
    electroneutrality_residual, fluid_velocity_s, ion_flux, water_flux_s, ModelSpec, PointState,
    MAX_COMP,
};
use crate::dual::{Dual, Scalar};
use crate::fem::space::{NQ, QUAD_POINTS, QUAD_WEIGHTS};
use crate::fem::{BasisTable, CellKernel};
use crate::membrane::{gate_offset, membrane_fluxes, GatingField};
use crate::state::{FieldRole, SystemLayout, TissueState, MAX_FIELDS};

/// Mass, value-tested flux and gradient-tested flux of every equation.
#[derive(Debug, Clone, Copy)]
pub struct EqTerms<S: Scalar> {
    pub mass: [S; MAX_FIELDS],
    pub flux: [S; MAX_FIELDS],
    pub grad: [S; MAX_FIELDS],
}

pub fn gate_offsets(spec: &ModelSpec) -> [usize; MAX_COMP] {
    let mut out = [0; MAX_COMP];
    for (r, o) in out.iter_mut().enumerate().take(spec.membranes.len()) {
        *o = gate_offset(spec, r);
    }
    out
}

/// Passive physics at one point. Active (pump) fluxes are excluded.
pub fn point_terms<S: Scalar>(
    spec: &ModelSpec,
    layout: &SystemLayout,
    pt: &PointState<S>,
    gates: &[f64],
    g_ex: f64,
    offsets: &[usize; MAX_COMP],
) -> EqTerms<S> {
    let zero = S::cst(0.0);
    let mut out = EqTerms {
        mass: [zero; MAX_FIELDS],
        flux: [zero; MAX_FIELDS],
        grad: [zero; MAX_FIELDS],
    };
    let nc = layout.num_compartments;
    let nk = layout.num_ions;
    let ecs = nc - 1;
    let mut u = [zero; MAX_COMP];
    if !layout.zero_flow {
        for (r, ur) in u.iter_mut().enumerate().take(nc) {
            *ur = fluid_velocity_s(spec, r, pt);
        }
    }
    for r in 0..ecs {
        let gamma = spec.compartments[r].gamma;
        let ng = spec.membranes[r].gates.len();
        let g = &gates[offsets[r]..offsets[r] + ng];
        let phi_m = pt.phi[r] - pt.phi[ecs];
        let mf = membrane_fluxes(spec, r, phi_m, &pt.c[r], &pt.c[ecs], g, g_ex);
        let fa = layout.alpha_field(r);
        out.mass[fa] = pt.alpha[r];
        out.flux[fa] = water_flux_s(spec, r, pt) * gamma;
        if !layout.zero_flow {
            out.grad[fa] = -(pt.alpha[r] * u[r]);
        }
        for k in 0..nk {
            let jm = mf.passive[k] * gamma;
            let fi = layout.conc_field(r, k);
            out.flux[fi] = jm;
            out.flux[layout.conc_field(ecs, k)] -= jm;
        }
    }
    for r in 0..nc {
        for k in 0..nk {
            let f = layout.conc_field(r, k);
            out.mass[f] = pt.alpha[r] * pt.c[r][k];
            out.grad[f] = -ion_flux(spec, r, k, pt, u[r]);
        }
    }
    let en = electroneutrality_residual(spec, pt);
    for (r, e) in en.iter().enumerate().take(nc) {
        out.flux[layout.phi_field(r)] = *e;
    }
    if let Some(fp) = layout.pressure_field() {
        let mut total = zero;
        for r in 0..nc {
            total += pt.alpha[r] * u[r];
        }
        out.grad[fp] = -total;
    }
    out
}

/// Value-tested active (pump) terms, evaluated explicitly.
pub fn active_terms(
    spec: &ModelSpec,
    layout: &SystemLayout,
    pt: &PointState<f64>,
    gates: &[f64],
    offsets: &[usize; MAX_COMP],
) -> [f64; MAX_FIELDS] {
    let mut out = [0.0; MAX_FIELDS];
    let ecs = layout.ecs();
    for r in 0..ecs {
        if !spec.membranes[r].has_active() {
            continue;
        }
        let gamma = spec.compartments[r].gamma;
        let ng = spec.membranes[r].gates.len();
        let g = &gates[offsets[r]..offsets[r] + ng];
        let mf = membrane_fluxes(spec, r, pt.phi[r] - pt.phi[ecs], &pt.c[r], &pt.c[ecs], g, 0.0);
        for k in 0..layout.num_ions {
            let ja = mf.active[k] * gamma;
            out[layout.conc_field(r, k)] += ja;
            out[layout.conc_field(ecs, k)] -= ja;
        }
    }
    out
}

/// Assembles a point state from per-field values and gradients.
pub fn state_from_fields<S: Scalar>(
    layout: &SystemLayout,
    val: &[S; MAX_FIELDS],
    grad: &[S; MAX_FIELDS],
) -> PointState<S> {
    let mut pt = PointState::zero();
    for (f, role) in layout.roles().iter().enumerate() {
        match *role {
            FieldRole::Alpha(r) => {
                pt.alpha[r] = val[f];
                pt.dalpha[r] = grad[f];
            }
            FieldRole::Conc(r, k) => {
                pt.c[r][k] = val[f];
                pt.dc[r][k] = grad[f];
            }
            FieldRole::Potential(r) => {
                pt.phi[r] = val[f];
                pt.dphi[r] = grad[f];
            }
            FieldRole::Pressure => {
                pt.p = val[f];
                pt.dp = grad[f];
            }
        }
    }
    pt.close_alpha(layout.num_compartments);
    pt
}

/// Basis tables and local offsets of every field.
#[derive(Debug, Clone)]
pub struct LocalLayout {
    pub tables: Vec<BasisTable>,
    pub offsets: Vec<usize>,
    pub nloc: usize,
}

impl LocalLayout {
    pub fn new(layout: &SystemLayout) -> Self {
        let h = layout.mesh.h();
        let mut tables = Vec::new();
        let mut offsets = Vec::new();
        let mut nloc = 0;
        for f in 0..layout.num_fields() {
            let fam = layout.dofs.families()[f];
            offsets.push(nloc);
            nloc += fam.local_dofs();
            tables.push(BasisTable::new(fam, h));
        }
        Self {
            tables,
            offsets,
            nloc,
        }
    }

    /// Field values and gradients at quadrature point q from local dofs.
    #[inline]
    pub fn fields_at(&self, q: usize, local: &[f64]) -> ([f64; MAX_FIELDS], [f64; MAX_FIELDS]) {
        let mut v = [0.0; MAX_FIELDS];
        let mut g = [0.0; MAX_FIELDS];
        for (f, t) in self.tables.iter().enumerate() {
            let o = self.offsets[f];
            for a in 0..t.nloc {
                v[f] += local[o + a] * t.val[q][a];
                g[f] += local[o + a] * t.grad[q][a];
            }
        }
        (v, g)
    }

    pub fn gather(&self, layout: &SystemLayout, cell: usize, u: &[f64], out: &mut [f64]) {
        for f in 0..layout.num_fields() {
            let o = self.offsets[f];
            for (a, &g) in layout.dofs.cell_dofs(f, cell).iter().enumerate() {
                out[o + a] = u[g];
            }
        }
    }
}

/// Time discretization weights: mass (c0 u + c1 u^n + c2 u^{n-1}) / dt,
/// passive fluxes beta_imp f^{n+1} + beta_exp f^n, pump pump_weight f^n.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeWeights {
    pub c: [f64; 3],
    pub beta_imp: f64,
    pub beta_exp: f64,
    pub pump: f64,
}

/// Everything in a step that does not depend on the unknown, tabulated per
/// cell and quadrature point.
#[derive(Debug, Clone)]
pub struct StepData {
    pub nf: usize,
    pub ng: usize,
    pub hist: Vec<f64>,
    pub expl: Vec<f64>,
    pub expl_grad: Vec<f64>,
    pub src: Vec<f64>,
    pub gates: Vec<f64>,
    pub gex: Vec<f64>,
}

/// Strong-form source terms and boundary data of a forced problem.
pub trait Forcing: Sync + Send {
    /// Writes the source of every equation, in field order.
    fn sources(&self, x: f64, t: f64, out: &mut [f64]);
    /// Boundary value of field `f` at (x, t).
    fn boundary_value(&self, f: usize, x: f64, t: f64) -> f64;
}

/// Inputs for tabulating one step.
pub struct StepInputs<'a> {
    pub spec: &'a ModelSpec,
    pub layout: &'a SystemLayout,
    pub local: &'a LocalLayout,
    pub weights: SchemeWeights,
    pub current: &'a TissueState,
    pub previous: Option<&'a TissueState>,
    pub gating: &'a GatingField,
    pub trigger: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    pub forcing: Option<&'a dyn Forcing>,
    pub dt: f64,
}

impl StepData {
    pub fn build(inp: &StepInputs) -> StepData {
        let layout = inp.layout;
        let nf = layout.num_fields();
        let ng = inp.gating.num_gates;
        let ncell = layout.mesh.num_cells();
        let h = layout.mesh.h();
        let offsets = gate_offsets(inp.spec);
        let w = inp.weights;
        let t0 = inp.current.t;
        let t1 = t0 + inp.dt;
        let roles = layout.roles();
        let ptab = BasisTable::new(layout.pairing.primary, h);
        let per_cell: Vec<CellData> = (0..ncell)
            .into_par_iter()
            .map(|c| {
                let mut cd = CellData::new(nf, ng);
                let mut lu = vec![0.0; inp.local.nloc];
                let mut lp = vec![0.0; inp.local.nloc];
                inp.local.gather(layout, c, &inp.current.values, &mut lu);
                if let Some(p) = inp.previous {
                    inp.local.gather(layout, c, &p.values, &mut lp);
                }
                let (xa, _) = layout.mesh.cell_bounds(c);
                let pdofs = inp.gating.map.cell_dofs(c);
                let mut s1 = [0.0; MAX_FIELDS];
                let mut s0 = [0.0; MAX_FIELDS];
                for q in 0..NQ {
                    let x = xa + QUAD_POINTS[q] * h;
                    let gq = &mut cd.gates[q * ng..(q + 1) * ng];
                    for (a, &d) in pdofs.iter().enumerate() {
                        let gv = inp.gating.at(d);
                        for i in 0..ng {
                            gq[i] += ptab.val[q][a] * gv[i];
                        }
                    }
                    let gq = &cd.gates[q * ng..(q + 1) * ng];
                    cd.gex[q] = (inp.trigger)(x, t1);
                    let (v, g) = inp.local.fields_at(q, &lu);
                    let ptn = state_from_fields(layout, &v, &g);
                    let need_flux = w.beta_exp != 0.0;
                    let gex0 = if need_flux { (inp.trigger)(x, t0) } else { 0.0 };
                    let tn = point_terms(inp.spec, layout, &ptn, gq, gex0, &offsets);
                    let act = active_terms(inp.spec, layout, &ptn, gq, &offsets);
                    let tp = inp.previous.filter(|_| w.c[2] != 0.0).map(|_| {
                        let (v, g) = inp.local.fields_at(q, &lp);
                        let ptp = state_from_fields(layout, &v, &g);
                        point_terms(inp.spec, layout, &ptp, gq, 0.0, &offsets)
                    });
                    if let Some(f) = inp.forcing {
                        f.sources(x, t1, &mut s1);
                        if w.beta_exp != 0.0 {
                            f.sources(x, t0, &mut s0);
                        }
                    }
                    let base = q * nf;
                    for (f, role) in roles.iter().enumerate() {
                        let dynamic = matches!(role, FieldRole::Alpha(_) | FieldRole::Conc(..));
                        if dynamic {
                            let mut hst = w.c[1] * tn.mass[f];
                            if let Some(tp) = &tp {
                                hst += w.c[2] * tp.mass[f];
                            }
                            cd.hist[base + f] = hst;
                            cd.expl[base + f] = w.beta_exp * tn.flux[f] + w.pump * act[f];
                            cd.expl_grad[base + f] = w.beta_exp * tn.grad[f];
                            cd.src[base + f] = w.beta_imp * s1[f] + w.beta_exp * s0[f];
                        } else {
                            cd.src[base + f] = s1[f];
                        }
                    }
                }
                cd
            })
            .collect();
        let mut out = StepData {
            nf,
            ng,
            hist: Vec::with_capacity(ncell * NQ * nf),
            expl: Vec::with_capacity(ncell * NQ * nf),
            expl_grad: Vec::with_capacity(ncell * NQ * nf),
            src: Vec::with_capacity(ncell * NQ * nf),
            gates: Vec::with_capacity(ncell * NQ * ng),
            gex: Vec::with_capacity(ncell * NQ),
        };
        for cd in per_cell {
            out.hist.extend_from_slice(&cd.hist);
            out.expl.extend_from_slice(&cd.expl);
            out.expl_grad.extend_from_slice(&cd.expl_grad);
            out.src.extend_from_slice(&cd.src);
            out.gates.extend_from_slice(&cd.gates);
            out.gex.extend_from_slice(&cd.gex);
        }
        out
    }
}

struct CellData {
    hist: Vec<f64>,
    expl: Vec<f64>,
    expl_grad: Vec<f64>,
    src: Vec<f64>,
    gates: Vec<f64>,
    gex: [f64; NQ],
}

impl CellData {
    fn new(nf: usize, ng: usize) -> Self {
        Self {
            hist: vec![0.0; NQ * nf],
            expl: vec![0.0; NQ * nf],
            expl_grad: vec![0.0; NQ * nf],
            src: vec![0.0; NQ * nf],
            gates: vec![0.0; NQ * ng],
            gex: [0.0; NQ],
        }
    }
}

/// Residual and Jacobian of one implicit step.
pub struct StepKernel<'a> {
    pub spec: &'a ModelSpec,
    pub layout: &'a SystemLayout,
    pub local: &'a LocalLayout,
    pub weights: SchemeWeights,
    pub dt: f64,
    pub data: &'a StepData,
    pub gate_offsets: [usize; MAX_COMP],
}

#[inline]
fn seeded<const M: usize>(v: f64, slot: usize) -> Dual<M> {
    if M == 0 {
        Dual::constant(v)
    } else {
        Dual::variable(v, slot)
    }
}

impl<'a> StepKernel<'a> {
    fn cell_impl<const M: usize>(
        &self,
        cell: usize,
        u: &[f64],
        res: &mut [f64],
        mut jac: Option<&mut [f64]>,
    ) {
        let layout = self.layout;
        let nf = layout.num_fields();
        let ng = self.data.ng;
        let nloc = self.local.nloc;
        let h = layout.mesh.h();
        let w = self.weights;
        let inv_dt = 1.0 / self.dt;
        let zero = Dual::<M>::constant(0.0);
        let roles = layout.roles();
        for q in 0..NQ {
            let wq = QUAD_WEIGHTS[q] * h;
            let (v, g) = self.local.fields_at(q, u);
            let mut fv = [zero; MAX_FIELDS];
            let mut fg = [zero; MAX_FIELDS];
            for f in 0..nf {
                fv[f] = seeded(v[f], 2 * f);
                fg[f] = seeded(g[f], 2 * f + 1);
            }
            let pt = state_from_fields(layout, &fv, &fg);
            let cq = cell * NQ + q;
            let gates = &self.data.gates[cq * ng..(cq + 1) * ng];
            let terms = point_terms(self.spec, layout, &pt, gates, self.data.gex[cq], &self.gate_offsets);
            let base = cq * nf;
            for f in 0..nf {
                let d = &self.data;
                let (a, b) = match roles[f] {
                    FieldRole::Alpha(_) | FieldRole::Conc(..) => (
                        (terms.mass[f] * w.c[0] + d.hist[base + f]) * inv_dt + terms.flux[f] * w.beta_imp
                            + (d.expl[base + f] - d.src[base + f]),
                        terms.grad[f] * w.beta_imp + d.expl_grad[base + f],
                    ),
                    FieldRole::Potential(_) => (terms.flux[f] - d.src[base + f], zero),
                    FieldRole::Pressure => (Dual::constant(-d.src[base + f]), terms.grad[f]),
                };
                let tf = &self.local.tables[f];
                let of = self.local.offsets[f];
                for i in 0..tf.nloc {
                    res[of + i] += wq * (a.v * tf.val[q][i] + b.v * tf.grad[q][i]);
                }
                if let Some(j) = jac.as_deref_mut() {
                    for i in 0..tf.nloc {
                        let vi = tf.val[q][i] * wq;
                        let gi = tf.grad[q][i] * wq;
                        let row = (of + i) * nloc;
                        for gf in 0..nf {
                            let cv = vi * a.d[2 * gf] + gi * b.d[2 * gf];
                            let cg = vi * a.d[2 * gf + 1] + gi * b.d[2 * gf + 1];
                            if cv == 0.0 && cg == 0.0 {
                                continue;
                            }
                            let tg = &self.local.tables[gf];
                            let og = self.local.offsets[gf];
                            for bb in 0..tg.nloc {
                                j[row + og + bb] += cv * tg.val[q][bb] + cg * tg.grad[q][bb];
                            }
                        }
                    }
                }
            }
        }
    }
}

macro_rules! dispatch_dual {
    ($self:ident, $nf:expr, $cell:ident, $u:ident, $res:ident, $jac:ident; $($n:literal => $m:literal),*) => {
        match $nf {
            $($n => $self.cell_impl::<$m>($cell, $u, $res, $jac),)*
            other => panic!("unsupported field count {other}"),
        }
    };
}

impl<'a> CellKernel for StepKernel<'a> {
    fn cell(&self, cell: usize, local_u: &[f64], res: &mut [f64], jac: Option<&mut [f64]>) {
        match jac {
            None => self.cell_impl::<0>(cell, local_u, res, None),
            Some(j) => {
                let nf = self.layout.num_fields();
                let j = Some(j);
                dispatch_dual!(self, nf, cell, local_u, res, j;
                    5 => 10, 6 => 12, 7 => 14, 8 => 16, 9 => 18, 10 => 20,
                    11 => 22, 12 => 24, 13 => 26, 14 => 28, 15 => 30)
            }
        }
    }
}
