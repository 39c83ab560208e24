//! Transmembrane currents, their assembly into per-ion fluxes, and the
//! gating kinetics of the voltage-gated channels.

pub mod currents;
pub mod gating;

use serde::{Deserialize, Serialize};

use crate::constitutive::{ModelSpec, CL, K, MAX_COMP, MAX_ION, NA};
use crate::dual::Scalar;
use crate::ode::{DofOde, GatingModel, MAX_GATES};

pub use currents::{
    excitatory_conductance, excitatory_current, ghk_current, ghk_factor, kir_conductance,
    leak_current, nakcl_current, nernst, nernst_s, pump_current, GhkOrientation, PumpParams,
    TriggerParams, TriggerSign,
};
pub use gating::{
    gating_rates, gating_rates_ms, gating_rhs, steady_state, GateKind, GateSpec, GatingField,
    KaRateForm,
};

/// Sign and form switches for expressions with more than one plausible reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembraneConventions {
    pub ghk: GhkOrientation,
    pub trigger: TriggerSign,
    pub ka: KaRateForm,
}

impl Default for MembraneConventions {
    fn default() -> Self {
        Self {
            ghk: GhkOrientation::Outward,
            trigger: TriggerSign::Conductance,
            ka: KaRateForm::Conventional,
        }
    }
}

/// A GHK channel for one ion gated by m^p h^q; gate indices are local to the membrane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhkChannel {
    pub ion: usize,
    pub permeability: f64,
    pub m_gate: usize,
    pub p: i32,
    pub h_gate: Option<usize>,
    pub q: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembraneModel {
    /// Leak conductances per ion, S/m^2.
    pub leak: [f64; MAX_ION],
    pub gates: Vec<GateKind>,
    pub channels: Vec<GhkChannel>,
    pub pump: Option<PumpParams>,
    /// Resting KIR conductance carried by K+.
    pub kir: Option<f64>,
    pub nakcl: Option<f64>,
    pub excitatory: bool,
}

impl MembraneModel {
    pub fn passive_leak(leak: [f64; MAX_ION]) -> Self {
        Self {
            leak,
            gates: Vec::new(),
            channels: Vec::new(),
            pump: None,
            kir: None,
            nakcl: None,
            excitatory: false,
        }
    }

    /// Neuronal leak, NaP, KDR, KA, pump and trigger.
    pub fn csd_neuron() -> Self {
        Self {
            leak: [0.2, 0.7, 2.0],
            gates: vec![
                GateKind::NapM,
                GateKind::NapH,
                GateKind::KdrM,
                GateKind::KaM,
                GateKind::KaH,
            ],
            channels: vec![
                GhkChannel {
                    ion: NA,
                    permeability: 2.0e-7,
                    m_gate: 0,
                    p: 2,
                    h_gate: Some(1),
                    q: 1,
                },
                GhkChannel {
                    ion: K,
                    permeability: 1.0e-5,
                    m_gate: 2,
                    p: 1,
                    h_gate: None,
                    q: 0,
                },
                GhkChannel {
                    ion: K,
                    permeability: 2.0e-6,
                    m_gate: 3,
                    p: 2,
                    h_gate: Some(4),
                    q: 1,
                },
            ],
            pump: Some(PumpParams {
                i_hat: 0.1372,
                m_na: 7.7,
                m_k: 2.0,
            }),
            kir: None,
            nakcl: None,
            excitatory: true,
        }
    }

    /// Glial Na/Cl leak, KIR, pump, NaKCl and trigger.
    pub fn csd_glia() -> Self {
        Self {
            leak: [0.072, 0.0, 0.5],
            gates: Vec::new(),
            channels: Vec::new(),
            pump: Some(PumpParams {
                i_hat: 0.0372,
                m_na: 7.7,
                m_k: 2.0,
            }),
            kir: Some(1.3),
            nakcl: Some(8.13e-4),
            excitatory: true,
        }
    }

    /// Glial membrane used for verification: Na/Cl leaks and KIR only.
    pub fn leak_glia() -> Self {
        Self {
            leak: [0.072, 0.0, 0.5],
            kir: Some(1.3),
            ..Self::passive_leak([0.0; MAX_ION])
        }
    }

    pub fn has_active(&self) -> bool {
        self.pump.is_some()
    }
}

/// Per-ion transmembrane fluxes (mol/(m^2 s)), split for time stepping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembraneFluxSet<S: Scalar> {
    pub passive: [S; MAX_ION],
    pub active: [S; MAX_ION],
}

impl<S: Scalar> MembraneFluxSet<S> {
    pub fn total(&self, k: usize) -> S {
        self.passive[k] + self.active[k]
    }
}

/// Evaluates the membrane between compartment `r` and the ECS.
/// `gates` are this membrane's gating values; `g_ex` the trigger conductance.
pub fn membrane_fluxes<S: Scalar>(
    spec: &ModelSpec,
    r: usize,
    phi_m: S,
    c_in: &[S; MAX_ION],
    c_out: &[S; MAX_ION],
    gates: &[f64],
    g_ex: f64,
) -> MembraneFluxSet<S> {
    let m = &spec.membranes[r];
    let pc = &spec.constants;
    let psi = pc.psi();
    let conv = &spec.conventions;
    let nk = spec.num_ions();
    let zero = S::cst(0.0);
    let mut passive = [zero; MAX_ION];
    let mut active = [zero; MAX_ION];
    let needs_e = m.excitatory && g_ex != 0.0;
    let mut e = [zero; MAX_ION];
    for k in 0..nk {
        if m.leak[k] != 0.0 || needs_e || (k == K && m.kir.is_some()) {
            e[k] = nernst_s(psi, spec.ions[k].valence, c_in[k], c_out[k]);
        }
    }
    for k in 0..nk {
        if m.leak[k] != 0.0 {
            passive[k] += leak_current(m.leak[k], phi_m, e[k]);
        }
        if needs_e {
            passive[k] += excitatory_current(conv.trigger, g_ex, phi_m, e[k]);
        }
    }
    for ch in &m.channels {
        let mut open = gates[ch.m_gate].powi(ch.p);
        if let Some(h) = ch.h_gate {
            open *= gates[h].powi(ch.q);
        }
        passive[ch.ion] += ghk_current(
            pc,
            conv.ghk,
            ch.permeability,
            open,
            phi_m,
            c_in[ch.ion],
            c_out[ch.ion],
        );
    }
    if let Some(g0) = m.kir {
        let g = kir_conductance(g0, c_out[K], phi_m, e[K]);
        passive[K] += g * (phi_m - e[K]);
    }
    if let Some(g) = m.nakcl {
        let i = nakcl_current(g, *c_in, *c_out);
        passive[NA] += i;
        passive[K] += i;
        passive[CL] += i * 2.0;
    }
    if let Some(p) = &m.pump {
        let i = pump_current(p, c_out[K], c_in[NA]);
        active[NA] += i * 3.0;
        active[K] -= i * 2.0;
    }
    let f = pc.faraday;
    for k in 0..nk {
        let s = 1.0 / (f * spec.ions[k].valence);
        passive[k] *= s;
        active[k] *= s;
    }
    MembraneFluxSet { passive, active }
}

/// Neuronal fluxes at a point; `state` holds (phi_m, [k]_n, [k]_e).
pub fn neuron_total_fluxes(
    spec: &ModelSpec,
    r: usize,
    phi_m: f64,
    c_in: &[f64; MAX_ION],
    c_out: &[f64; MAX_ION],
    gates: &[f64],
    trigger: &TriggerParams,
    x: f64,
    t: f64,
) -> MembraneFluxSet<f64> {
    let g = if spec.membranes[r].excitatory {
        excitatory_conductance(trigger, x, t)
    } else {
        0.0
    };
    membrane_fluxes(spec, r, phi_m, c_in, c_out, gates, g)
}

/// Glial fluxes at a point.
pub fn glial_total_fluxes(
    spec: &ModelSpec,
    r: usize,
    phi_m: f64,
    c_in: &[f64; MAX_ION],
    c_out: &[f64; MAX_ION],
    trigger: &TriggerParams,
    x: f64,
    t: f64,
) -> MembraneFluxSet<f64> {
    neuron_total_fluxes(spec, r, phi_m, c_in, c_out, &[], trigger, x, t)
}

/// All gates of all membranes with their driving compartments, in storage order.
pub fn gate_specs(spec: &ModelSpec) -> Vec<GateSpec> {
    let mut out = Vec::new();
    for (r, m) in spec.membranes.iter().enumerate() {
        for &kind in &m.gates {
            out.push(GateSpec {
                kind,
                compartment: r,
            });
        }
    }
    out
}

/// Offset of compartment r's gates inside a per-dof gate vector.
pub fn gate_offset(spec: &ModelSpec, r: usize) -> usize {
    spec.membranes[..r].iter().map(|m| m.gates.len()).sum()
}

/// Two-rate kinetics of every gate, rates frozen at the membrane potentials.
#[derive(Debug, Clone)]
pub struct HhGating {
    pub gates: Vec<GateSpec>,
    pub ka: KaRateForm,
}

impl HhGating {
    pub fn new(spec: &ModelSpec) -> Self {
        Self {
            gates: gate_specs(spec),
            ka: spec.conventions.ka,
        }
    }

    pub fn steady_state(&self, phi_m: &[f64; MAX_COMP]) -> Vec<f64> {
        self.gates
            .iter()
            .map(|g| steady_state(g.kind, phi_m[g.compartment], self.ka))
            .collect()
    }
}

/// Frozen rates at one dof.
#[derive(Debug, Clone, Copy)]
pub struct FrozenRates {
    n: usize,
    a: [f64; MAX_GATES],
    b: [f64; MAX_GATES],
}

impl DofOde for FrozenRates {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, _t: f64, y: &[f64], f: &mut [f64]) {
        for i in 0..self.n {
            f[i] = gating_rhs(y[i], self.a[i], self.b[i]);
        }
    }

    fn jac_diag(&self, _t: f64, _y: &[f64], d: &mut [f64]) {
        for i in 0..self.n {
            d[i] = -(self.a[i] + self.b[i]);
        }
    }
}

impl GatingModel for HhGating {
    type Local = FrozenRates;

    fn num_gates(&self) -> usize {
        self.gates.len()
    }

    fn at_dof(&self, _x: f64, phi_m: &[f64; MAX_COMP]) -> FrozenRates {
        let mut out = FrozenRates {
            n: self.gates.len(),
            a: [0.0; MAX_GATES],
            b: [0.0; MAX_GATES],
        };
        for (i, g) in self.gates.iter().enumerate() {
            let (a, b) = gating_rates(g.kind, phi_m[g.compartment], self.ka);
            out.a[i] = a;
            out.b[i] = b;
        }
        out
    }

    fn rates_nonnegative(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{CompartmentParams, IonSpecies, PhysicalConstants};

    fn spec() -> ModelSpec {
        ModelSpec {
            constants: PhysicalConstants::default(),
            ions: IonSpecies::standard(),
            compartments: vec![CompartmentParams::neuron(), CompartmentParams::ecs()],
            membranes: vec![MembraneModel::csd_neuron()],
            conventions: MembraneConventions::default(),
            zero_flow: true,
        }
    }

    fn full() -> ModelSpec {
        ModelSpec {
            constants: PhysicalConstants::default(),
            ions: IonSpecies::standard(),
            compartments: vec![
                CompartmentParams::neuron(),
                CompartmentParams::glia(),
                CompartmentParams::ecs(),
            ],
            membranes: vec![MembraneModel::csd_neuron(), MembraneModel::csd_glia()],
            conventions: MembraneConventions::default(),
            zero_flow: false,
        }
    }

    const CN: [f64; 3] = [9.3, 132.0, 8.0];
    const CE: [f64; 3] = [137.0, 4.0, 114.0];
    const CG: [f64; 3] = [13.0, 128.0, 8.0];

    #[test]
    fn resting_neuron_fluxes_are_finite() {
        let s = spec();
        let hh = HhGating::new(&s);
        let gates = hh.steady_state(&[-0.070, 0.0, 0.0]);
        let tr = TriggerParams::csd_default();
        let fl = neuron_total_fluxes(&s, 0, -0.070, &CN, &CE, &gates, &tr, 5e-3, 10.0);
        for k in 0..3 {
            assert!(fl.total(k).is_finite());
        }
        // K leaves and Na enters at rest before the pump is added back
        assert!(fl.passive[K] > 0.0);
        assert!(fl.passive[NA] < 0.0);
    }

    #[test]
    fn zero_parameters_give_zero_fluxes() {
        let mut s = spec();
        s.membranes[0] = MembraneModel {
            leak: [0.0; 3],
            channels: vec![],
            pump: None,
            excitatory: false,
            ..MembraneModel::csd_neuron()
        };
        let fl = membrane_fluxes(&s, 0, -0.07, &CN, &CE, &[0.5; 5], 0.0);
        assert_eq!(fl.passive, [0.0; 3]);
        assert_eq!(fl.active, [0.0; 3]);
        let mut f = full();
        f.membranes[1] = MembraneModel::passive_leak([0.0; 3]);
        let tr = TriggerParams::csd_default();
        let fl = glial_total_fluxes(&f, 1, -0.08, &CG, &CE, &tr, 0.0, 1.0);
        assert_eq!(fl.total(NA), 0.0);
        assert_eq!(fl.total(K), 0.0);
        assert_eq!(fl.total(CL), 0.0);
    }

    #[test]
    fn pump_stoichiometry() {
        let s = spec();
        let fl = membrane_fluxes(&s, 0, -0.07, &CN, &CE, &[0.3; 5], 0.0);
        let f = s.constants.faraday;
        let na = fl.active[NA] * f * 1.0;
        let k = fl.active[K] * f * 1.0;
        assert!((na + 1.5 * k).abs() < 1e-15);
        assert!(na > 0.0);
        let i = pump_current(&s.membranes[0].pump.unwrap(), CE[K], CN[NA]);
        assert!((na - 3.0 * i).abs() < 1e-15);
    }

    #[test]
    fn nakcl_enters_na_k_once_and_cl_twice() {
        let mut f = full();
        f.membranes[1] = MembraneModel {
            nakcl: Some(1e-3),
            ..MembraneModel::passive_leak([0.0; 3])
        };
        let fl = membrane_fluxes(&f, 1, -0.08, &CG, &CE, &[], 0.0);
        let i = nakcl_current(1e-3, CG, CE);
        let fa = f.constants.faraday;
        assert!((fl.passive[NA] * fa - i).abs() < 1e-15);
        assert!((fl.passive[K] * fa - i).abs() < 1e-15);
        assert!((fl.passive[CL] * fa * -1.0 - 2.0 * i).abs() < 1e-15);
    }

    #[test]
    fn trigger_continuous_at_boundary() {
        let s = spec();
        let tr = TriggerParams::csd_default();
        let g = [0.3; 5];
        let at = |x: f64, t: f64| neuron_total_fluxes(&s, 0, -0.06, &CN, &CE, &g, &tr, x, t);
        let a = at(tr.l_ex * (1.0 - 1e-9), 1.0);
        let b = at(tr.l_ex * (1.0 + 1e-9), 1.0);
        let c = at(1e-6, tr.t_ex * (1.0 - 1e-9));
        let d = at(1e-6, tr.t_ex * (1.0 + 1e-9));
        for k in 0..3 {
            assert!((a.total(k) - b.total(k)).abs() < 1e-6 * b.total(k).abs());
            assert!((c.total(k) - d.total(k)).abs() < 1e-6 * d.total(k).abs());
        }
    }

    #[test]
    fn resting_glial_fluxes_regression() {
        let f = full();
        let tr = TriggerParams::csd_default();
        let fl = glial_total_fluxes(&f, 1, -0.082, &CG, &CE, &tr, 5e-3, 10.0);
        let fa = f.constants.faraday;
        let psi = f.constants.psi();
        let e_na = psi * (137.0f64 / 13.0).ln();
        let e_k = psi * (4.0f64 / 128.0).ln();
        let e_cl = -psi * (114.0f64 / 8.0).ln();
        let gk = kir_conductance(1.3, 4.0, -0.082, e_k);
        let inak = 8.13e-4 * ((13.0 * 128.0 * 64.0) / (137.0 * 4.0 * 114.0f64 * 114.0)).ln();
        let ip = 0.0372 / ((1.0 + 2.0 / 4.0f64).powi(2) * (1.0 + 7.7 / 13.0f64).powi(3));
        let na = (0.072 * (-0.082 - e_na) + 3.0 * ip + inak) / fa;
        let k = (gk * (-0.082 - e_k) - 2.0 * ip + inak) / fa;
        let cl = (0.5 * (-0.082 - e_cl) + 2.0 * inak) / -fa;
        assert!((fl.total(NA) - na).abs() < 1e-12 * na.abs());
        assert!((fl.total(K) - k).abs() < 1e-12 * k.abs());
        assert!((fl.total(CL) - cl).abs() < 1e-12 * cl.abs());
    }

    #[test]
    fn gate_layout() {
        let f = full();
        assert_eq!(gate_specs(&f).len(), 5);
        assert_eq!(gate_offset(&f, 1), 5);
        let hh = HhGating::new(&f);
        let ss = hh.steady_state(&[-0.07, -0.08, 0.0]);
        let rates = hh.at_dof(0.0, &[-0.07, -0.08, 0.0]);
        let mut rhs = [0.0; 5];
        rates.eval(0.0, &ss, &mut rhs);
        assert!(rhs.iter().all(|v| v.abs() < 1e-9));
    }
}
