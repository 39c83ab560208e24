//! Physical constants, compartment and ion parameters, and the pointwise bulk
//! laws of the multidomain model.

use serde::{Deserialize, Serialize};

use crate::dual::Scalar;
use crate::error::{Error, Result};
use crate::membrane::{MembraneConventions, MembraneModel};

/// Upper bounds on compartments and ion species handled by the fixed-size kernels.
pub const MAX_COMP: usize = 3;
pub const MAX_ION: usize = 3;

pub const NA: usize = 0;
pub const K: usize = 1;
pub const CL: usize = 2;

/// Volume fractions below this abort the run.
pub const ALPHA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub temperature: f64,
    pub faraday: f64,
    pub gas_constant: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            temperature: 310.0,
            faraday: 96485.0,
            gas_constant: 8.3144598,
        }
    }
}

impl PhysicalConstants {
    /// R T / F in volts.
    #[inline]
    pub fn psi(&self) -> f64 {
        self.gas_constant * self.temperature / self.faraday
    }

    #[inline]
    pub fn rt(&self) -> f64 {
        self.gas_constant * self.temperature
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonSpecies {
    pub name: String,
    pub valence: f64,
    /// Free-water diffusion coefficient, m^2/s.
    pub diffusion: f64,
}

impl IonSpecies {
    pub fn standard() -> Vec<IonSpecies> {
        vec![
            IonSpecies {
                name: "Na".into(),
                valence: 1.0,
                diffusion: 1.33e-9,
            },
            IonSpecies {
                name: "K".into(),
                valence: 1.0,
                diffusion: 1.96e-9,
            },
            IonSpecies {
                name: "Cl".into(),
                valence: -1.0,
                diffusion: 2.03e-9,
            },
        ]
    }
}

/// Bulk and membrane parameters of one compartment. Membrane quantities
/// (gamma, capacitance, eta, stiffness) are unused for the ECS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompartmentParams {
    pub label: String,
    pub gamma: f64,
    pub capacitance: f64,
    pub eta: f64,
    pub chi: f64,
    pub kappa: f64,
    pub stiffness: f64,
    pub alpha0: f64,
    pub immobile: f64,
    pub z0: f64,
}

impl CompartmentParams {
    pub fn neuron() -> Self {
        Self {
            label: "n".into(),
            gamma: 6.3849e5,
            capacitance: 7.5e-3,
            eta: 5.4e-10,
            chi: 0.0,
            kappa: 0.0,
            stiffness: 0.0,
            alpha0: 0.8,
            immobile: 0.0,
            z0: -1.0,
        }
    }

    pub fn glia() -> Self {
        Self {
            label: "g".into(),
            gamma: 6.3849e5,
            capacitance: 7.5e-3,
            eta: 5.4e-10,
            chi: 0.05,
            kappa: 5.0e-16,
            stiffness: 2.85e3,
            alpha0: 0.3,
            immobile: 0.0,
            z0: -1.0,
        }
    }

    pub fn ecs() -> Self {
        Self {
            label: "e".into(),
            gamma: 0.0,
            capacitance: 0.0,
            eta: 0.0,
            chi: 1.0,
            kappa: 0.0,
            stiffness: 0.0,
            alpha0: 0.2,
            immobile: 0.0,
            z0: -1.0,
        }
    }
}

/// Compartments (ECS last), ion species, membrane mechanisms for each
/// non-ECS compartment, and the model mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub constants: PhysicalConstants,
    pub ions: Vec<IonSpecies>,
    pub compartments: Vec<CompartmentParams>,
    pub membranes: Vec<MembraneModel>,
    pub conventions: MembraneConventions,
    pub zero_flow: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let nc = self.compartments.len();
        if nc < 2 || nc > MAX_COMP {
            return Err(Error::Config(format!(
                "need between 2 and {MAX_COMP} compartments, got {nc}"
            )));
        }
        if self.ions.is_empty() || self.ions.len() > MAX_ION {
            return Err(Error::Config(format!(
                "need between 1 and {MAX_ION} ion species, got {}",
                self.ions.len()
            )));
        }
        if self.membranes.len() != nc - 1 {
            return Err(Error::Config(format!(
                "{} membrane models for {} cellular compartments",
                self.membranes.len(),
                nc - 1
            )));
        }
        for ion in &self.ions {
            if !(ion.diffusion > 0.0) {
                return Err(Error::Config(format!("ion {} has non-positive diffusion", ion.name)));
            }
        }
        for (r, c) in self.compartments.iter().enumerate() {
            let membrane_ok = r == nc - 1 || (c.gamma >= 0.0 && c.capacitance >= 0.0 && c.eta >= 0.0);
            if !membrane_ok || c.kappa < 0.0 || c.chi < 0.0 {
                return Err(Error::Config(format!("compartment {} has negative parameters", c.label)));
            }
            if !(c.alpha0 > 0.0 && c.alpha0 < 1.0) {
                return Err(Error::Config(format!(
                    "compartment {} has alpha0 = {} outside (0, 1)",
                    c.label, c.alpha0
                )));
            }
        }
        let c = &self.constants;
        if !(c.temperature > 0.0 && c.faraday > 0.0 && c.gas_constant > 0.0) {
            return Err(Error::Config("physical constants must be positive".into()));
        }
        Ok(())
    }

    pub fn num_compartments(&self) -> usize {
        self.compartments.len()
    }

    /// Index of the ECS.
    pub fn ecs(&self) -> usize {
        self.compartments.len() - 1
    }

    pub fn num_ions(&self) -> usize {
        self.ions.len()
    }

    pub fn ion_index(&self, name: &str) -> Option<usize> {
        self.ions.iter().position(|i| i.name.eq_ignore_ascii_case(name))
    }

    pub fn compartment_index(&self, label: &str) -> Option<usize> {
        self.compartments.iter().position(|c| c.label == label)
    }

    pub fn immobile(&self) -> Vec<f64> {
        self.compartments.iter().map(|c| c.immobile).collect()
    }
}

/// Values and spatial derivatives of all fields at one point. `alpha[R]` is
/// the derived ECS fraction; `p` is the ECS pressure.
#[derive(Debug, Clone, Copy)]
pub struct PointState<S: Scalar> {
    pub alpha: [S; MAX_COMP],
    pub dalpha: [S; MAX_COMP],
    pub c: [[S; MAX_ION]; MAX_COMP],
    pub dc: [[S; MAX_ION]; MAX_COMP],
    pub phi: [S; MAX_COMP],
    pub dphi: [S; MAX_COMP],
    pub p: S,
    pub dp: S,
}

impl<S: Scalar> PointState<S> {
    pub fn zero() -> Self {
        let z = S::cst(0.0);
        Self {
            alpha: [z; MAX_COMP],
            dalpha: [z; MAX_COMP],
            c: [[z; MAX_ION]; MAX_COMP],
            dc: [[z; MAX_ION]; MAX_COMP],
            phi: [z; MAX_COMP],
            dphi: [z; MAX_COMP],
            p: z,
            dp: z,
        }
    }

    /// Fills the ECS fraction and gradient from the cellular ones.
    pub fn close_alpha(&mut self, nc: usize) {
        let ecs = nc - 1;
        let mut a = S::cst(1.0);
        let mut da = S::cst(0.0);
        for r in 0..ecs {
            a -= self.alpha[r];
            da -= self.dalpha[r];
        }
        self.alpha[ecs] = a;
        self.dalpha[ecs] = da;
    }
}

/// D_r^k = alpha_r chi_r D^k for cells, alpha_R D^k for the ECS.
#[inline]
pub fn effective_diffusion<S: Scalar>(spec: &ModelSpec, r: usize, k: usize, alpha_r: S) -> S {
    let d = spec.ions[k].diffusion;
    if r == spec.ecs() {
        alpha_r * d
    } else {
        alpha_r * (spec.compartments[r].chi * d)
    }
}

/// Ion flux density; `u_r` is the compartment velocity (zero in the zero flow limit).
#[inline]
pub fn ion_flux<S: Scalar>(spec: &ModelSpec, r: usize, k: usize, pt: &PointState<S>, u_r: S) -> S {
    let d = effective_diffusion(spec, r, k, pt.alpha[r]);
    let z = spec.ions[k].valence;
    let c = pt.c[r][k];
    let mut j = -(d * pt.dc[r][k]) - d * c * pt.dphi[r] * (z / spec.constants.psi());
    if !spec.zero_flow {
        j += pt.alpha[r] * u_r * c;
    }
    j
}

/// Fluid velocity without the mode check; used by the kernels.
#[inline]
pub fn fluid_velocity_s<S: Scalar>(spec: &ModelSpec, r: usize, pt: &PointState<S>) -> S {
    let cp = &spec.compartments[r];
    if cp.kappa == 0.0 {
        return S::cst(0.0);
    }
    let pc = &spec.constants;
    let mut grad = pt.dp;
    if r != spec.ecs() {
        grad += pt.dalpha[r] * cp.stiffness;
    }
    if cp.immobile != 0.0 {
        let a = pt.alpha[r];
        grad += pt.dalpha[r] / (a * a) * (pc.rt() * cp.immobile);
    }
    let mut charge = S::cst(0.0);
    for (k, ion) in spec.ions.iter().enumerate() {
        charge += pt.c[r][k] * ion.valence;
    }
    grad += charge * pt.dphi[r] * pc.faraday;
    -(grad * cp.kappa)
}

pub fn fluid_velocity(spec: &ModelSpec, r: usize, pt: &PointState<f64>) -> Result<f64> {
    if spec.zero_flow {
        return Err(Error::Mode("fluid velocity is not defined in the zero flow limit".into()));
    }
    Ok(fluid_velocity_s(spec, r, pt))
}

/// tau_r = S_r (alpha_r - alpha0_r).
#[inline]
pub fn membrane_tension<S: Scalar>(spec: &ModelSpec, r: usize, alpha_r: S) -> S {
    let cp = &spec.compartments[r];
    (alpha_r - cp.alpha0) * cp.stiffness
}

/// Transmembrane water flux of compartment r; positive shrinks r.
#[inline]
pub fn water_flux_s<S: Scalar>(spec: &ModelSpec, r: usize, pt: &PointState<S>) -> S {
    let ecs = spec.ecs();
    let cr = &spec.compartments[r];
    let ce = &spec.compartments[ecs];
    let mut osm = S::cst(0.0);
    for k in 0..spec.num_ions() {
        osm += pt.c[ecs][k] - pt.c[r][k];
    }
    if ce.immobile != 0.0 {
        osm += pt.alpha[ecs].recip() * ce.immobile;
    }
    if cr.immobile != 0.0 {
        osm -= pt.alpha[r].recip() * cr.immobile;
    }
    (membrane_tension(spec, r, pt.alpha[r]) + osm * spec.constants.rt()) * cr.eta
}

pub fn water_flux(spec: &ModelSpec, r: usize, pt: &PointState<f64>) -> Result<f64> {
    let ecs = spec.ecs();
    for &a in [pt.alpha[r], pt.alpha[ecs]].iter() {
        if !(a > 0.0) {
            return Err(Error::Degenerate(format!(
                "volume fraction {a} is not positive in water flux"
            )));
        }
    }
    Ok(water_flux_s(spec, r, pt))
}

/// Pointwise residuals of the electroneutrality constraints, one per
/// compartment (ECS last).
pub fn electroneutrality_residual<S: Scalar>(spec: &ModelSpec, pt: &PointState<S>) -> [S; MAX_COMP] {
    let nc = spec.num_compartments();
    let ecs = nc - 1;
    let f = spec.constants.faraday;
    let mut out = [S::cst(0.0); MAX_COMP];
    let mut jump_sum = S::cst(0.0);
    for r in 0..nc {
        let cp = &spec.compartments[r];
        let mut q = S::cst(0.0);
        for (k, ion) in spec.ions.iter().enumerate() {
            q += pt.c[r][k] * ion.valence;
        }
        let bulk = pt.alpha[r] * q * f + cp.z0 * f * cp.immobile;
        if r < ecs {
            let cap = (pt.phi[r] - pt.phi[ecs]) * (cp.gamma * cp.capacitance);
            jump_sum += cap;
            out[r] = cap - bulk;
        } else {
            out[r] = -bulk;
        }
    }
    out[ecs] -= jump_sum;
    out
}

/// Uniform initial data for one compartment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompartmentInit {
    pub alpha: f64,
    pub conc: [f64; MAX_ION],
    pub phi: f64,
}

/// Immobile-ion amounts that make the uniform initial state electroneutral.
/// `init[r].alpha` is ignored for the ECS, which is derived.
pub fn derive_immobile_ions(spec: &ModelSpec, init: &[CompartmentInit]) -> Result<Vec<f64>> {
    let nc = spec.num_compartments();
    if init.len() != nc {
        return Err(Error::InvalidArgument(format!(
            "{} initial records for {nc} compartments",
            init.len()
        )));
    }
    let mut pt = PointState::<f64>::zero();
    for r in 0..nc {
        pt.alpha[r] = init[r].alpha;
        pt.c[r] = init[r].conc;
        pt.phi[r] = init[r].phi;
    }
    pt.close_alpha(nc);
    let mut probe = spec.clone();
    for c in probe.compartments.iter_mut() {
        c.immobile = 0.0;
    }
    let res = electroneutrality_residual(&probe, &pt);
    let f = spec.constants.faraday;
    let mut out = Vec::with_capacity(nc);
    for r in 0..nc {
        let z0 = spec.compartments[r].z0;
        if z0 == 0.0 {
            return Err(Error::Config("immobile valence z0 must be nonzero".into()));
        }
        let a = res[r] / (z0 * f);
        if a < 0.0 {
            return Err(Error::Config(format!(
                "initial data of compartment {} needs a negative immobile amount ({a})",
                spec.compartments[r].label
            )));
        }
        out.push(a);
    }
    Ok(out)
}
