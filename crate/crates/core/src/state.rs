//! Coupled unknown layout and the tissue state vector.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::constitutive::{ModelSpec, PointState, MAX_COMP, MAX_ION};
use crate::error::{Error, Result};
use crate::fem::{CoupledDofMap, DofMap, ElementFamily, FieldVector, Mesh1D};

/// Upper bound on the number of coupled fields.
pub const MAX_FIELDS: usize = (MAX_COMP - 1) + MAX_COMP * MAX_ION + MAX_COMP + 1;

/// Element families for the volume fractions and for everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementPairing {
    pub alpha: ElementFamily,
    pub primary: ElementFamily,
}

impl ElementPairing {
    pub fn zero_flow_default() -> Self {
        Self {
            alpha: ElementFamily::P0,
            primary: ElementFamily::P1c,
        }
    }

    pub fn full_default() -> Self {
        Self {
            alpha: ElementFamily::P1c,
            primary: ElementFamily::P1c,
        }
    }

    pub fn higher_order() -> Self {
        Self {
            alpha: ElementFamily::P1dc,
            primary: ElementFamily::P2c,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (a, p) = s.split_once('-')?;
        Some(Self {
            alpha: ElementFamily::parse(a)?,
            primary: ElementFamily::parse(p)?,
        })
    }

    pub fn name(&self) -> String {
        format!("{}-{}", self.alpha.name(), self.primary.name())
    }
}

/// Which equation a field's test functions belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldRole {
    Alpha(usize),
    Conc(usize, usize),
    Potential(usize),
    Pressure,
}

/// Field order: alpha_r (r < R), c_{r,k}, phi_r, then p (full model only).
#[derive(Debug, Clone)]
pub struct SystemLayout {
    pub mesh: Mesh1D,
    pub pairing: ElementPairing,
    pub num_compartments: usize,
    pub num_ions: usize,
    pub zero_flow: bool,
    pub dofs: CoupledDofMap,
    pub alpha_map: Arc<DofMap>,
    pub primary_map: Arc<DofMap>,
    roles: Vec<FieldRole>,
}

impl SystemLayout {
    pub fn new(spec: &ModelSpec, mesh: Mesh1D, pairing: ElementPairing) -> Result<Self> {
        spec.validate()?;
        if !pairing.primary.is_continuous() {
            return Err(Error::Config(format!(
                "concentrations and potentials need a continuous family, got {}",
                pairing.primary.name()
            )));
        }
        if !spec.zero_flow && pairing.alpha.degree() == 0 {
            return Err(Error::Config(
                "the full model needs volume fractions with gradients (P1c or P1dc)".into(),
            ));
        }
        let nc = spec.num_compartments();
        let nk = spec.num_ions();
        let mut roles = Vec::new();
        for r in 0..nc - 1 {
            roles.push(FieldRole::Alpha(r));
        }
        for r in 0..nc {
            for k in 0..nk {
                roles.push(FieldRole::Conc(r, k));
            }
        }
        for r in 0..nc {
            roles.push(FieldRole::Potential(r));
        }
        if !spec.zero_flow {
            roles.push(FieldRole::Pressure);
        }
        let families: Vec<ElementFamily> = roles
            .iter()
            .map(|r| match r {
                FieldRole::Alpha(_) => pairing.alpha,
                _ => pairing.primary,
            })
            .collect();
        let dofs = CoupledDofMap::new(&mesh, &families);
        Ok(Self {
            alpha_map: Arc::new(DofMap::new(&mesh, pairing.alpha)),
            primary_map: Arc::new(DofMap::new(&mesh, pairing.primary)),
            mesh,
            pairing,
            num_compartments: nc,
            num_ions: nk,
            zero_flow: spec.zero_flow,
            dofs,
            roles,
        })
    }

    pub fn num_fields(&self) -> usize {
        self.roles.len()
    }

    pub fn roles(&self) -> &[FieldRole] {
        &self.roles
    }

    pub fn ecs(&self) -> usize {
        self.num_compartments - 1
    }

    pub fn alpha_field(&self, r: usize) -> usize {
        debug_assert!(r < self.ecs());
        r
    }

    pub fn conc_field(&self, r: usize, k: usize) -> usize {
        self.ecs() + r * self.num_ions + k
    }

    pub fn phi_field(&self, r: usize) -> usize {
        self.ecs() + self.num_compartments * self.num_ions + r
    }

    pub fn pressure_field(&self) -> Option<usize> {
        if self.zero_flow {
            None
        } else {
            Some(self.phi_field(self.ecs()) + 1)
        }
    }

    pub fn field_map(&self, f: usize) -> &Arc<DofMap> {
        match self.roles[f] {
            FieldRole::Alpha(_) => &self.alpha_map,
            _ => &self.primary_map,
        }
    }

    pub fn field_name(&self, spec: &ModelSpec, f: usize) -> String {
        let lbl = |r: usize| spec.compartments[r].label.clone();
        match self.roles[f] {
            FieldRole::Alpha(r) => format!("alpha_{}", lbl(r)),
            FieldRole::Conc(r, k) => format!("{}_{}", spec.ions[k].name, lbl(r)),
            FieldRole::Potential(r) => format!("phi_{}", lbl(r)),
            FieldRole::Pressure => format!("p_{}", lbl(self.ecs())),
        }
    }

    pub fn is_compatible(&self, other: &SystemLayout) -> bool {
        self.mesh == other.mesh
            && self.pairing == other.pairing
            && self.num_compartments == other.num_compartments
            && self.num_ions == other.num_ions
            && self.zero_flow == other.zero_flow
    }
}

/// All PDE unknowns at one time level.
#[derive(Debug, Clone)]
pub struct TissueState {
    pub layout: Arc<SystemLayout>,
    pub values: Vec<f64>,
    pub t: f64,
}

impl TissueState {
    pub fn zeros(layout: Arc<SystemLayout>, t: f64) -> Self {
        let n = layout.dofs.num_dofs();
        Self {
            layout,
            values: vec![0.0; n],
            t,
        }
    }

    pub fn field(&self, f: usize) -> FieldVector {
        let map = self.layout.field_map(f).clone();
        FieldVector {
            map,
            values: self.layout.dofs.extract(f, &self.values),
        }
    }

    pub fn field_values(&self, f: usize) -> Vec<f64> {
        self.layout.dofs.extract(f, &self.values)
    }

    pub fn set_field(&mut self, f: usize, values: &[f64]) -> Result<()> {
        let expected = self.layout.dofs.field_dofs(f).len();
        if values.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "field {f} expects {expected} values, got {}",
                values.len()
            )));
        }
        self.layout.dofs.insert(f, values, &mut self.values);
        Ok(())
    }

    /// Sets a field by nodal interpolation of `g`.
    pub fn interpolate_field(&mut self, f: usize, g: impl Fn(f64) -> f64) {
        let fv = self.layout.field_map(f).interpolate(g);
        self.layout.dofs.insert(f, &fv.values, &mut self.values);
    }

    /// ECS volume fraction at the primary dofs, 1 - sum of cellular fractions.
    pub fn ecs_alpha_at(&self, x: f64) -> f64 {
        let l = &self.layout;
        1.0 - (0..l.ecs()).map(|r| self.field(l.alpha_field(r)).eval(x).0).sum::<f64>()
    }

    /// Membrane potentials phi_r - phi_R at every primary dof.
    pub fn membrane_potentials(&self) -> Vec<[f64; MAX_COMP]> {
        let l = &self.layout;
        let ecs = l.ecs();
        let phis: Vec<Vec<f64>> = (0..l.num_compartments)
            .map(|r| self.field_values(l.phi_field(r)))
            .collect();
        (0..l.primary_map.num_dofs())
            .map(|i| {
                let mut out = [0.0; MAX_COMP];
                for r in 0..ecs {
                    out[r] = phis[r][i] - phis[ecs][i];
                }
                out
            })
            .collect()
    }

    /// Values and gradients of every field at x.
    pub fn point(&self, x: f64) -> PointState<f64> {
        let l = &self.layout;
        let mut pt = PointState::zero();
        for r in 0..l.ecs() {
            let (v, d) = self.field(l.alpha_field(r)).eval(x);
            pt.alpha[r] = v;
            pt.dalpha[r] = d;
        }
        pt.close_alpha(l.num_compartments);
        for r in 0..l.num_compartments {
            for k in 0..l.num_ions {
                let (v, d) = self.field(l.conc_field(r, k)).eval(x);
                pt.c[r][k] = v;
                pt.dc[r][k] = d;
            }
            let (v, d) = self.field(l.phi_field(r)).eval(x);
            pt.phi[r] = v;
            pt.dphi[r] = d;
        }
        if let Some(f) = l.pressure_field() {
            let (v, d) = self.field(f).eval(x);
            pt.p = v;
            pt.dp = d;
        }
        pt
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{CompartmentParams, IonSpecies, PhysicalConstants};
    use crate::membrane::{MembraneConventions, MembraneModel};

    fn spec(zero_flow: bool) -> ModelSpec {
        let mut comps = vec![CompartmentParams::neuron(), CompartmentParams::ecs()];
        let mut membranes = vec![MembraneModel::passive_leak([0.2, 0.7, 2.0])];
        if !zero_flow {
            comps.insert(1, CompartmentParams::glia());
            membranes.push(MembraneModel::leak_glia());
        }
        ModelSpec {
            constants: PhysicalConstants::default(),
            ions: IonSpecies::standard(),
            compartments: comps,
            membranes,
            conventions: MembraneConventions::default(),
            zero_flow,
        }
    }

    #[test]
    fn zero_flow_layout_sizes() {
        let n = 10;
        let l = SystemLayout::new(
            &spec(true),
            Mesh1D::new(1.0, n).unwrap(),
            ElementPairing::zero_flow_default(),
        )
        .unwrap();
        assert_eq!(l.num_fields(), 9);
        assert_eq!(l.dofs.num_dofs(), 9 * n + 8);
        assert_eq!(l.dofs.bandwidth(), 16);
        assert_eq!(l.conc_field(1, 2), 6);
        assert_eq!(l.phi_field(1), 8);
        assert_eq!(l.pressure_field(), None);
    }

    #[test]
    fn full_layout_has_pressure_last() {
        let l = SystemLayout::new(
            &spec(false),
            Mesh1D::new(1.0, 4).unwrap(),
            ElementPairing::full_default(),
        )
        .unwrap();
        assert_eq!(l.num_fields(), 15);
        assert_eq!(l.pressure_field(), Some(14));
        assert_eq!(l.roles()[14], FieldRole::Pressure);
    }

    #[test]
    fn full_model_rejects_p0_alpha() {
        let e = SystemLayout::new(
            &spec(false),
            Mesh1D::new(1.0, 4).unwrap(),
            ElementPairing::zero_flow_default(),
        );
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn field_round_trip_and_point_eval() {
        let l = Arc::new(
            SystemLayout::new(
                &spec(true),
                Mesh1D::new(1.0, 8).unwrap(),
                ElementPairing::zero_flow_default(),
            )
            .unwrap(),
        );
        let mut s = TissueState::zeros(l.clone(), 0.0);
        s.interpolate_field(l.alpha_field(0), |_| 0.8);
        s.interpolate_field(l.conc_field(1, 0), |x| 100.0 + x);
        s.interpolate_field(l.phi_field(0), |x| -0.07 + 0.01 * x);
        let pt = s.point(0.3);
        assert!((pt.alpha[1] - 0.2).abs() < 1e-14);
        assert!((pt.c[1][0] - 100.3).abs() < 1e-12);
        assert!((pt.dc[1][0] - 1.0).abs() < 1e-12);
        assert!((pt.dphi[0] - 0.01).abs() < 1e-12);
        let vm = s.membrane_potentials();
        assert_eq!(vm.len(), 9);
        assert!((vm[8][0] - (-0.06)).abs() < 1e-14);
    }

    #[test]
    fn pairing_names_parse() {
        let p = ElementPairing::parse("p1dc-p2c").unwrap();
        assert_eq!(p, ElementPairing::higher_order());
        assert_eq!(ElementPairing::parse(&p.name()), Some(p));
    }
}
