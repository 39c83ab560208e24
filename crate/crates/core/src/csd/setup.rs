use std::sync::Arc;

use crate::constitutive::{
    derive_immobile_ions, CompartmentInit, CompartmentParams, IonSpecies, ModelSpec,
    PhysicalConstants, MAX_COMP,
};
use crate::error::Result;
use crate::fem::Mesh1D;
use crate::membrane::{GatingField, HhGating, MembraneConventions, MembraneModel, TriggerParams};
use crate::state::{ElementPairing, SystemLayout, TissueState};

/// Domain length in metres.
pub const CSD_LENGTH: f64 = 0.01;

/// Everything needed to start a CSD run.
#[derive(Debug, Clone)]
pub struct CsdSetup {
    pub spec: Arc<ModelSpec>,
    pub layout: Arc<SystemLayout>,
    pub state: TissueState,
    pub gating: GatingField,
    pub trigger: TriggerParams,
}

pub fn zero_flow_inits() -> Vec<CompartmentInit> {
    vec![
        CompartmentInit {
            alpha: 0.8,
            conc: [9.3, 132.0, 8.0],
            phi: -0.070,
        },
        CompartmentInit {
            alpha: 0.2,
            conc: [137.0, 4.0, 114.0],
            phi: 0.0,
        },
    ]
}

pub fn full_inits() -> Vec<CompartmentInit> {
    vec![
        CompartmentInit {
            alpha: 0.5,
            conc: [9.3, 132.0, 8.0],
            phi: -0.070,
        },
        CompartmentInit {
            alpha: 0.3,
            conc: [13.0, 128.0, 8.0],
            phi: -0.082,
        },
        CompartmentInit {
            alpha: 0.2,
            conc: [137.0, 4.0, 114.0],
            phi: 0.0,
        },
    ]
}

/// Two-compartment model in the zero flow limit with immobile ions derived.
pub fn zero_flow_spec(conventions: MembraneConventions) -> Result<ModelSpec> {
    let mut spec = ModelSpec {
        constants: PhysicalConstants::default(),
        ions: IonSpecies::standard(),
        compartments: vec![CompartmentParams::neuron(), CompartmentParams::ecs()],
        membranes: vec![MembraneModel::csd_neuron()],
        conventions,
        zero_flow: true,
    };
    let a = derive_immobile_ions(&spec, &zero_flow_inits())?;
    for (c, v) in spec.compartments.iter_mut().zip(a) {
        c.immobile = v;
    }
    spec.validate()?;
    Ok(spec)
}

/// Neuron, glia and ECS with fluid flow.
pub fn full_spec(conventions: MembraneConventions) -> Result<ModelSpec> {
    let mut neuron = CompartmentParams::neuron();
    neuron.alpha0 = 0.5;
    neuron.stiffness = 2.85e3;
    let mut ecs = CompartmentParams::ecs();
    ecs.kappa = 5.0e-16;
    let mut spec = ModelSpec {
        constants: PhysicalConstants::default(),
        ions: IonSpecies::standard(),
        compartments: vec![neuron, CompartmentParams::glia(), ecs],
        membranes: vec![MembraneModel::csd_neuron(), MembraneModel::csd_glia()],
        conventions,
        zero_flow: false,
    };
    let a = derive_immobile_ions(&spec, &full_inits())?;
    for (c, v) in spec.compartments.iter_mut().zip(a) {
        c.immobile = v;
    }
    spec.validate()?;
    Ok(spec)
}

/// Uniform state and steady-state gating from initial records.
pub fn uniform_start(
    spec: &ModelSpec,
    layout: Arc<SystemLayout>,
    inits: &[CompartmentInit],
) -> (TissueState, GatingField) {
    let mut s = TissueState::zeros(layout.clone(), 0.0);
    let ecs = layout.ecs();
    for r in 0..ecs {
        let a = inits[r].alpha;
        s.interpolate_field(layout.alpha_field(r), |_| a);
    }
    for r in 0..layout.num_compartments {
        for k in 0..layout.num_ions {
            let c = inits[r].conc[k];
            s.interpolate_field(layout.conc_field(r, k), |_| c);
        }
        let p = inits[r].phi;
        s.interpolate_field(layout.phi_field(r), |_| p);
    }
    let mut vm = [0.0; MAX_COMP];
    for r in 0..ecs {
        vm[r] = inits[r].phi - inits[ecs].phi;
    }
    let hh = HhGating::new(spec);
    let g0 = hh.steady_state(&vm);
    let gating = GatingField::new(layout.primary_map.clone(), g0.len(), &g0);
    (s, gating)
}

pub fn setup_zero_flow_csd(n: usize, pairing: ElementPairing, conventions: MembraneConventions) -> Result<CsdSetup> {
    let spec = zero_flow_spec(conventions)?;
    let layout = Arc::new(SystemLayout::new(&spec, Mesh1D::new(CSD_LENGTH, n)?, pairing)?);
    let (state, gating) = uniform_start(&spec, layout.clone(), &zero_flow_inits());
    Ok(CsdSetup {
        spec: Arc::new(spec),
        layout,
        state,
        gating,
        trigger: TriggerParams::csd_default(),
    })
}

pub fn setup_full_csd(n: usize, pairing: ElementPairing, conventions: MembraneConventions) -> Result<CsdSetup> {
    let spec = full_spec(conventions)?;
    let layout = Arc::new(SystemLayout::new(&spec, Mesh1D::new(CSD_LENGTH, n)?, pairing)?);
    let (state, gating) = uniform_start(&spec, layout.clone(), &full_inits());
    Ok(CsdSetup {
        spec: Arc::new(spec),
        layout,
        state,
        gating,
        trigger: TriggerParams::csd_default(),
    })
}
