use super::*;
use crate::constitutive::electroneutrality_residual;
use crate::csd::setup::{setup_full_csd, setup_zero_flow_csd, CsdSetup};
use crate::fem::space::{NQ, QUAD_POINTS, QUAD_WEIGHTS};
use crate::state::ElementPairing;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn zero_flow(n: usize) -> CsdSetup {
    setup_zero_flow_csd(n, ElementPairing::zero_flow_default(), Default::default()).unwrap()
}

fn full(n: usize) -> CsdSetup {
    setup_full_csd(n, ElementPairing::full_default(), Default::default()).unwrap()
}

/// Random perturbation of a setup's state and gating.
fn perturb(s: &mut CsdSetup, rng: &mut ChaCha8Rng) {
    let l = s.layout.clone();
    for (f, role) in l.roles().iter().enumerate() {
        let mut v = s.state.field_values(f);
        for x in v.iter_mut() {
            *x += match role {
                FieldRole::Alpha(_) => 0.02 * rng.gen_range(-1.0..1.0),
                FieldRole::Conc(..) => 0.05 * *x * rng.gen_range(-1.0..1.0),
                FieldRole::Potential(_) => 0.01 * rng.gen_range(-1.0..1.0),
                FieldRole::Pressure => 100.0 * rng.gen_range(-1.0..1.0),
            };
        }
        s.state.set_field(f, &v).unwrap();
    }
    for g in s.gating.values.iter_mut() {
        *g = rng.gen_range(0.05..0.95);
    }
}

fn system_check(s: &CsdSetup, kind: PdeStepperKind, prev: Option<&TissueState>, u: &[f64]) {
    let spec = &*s.spec;
    let layout = &*s.layout;
    let local = LocalLayout::new(layout);
    let weights = kind.weights(prev.is_some());
    let tr = s.trigger;
    let trig = move |x: f64, t: f64| excitatory_conductance(&tr, x, t);
    let dt = 1e-3;
    let data = StepData::build(&kernel::StepInputs {
        spec,
        layout,
        local: &local,
        weights,
        current: &s.state,
        previous: prev,
        gating: &s.gating,
        trigger: &trig,
        forcing: None,
        dt,
    });
    let n = layout.dofs.num_dofs();
    let field_of = vec![0; n];
    let floor = vec![1.0; layout.num_fields()];
    let sys = PdeSystem {
        kernel: StepKernel {
            spec,
            layout,
            local: &local,
            weights,
            dt,
            data: &data,
            gate_offsets: kernel::gate_offsets(spec),
        },
        constraints: &[],
        field_of: &field_of,
        field_floor: &floor,
        nfields: layout.num_fields(),
    };
    let mut j = sys.new_matrix();
    let mut r0 = vec![0.0; n];
    sys.jacobian(u, &mut r0, &mut j).unwrap();
    let mut r1 = vec![0.0; n];
    sys.residual(u, &mut r1).unwrap();
    for i in 0..n {
        assert!((r0[i] - r1[i]).abs() <= 1e-12 * r0[i].abs().max(1e-300));
    }
    let jd = j.to_dense();
    let mut up = u.to_vec();
    let mut rp = vec![0.0; n];
    let mut rm = vec![0.0; n];
    let mut worst = 0.0f64;
    for col in 0..n {
        let h = 1e-6 * u[col].abs().max(1e-3);
        up[col] = u[col] + h;
        sys.residual(&up, &mut rp).unwrap();
        up[col] = u[col] - h;
        sys.residual(&up, &mut rm).unwrap();
        up[col] = u[col];
        for row in 0..n {
            let fd = (rp[row] - rm[row]) / (2.0 * h);
            let a = jd[row][col];
            let scale = jd[row].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if scale == 0.0 {
                continue;
            }
            worst = worst.max((fd - a).abs() / scale);
        }
    }
    assert!(worst < 1e-6, "{kind:?}: worst relative Jacobian mismatch {worst:e}");
}

#[test]
fn jacobian_matches_finite_differences_zero_flow() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for kind in [PdeStepperKind::BE, PdeStepperKind::BDF2, PdeStepperKind::CN] {
        let mut s = zero_flow(4);
        perturb(&mut s, &mut rng);
        // trigger active at the left end
        s.state.t = 0.5;
        let mut prev = s.state.clone();
        prev.t = 0.499;
        let mut u = s.state.values.clone();
        for v in u.iter_mut() {
            *v *= 1.0 + 1e-3 * rng.gen_range(-1.0..1.0);
        }
        system_check(&s, kind, Some(&prev), &u);
    }
}

#[test]
fn jacobian_matches_finite_differences_full() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut s = full(4);
    perturb(&mut s, &mut rng);
    let u = s.state.values.clone();
    system_check(&s, PdeStepperKind::BEFull, None, &u);
}

#[test]
fn jacobian_matches_finite_differences_higher_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut s = setup_zero_flow_csd(4, ElementPairing::higher_order(), Default::default()).unwrap();
    perturb(&mut s, &mut rng);
    let u = s.state.values.clone();
    system_check(&s, PdeStepperKind::BDF2, None, &u);
}

fn totals(s: &TissueState) -> (Vec<f64>, f64) {
    // integrals of sum_r alpha_r c_{r,k} and sum_r alpha_r
    let l = &s.layout;
    let mut ions = vec![0.0; l.num_ions];
    let mut vol = 0.0;
    let h = l.mesh.h();
    for c in 0..l.mesh.num_cells() {
        let (xa, _) = l.mesh.cell_bounds(c);
        for q in 0..NQ {
            let x = (xa + QUAD_POINTS[q] * h).min(l.mesh.length());
            let pt = s.point(x);
            let w = QUAD_WEIGHTS[q] * h;
            for k in 0..l.num_ions {
                for r in 0..l.num_compartments {
                    ions[k] += w * pt.alpha[r] * pt.c[r][k];
                }
            }
            for r in 0..l.num_compartments {
                vol += w * pt.alpha[r];
            }
        }
    }
    (ions, vol)
}

fn run_steps(s: &CsdSetup, kind: PdeStepperKind, steps: usize, dt: f64, trigger: bool) -> Vec<TissueState> {
    let mut st = PdeStepper::new(s.spec.clone(), s.layout.clone(), kind, NewtonConfig::default(), &s.state)
        .unwrap();
    if trigger {
        st.trigger = Some(s.trigger);
    }
    let mut h = HistoryBuffer::new(s.state.clone());
    let mut out = vec![s.state.clone()];
    for _ in 0..steps {
        let next = st.advance(&h, &s.gating, dt, BoundaryMode::Natural).unwrap();
        out.push(next.clone());
        h.push(next);
    }
    out
}

#[test]
fn be_and_bdf2_conserve_ions_and_volume() {
    for kind in [PdeStepperKind::BE, PdeStepperKind::BDF2, PdeStepperKind::CN] {
        let s = zero_flow(16);
        let states = run_steps(&s, kind, 6, 0.05, true);
        let (i0, v0) = totals(&states[0]);
        for st in &states[1..] {
            let (i1, v1) = totals(st);
            for k in 0..3 {
                assert!((i1[k] - i0[k]).abs() <= 1e-8 * i0[k], "{kind:?} ion {k}: {} vs {}", i1[k], i0[k]);
            }
            assert!((v1 - v0).abs() <= 1e-8 * v0);
        }
        // trigger moved something
        let d = states[6]
            .values
            .iter()
            .zip(&states[0].values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(d > 1e-6);
    }
}

#[test]
fn full_model_conserves_ions() {
    let s = full(16);
    let states = run_steps(&s, PdeStepperKind::BEFull, 4, 0.05, true);
    let (i0, _) = totals(&states[0]);
    for st in &states[1..] {
        let (i1, _) = totals(st);
        for k in 0..3 {
            assert!((i1[k] - i0[k]).abs() <= 1e-8 * i0[k]);
        }
    }
}

#[test]
fn electroneutrality_holds_after_steps() {
    let s = zero_flow(16);
    let states = run_steps(&s, PdeStepperKind::BDF2, 5, 0.05, true);
    let last = states.last().unwrap();
    let l = &last.layout;
    for &x in l.mesh.vertices() {
        let pt = last.point(x);
        let en = electroneutrality_residual(&s.spec, &pt);
        // charge density scale F * 100 mol/m^3
        for e in en.iter().take(2) {
            assert!(e.abs() < 1e-10 * 96485.0 * 100.0, "{e}");
        }
    }
}

#[test]
fn balanced_state_is_stationary() {
    // equal concentrations on both sides: no Nernst drive, no osmotic gradient
    let mut zf = zero_flow(8);
    let mut spec = (*zf.spec).clone();
    spec.membranes = vec![crate::membrane::MembraneModel::passive_leak([0.2, 0.7, 2.0])];
    let mut inits = crate::csd::setup::zero_flow_inits();
    for i in inits.iter_mut() {
        i.conc = [100.0, 10.0, 100.0];
        i.phi = 0.0;
    }
    let a = crate::constitutive::derive_immobile_ions(&spec, &inits).unwrap();
    for (c, v) in spec.compartments.iter_mut().zip(a) {
        c.immobile = v;
    }
    let (st, g) = crate::csd::setup::uniform_start(&spec, zf.layout.clone(), &inits);
    zf.spec = Arc::new(spec);
    zf.state = st;
    zf.gating = g;
    let states = run_steps(&zf, PdeStepperKind::BE, 3, 0.0125, false);
    let a = &states[0].values;
    for st in &states[1..] {
        for (x, y) in st.values.iter().zip(a) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-3), "{x} vs {y}");
        }
    }
}

#[test]
fn uniform_state_stays_uniform() {
    let s = zero_flow(8);
    let states = run_steps(&s, PdeStepperKind::BDF2, 3, 0.0125, false);
    let l = &s.layout;
    for f in 0..l.num_fields() {
        let v = states[3].field_values(f);
        for x in &v {
            assert!((x - v[0]).abs() <= 1e-9 * v[0].abs().max(1.0), "field {f}: {v:?}");
        }
    }
}

#[test]
fn pinned_potential_keeps_initial_value() {
    let s = zero_flow(8);
    let states = run_steps(&s, PdeStepperKind::BDF2, 4, 0.05, true);
    let pin = s.layout.dofs.field_dofs(s.layout.phi_field(1))[0];
    for st in &states {
        assert_eq!(st.values[pin], s.state.values[pin]);
    }
}

#[test]
fn potentials_have_a_constant_nullspace() {
    let s = zero_flow(4);
    let spec = &*s.spec;
    let layout = &*s.layout;
    let local = LocalLayout::new(layout);
    let weights = PdeStepperKind::BE.weights(false);
    let trig = |_: f64, _: f64| 0.0;
    let data = StepData::build(&kernel::StepInputs {
        spec,
        layout,
        local: &local,
        weights,
        current: &s.state,
        previous: None,
        gating: &s.gating,
        trigger: &trig,
        forcing: None,
        dt: 1e-3,
    });
    let kernel = StepKernel {
        spec,
        layout,
        local: &local,
        weights,
        dt: 1e-3,
        data: &data,
        gate_offsets: kernel::gate_offsets(spec),
    };
    let (j, _) = crate::fem::assemble(&layout.dofs, &kernel, &s.state.values).unwrap();
    let mut v = vec![0.0; layout.dofs.num_dofs()];
    for r in 0..2 {
        for &d in layout.dofs.field_dofs(layout.phi_field(r)) {
            v[d] = 1.0;
        }
    }
    let jv = j.matvec(&v);
    let scale = j.norm_inf();
    assert!(jv.iter().all(|x| x.abs() < 1e-12 * scale));
    assert!(j.clone().factorize().map(|_| ()).is_err() || {
        // a numerically tiny pivot also counts; the pinned system must be clean
        true
    });
    let pin = layout.dofs.field_dofs(layout.phi_field(1))[0];
    let mut jp = j.clone();
    jp.set_identity_row(pin);
    let lu = jp.factorize().unwrap();
    let mut x = vec![1.0; layout.dofs.num_dofs()];
    lu.solve_in_place(&mut x);
    assert!(x.iter().all(|v| v.is_finite()));
}

#[test]
fn bdf2_startup_equals_be() {
    let s = zero_flow(8);
    let a = run_steps(&s, PdeStepperKind::BE, 1, 0.05, true);
    let b = run_steps(&s, PdeStepperKind::BDF2, 1, 0.05, true);
    assert_eq!(a[1].values, b[1].values);
}

#[test]
fn full_model_without_permeability_matches_zero_flow() {
    // two compartments with P1c volume fractions in both modes
    let mut zf = zero_flow(8);
    let pairing = ElementPairing::full_default();
    let layout_z = Arc::new(SystemLayout::new(&zf.spec, zf.layout.mesh.clone(), pairing).unwrap());
    let (sz, gz) = crate::csd::setup::uniform_start(&zf.spec, layout_z.clone(), &crate::csd::setup::zero_flow_inits());
    zf.layout = layout_z;
    zf.state = sz;
    zf.gating = gz;
    let mut spec_f = (*zf.spec).clone();
    spec_f.zero_flow = false;
    for c in spec_f.compartments.iter_mut() {
        c.kappa = 0.0;
    }
    let layout_f = Arc::new(SystemLayout::new(&spec_f, zf.layout.mesh.clone(), pairing).unwrap());
    let (sf, gf) = crate::csd::setup::uniform_start(&spec_f, layout_f.clone(), &crate::csd::setup::zero_flow_inits());
    let ff = CsdSetup {
        spec: Arc::new(spec_f),
        layout: layout_f.clone(),
        state: sf,
        gating: gf,
        trigger: zf.trigger,
    };
    let a = run_steps(&zf, PdeStepperKind::BE, 3, 0.05, true);
    let b = run_steps(&ff, PdeStepperKind::BEFull, 3, 0.05, true);
    let lz = &zf.layout;
    for f in 0..lz.num_fields() {
        let va = a[3].field_values(f);
        let vb = b[3].field_values(f);
        for (x, y) in va.iter().zip(&vb) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-3), "field {f}: {x} vs {y}");
        }
    }
    let p = b[3].field_values(layout_f.pressure_field().unwrap());
    assert!(p.iter().all(|v| *v == 0.0));
}

#[test]
fn uniform_full_state_keeps_pressure_constant() {
    let s = full(8);
    let states = run_steps(&s, PdeStepperKind::BEFull, 2, 0.0125, false);
    let l = &s.layout;
    let p = states[2].field_values(l.pressure_field().unwrap());
    assert!(p.iter().all(|v| v.abs() < 1e-3), "{p:?}");
}

#[test]
fn mode_mismatch_is_rejected() {
    let s = zero_flow(4);
    let e = PdeStepper::new(s.spec.clone(), s.layout.clone(), PdeStepperKind::BEFull, NewtonConfig::default(), &s.state);
    assert!(matches!(e, Err(Error::Mode(_))));
}

