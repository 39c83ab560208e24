//! Pointwise ODE integrators for the gating variables: backward Euler, classic
//! RK4 and the stiffly accurate ESDIRK4(3)6L[2]SA method.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constitutive::MAX_COMP;
use crate::error::{Error, Result};

pub const MAX_GATES: usize = 8;

/// Slack allowed outside [0, 1] before a gating value counts as a bound violation.
pub const GATE_BOUND_SLACK: f64 = 1e-9;

/// y' = f(t, y) at one dof with a diagonal Jacobian.
pub trait DofOde {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, y: &[f64], f: &mut [f64]);
    fn jac_diag(&self, t: f64, y: &[f64], d: &mut [f64]);
}

/// A gating system evaluated independently at every dof, with the membrane
/// potentials frozen over the step.
pub trait GatingModel: Sync {
    type Local: DofOde;
    fn num_gates(&self) -> usize;
    fn at_dof(&self, x: f64, phi_m: &[f64; MAX_COMP]) -> Self::Local;
    /// Whether the system is a two-rate relaxation with nonnegative rates, so
    /// that values must stay in [0, 1].
    fn rates_nonnegative(&self) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OdeStepperKind {
    BE,
    RK4,
    ESDIRK4,
}

impl OdeStepperKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "be" => Some(Self::BE),
            "rk4" => Some(Self::RK4),
            "esdirk4" => Some(Self::ESDIRK4),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::BE => "be",
            Self::RK4 => "rk4",
            Self::ESDIRK4 => "esdirk4",
        }
    }

    pub fn is_implicit(self) -> bool {
        !matches!(self, Self::RK4)
    }

    pub fn tableau(self) -> ButcherTableau {
        match self {
            Self::BE => ButcherTableau::backward_euler(),
            Self::RK4 => ButcherTableau::rk4(),
            Self::ESDIRK4 => ButcherTableau::esdirk4(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    pub stages: usize,
    /// Row-major, stages x stages.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub stiffly_accurate: bool,
}

impl ButcherTableau {
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.stages + j]
    }

    pub fn backward_euler() -> Self {
        Self {
            stages: 1,
            a: vec![1.0],
            b: vec![1.0],
            c: vec![1.0],
            stiffly_accurate: true,
        }
    }

    pub fn rk4() -> Self {
        #[rustfmt::skip]
        let a = vec![
            0.0, 0.0, 0.0, 0.0,
            0.5, 0.0, 0.0, 0.0,
            0.0, 0.5, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
        ];
        Self {
            stages: 4,
            a,
            b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            c: vec![0.0, 0.5, 0.5, 1.0],
            stiffly_accurate: false,
        }
    }

    /// Kennedy and Carpenter's ESDIRK4(3)6L[2]SA, gamma = 1/4.
    pub fn esdirk4() -> Self {
        let s2 = std::f64::consts::SQRT_2;
        let g = 0.25;
        let a21 = 0.25;
        let a31 = (1.0 - s2) / 8.0;
        let a41 = (5.0 - 7.0 * s2) / 64.0;
        let a43 = 7.0 * (1.0 + s2) / 32.0;
        let a51 = (-13796.0 - 54539.0 * s2) / 125000.0;
        let a53 = (506605.0 + 132109.0 * s2) / 437500.0;
        let a54 = 166.0 * (-97.0 + 376.0 * s2) / 109375.0;
        let a61 = (1181.0 - 987.0 * s2) / 13782.0;
        let a63 = 47.0 * (-267.0 + 1783.0 * s2) / 273343.0;
        let a64 = -16.0 * (-22922.0 + 3525.0 * s2) / 571953.0;
        let a65 = -15625.0 * (97.0 + 376.0 * s2) / 90749876.0;
        #[rustfmt::skip]
        let a = vec![
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            a21, g,   0.0, 0.0, 0.0, 0.0,
            a31, a31, g,   0.0, 0.0, 0.0,
            a41, a41, a43, g,   0.0, 0.0,
            a51, a51, a53, a54, g,   0.0,
            a61, a61, a63, a64, a65, g,
        ];
        let b = a[30..36].to_vec();
        let c = (0..6).map(|i| a[i * 6..(i + 1) * 6].iter().sum()).collect();
        Self {
            stages: 6,
            a,
            b,
            c,
            stiffly_accurate: true,
        }
    }
}

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX: usize = 50;

/// Solves y - rhs - h f(t, y) = 0 componentwise by damped Newton, starting at `y`.
fn implicit_solve<O: DofOde>(
    ode: &O,
    t: f64,
    h: f64,
    rhs: &[f64],
    y: &mut [f64],
    scratch: &mut [f64],
) -> std::result::Result<(), String> {
    let n = ode.dim();
    let (f, rest) = scratch.split_at_mut(MAX_GATES);
    let (d, trial) = rest.split_at_mut(MAX_GATES);
    let resid = |y: &[f64], f: &mut [f64], out: &mut [f64]| {
        ode.eval(t, y, f);
        let mut norm = 0.0f64;
        for i in 0..n {
            out[i] = y[i] - rhs[i] - h * f[i];
            norm = norm.max(out[i].abs());
        }
        norm
    };
    let mut g = [0.0; MAX_GATES];
    let mut norm = resid(y, f, &mut g);
    for _ in 0..NEWTON_MAX {
        if norm <= NEWTON_TOL * (1.0 + y[..n].iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
            return Ok(());
        }
        ode.jac_diag(t, y, d);
        let mut step = [0.0; MAX_GATES];
        for i in 0..n {
            let jd = 1.0 - h * d[i];
            if jd == 0.0 || !jd.is_finite() {
                return Err(format!("singular stage Jacobian in component {i}"));
            }
            step[i] = g[i] / jd;
        }
        let mut lambda = 1.0;
        let mut g_trial = [0.0; MAX_GATES];
        loop {
            for i in 0..n {
                trial[i] = y[i] - lambda * step[i];
            }
            let tn = resid(trial, f, &mut g_trial);
            if tn.is_finite() && (tn < norm || lambda < 1e-4) {
                y[..n].copy_from_slice(&trial[..n]);
                g = g_trial;
                norm = tn;
                break;
            }
            lambda *= 0.5;
        }
        if !norm.is_finite() {
            return Err("non-finite residual".into());
        }
    }
    if norm <= NEWTON_TOL * 1e3 {
        return Ok(());
    }
    Err(format!("Newton did not converge in {NEWTON_MAX} iterations (residual {norm:e})"))
}

/// Advances one dof by dt starting from time t.
pub fn ode_step<O: DofOde>(kind: OdeStepperKind, ode: &O, t: f64, y: &mut [f64], dt: f64) -> std::result::Result<(), String> {
    if !(dt > 0.0) {
        return Err(format!("non-positive dt {dt}"));
    }
    let n = ode.dim();
    assert!(n <= MAX_GATES && y.len() == n);
    match kind {
        OdeStepperKind::BE => {
            let mut scratch = [0.0; 3 * MAX_GATES];
            let rhs: Vec<f64> = y.to_vec();
            implicit_solve(ode, t + dt, dt, &rhs, y, &mut scratch)
        }
        OdeStepperKind::RK4 => {
            let tab = ButcherTableau::rk4();
            explicit_rk(&tab, ode, t, y, dt);
            Ok(())
        }
        OdeStepperKind::ESDIRK4 => {
            let tab = ButcherTableau::esdirk4();
            esdirk(&tab, ode, t, y, dt)
        }
    }
}

fn explicit_rk<O: DofOde>(tab: &ButcherTableau, ode: &O, t: f64, y: &mut [f64], dt: f64) {
    let n = ode.dim();
    let s = tab.stages;
    let mut k = [[0.0; MAX_GATES]; 6];
    let mut stage = [0.0; MAX_GATES];
    for i in 0..s {
        for c in 0..n {
            let mut v = y[c];
            for j in 0..i {
                v += dt * tab.a(i, j) * k[j][c];
            }
            stage[c] = v;
        }
        ode.eval(t + tab.c[i] * dt, &stage[..n], &mut k[i][..n]);
    }
    for c in 0..n {
        let mut v = y[c];
        for i in 0..s {
            v += dt * tab.b[i] * k[i][c];
        }
        y[c] = v;
    }
}

fn esdirk<O: DofOde>(tab: &ButcherTableau, ode: &O, t: f64, y: &mut [f64], dt: f64) -> std::result::Result<(), String> {
    let n = ode.dim();
    let s = tab.stages;
    let mut k = [[0.0; MAX_GATES]; 6];
    let mut scratch = [0.0; 3 * MAX_GATES];
    ode.eval(t, &y[..n], &mut k[0][..n]);
    let mut stage = [0.0; MAX_GATES];
    stage[..n].copy_from_slice(&y[..n]);
    for i in 1..s {
        let mut rhs = [0.0; MAX_GATES];
        for c in 0..n {
            let mut v = y[c];
            for j in 0..i {
                v += dt * tab.a(i, j) * k[j][c];
            }
            rhs[c] = v;
        }
        let ti = t + tab.c[i] * dt;
        let h = dt * tab.a(i, i);
        implicit_solve(ode, ti, h, &rhs[..n], &mut stage[..n], &mut scratch)?;
        ode.eval(ti, &stage[..n], &mut k[i][..n]);
    }
    // stiffly accurate: the last stage is the solution
    y[..n].copy_from_slice(&stage[..n]);
    Ok(())
}

/// Applies `ode_step` at every dof. `values` is dof-major with `model.num_gates()`
/// entries per dof; `coords` and `phi_m` give each dof's position and frozen
/// membrane potentials.
pub fn batch_step<M: GatingModel>(
    kind: OdeStepperKind,
    model: &M,
    values: &mut [f64],
    coords: &[f64],
    phi_m: &[[f64; MAX_COMP]],
    t: f64,
    dt: f64,
) -> Result<()> {
    let ng = model.num_gates();
    if ng == 0 {
        return Ok(());
    }
    assert_eq!(values.len(), ng * coords.len());
    assert_eq!(phi_m.len(), coords.len());
    let check = model.rates_nonnegative();
    let failures: Vec<(usize, String)> = values
        .par_chunks_mut(ng)
        .enumerate()
        .filter_map(|(dof, y)| {
            let ode = model.at_dof(coords[dof], &phi_m[dof]);
            if let Err(e) = ode_step(kind, &ode, t, y, dt) {
                return Some((dof, e));
            }
            if let Some(v) = y.iter().find(|v| !v.is_finite()) {
                return Some((dof, format!("non-finite value {v}")));
            }
            if check {
                if let Some(v) = y
                    .iter()
                    .find(|&&v| v < -GATE_BOUND_SLACK || v > 1.0 + GATE_BOUND_SLACK)
                {
                    return Some((dof, format!("gating value {v:e} left [0, 1]")));
                }
            }
            None
        })
        .collect();
    if let Some((dof, reason)) = failures.into_iter().min_by_key(|f| f.0) {
        return Err(Error::StepperDivergence { dof, dt, reason });
    }
    Ok(())
}
