use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::fem::DofMap;

/// Which exponential form the transient K+ activation rates use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KaRateForm {
    /// exp(-0.1 (phi + 56.9)) and exp(0.1 (phi + 29.9)).
    Conventional,
    /// exp(-0.1 phi - 56.9) and exp(0.1 phi + 29.9), exponents taken literally.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateKind {
    NapM,
    NapH,
    KdrM,
    KaM,
    KaH,
}

impl GateKind {
    pub fn name(self) -> &'static str {
        match self {
            GateKind::NapM => "m_NaP",
            GateKind::NapH => "h_NaP",
            GateKind::KdrM => "m_KDR",
            GateKind::KaM => "m_KA",
            GateKind::KaH => "h_KA",
        }
    }
}

/// v / (e^v - 1), with its limit 1 at v = 0.
#[inline]
fn x_over_expm1(v: f64) -> f64 {
    if v.abs() < 1e-7 {
        1.0 - 0.5 * v
    } else {
        v / v.exp_m1()
    }
}

/// Opening and closing rates in 1/ms for a membrane potential in mV.
pub fn gating_rates_ms(kind: GateKind, phi_mv: f64, ka: KaRateForm) -> (f64, f64) {
    let v = phi_mv;
    match kind {
        GateKind::NapM => {
            let a = 1.0 / (6.0 + 6.0 * (-0.143 * v - 5.67).exp());
            (a, 1.0 / 6.0 - a)
        }
        GateKind::NapH => (
            5.12e-8 * (-0.056 * v - 2.94).exp(),
            1.6e-6 / (1.0 + (-0.2 * v - 8.0).exp()),
        ),
        GateKind::KdrM => (
            0.08 * x_over_expm1(-0.2 * (v + 34.9)),
            0.25 * (-0.025 * v - 1.25).exp(),
        ),
        GateKind::KaM => match ka {
            KaRateForm::Conventional => (
                0.2 * x_over_expm1(-0.1 * (v + 56.9)),
                0.175 * x_over_expm1(0.1 * (v + 29.9)),
            ),
            KaRateForm::Literal => (
                0.02 * (-v - 56.9) / ((-0.1 * v - 56.9).exp() - 1.0),
                0.0175 * (v + 29.9) / ((0.1 * v + 29.9).exp() - 1.0),
            ),
        },
        GateKind::KaH => (
            0.016 * (-0.05 * v - 4.61).exp(),
            0.5 / ((-0.2 * v - 11.98).exp() + 1.0),
        ),
    }
}

/// Rates in 1/s for a membrane potential in volts.
pub fn gating_rates(kind: GateKind, phi_ne: f64, ka: KaRateForm) -> (f64, f64) {
    let (a, b) = gating_rates_ms(kind, phi_ne * 1e3, ka);
    (a * 1e3, b * 1e3)
}

/// Two-rate relaxation alpha (1 - m) - beta m.
#[inline]
pub fn gating_rhs(m: f64, alpha: f64, beta: f64) -> f64 {
    alpha * (1.0 - m) - beta * m
}

pub fn steady_state(kind: GateKind, phi_ne: f64, ka: KaRateForm) -> f64 {
    let (a, b) = gating_rates(kind, phi_ne, ka);
    a / (a + b)
}

/// One gate and the compartment whose membrane potential drives it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub kind: GateKind,
    pub compartment: usize,
}

/// Gating variables stored per dof of the primary space, gate-minor.
#[derive(Debug, Clone)]
pub struct GatingField {
    pub map: Arc<DofMap>,
    pub num_gates: usize,
    pub values: Vec<f64>,
}

impl GatingField {
    pub fn new(map: Arc<DofMap>, num_gates: usize, init: &[f64]) -> Self {
        assert_eq!(init.len(), num_gates);
        let n = map.num_dofs();
        let mut values = Vec::with_capacity(n * num_gates);
        for _ in 0..n {
            values.extend_from_slice(init);
        }
        Self {
            map,
            num_gates,
            values,
        }
    }

    pub fn num_dofs(&self) -> usize {
        self.map.num_dofs()
    }

    pub fn at(&self, dof: usize) -> &[f64] {
        &self.values[dof * self.num_gates..(dof + 1) * self.num_gates]
    }

    pub fn at_mut(&mut self, dof: usize) -> &mut [f64] {
        &mut self.values[dof * self.num_gates..(dof + 1) * self.num_gates]
    }

    /// Values of one gate across all dofs.
    pub fn gate(&self, g: usize) -> Vec<f64> {
        (0..self.num_dofs())
            .map(|d| self.values[d * self.num_gates + g])
            .collect()
    }

    pub fn within_unit_interval(&self, slack: f64) -> Option<(usize, usize, f64)> {
        for d in 0..self.num_dofs() {
            for g in 0..self.num_gates {
                let v = self.values[d * self.num_gates + g];
                if !(v >= -slack && v <= 1.0 + slack) {
                    return Some((d, g, v));
                }
            }
        }
        None
    }
}
