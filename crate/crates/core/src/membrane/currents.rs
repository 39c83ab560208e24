use crate::constitutive::PhysicalConstants;
use crate::dual::Scalar;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Sign convention of the GHK concentration difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GhkOrientation {
    /// mu (c_r - c_R e^-mu) / (1 - e^-mu): positive current is outward, like the leak.
    Outward,
    /// mu (c_R - c_r e^-mu) / (1 - e^-mu) with the concentration order reversed.
    Literal,
}

/// Driving force of the excitatory trigger current.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriggerSign {
    /// G (phi - E): an added conductance pulling phi toward each reversal potential.
    Conductance,
    /// G (E - phi).
    Literal,
}

pub fn nernst(c: &PhysicalConstants, valence: f64, conc_r: f64, conc_big_r: f64) -> Result<f64> {
    if !(conc_r > 0.0) || !(conc_big_r > 0.0) {
        return Err(Error::Domain(format!(
            "Nernst potential needs positive concentrations, got {conc_r} and {conc_big_r}"
        )));
    }
    Ok(nernst_s(c.psi(), valence, conc_r, conc_big_r))
}

#[inline]
pub fn nernst_s<S: Scalar>(psi: f64, valence: f64, conc_r: S, conc_big_r: S) -> S {
    (conc_big_r / conc_r).ln() * (psi / valence)
}

#[inline]
pub fn leak_current<S: Scalar>(g_leak: f64, phi: S, e: S) -> S {
    (phi - e) * g_leak
}

/// mu / (1 - e^-mu), continuous through mu = 0.
#[inline]
pub fn ghk_factor<S: Scalar>(mu: S) -> S {
    let m = mu.val();
    if m.abs() < 1e-4 {
        mu * (mu * (1.0 / 12.0) + 0.5) + 1.0
    } else {
        -mu / (-mu).exp_m1()
    }
}

/// GHK current of a monovalent cation through a channel with open fraction `open`.
#[inline]
pub fn ghk_current<S: Scalar>(
    c: &PhysicalConstants,
    orientation: GhkOrientation,
    permeability: f64,
    open: f64,
    phi: S,
    conc_r: S,
    conc_big_r: S,
) -> S {
    let mu = phi / c.psi();
    let emu = (-mu).exp();
    let diff = match orientation {
        GhkOrientation::Outward => conc_r - conc_big_r * emu,
        GhkOrientation::Literal => conc_big_r - conc_r * emu,
    };
    ghk_factor(mu) * diff * (permeability * open * c.faraday)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpParams {
    pub i_hat: f64,
    pub m_na: f64,
    pub m_k: f64,
}

#[inline]
pub fn pump_current<S: Scalar>(p: &PumpParams, conc_k_ecs: S, conc_na_r: S) -> S {
    let a = (conc_k_ecs.recip() * p.m_k + 1.0).powi(2);
    let b = (conc_na_r.recip() * p.m_na + 1.0).powi(3);
    (a * b).recip() * p.i_hat
}

/// Inward-rectifier conductance; voltages enter the exponentials in mV.
#[inline]
pub fn kir_conductance<S: Scalar>(g0: f64, conc_k_ecs: S, phi: S, e_k: S) -> S {
    let phi_mv = phi * 1e3;
    let ek_mv = e_k * 1e3;
    let f1 = 1.0 + (18.5f64 / 42.5).exp();
    let d1 = ((phi_mv - ek_mv + 18.5) / 42.5).exp() + 1.0;
    let f2 = 1.0 + ((-118.6f64 - 85.2) / 44.1).exp();
    let d2 = ((phi_mv - 118.6) / 44.1).exp() + 1.0;
    (conc_k_ecs / 3.0).sqrt() * (g0 * f1 * f2) / (d1 * d2)
}

#[inline]
pub fn nakcl_current<S: Scalar>(g: f64, inner: [S; 3], outer: [S; 3]) -> S {
    let num = inner[0] * inner[1] * inner[2] * inner[2];
    let den = outer[0] * outer[1] * outer[2] * outer[2];
    (num / den).ln() * g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerParams {
    pub g_max: f64,
    pub l_ex: f64,
    pub t_ex: f64,
}

impl TriggerParams {
    pub fn csd_default() -> Self {
        Self {
            g_max: 5.0,
            l_ex: 2e-5,
            t_ex: 2.0,
        }
    }
}

pub fn excitatory_conductance(tr: &TriggerParams, x: f64, t: f64) -> f64 {
    if x <= tr.l_ex && t <= tr.t_ex && t >= 0.0 {
        let c = (std::f64::consts::PI * x / (2.0 * tr.l_ex)).cos();
        tr.g_max * c * c * (std::f64::consts::PI * t / tr.t_ex).sin()
    } else {
        0.0
    }
}

#[inline]
pub fn excitatory_current<S: Scalar>(sign: TriggerSign, g: f64, phi: S, e: S) -> S {
    match sign {
        TriggerSign::Conductance => (phi - e) * g,
        TriggerSign::Literal => (e - phi) * g,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pc() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn nernst_examples() {
        let c = pc();
        assert_eq!(nernst(&c, 1.0, 5.0, 5.0).unwrap(), 0.0);
        let ek = nernst(&c, 1.0, 132.0, 4.0).unwrap();
        assert!((ek - c.psi() * (4.0f64 / 132.0).ln()).abs() < 1e-15);
        assert!((ek + 0.0934).abs() < 1e-4);
        let ecl = nernst(&c, -1.0, 8.0, 114.0).unwrap();
        assert!((ecl + 0.0710).abs() < 1e-4);
        assert!(nernst(&c, 1.0, 0.0, 4.0).is_err());
    }

    #[test]
    fn leak_examples() {
        assert_eq!(leak_current(0.7, -0.05, -0.05), 0.0);
        let i = leak_current(0.7, -0.070, -0.0934);
        assert!((i - 0.01638).abs() < 1e-5);
        assert_eq!(leak_current(0.7, 0.01, 0.03), -leak_current(0.7, 0.03, 0.01));
    }

    #[test]
    fn ghk_limits() {
        let c = pc();
        for o in [GhkOrientation::Outward, GhkOrientation::Literal] {
            assert!(ghk_current(&c, o, 1e-5, 1.0, 0.0, 7.0, 7.0).abs() < 1e-15);
            assert_eq!(ghk_current(&c, o, 1e-5, 0.0, -0.05, 7.0, 140.0), 0.0);
        }
        let i0 = ghk_current(&c, GhkOrientation::Literal, 1e-5, 1.0, 0.0, 10.0, 140.0);
        assert!((i0 - 1e-5 * c.faraday * 130.0).abs() < 1e-12);
    }

    #[test]
    fn ghk_series_matches_exact_branch() {
        for &mu in &[1e-5, -1e-5, 5e-5, -9.9e-5, 1.0001e-4, -1e-3, 1e-3] {
            let series: f64 = mu * (mu / 12.0 + 0.5) + 1.0;
            let exact = -mu / (-mu as f64).exp_m1();
            assert!(((series - exact) / exact).abs() < 1e-10, "mu {mu}");
        }
    }

    #[test]
    fn pump_examples() {
        let p = PumpParams {
            i_hat: 0.1372,
            m_na: 7.7,
            m_k: 2.0,
        };
        let i = pump_current(&p, 4.0, 9.3);
        assert!((i - 0.00998).abs() < 1e-5, "{i}");
        let sat = pump_current(&p, 1e12, 1e12);
        assert!((sat - 0.1372).abs() < 1e-9);
        let off = PumpParams { i_hat: 0.0, ..p };
        assert_eq!(pump_current(&off, 4.0, 9.3), 0.0);
    }

    fn kir_reference(g0: f64, k: f64, phi_mv: f64, ek_mv: f64) -> f64 {
        let a = (k / 3.0).sqrt();
        let b = (1.0 + (18.5 / 42.5f64).exp()) / (1.0 + ((phi_mv - ek_mv + 18.5) / 42.5).exp());
        let c = (1.0 + ((-118.6 - 85.2) / 44.1f64).exp()) / (1.0 + ((-118.6 + phi_mv) / 44.1).exp());
        g0 * a * b * c
    }

    #[test]
    fn kir_two_implementations_agree() {
        for &(k, phi, ek) in &[(3.0, -0.085, -0.085), (4.0, -0.082, -0.0895), (20.0, -0.03, -0.05)] {
            let a = kir_conductance(1.3, k, phi, ek);
            let b = kir_reference(1.3, k, phi * 1e3, ek * 1e3);
            assert!(((a - b) / b).abs() < 1e-12);
        }
        assert_eq!(kir_conductance(0.0, 4.0, -0.08, -0.09), 0.0);
    }

    #[test]
    fn kir_increases_with_potassium() {
        let mut prev = 0.0;
        for i in 1..50 {
            let g = kir_conductance(1.3, i as f64, -0.08, -0.09);
            assert!(g > prev);
            prev = g;
        }
    }

    #[test]
    fn nakcl_examples() {
        assert_eq!(nakcl_current(1e-3, [10.0, 100.0, 8.0], [10.0, 100.0, 8.0]), 0.0);
        let a = nakcl_current(2e-3, [13.0, 128.0, 8.0], [137.0, 4.0, 114.0]);
        let b = nakcl_current(2e-3, [13.0, 128.0, 16.0], [137.0, 4.0, 114.0]);
        assert!((b - a - 2e-3 * 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn trigger_shape() {
        let tr = TriggerParams::csd_default();
        assert!((excitatory_conductance(&tr, 0.0, 1.0) - 5.0).abs() < 1e-12);
        assert!(excitatory_conductance(&tr, tr.l_ex, 1.0).abs() < 1e-12);
        assert_eq!(excitatory_conductance(&tr, 0.0, 2.0001), 0.0);
        assert_eq!(excitatory_conductance(&tr, 1e-3, 1.0), 0.0);
    }
}
