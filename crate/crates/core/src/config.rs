//! Run configuration: a line-oriented `key = value` format with explicit units.
//!
//! Blank lines and `#` comments are ignored. Times take `s` or `ms`, lengths
//! `m`, `mm` or `um`; a dimensional value without a suffix is an error.
//! Lists are comma separated and every element carries its own suffix.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::csd::{CsdModel, PressureWidthRule};
use crate::error::{Error, Result};
use crate::membrane::{GhkOrientation, KaRateForm, MembraneConventions, TriggerParams, TriggerSign};
use crate::ode::OdeStepperKind;
use crate::pde::PdeStepperKind;
use crate::splitting::{SchemeConfig, Splitting};
use crate::state::ElementPairing;
use crate::verification::{CaseId, MmsPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subcommand {
    Mms,
    Csd,
    CsdFull,
    Perf,
    PlotData,
}

impl Subcommand {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mms" => Some(Self::Mms),
            "csd" => Some(Self::Csd),
            "csd-full" => Some(Self::CsdFull),
            "perf" => Some(Self::Perf),
            "plot-data" => Some(Self::PlotData),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mms => "mms",
            Self::Csd => "csd",
            Self::CsdFull => "csd-full",
            Self::Perf => "perf",
            Self::PlotData => "plot-data",
        }
    }
}

/// Figure layouts emitted by `plot-data`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Figure {
    /// Zero-flow snapshots of ECS concentrations, potentials and volume changes.
    Snapshots,
    /// phi_n(x, 50 s) for every cell of a zero-flow sweep.
    SweepPotential,
    /// Full-model snapshots at 50 s.
    FullSnapshots,
    /// p_e(x, 50 s) for every cell of a full-model sweep.
    SweepPressure,
}

impl Figure {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "2" | "fig2" => Some(Self::Snapshots),
            "3a" | "fig3a" => Some(Self::SweepPotential),
            "5" | "fig5" => Some(Self::FullSnapshots),
            "6a" | "fig6a" => Some(Self::SweepPressure),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Snapshots => "fig2",
            Self::SweepPotential => "fig3a",
            Self::FullSnapshots => "fig5",
            Self::SweepPressure => "fig6a",
        }
    }

    pub fn model(self) -> CsdModel {
        match self {
            Self::Snapshots | Self::SweepPotential => CsdModel::ZeroFlow,
            Self::FullSnapshots | Self::SweepPressure => CsdModel::Full,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub scheme: SchemeConfig,
    pub model: CsdModel,
    pub conventions: MembraneConventions,
    pub trigger: TriggerParams,
    pub triggered: bool,
    pub pressure_width: PressureWidthRule,
    pub sweep_n: Vec<usize>,
    /// Sweep time steps, s.
    pub sweep_dt: Vec<f64>,
    pub case: CaseId,
    pub mms: MmsPlan,
    pub perf_n: Vec<usize>,
    pub figure: Figure,
    /// Snapshot times, s.
    pub times: Vec<f64>,
    pub write_checkpoint: bool,
    pub out: PathBuf,
    pub workers: Option<usize>,
    /// Keys set by a file or flag, in order.
    #[serde(skip)]
    pub explicit: Vec<String>,
}

impl RunConfig {
    /// Defaults of a subcommand before any file or flag is applied.
    pub fn defaults(sub: Subcommand) -> Self {
        let mut scheme = SchemeConfig::reference(8000, 3.125e-3, 50.0);
        scheme.sample_interval = Some(0.5);
        scheme.newton.chord = true;
        let mut model = CsdModel::ZeroFlow;
        let mut figure = Figure::Snapshots;
        match sub {
            Subcommand::CsdFull => {
                model = CsdModel::Full;
                scheme.pde = PdeStepperKind::BEFull;
                scheme.pairing = ElementPairing::full_default();
                figure = Figure::FullSnapshots;
            }
            Subcommand::Mms => {
                scheme = crate::verification::mms_scheme(CaseId::ZeroFlow2c, PdeStepperKind::BDF2);
            }
            Subcommand::Perf => {
                scheme.t_end = 5.0;
                scheme.sample_interval = Some(5.0);
                scheme.newton.chord = false;
            }
            _ => {}
        }
        Self {
            subcommand: sub,
            scheme,
            model,
            conventions: MembraneConventions::default(),
            trigger: TriggerParams::csd_default(),
            triggered: true,
            pressure_width: PressureWidthRule::Literal,
            sweep_n: Vec::new(),
            sweep_dt: Vec::new(),
            case: CaseId::ZeroFlow2c,
            mms: MmsPlan::default(),
            perf_n: vec![8000, 16000, 32000],
            figure,
            times: vec![10.0, 30.0, 50.0],
            write_checkpoint: false,
            out: PathBuf::from("out"),
            workers: None,
            explicit: Vec::new(),
        }
    }

    /// Applies one `key = value` pair; `at` locates it in error messages.
    pub fn set(&mut self, key: &str, value: &str, at: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("{at}: {key}: {what}"));
        let v = value.trim();
        let name = |parsed: Option<()>| parsed.ok_or_else(|| bad(&format!("unrecognised value '{v}'")));
        match key {
            "n" => self.scheme.n_cells = parse_count(v).map_err(|e| bad(&e))?,
            "dt" => self.scheme.dt = parse_time(v).map_err(|e| bad(&e))?,
            "t_end" => self.scheme.t_end = parse_time(v).map_err(|e| bad(&e))?,
            "sample_interval" => {
                self.scheme.sample_interval = if v == "every_step" {
                    None
                } else {
                    Some(parse_time(v).map_err(|e| bad(&e))?)
                }
            }
            "splitting" => name(Splitting::parse(v).map(|s| self.scheme.splitting = s))?,
            "pde" => name(PdeStepperKind::parse(v).map(|s| self.scheme.pde = s))?,
            "ode" => name(OdeStepperKind::parse(v).map(|s| self.scheme.ode = s))?,
            "pairing" => name(ElementPairing::parse(v).map(|s| self.scheme.pairing = s))?,
            "allow_unstable_pairing" => self.scheme.allow_unstable_pairing = parse_bool(v).map_err(|e| bad(&e))?,
            "newton.rel_tol" => self.scheme.newton.rel_tol = parse_plain(v).map_err(|e| bad(&e))?,
            "newton.abs_tol" => self.scheme.newton.abs_tol = parse_plain(v).map_err(|e| bad(&e))?,
            "newton.update_tol" => self.scheme.newton.update_tol = parse_plain(v).map_err(|e| bad(&e))?,
            "newton.max_iters" => self.scheme.newton.max_iters = parse_count(v).map_err(|e| bad(&e))?,
            "newton.chord" => self.scheme.newton.chord = parse_bool(v).map_err(|e| bad(&e))?,
            "model" => {
                self.model = match v {
                    "zero_flow" => CsdModel::ZeroFlow,
                    "full" => CsdModel::Full,
                    _ => return Err(bad(&format!("unrecognised value '{v}'"))),
                }
            }
            "ghk" => {
                self.conventions.ghk = match v {
                    "outward" => GhkOrientation::Outward,
                    "literal" => GhkOrientation::Literal,
                    _ => return Err(bad(&format!("unrecognised value '{v}'"))),
                }
            }
            "trigger_sign" => {
                self.conventions.trigger = match v {
                    "conductance" => TriggerSign::Conductance,
                    "literal" => TriggerSign::Literal,
                    _ => return Err(bad(&format!("unrecognised value '{v}'"))),
                }
            }
            "ka_rates" => {
                self.conventions.ka = match v {
                    "conventional" => KaRateForm::Conventional,
                    "literal" => KaRateForm::Literal,
                    _ => return Err(bad(&format!("unrecognised value '{v}'"))),
                }
            }
            "trigger.length" => self.trigger.l_ex = parse_length(v).map_err(|e| bad(&e))?,
            "trigger.duration" => self.trigger.t_ex = parse_time(v).map_err(|e| bad(&e))?,
            "trigger.g_max" => self.trigger.g_max = parse_plain(v).map_err(|e| bad(&e))?,
            "triggered" => self.triggered = parse_bool(v).map_err(|e| bad(&e))?,
            "pressure_width" => {
                self.pressure_width = match v {
                    "literal" => PressureWidthRule::Literal,
                    "complement" => PressureWidthRule::Complement,
                    _ => return Err(bad(&format!("unrecognised value '{v}'"))),
                }
            }
            "sweep.n" | "N" => self.sweep_n = parse_list(v, parse_count).map_err(|e| bad(&e))?,
            "sweep.dt" => self.sweep_dt = parse_list(v, parse_time).map_err(|e| bad(&e))?,
            "case" => name(CaseId::parse(v).map(|c| self.case = c))?,
            "mms.n" => self.mms.ns = parse_list(v, parse_count).map_err(|e| bad(&e))?,
            "mms.dt0" => self.mms.dt0 = parse_time(v).map_err(|e| bad(&e))?,
            "mms.t_end" => self.mms.t_end = parse_time(v).map_err(|e| bad(&e))?,
            "perf.n" => self.perf_n = parse_list(v, parse_count).map_err(|e| bad(&e))?,
            "figure" => name(Figure::parse(v).map(|f| self.figure = f))?,
            "times" => self.times = parse_list(v, parse_time).map_err(|e| bad(&e))?,
            "checkpoint" => self.write_checkpoint = parse_bool(v).map_err(|e| bad(&e))?,
            "workers" => self.workers = Some(parse_count(v).map_err(|e| bad(&e))?),
            _ => return Err(Error::Config(format!("{at}: unknown key '{key}'"))),
        }
        self.explicit.push(key.to_string());
        Ok(())
    }

    fn is_explicit(&self, key: &str) -> bool {
        self.explicit.iter().any(|k| k == key)
    }

    /// Fills defaults that depend on other keys: the full model or MMS case
    /// switches to the full-model stepper and pairing unless they were given.
    pub fn resolve(&mut self) {
        let full = match self.subcommand {
            Subcommand::Mms => self.case == CaseId::Full3c,
            Subcommand::PlotData => self.figure.model() == CsdModel::Full,
            _ => self.model == CsdModel::Full,
        };
        if self.subcommand == Subcommand::PlotData {
            self.model = self.figure.model();
        }
        if full {
            if !self.is_explicit("pde") {
                self.scheme.pde = PdeStepperKind::BEFull;
            }
            if !self.is_explicit("pairing") {
                self.scheme.pairing = ElementPairing::full_default();
            }
        }
    }

    /// Applies a whole file in the documented format.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = format!("{origin}:{}", i + 1);
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{at}: expected 'key = value'")))?;
            self.set(k.trim(), v, &at)?;
        }
        Ok(())
    }

    /// Checks cross-key consistency; run before anything is allocated.
    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        let full = self.model == CsdModel::Full;
        match self.subcommand {
            Subcommand::Csd | Subcommand::CsdFull | Subcommand::PlotData => {
                let full = if self.subcommand == Subcommand::PlotData {
                    self.figure.model() == CsdModel::Full
                } else {
                    full
                };
                if full != (self.scheme.pde == PdeStepperKind::BEFull) {
                    return Err(Error::Config(format!(
                        "pde = {} does not fit the {} model",
                        self.scheme.pde.name(),
                        if full { "full" } else { "zero flow" }
                    )));
                }
            }
            Subcommand::Mms => {
                if (self.case == CaseId::Full3c) != (self.scheme.pde == PdeStepperKind::BEFull) {
                    return Err(Error::Config(format!(
                        "pde = {} does not fit the {} case",
                        self.scheme.pde.name(),
                        self.case.name()
                    )));
                }
                if self.mms.ns.len() < 2 {
                    return Err(Error::Config("mms.n needs at least two levels".into()));
                }
            }
            Subcommand::Perf => {
                if self.perf_n.is_empty() {
                    return Err(Error::Config("perf.n is empty".into()));
                }
            }
        }
        if self.sweep_n.is_empty() != self.sweep_dt.is_empty() {
            return Err(Error::Config("sweep.n and sweep.dt must be given together".into()));
        }
        if self.sweep_dt.iter().chain(&self.times).any(|v| !(*v > 0.0)) {
            return Err(Error::Config("sweep.dt and times must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        Ok(())
    }
}

/// Splits a number from its unit suffix.
fn split_unit(v: &str) -> (&str, &str) {
    let i = v
        .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
        .unwrap_or(v.len());
    (v[..i].trim(), v[i..].trim())
}

fn number(s: &str) -> std::result::Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("'{s}' is not finite"))
    }
}

/// Time with an `s` or `ms` suffix, in seconds.
pub fn parse_time(v: &str) -> std::result::Result<f64, String> {
    let (num, unit) = split_unit(v.trim());
    let scale = match unit {
        "s" => 1.0,
        "ms" => 1e-3,
        "" => return Err(format!("'{v}' needs a time unit (s or ms)")),
        u => return Err(format!("'{u}' is not a time unit (s or ms)")),
    };
    Ok(number(num)? * scale)
}

/// Length with an `m`, `mm` or `um` suffix, in metres.
pub fn parse_length(v: &str) -> std::result::Result<f64, String> {
    let (num, unit) = split_unit(v.trim());
    let scale = match unit {
        "m" => 1.0,
        "mm" => 1e-3,
        "um" => 1e-6,
        "" => return Err(format!("'{v}' needs a length unit (m, mm or um)")),
        u => return Err(format!("'{u}' is not a length unit (m, mm or um)")),
    };
    Ok(number(num)? * scale)
}

fn parse_plain(v: &str) -> std::result::Result<f64, String> {
    number(v.trim())
}

fn parse_count(v: &str) -> std::result::Result<usize, String> {
    v.trim().parse().map_err(|_| format!("'{}' is not a nonnegative integer", v.trim()))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        o => Err(format!("'{o}' is not true or false")),
    }
}

fn parse_list<T>(v: &str, f: fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(f).collect()
}
