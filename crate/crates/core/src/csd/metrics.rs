//! Quantities of interest of a spreading depolarization wave.

use serde::{Deserialize, Serialize};

use crate::constitutive::{fluid_velocity_s, membrane_tension, ModelSpec, MAX_COMP};
use crate::error::{Error, Result};
use crate::state::{SystemLayout, TissueState};

/// Neuronal potential above which the wave counts as present, in volts.
pub const PEAK_THRESHOLD: f64 = -0.020;
/// Extracellular potassium threshold for width and duration, mol/m^3.
pub const K_THRESHOLD: f64 = 10.0;
/// Extracellular pressure threshold for the pressure wave width, Pa.
pub const P_THRESHOLD: f64 = -10.0e3;
/// Position of the duration probe, m.
pub const DURATION_PROBE: f64 = 1.0e-3;
/// Time of the width snapshot, s.
pub const SNAPSHOT_TIME: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakSample {
    pub t: f64,
    /// Position of the neuronal potential maximum, m.
    pub x: f64,
    /// Maximum neuronal potential, V.
    pub phi: f64,
}

/// Dof coordinates of one field in increasing order, with the values.
pub fn sorted_field(state: &TissueState, f: usize) -> (Vec<f64>, Vec<f64>) {
    let map = state.layout.field_map(f);
    let vals = state.field_values(f);
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    let coords = map.coords();
    idx.sort_by(|&a, &b| coords[a].total_cmp(&coords[b]));
    (idx.iter().map(|&i| coords[i]).collect(), idx.iter().map(|&i| vals[i]).collect())
}

/// Argmax refined by the parabola through the maximum and its neighbours.
pub fn refined_argmax(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let (i, &ymax) = ys
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty samples");
    if i == 0 || i + 1 == ys.len() {
        return (xs[i], ymax);
    }
    let (x0, x1, x2) = (xs[i - 1], xs[i], xs[i + 1]);
    let (y0, y1, y2) = (ys[i - 1], ys[i], ys[i + 1]);
    // divided differences
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let a = (d12 - d01) / (x2 - x0);
    if !(a < 0.0) {
        return (x1, y1);
    }
    let b = d01 - a * (x0 + x1);
    let xv = (-b / (2.0 * a)).clamp(x0, x2);
    let yv = y0 + d01 * (xv - x0) + a * (xv - x0) * (xv - x1);
    (xv, yv)
}

/// Extent of {x : y(x) > threshold} with linearly interpolated endpoints.
pub fn superlevel_extent(xs: &[f64], ys: &[f64], threshold: f64) -> Option<(f64, f64)> {
    let first = ys.iter().position(|&y| y > threshold)?;
    let last = ys.iter().rposition(|&y| y > threshold)?;
    let cross = |i: usize, j: usize| {
        let t = (threshold - ys[i]) / (ys[j] - ys[i]);
        xs[i] + t * (xs[j] - xs[i])
    };
    let lo = if first == 0 { xs[0] } else { cross(first - 1, first) };
    let hi = if last + 1 == ys.len() { xs[last] } else { cross(last, last + 1) };
    Some((lo, hi))
}

/// Records the neuronal potential peak and the potassium probe after every step.
#[derive(Debug, Clone)]
pub struct WaveTracker {
    phi_field: usize,
    k_field: usize,
    pub peaks: Vec<PeakSample>,
    /// Extracellular potassium at the probe position.
    pub probe: Vec<(f64, f64)>,
    pub max_phi_n: f64,
    pub min_phi_e: f64,
    /// Largest relative increase of each cellular volume fraction.
    pub max_swelling: [f64; MAX_COMP],
    /// Smallest compartment pressure, Pa.
    pub min_pressure: [f64; MAX_COMP],
    alpha0: [f64; MAX_COMP],
}

impl WaveTracker {
    pub fn new(spec: &ModelSpec, layout: &SystemLayout, initial: &TissueState) -> Self {
        let ecs = layout.ecs();
        let k = spec.ion_index("K").unwrap_or(1);
        let mut alpha0 = [0.0; MAX_COMP];
        let pt = initial.point(0.0);
        alpha0[..ecs].copy_from_slice(&pt.alpha[..ecs]);
        Self {
            phi_field: layout.phi_field(0),
            k_field: layout.conc_field(ecs, k),
            peaks: Vec::new(),
            probe: Vec::new(),
            max_phi_n: f64::NEG_INFINITY,
            min_phi_e: f64::INFINITY,
            max_swelling: [f64::NEG_INFINITY; MAX_COMP],
            min_pressure: [f64::INFINITY; MAX_COMP],
            alpha0,
        }
    }

    pub fn observe(&mut self, spec: &ModelSpec, s: &TissueState) {
        let l = &s.layout;
        let (xs, ys) = sorted_field(s, self.phi_field);
        let (x, phi) = refined_argmax(&xs, &ys);
        self.peaks.push(PeakSample { t: s.t, x, phi });
        self.max_phi_n = self.max_phi_n.max(ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let ecs = l.ecs();
        let phi_e = s.field_values(l.phi_field(ecs));
        self.min_phi_e = phi_e.iter().cloned().fold(self.min_phi_e, f64::min);
        self.probe.push((s.t, s.field(self.k_field).eval(DURATION_PROBE).0));
        let p = l.pressure_field().map(|f| s.field_values(f));
        for r in 0..ecs {
            let a = s.field_values(l.alpha_field(r));
            for (i, &v) in a.iter().enumerate() {
                self.max_swelling[r] = self.max_swelling[r].max(v / self.alpha0[r] - 1.0);
                if let Some(p) = &p {
                    if p.len() == a.len() {
                        let pr = p[i] + membrane_tension(spec, r, v);
                        self.min_pressure[r] = self.min_pressure[r].min(pr);
                    }
                }
            }
        }
        if let Some(p) = &p {
            self.min_pressure[ecs] = p.iter().cloned().fold(self.min_pressure[ecs], f64::min);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    /// From the first and last qualifying samples, mm/min.
    pub mean: f64,
    /// Least-squares slope over all qualifying samples, mm/min.
    pub fit: f64,
    pub samples: usize,
}

/// Mean speed of the neuronal potential peak while it exceeds the threshold.
pub fn wave_speed(peaks: &[PeakSample]) -> Result<SpeedEstimate> {
    let q: Vec<&PeakSample> = peaks.iter().filter(|p| p.phi > PEAK_THRESHOLD).collect();
    if q.len() < 2 {
        return Err(Error::NotDetected(format!(
            "{} samples with the neuronal potential above {} mV",
            q.len(),
            PEAK_THRESHOLD * 1e3
        )));
    }
    let (a, b) = (q[0], q[q.len() - 1]);
    if !(b.t > a.t) {
        return Err(Error::NotDetected("qualifying samples span no time".into()));
    }
    let to_mm_min = 60.0 * 1e3;
    let mean = to_mm_min * (b.x - a.x) / (b.t - a.t);
    let n = q.len() as f64;
    let tm = q.iter().map(|p| p.t).sum::<f64>() / n;
    let xm = q.iter().map(|p| p.x).sum::<f64>() / n;
    let sxy: f64 = q.iter().map(|p| (p.t - tm) * (p.x - xm)).sum();
    let sxx: f64 = q.iter().map(|p| (p.t - tm) * (p.t - tm)).sum();
    Ok(SpeedEstimate {
        mean,
        fit: to_mm_min * sxy / sxx,
        samples: q.len(),
    })
}

/// Width in mm of the region where extracellular potassium exceeds the threshold.
pub fn wave_width(state: &TissueState, spec: &ModelSpec) -> Result<f64> {
    let l = &state.layout;
    let k = spec.ion_index("K").unwrap_or(1);
    let (xs, ys) = sorted_field(state, l.conc_field(l.ecs(), k));
    let (lo, hi) = superlevel_extent(&xs, &ys, K_THRESHOLD)
        .ok_or_else(|| Error::NotDetected(format!("[K]_e stays below {K_THRESHOLD} mM")))?;
    Ok((hi - lo) * 1e3)
}

/// Duration in s of elevated potassium in a (t, value) trace.
pub fn wave_duration(trace: &[(f64, f64)]) -> Result<f64> {
    let ts: Vec<f64> = trace.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = trace.iter().map(|p| p.1).collect();
    let (lo, hi) = superlevel_extent(&ts, &ys, K_THRESHOLD)
        .ok_or_else(|| Error::NotDetected(format!("probe stays below {K_THRESHOLD} mM")))?;
    Ok(hi - lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PressureWidthRule {
    /// The region where the pressure is above the threshold.
    Literal,
    /// The region where the pressure is below the threshold.
    Complement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressureWidth {
    pub width: f64,
    /// The set covers the whole domain.
    pub degenerate: bool,
}

pub fn pressure_width_from(xs: &[f64], p: &[f64], rule: PressureWidthRule) -> Result<PressureWidth> {
    let ext = match rule {
        PressureWidthRule::Literal => superlevel_extent(xs, p, P_THRESHOLD),
        PressureWidthRule::Complement => {
            let neg: Vec<f64> = p.iter().map(|v| -v).collect();
            superlevel_extent(xs, &neg, -P_THRESHOLD)
        }
    };
    let (lo, hi) = ext.ok_or_else(|| Error::NotDetected("pressure threshold never crossed".into()))?;
    let (x0, x1) = (xs[0], xs[xs.len() - 1]);
    Ok(PressureWidth {
        width: (hi - lo) * 1e3,
        degenerate: lo <= x0 && hi >= x1,
    })
}

/// Extracellular pressure wave width in mm.
pub fn pressure_wave_width(state: &TissueState, rule: PressureWidthRule) -> Result<PressureWidth> {
    let f = state
        .layout
        .pressure_field()
        .ok_or_else(|| Error::Mode("pressure width needs the full model".into()))?;
    let (xs, p) = sorted_field(state, f);
    pressure_width_from(&xs, &p, rule)
}

/// Largest glial fluid speed in m/s.
pub fn max_fluid_speed(spec: &ModelSpec, state: &TissueState, r: usize) -> Result<f64> {
    if spec.zero_flow {
        return Err(Error::Mode("fluid velocity is not defined in the zero flow limit".into()));
    }
    let mesh = &state.layout.mesh;
    let mut best: f64 = 0.0;
    for c in 0..mesh.num_cells() {
        let (a, b) = mesh.cell_bounds(c);
        let pt = state.point(0.5 * (a + b));
        best = best.max(fluid_velocity_s(spec, r, &pt).abs());
    }
    Ok(best)
}

/// Metrics of a single CSD run; `None` marks a quantity that was not detected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WaveMetrics {
    pub speed: Option<f64>,
    pub speed_fit: Option<f64>,
    pub width: Option<f64>,
    pub duration: Option<f64>,
    pub pressure_width: Option<f64>,
    pub pressure_width_complement: Option<f64>,
    pub pressure_width_degenerate: bool,
    /// Peak position at the snapshot time, mm.
    pub x_peak_50: Option<f64>,
    pub max_phi_n: f64,
    pub min_phi_e: f64,
    pub max_swelling: Vec<f64>,
    pub min_pressure: Vec<f64>,
    pub max_glial_speed: Option<f64>,
}

impl WaveMetrics {
    /// Collects the metrics from a tracker and the snapshot at the width time.
    pub fn collect(spec: &ModelSpec, tracker: &WaveTracker, snapshot: &TissueState) -> Self {
        let speed = wave_speed(&tracker.peaks).ok();
        let ecs = spec.ecs();
        let mut m = WaveMetrics {
            speed: speed.map(|s| s.mean),
            speed_fit: speed.map(|s| s.fit),
            width: wave_width(snapshot, spec).ok(),
            duration: wave_duration(&tracker.probe).ok(),
            x_peak_50: tracker
                .peaks
                .iter()
                .find(|p| (p.t - snapshot.t).abs() < 1e-9 * snapshot.t.max(1.0))
                .map(|p| p.x * 1e3),
            max_phi_n: tracker.max_phi_n,
            min_phi_e: tracker.min_phi_e,
            max_swelling: tracker.max_swelling[..ecs].to_vec(),
            ..Default::default()
        };
        if !spec.zero_flow {
            m.min_pressure = tracker.min_pressure[..=ecs].to_vec();
            if let Ok(w) = pressure_wave_width(snapshot, PressureWidthRule::Literal) {
                m.pressure_width = Some(w.width);
                m.pressure_width_degenerate = w.degenerate;
            }
            m.pressure_width_complement = pressure_wave_width(snapshot, PressureWidthRule::Complement)
                .ok()
                .map(|w| w.width);
            if ecs >= 2 {
                m.max_glial_speed = max_fluid_speed(spec, snapshot, 1).ok();
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(t: f64, x: f64, phi: f64) -> PeakSample {
        PeakSample { t, x, phi }
    }

    #[test]
    fn speed_arithmetic() {
        let peaks = [sample(10.0, 0.0, -0.07), sample(20.0, 2e-3, -0.01), sample(35.0, 3.5e-3, -0.01), sample(50.0, 5e-3, -0.01)];
        let s = wave_speed(&peaks).unwrap();
        assert!((s.mean - 6.0).abs() < 1e-12);
        assert!((s.fit - 6.0).abs() < 1e-9);
        assert_eq!(s.samples, 3);
    }

    #[test]
    fn no_wave_not_detected() {
        let peaks = [sample(0.0, 0.0, -0.07), sample(1.0, 0.0, -0.07)];
        assert!(matches!(wave_speed(&peaks), Err(Error::NotDetected(_))));
    }

    #[test]
    fn top_hat_width() {
        let xs: Vec<f64> = (0..=1000).map(|i| i as f64 * 1e-5).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| if (3e-3..=6e-3).contains(&x) { 40.0 } else { 3.0 }).collect();
        let (lo, hi) = superlevel_extent(&xs, &ys, K_THRESHOLD).unwrap();
        // interpolated crossings sit within a grid spacing of the jumps
        assert!(((hi - lo) * 1e3 - 3.0).abs() <= 2e-2);
        assert!(superlevel_extent(&xs, &vec![5.0; xs.len()], K_THRESHOLD).is_none());
    }

    #[test]
    fn pulse_duration() {
        let trace: Vec<(f64, f64)> = (0..=500)
            .map(|i| {
                let t = i as f64 * 0.1;
                (t, if t > 10.0 - 1e-9 && t < 27.0 + 1e-9 { 20.0 } else { 4.0 })
            })
            .collect();
        let d = wave_duration(&trace).unwrap();
        assert!((d - 17.0).abs() <= 0.2, "{d}");
        assert!(wave_duration(&[(0.0, 4.0), (1.0, 4.0)]).is_err());
    }

    #[test]
    fn linear_crossings_are_exact() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = [0.0, 20.0, 20.0, 20.0, 0.0];
        let (lo, hi) = superlevel_extent(&xs, &ys, 10.0).unwrap();
        assert_eq!((lo, hi), (0.5, 3.5));
    }

    #[test]
    fn pressure_rules() {
        let xs: Vec<f64> = (0..=100).map(|i| i as f64 * 1e-4).collect();
        let zero = vec![0.0; xs.len()];
        let w = pressure_width_from(&xs, &zero, PressureWidthRule::Literal).unwrap();
        assert!(w.degenerate);
        assert!((w.width - 10.0).abs() < 1e-9);
        assert!(pressure_width_from(&xs, &zero, PressureWidthRule::Complement).is_err());
        let dip: Vec<f64> = xs
            .iter()
            .map(|&x| {
                // triangular dip of depth 60 kPa reaching -10 kPa at 4 and 6 mm
                let d = (x - 5e-3).abs();
                -60e3 + 50e3 * d / 1e-3
            })
            .map(|v| v.min(0.0))
            .collect();
        let w = pressure_width_from(&xs, &dip, PressureWidthRule::Complement).unwrap();
        assert!((w.width - 2.0).abs() < 1e-9, "{}", w.width);
        assert!(!w.degenerate);
    }

    proptest! {
        #[test]
        fn parabola_vertex_recovered(xv in 0.2f64..0.8, k in 0.5f64..50.0, h in 0.005f64..0.05) {
            let xs: Vec<f64> = (0..=(1.0 / h) as usize).map(|i| i as f64 * h).collect();
            let ys: Vec<f64> = xs.iter().map(|x| 3.0 - k * (x - xv) * (x - xv)).collect();
            let (x, y) = refined_argmax(&xs, &ys);
            prop_assert!((x - xv).abs() < 1e-9);
            prop_assert!((y - 3.0).abs() < 1e-9);
        }
    }
}
