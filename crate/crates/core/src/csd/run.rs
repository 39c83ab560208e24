//! Single CSD runs and refinement sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{WaveMetrics, WaveTracker, SNAPSHOT_TIME};
use super::setup::{setup_full_csd, setup_zero_flow_csd, CsdSetup};
use crate::error::{Error, Result};
use crate::membrane::{HhGating, MembraneConventions};
use crate::pde::BoundaryMode;
use crate::splitting::{SchemeConfig, Simulation, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CsdModel {
    ZeroFlow,
    Full,
}

impl CsdModel {
    pub fn setup(self, config: &SchemeConfig, conventions: MembraneConventions) -> Result<CsdSetup> {
        match self {
            Self::ZeroFlow => setup_zero_flow_csd(config.n_cells, config.pairing, conventions),
            Self::Full => setup_full_csd(config.n_cells, config.pairing, conventions),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsdOutcome {
    pub trajectory: Trajectory,
    pub tracker: WaveTracker,
    pub metrics: WaveMetrics,
}

/// Runs the scenario to `config.t_end` with the trigger on (or off) and extracts
/// the wave metrics at the snapshot time, or at the end if the run is shorter.
pub fn run_csd(setup: CsdSetup, config: &SchemeConfig, triggered: bool) -> Result<CsdOutcome> {
    let hh = HhGating::new(&setup.spec);
    let mut tracker = WaveTracker::new(&setup.spec, &setup.layout, &setup.state);
    let snap_step = (SNAPSHOT_TIME / config.dt).round() as usize;
    let mut snapshot = None;
    let mut count = 0usize;
    let spec = setup.spec.clone();
    let sim = Simulation::new(
        config.clone(),
        setup.spec.clone(),
        &hh,
        setup.state,
        setup.gating,
        triggered.then_some(setup.trigger),
        BoundaryMode::Natural,
    )?;
    let trajectory = sim.run(|s, _| {
        tracker.observe(&spec, s);
        if count == snap_step {
            snapshot = Some(s.clone());
        }
        count += 1;
    })?;
    let snap = snapshot.unwrap_or_else(|| trajectory.last_state().clone());
    let metrics = WaveMetrics::collect(&spec, &tracker, &snap);
    Ok(CsdOutcome {
        trajectory,
        tracker,
        metrics,
    })
}

/// One sweep cell; `metrics` is `None` when the run failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub n: usize,
    /// Time step, s.
    pub dt: f64,
    pub metrics: Option<WaveMetrics>,
    pub error: Option<String>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementSweep {
    pub ns: Vec<usize>,
    pub dts: Vec<f64>,
    /// Row-major over (N, dt).
    pub cells: Vec<SweepCell>,
}

impl RefinementSweep {
    pub fn cell(&self, i: usize, j: usize) -> &SweepCell {
        &self.cells[i * self.dts.len() + j]
    }

    /// Table of a metric; failed or undetected cells are `None`.
    pub fn table(&self, f: impl Fn(&WaveMetrics) -> Option<f64>) -> Vec<Vec<Option<f64>>> {
        (0..self.ns.len())
            .map(|i| (0..self.dts.len()).map(|j| self.cell(i, j).metrics.as_ref().and_then(&f)).collect())
            .collect()
    }
}

/// Differences between consecutive rows at the finest column and between
/// consecutive columns at the finest row.
pub fn consecutive_differences(table: &[Vec<Option<f64>>]) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| (b - a).abs());
    let rows = table.len();
    let cols = table.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return (Vec::new(), Vec::new());
    }
    let down: Vec<Option<f64>> = (1..rows).map(|i| diff(table[i - 1][cols - 1], table[i][cols - 1])).collect();
    let across: Vec<Option<f64>> = (1..cols).map(|j| diff(table[rows - 1][j - 1], table[rows - 1][j])).collect();
    (down, across)
}

/// Runs every (N, dt) cell as an independent job.
pub fn refinement_sweep(
    model: CsdModel,
    base: &SchemeConfig,
    conventions: MembraneConventions,
    ns: &[usize],
    dts: &[f64],
) -> Result<RefinementSweep> {
    if ns.is_empty() || dts.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one N and one dt".into()));
    }
    let jobs: Vec<(usize, f64)> = ns.iter().flat_map(|&n| dts.iter().map(move |&dt| (n, dt))).collect();
    let cells = jobs
        .par_iter()
        .map(|&(n, dt)| {
            let clock = std::time::Instant::now();
            let cfg = SchemeConfig {
                n_cells: n,
                dt,
                ..base.clone()
            };
            let out = model.setup(&cfg, conventions).and_then(|s| run_csd(s, &cfg, true));
            let (metrics, error) = match out {
                Ok(o) => (Some(o.metrics), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SweepCell {
                n,
                dt,
                metrics,
                error,
                wall_time: clock.elapsed().as_secs_f64(),
            }
        })
        .collect();
    Ok(RefinementSweep {
        ns: ns.to_vec(),
        dts: dts.to_vec(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn differences_follow_table_layout() {
        let t = vec![vec![Some(8.0), Some(9.0)], vec![Some(6.0), Some(7.5)], vec![Some(5.0), None]];
        let (down, across) = consecutive_differences(&t);
        assert_eq!(down, vec![Some(1.5), None]);
        assert_eq!(across, vec![None]);
        let single = vec![vec![Some(1.0)]];
        let (d, a) = consecutive_differences(&single);
        assert!(d.is_empty() && a.is_empty());
    }

    #[test]
    fn short_untriggered_run_detects_nothing() {
        let cfg = SchemeConfig {
            sample_interval: Some(0.5),
            ..SchemeConfig::reference(50, 0.05, 1.0)
        };
        let s = CsdModel::ZeroFlow.setup(&cfg, Default::default()).unwrap();
        let out = run_csd(s, &cfg, false).unwrap();
        assert!(out.metrics.speed.is_none());
        assert!(out.metrics.width.is_none());
        assert_eq!(out.trajectory.times.len(), 3);
    }
}
