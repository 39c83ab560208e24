//! Newton's method on banded systems with row equilibration and an optional
//! chord variant that keeps a factorization while it contracts well.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{BandedLu, BandedMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iters: usize,
    /// Failure once the residual exceeds this multiple of the initial one.
    pub divergence: f64,
    /// Per-field relative update below which the iteration counts as converged.
    pub update_tol: f64,
    /// Reuse the factorization across iterations and steps.
    pub chord: bool,
    /// Chord refactorization threshold on the residual contraction ratio.
    pub chord_ratio: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-13,
            max_iters: 25,
            divergence: 1e4,
            update_tol: 1e-10,
            chord: false,
            chord_ratio: 0.5,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.update_tol > 0.0) {
            return Err(Error::Config("Newton tolerances must be positive".into()));
        }
        if self.max_iters == 0 || !(self.divergence > 1.0) {
            return Err(Error::Config(
                "Newton needs max_iters > 0 and a divergence factor > 1".into(),
            ));
        }
        if !(self.chord_ratio > 0.0 && self.chord_ratio < 1.0) {
            return Err(Error::Config("chord ratio must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// F(u) = 0 with a banded Jacobian.
pub trait NonlinearSystem {
    fn dim(&self) -> usize;
    fn new_matrix(&self) -> BandedMatrix;
    fn residual(&self, u: &[f64], r: &mut [f64]) -> Result<()>;
    /// Residual and Jacobian at u.
    fn jacobian(&self, u: &[f64], r: &mut [f64], j: &mut BandedMatrix) -> Result<()>;
    /// Whether the last update is negligible relative to u.
    fn update_small(&self, _u: &[f64], _du: &[f64], _tol: f64) -> bool {
        false
    }
}

/// Factorization kept between solves, with the row scaling it was built with.
#[derive(Debug, Default)]
pub struct NewtonCache {
    lu: Option<BandedLu>,
    scale: Vec<f64>,
    key: Option<[u64; 4]>,
    pub factorizations: usize,
}

impl NewtonCache {
    pub fn invalidate(&mut self) {
        self.lu = None;
        self.key = None;
    }

    /// Drops the factorization if it was built for a different system key.
    pub fn check_key(&mut self, key: [f64; 4]) {
        let k = key.map(f64::to_bits);
        if self.key != Some(k) {
            self.lu = None;
            self.key = Some(k);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub jacobians: usize,
    /// Wall time spent assembling residuals and Jacobians, in seconds.
    pub t_assembly: f64,
    /// Wall time spent in factorizations and triangular solves, in seconds.
    pub t_lu: f64,
}

fn scaled_norm(r: &[f64], s: &[f64]) -> f64 {
    r.iter().zip(s).map(|(a, b)| (a * b) * (a * b)).sum::<f64>().sqrt()
}

fn refresh(
    sys: &impl NonlinearSystem,
    u: &[f64],
    r: &mut [f64],
    cache: &mut NewtonCache,
    report: &mut NewtonReport,
) -> Result<()> {
    let clock = Instant::now();
    let mut j = sys.new_matrix();
    sys.jacobian(u, r, &mut j)?;
    report.t_assembly += clock.elapsed().as_secs_f64();
    report.jacobians += 1;
    let n = sys.dim();
    cache.scale.resize(n, 1.0);
    for i in 0..n {
        let m = j.row_max_abs(i);
        if m == 0.0 {
            // structurally empty row: hold the unknown fixed
            j.set_identity_row(i);
            r[i] = 0.0;
            cache.scale[i] = 1.0;
        } else {
            cache.scale[i] = 1.0 / m;
            j.scale_row(i, 1.0 / m);
        }
    }
    let clock = Instant::now();
    cache.lu = Some(j.factorize()?);
    report.t_lu += clock.elapsed().as_secs_f64();
    cache.factorizations += 1;
    Ok(())
}

/// Solves F(u) = 0 in place starting from the given u.
pub fn newton_solve(
    sys: &impl NonlinearSystem,
    u: &mut [f64],
    cfg: &NewtonConfig,
    cache: &mut NewtonCache,
) -> Result<NewtonReport> {
    let n = sys.dim();
    let mut r = vec![0.0; n];
    let mut report = NewtonReport::default();
    let fail = |reason: String, report: &NewtonReport| Error::NewtonFailure {
        reason,
        iterations: report.iterations,
        history: report.residuals.clone(),
    };
    let mut fresh = false;
    if cfg.chord && cache.lu.is_some() {
        let clock = Instant::now();
        sys.residual(u, &mut r)?;
        report.t_assembly += clock.elapsed().as_secs_f64();
    } else {
        refresh(sys, u, &mut r, cache, &mut report)?;
        fresh = true;
    }
    let r0 = r.clone();
    let mut ref_norm = scaled_norm(&r0, &cache.scale);
    let mut norm = ref_norm;
    report.residuals.push(norm);
    let mut du = vec![0.0; n];
    loop {
        if norm <= cfg.abs_tol + cfg.rel_tol * ref_norm {
            return Ok(report);
        }
        if report.iterations >= cfg.max_iters {
            return Err(fail("maximum iterations reached".into(), &report));
        }
        for i in 0..n {
            du[i] = r[i] * cache.scale[i];
        }
        let clock = Instant::now();
        cache.lu.as_ref().expect("factorization present").solve_in_place(&mut du);
        report.t_lu += clock.elapsed().as_secs_f64();
        if du.iter().any(|v| !v.is_finite()) {
            return Err(fail("non-finite Newton update".into(), &report));
        }
        for i in 0..n {
            u[i] -= du[i];
        }
        report.iterations += 1;
        let prev = norm;
        let clock = Instant::now();
        let eval = sys.residual(u, &mut r);
        report.t_assembly += clock.elapsed().as_secs_f64();
        if let Err(e) = eval {
            if fresh {
                return Err(e);
            }
            return Err(fail(format!("residual evaluation failed with a stale Jacobian: {e}"), &report));
        }
        norm = scaled_norm(&r, &cache.scale);
        report.residuals.push(norm);
        if !norm.is_finite() {
            return Err(fail("non-finite residual".into(), &report));
        }
        if norm <= cfg.abs_tol + cfg.rel_tol * ref_norm
            || (sys.update_small(u, &du, cfg.update_tol) && norm <= prev)
        {
            return Ok(report);
        }
        if fresh && norm > cfg.divergence * ref_norm.max(cfg.abs_tol) {
            return Err(fail(format!("residual grew to {norm:.3e}"), &report));
        }
        if !cfg.chord || norm > cfg.chord_ratio * prev {
            refresh(sys, u, &mut r, cache, &mut report)?;
            fresh = true;
            ref_norm = scaled_norm(&r0, &cache.scale);
            norm = scaled_norm(&r, &cache.scale);
        } else {
            fresh = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tridiagonal test system: A u + c u^3 = b.
    struct Cubic {
        n: usize,
        c: f64,
        b: Vec<f64>,
    }

    impl NonlinearSystem for Cubic {
        fn dim(&self) -> usize {
            self.n
        }
        fn new_matrix(&self) -> BandedMatrix {
            BandedMatrix::new(self.n, 1, 1)
        }
        fn residual(&self, u: &[f64], r: &mut [f64]) -> Result<()> {
            for i in 0..self.n {
                let mut a = 2.0 * u[i];
                if i > 0 {
                    a -= u[i - 1];
                }
                if i + 1 < self.n {
                    a -= u[i + 1];
                }
                r[i] = a + self.c * u[i].powi(3) - self.b[i];
            }
            Ok(())
        }
        fn jacobian(&self, u: &[f64], r: &mut [f64], j: &mut BandedMatrix) -> Result<()> {
            self.residual(u, r)?;
            for i in 0..self.n {
                j.set(i, i, 2.0 + 3.0 * self.c * u[i] * u[i]);
                if i > 0 {
                    j.set(i, i - 1, -1.0);
                }
                if i + 1 < self.n {
                    j.set(i, i + 1, -1.0);
                }
            }
            Ok(())
        }
    }

    #[test]
    fn linear_problem_takes_one_iteration() {
        let sys = Cubic {
            n: 6,
            c: 0.0,
            b: vec![1.0; 6],
        };
        let mut u = vec![0.0; 6];
        let rep = newton_solve(&sys, &mut u, &NewtonConfig::default(), &mut NewtonCache::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        let mut r = vec![0.0; 6];
        sys.residual(&u, &mut r).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn quadratic_convergence() {
        let sys = Cubic {
            n: 8,
            c: 3.0,
            b: vec![2.0; 8],
        };
        let mut u = vec![0.0; 8];
        let cfg = NewtonConfig {
            rel_tol: 1e-15,
            abs_tol: 1e-300,
            ..Default::default()
        };
        let rep = newton_solve(&sys, &mut u, &cfg, &mut NewtonCache::default());
        let rep = match rep {
            Ok(r) => r,
            Err(Error::NewtonFailure { history, .. }) => NewtonReport {
                residuals: history,
                ..Default::default()
            },
            Err(e) => panic!("{e}"),
        };
        let h = &rep.residuals;
        // find two consecutive steps in the asymptotic regime
        let mut seen = false;
        for w in h.windows(3) {
            if w[1] < 1e-3 && w[2] > 1e-14 {
                let p = (w[2].ln() - w[1].ln()) / (w[1].ln() - w[0].ln());
                assert!(p > 1.6, "order {p}, history {h:?}");
                seen = true;
            }
        }
        assert!(seen, "{h:?}");
    }

    #[test]
    fn chord_reuses_factorization() {
        let sys = Cubic {
            n: 8,
            c: 0.1,
            b: vec![1.0; 8],
        };
        let cfg = NewtonConfig {
            chord: true,
            ..Default::default()
        };
        let mut cache = NewtonCache::default();
        let mut u = vec![0.0; 8];
        newton_solve(&sys, &mut u, &cfg, &mut cache).unwrap();
        let first = cache.factorizations;
        let sys2 = Cubic {
            b: vec![1.001; 8],
            ..sys
        };
        newton_solve(&sys2, &mut u, &cfg, &mut cache).unwrap();
        assert_eq!(cache.factorizations, first);
        let mut r = vec![0.0; 8];
        sys2.residual(&u, &mut r).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn divergence_reported_with_history() {
        // residual with a spurious Jacobian sign so Newton runs away
        struct Bad;
        impl NonlinearSystem for Bad {
            fn dim(&self) -> usize {
                1
            }
            fn new_matrix(&self) -> BandedMatrix {
                BandedMatrix::new(1, 0, 0)
            }
            fn residual(&self, u: &[f64], r: &mut [f64]) -> Result<()> {
                r[0] = u[0] - 1.0;
                Ok(())
            }
            fn jacobian(&self, u: &[f64], r: &mut [f64], j: &mut BandedMatrix) -> Result<()> {
                self.residual(u, r)?;
                j.set(0, 0, -0.5);
                Ok(())
            }
        }
        let e = newton_solve(&Bad, &mut [0.0], &NewtonConfig::default(), &mut NewtonCache::default())
            .unwrap_err();
        match e {
            Error::NewtonFailure { history, .. } => assert!(history.len() >= 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(NewtonConfig::default().validate().is_ok());
        let bad = NewtonConfig {
            rel_tol: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
