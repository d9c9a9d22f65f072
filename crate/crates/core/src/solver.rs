//! Damped Newton-Raphson over the free entries of a canonical basis.
//!
//! The Jacobian is taken by central differences. Attempts that stall or
//! blow up restart from the original start plus Gaussian jitter; the best
//! iterate seen across all attempts is returned.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::error::{Error, Result};
use crate::estimating::{MomentDiagnostics, MomentValue};
use crate::rng::RngStream;

/// Norm growth (relative to the starting norm) treated as divergence.
const DIVERGENCE_FACTOR: f64 = 1e6;
const PINV_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Target moment norm; `None` means `1e-4·√(free parameters)`.
    pub tolerance: Option<f64>,
    pub step_damping: f64,
    /// Relative central-difference step, scaled by `1 + |entry|`.
    pub fd_step: f64,
    pub restarts: usize,
    pub jitter_scale: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: None,
            step_damping: 0.5,
            fd_step: 1e-4,
            restarts: 5,
            jitter_scale: 0.1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if let Some(t) = self.tolerance {
            if !(t > 0.0) {
                return Err(Error::InvalidConfig("tolerance must be positive".into()));
            }
        }
        if !(self.step_damping > 0.0 && self.step_damping <= 1.0) {
            return Err(Error::InvalidConfig("step_damping must lie in (0, 1]".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::InvalidConfig("fd_step must be positive".into()));
        }
        if !(self.jitter_scale > 0.0) {
            return Err(Error::InvalidConfig("jitter_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn tolerance_for(&self, n_free: usize) -> f64 {
        self.tolerance
            .unwrap_or_else(|| 1e-4 * (n_free as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub beta_hat: Basis,
    pub converged: bool,
    /// Newton updates in the attempt that produced `beta_hat`.
    pub iterations: usize,
    pub final_norm: f64,
    /// 0 for the original start, `k` for the k-th restart.
    pub restart_index: usize,
    /// Steps that fell back to the pseudo-inverse.
    pub singular_jacobians: usize,
    pub moment_evaluations: usize,
    /// Diagnostics of the moment evaluation at `beta_hat`.
    pub diagnostics: MomentDiagnostics,
}

/// Central-difference Jacobian of the moment vector with respect to the free entries.
pub fn numeric_jacobian<F>(moment_fn: &F, beta: &Basis, fd_step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&Basis) -> Result<MomentValue> + Sync,
{
    if !(fd_step > 0.0) {
        return Err(Error::InvalidConfig("fd_step must be positive".into()));
    }
    let x = beta.free_params();
    let m = x.len();
    let columns: Vec<Result<DVector<f64>>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let h = fd_step * (1.0 + x[j].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fp = moment_fn(&beta.with_free(&xp)?)?.vector;
            let fm = moment_fn(&beta.with_free(&xm)?)?.vector;
            let col = (fp - fm) / (2.0 * h);
            if col.iter().all(|v| v.is_finite()) {
                Ok(col)
            } else {
                Err(Error::NonFiniteEntry(format!("jacobian column {j}")))
            }
        })
        .collect();
    let columns = columns.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = columns.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(rows, m, |i, j| columns[j][i]))
}

/// Solves `J δ = m`; falls back to the pseudo-inverse when `J` is singular.
fn newton_direction(jac: DMatrix<f64>, moment: &DVector<f64>) -> (DVector<f64>, bool) {
    if jac.is_square() {
        let svd_min_ratio = {
            let sv = jac.singular_values();
            let max = sv.max();
            if max > 0.0 { sv.min() / max } else { 0.0 }
        };
        if svd_min_ratio > PINV_RCOND {
            if let Some(step) = jac.clone().lu().solve(moment) {
                if step.iter().all(|v| v.is_finite()) {
                    return (step, false);
                }
            }
        }
    }
    let svd = jac.svd(true, true);
    let max = svd.singular_values.max();
    let step = svd
        .solve(moment, PINV_RCOND * max.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DVector::zeros(moment.len()));
    (step, true)
}

struct Best {
    basis: Basis,
    norm: f64,
    iterations: usize,
    restart_index: usize,
    diagnostics: MomentDiagnostics,
}

/// Damped Newton-Raphson with restarts; returns the best-norm iterate.
pub fn solve<F>(moment_fn: F, start: &Basis, cfg: &SolverConfig, rng: &mut RngStream) -> Result<SolveResult>
where
    F: Fn(&Basis) -> Result<MomentValue> + Sync,
{
    cfg.validate()?;
    let tol = cfg.tolerance_for(start.n_free());
    let first = moment_fn(start)?;
    let start_norm = first.norm();
    let mut evaluations = 1;
    let mut singular = 0;
    let mut best = Best {
        basis: start.clone(),
        norm: start_norm,
        iterations: 0,
        restart_index: 0,
        diagnostics: first.diagnostics,
    };
    let limit = DIVERGENCE_FACTOR * start_norm.max(1.0);

    for attempt in 0..=cfg.restarts {
        if best.norm <= tol {
            break;
        }
        let (mut x, mut current) = if attempt == 0 {
            (start.clone(), first.clone())
        } else {
            let jittered: Vec<f64> = start
                .free_params()
                .iter()
                .map(|v| v + cfg.jitter_scale * rng.standard_normal())
                .collect();
            let x = start.with_free(&jittered)?;
            evaluations += 1;
            match moment_fn(&x) {
                Ok(m) => (x, m),
                Err(_) => continue,
            }
        };

        for iter in 0..cfg.max_iterations {
            let norm = current.norm();
            if norm < best.norm {
                best = Best {
                    basis: x.clone(),
                    norm,
                    iterations: iter,
                    restart_index: attempt,
                    diagnostics: current.diagnostics,
                };
            }
            if norm <= tol || !norm.is_finite() || norm > limit {
                break;
            }
            let jac = match numeric_jacobian(&moment_fn, &x, cfg.fd_step) {
                Ok(j) => j,
                Err(_) => break,
            };
            evaluations += 2 * x.n_free();
            let (step, pinv) = newton_direction(jac, &current.vector);
            singular += usize::from(pinv);
            let next: Vec<f64> = x
                .free_params()
                .iter()
                .zip(step.iter())
                .map(|(v, s)| v - cfg.step_damping * s)
                .collect();
            let Ok(candidate) = x.with_free(&next) else { break };
            evaluations += 1;
            match moment_fn(&candidate) {
                Ok(m) => {
                    x = candidate;
                    current = m;
                }
                Err(_) => break,
            }
            if iter + 1 == cfg.max_iterations {
                let norm = current.norm();
                if norm < best.norm {
                    best = Best {
                        basis: x.clone(),
                        norm,
                        iterations: iter + 1,
                        restart_index: attempt,
                        diagnostics: current.diagnostics,
                    };
                }
            }
        }
    }

    Ok(SolveResult {
        converged: best.norm <= tol,
        beta_hat: best.basis,
        iterations: best.iterations,
        final_norm: best.norm,
        restart_index: best.restart_index,
        singular_jacobians: singular,
        moment_evaluations: evaluations,
        diagnostics: best.diagnostics,
    })
}
