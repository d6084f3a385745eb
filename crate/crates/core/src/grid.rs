//! Hyperparameter sweeps over λ, τ₁ and the sampling percentage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::matrix::SparseRatingMatrix;
use crate::selftrain::{selftrain_loop, SelfTrainConfig};

/// `10^(i/16)` for `i = 1, 5, 9, ..., 37`.
pub fn lambda_grid() -> Vec<f64> {
    (1..=40).step_by(4).map(|i| 10f64.powf(i as f64 / 16.0)).collect()
}

/// Sampling percentages `10, 20, ..., 100`.
pub fn sample_grid() -> Vec<f64> {
    (1..=10).map(|k| 10.0 * k as f64).collect()
}

/// τ₁ in percent: `5, 10, ..., 45, 49.99`.
pub fn tau1_grid_percent() -> Vec<f64> {
    let mut g: Vec<f64> = (1..=9).map(|k| 5.0 * k as f64).collect();
    g.push(49.99);
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda: f64,
    /// Fraction, not percent.
    pub tau1: f64,
    pub sample_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub lambda: f64,
    pub tau1: f64,
    pub s: f64,
    pub mae: f64,
    pub rmse: f64,
}

/// Cartesian product in `(λ, τ₁, s)` order.
pub fn cells(lambdas: &[f64], tau1s: &[f64], samples: &[f64]) -> Vec<GridCell> {
    let mut out = Vec::with_capacity(lambdas.len() * tau1s.len() * samples.len());
    for &lambda in lambdas {
        for &tau1 in tau1s {
            for &sample_pct in samples {
                out.push(GridCell {
                    lambda,
                    tau1,
                    sample_pct,
                });
            }
        }
    }
    out
}

/// Share of the training matrix held out for validation in every run.
pub const HOLDOUT_FRAC: f64 = 0.1;

fn run_cell(train: &SparseRatingMatrix, base: &SelfTrainConfig, cell: &GridCell, runs: usize) -> Result<GridResult> {
    let mut mae = 0.0;
    let mut rmse = 0.0;
    for run in 0..runs {
        let seed = base.seed.wrapping_add(run as u64);
        let (fit, holdout) = eval::split(train, 1.0 - HOLDOUT_FRAC, seed)?;
        let cfg = SelfTrainConfig {
            lambda: cell.lambda,
            tau1: cell.tau1,
            sample_pct: cell.sample_pct,
            seed,
            ..base.clone()
        };
        let outcome = selftrain_loop(&fit, &cfg, &holdout)?;
        let model = outcome
            .model
            .ok_or_else(|| Error::InvalidConfig(format!("no iteration completed ({:?})", outcome.stop)))?;
        let (snap, _) = eval::evaluate(&model, &fit, &holdout)?
            .ok_or(Error::Empty("validation split is empty"))?;
        mae += snap.mae;
        rmse += snap.rmse;
    }
    Ok(GridResult {
        lambda: cell.lambda,
        tau1: cell.tau1,
        s: cell.sample_pct,
        mae: mae / runs as f64,
        rmse: rmse / runs as f64,
    })
}

/// Evaluates every cell, averaging `runs` seeds per cell on a validation
/// split carved from `train`. Results come back in cell order whatever order
/// the workers finish in.
pub fn run_grid(
    train: &SparseRatingMatrix,
    base: &SelfTrainConfig,
    grid: &[GridCell],
    runs: usize,
) -> Vec<Result<GridResult>> {
    if runs == 0 {
        return grid
            .iter()
            .map(|_| Err(Error::InvalidConfig("runs must be >= 1".into())))
            .collect();
    }
    grid.par_iter().map(|cell| run_cell(train, base, cell, runs)).collect()
}

/// Row with the smallest MAE.
pub fn best(results: &[GridResult]) -> Option<&GridResult> {
    results.iter().min_by(|a, b| a.mae.total_cmp(&b.mae))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_grid_has_ten_values() {
        let g = lambda_grid();
        assert_eq!(g.len(), 10);
        assert!((g[0] - 10f64.powf(1.0 / 16.0)).abs() < 1e-12);
        assert!((g[9] - 10f64.powf(37.0 / 16.0)).abs() < 1e-9);
    }

    #[test]
    fn other_grids() {
        assert_eq!(sample_grid().len(), 10);
        assert_eq!(sample_grid()[9], 100.0);
        let t = tau1_grid_percent();
        assert_eq!(t.len(), 10);
        assert_eq!(t[8], 45.0);
        assert_eq!(t[9], 49.99);
    }

    #[test]
    fn cells_are_in_grid_order() {
        let c = cells(&[1.0, 2.0], &[0.3], &[10.0, 20.0]);
        let order: Vec<(f64, f64)> = c.iter().map(|c| (c.lambda, c.sample_pct)).collect();
        assert_eq!(order, vec![(1.0, 10.0), (1.0, 20.0), (2.0, 10.0), (2.0, 20.0)]);
    }
}
