//! Full-batch gradient descent on the all-threshold smooth hinge objective
//!
//! ```text
//! J(U, V, Θ) = Σ_{r=1}^{R-1} Σ_{(i,j)∈Ω} h(T^r_ij (θ_{i,r} - U_i·V_j)) + λ/2 (‖U‖² + ‖V‖²)
//! ```
//!
//! Per-user and per-item terms are reduced in a fixed order, so the parallel
//! and sequential paths produce bitwise identical results.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{smooth_hinge, smooth_hinge_grad, t_indicator};
use crate::matrix::SparseRatingMatrix;
use crate::model::{dot, FactorModel, Hyperparams};

/// Learning rate is doubled back toward its initial value after this many
/// accepted steps.
const RESTORE_EVERY: usize = 10;
/// Halvings tried within one step before the solve is declared stalled.
const MAX_HALVINGS: usize = 60;

/// Observed cells in both user-major and item-major order.
pub(crate) struct Observations {
    max_rating: u8,
    user_ptr: Vec<usize>,
    items: Vec<u32>,
    ratings: Vec<u8>,
    item_ptr: Vec<usize>,
    col_users: Vec<u32>,
    /// Position of each item-major entry in the user-major arrays.
    col_pos: Vec<usize>,
}

impl Observations {
    pub(crate) fn new(y: &SparseRatingMatrix) -> Self {
        let nnz = y.len();
        let mut user_ptr = Vec::with_capacity(y.n_users() + 1);
        let mut items = Vec::with_capacity(nnz);
        let mut ratings = Vec::with_capacity(nnz);
        user_ptr.push(0);
        for i in 0..y.n_users() {
            for &(j, r) in y.user_row(i) {
                items.push(j);
                ratings.push(r);
            }
            user_ptr.push(items.len());
        }

        let mut item_ptr = vec![0usize; y.n_items() + 1];
        for &j in &items {
            item_ptr[j as usize + 1] += 1;
        }
        for j in 0..y.n_items() {
            item_ptr[j + 1] += item_ptr[j];
        }
        let mut fill = item_ptr.clone();
        let mut col_users = vec![0u32; nnz];
        let mut col_pos = vec![0usize; nnz];
        for i in 0..y.n_users() {
            for k in user_ptr[i]..user_ptr[i + 1] {
                let j = items[k] as usize;
                col_users[fill[j]] = i as u32;
                col_pos[fill[j]] = k;
                fill[j] += 1;
            }
        }
        Observations {
            max_rating: y.max_rating(),
            user_ptr,
            items,
            ratings,
            item_ptr,
            col_users,
            col_pos,
        }
    }

    fn n_users(&self) -> usize {
        self.user_ptr.len() - 1
    }

    fn n_items(&self) -> usize {
        self.item_ptr.len() - 1
    }
}

fn map_indices<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

fn sum_squares(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |acc, v| acc + v * v)
}

fn objective_with(model: &FactorModel, obs: &Observations, lambda: f64, parallel: bool) -> f64 {
    let levels = obs.max_rating;
    let per_user = map_indices(obs.n_users(), parallel, |i| {
        let theta = model.threshold_row(i);
        let u = model.users.row(i);
        let mut loss = 0.0;
        for k in obs.user_ptr[i]..obs.user_ptr[i + 1] {
            let x = dot(u, model.items.row(obs.items[k] as usize));
            let y = obs.ratings[k];
            for r in 1..levels {
                let t = t_indicator(r, y);
                loss += smooth_hinge(t * (theta[r as usize - 1] - x));
            }
        }
        loss
    });
    let hinge: f64 = per_user.iter().sum();
    hinge + 0.5 * lambda * (sum_squares(&model.users) + sum_squares(&model.items))
}

/// Partial derivatives of the objective with respect to `U`, `V` and `Θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub users: Array2<f64>,
    pub items: Array2<f64>,
    pub thresholds: Array2<f64>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.users
            .iter()
            .chain(self.items.iter())
            .chain(self.thresholds.iter())
            .all(|v| v.is_finite())
    }

    /// Squared Frobenius norm over all three blocks.
    pub fn norm_sq(&self) -> f64 {
        sum_squares(&self.users) + sum_squares(&self.items) + sum_squares(&self.thresholds)
    }
}

fn gradients_with(model: &FactorModel, obs: &Observations, lambda: f64, parallel: bool) -> Gradients {
    let levels = obs.max_rating;
    let dim = model.dim();

    // Per user: dJ/dU_i, dJ/dθ_i and the per-entry coefficient
    // G_ij = Σ_r T^r_ij h'(T^r_ij (θ_{i,r} - x_ij)), with dJ/dx_ij = -G_ij.
    let per_user = map_indices(obs.n_users(), parallel, |i| {
        let theta = model.threshold_row(i);
        let u = model.users.row(i);
        let start = obs.user_ptr[i];
        let end = obs.user_ptr[i + 1];
        let mut coefs = Vec::with_capacity(end - start);
        let mut g_theta = vec![0.0; theta.len()];
        let mut g_u: Vec<f64> = u.iter().map(|v| lambda * v).collect();
        for k in start..end {
            let v = model.items.row(obs.items[k] as usize);
            let x = dot(u, v);
            let y = obs.ratings[k];
            let mut coef = 0.0;
            for r in 1..levels {
                let t = t_indicator(r, y);
                let g = t * smooth_hinge_grad(t * (theta[r as usize - 1] - x));
                g_theta[r as usize - 1] += g;
                coef += g;
            }
            for (gp, vp) in g_u.iter_mut().zip(v.iter()) {
                *gp -= coef * vp;
            }
            coefs.push(coef);
        }
        (g_u, g_theta, coefs)
    });

    let mut users = Array2::zeros((obs.n_users(), dim));
    let mut thresholds = Array2::zeros((obs.n_users(), levels as usize - 1));
    let mut coefs = Vec::with_capacity(obs.items.len());
    for (i, (g_u, g_theta, c)) in per_user.into_iter().enumerate() {
        users.row_mut(i).assign(&ndarray::ArrayView1::from(&g_u));
        thresholds.row_mut(i).assign(&ndarray::ArrayView1::from(&g_theta));
        coefs.extend(c);
    }

    let per_item = map_indices(obs.n_items(), parallel, |j| {
        let mut g_v: Vec<f64> = model.items.row(j).iter().map(|v| lambda * v).collect();
        for k in obs.item_ptr[j]..obs.item_ptr[j + 1] {
            let coef = coefs[obs.col_pos[k]];
            let u = model.users.row(obs.col_users[k] as usize);
            for (gp, up) in g_v.iter_mut().zip(u.iter()) {
                *gp -= coef * up;
            }
        }
        g_v
    });
    let mut items = Array2::zeros((obs.n_items(), dim));
    for (mut row, g) in items.axis_iter_mut(Axis(0)).zip(per_item) {
        row.assign(&ndarray::ArrayView1::from(&g));
    }

    Gradients {
        users,
        items,
        thresholds,
    }
}

/// Value of the objective at `model` over the observed cells of `y`.
pub fn objective(model: &FactorModel, y: &SparseRatingMatrix, lambda: f64) -> Result<f64> {
    model.check_matches(y)?;
    Ok(objective_with(model, &Observations::new(y), lambda, false))
}

/// Analytic gradients of [`objective`].
pub fn compute_gradients(model: &FactorModel, y: &SparseRatingMatrix, lambda: f64) -> Result<Gradients> {
    model.check_matches(y)?;
    Ok(gradients_with(model, &Observations::new(y), lambda, false))
}

/// One descent step `W <- W - c ∇W` on all three blocks.
pub fn gd_step(model: &FactorModel, grads: &Gradients, learning_rate: f64) -> Result<FactorModel> {
    if !grads.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            reason: "non-finite gradient".into(),
        });
    }
    if grads.users.dim() != model.users.dim()
        || grads.items.dim() != model.items.dim()
        || grads.thresholds.dim() != model.thresholds.dim()
    {
        return Err(Error::ShapeMismatch("gradient blocks do not match the model".into()));
    }
    Ok(FactorModel {
        users: &model.users - &(&grads.users * learning_rate),
        items: &model.items - &(&grads.items * learning_rate),
        thresholds: &model.thresholds - &(&grads.thresholds * learning_rate),
    })
}

/// Diagnostics of one solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Objective before the first step and after every accepted step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Adjacent threshold pairs out of order in the returned model.
    pub threshold_violations: usize,
    pub final_learning_rate: f64,
}

/// Fits a model to `y` with `dim` latent factors.
///
/// Each step halves the learning rate until the objective does not increase,
/// so the recorded objective sequence is non-increasing. The rate is doubled
/// back (up to its initial value) every few accepted steps.
pub fn train(y: &SparseRatingMatrix, hp: &Hyperparams, dim: usize) -> Result<(FactorModel, TrainTrace)> {
    hp.validate()?;
    if y.is_empty() {
        return Err(Error::Empty("training matrix has no observed entries"));
    }
    if dim == 0 {
        return Err(Error::InvalidConfig("latent dimension must be >= 1".into()));
    }
    let obs = Observations::new(y);
    let mut model = FactorModel::init(y.n_users(), y.n_items(), dim, y.max_rating(), hp.seed);
    let mut current = objective_with(&model, &obs, hp.lambda, hp.parallel);
    if !current.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            reason: format!("initial objective is {current}"),
        });
    }

    let mut trace = TrainTrace {
        objective: vec![current],
        iterations: 0,
        converged: false,
        threshold_violations: 0,
        final_learning_rate: hp.learning_rate,
    };
    let mut rate = hp.learning_rate;

    for step in 1..=hp.max_steps {
        let grads = gradients_with(&model, &obs, hp.lambda, hp.parallel);
        if !grads.is_finite() {
            return Err(Error::Divergence {
                step,
                reason: "non-finite gradient".into(),
            });
        }
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate = gd_step(&model, &grads, rate)?;
            let value = objective_with(&candidate, &obs, hp.lambda, hp.parallel);
            if value.is_finite() && value <= current {
                accepted = Some((candidate, value));
                break;
            }
            rate *= 0.5;
        }
        let Some((next, value)) = accepted else {
            // No step size decreases the objective: a stationary point.
            trace.converged = true;
            break;
        };
        let decrease = (current - value) / current.max(1.0);
        model = next;
        current = value;
        trace.objective.push(value);
        trace.iterations = step;
        if step % RESTORE_EVERY == 0 {
            rate = (rate * 2.0).min(hp.learning_rate);
        }
        if decrease < hp.tol {
            trace.converged = true;
            break;
        }
    }

    trace.threshold_violations = model.threshold_order_violations();
    trace.final_learning_rate = rate;
    Ok((model, trace))
}

/// Dense completion: observed cells keep their rating, the rest are
/// discretized predictions.
pub fn complete_matrix(model: &FactorModel, y: &SparseRatingMatrix) -> Result<Array2<u8>> {
    model.check_matches(y)?;
    let mut out = predict_all(model);
    for r in y.iter() {
        out[[r.user, r.item]] = r.value;
    }
    Ok(out)
}

/// Discretized prediction for every cell.
pub fn predict_all(model: &FactorModel) -> Array2<u8> {
    Array2::from_shape_fn((model.n_users(), model.n_items()), |(i, j)| model.predict_rating(i, j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Rating;
    use ndarray::array;

    fn one_by_one(rating: u8, max_rating: u8) -> SparseRatingMatrix {
        SparseRatingMatrix::from_ratings(1, 1, max_rating, [Rating::new(0, 0, rating)]).unwrap()
    }

    #[test]
    fn objective_hand_values() {
        let y = one_by_one(1, 2);
        let m = FactorModel::new(array![[1.0]], array![[1.0]], array![[0.0]]).unwrap();
        assert!((objective(&m, &y, 0.1).unwrap() - 1.6).abs() < 1e-12);
        let z = FactorModel::new(array![[0.0]], array![[0.0]], array![[0.0]]).unwrap();
        assert!((objective(&z, &y, 3.7).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn objective_of_empty_matrix_is_zero() {
        let y = SparseRatingMatrix::new(2, 2, 3).unwrap();
        let m = FactorModel::new(Array2::zeros((2, 1)), Array2::zeros((2, 1)), Array2::zeros((2, 2))).unwrap();
        assert_eq!(objective(&m, &y, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn threshold_gradient_hand_value() {
        let y = one_by_one(1, 2);
        let z = FactorModel::new(array![[0.0]], array![[0.0]], array![[0.0]]).unwrap();
        let g = compute_gradients(&z, &y, 0.0).unwrap();
        assert_eq!(g.thresholds[[0, 0]], -1.0);
        assert_eq!(g.users[[0, 0]], 0.0);
        assert_eq!(g.items[[0, 0]], 0.0);
    }

    #[test]
    fn flat_region_has_zero_gradient() {
        // y=1 wants x <= θ_r - 1 for every r; x = -3 clears θ = [0, 1] by a margin.
        let y = one_by_one(1, 3);
        let m = FactorModel::new(array![[1.0]], array![[-3.0]], array![[0.0, 1.0]]).unwrap();
        let g = compute_gradients(&m, &y, 0.0).unwrap();
        assert_eq!(g.norm_sq(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let y = SparseRatingMatrix::new(2, 2, 3).unwrap();
        let m = FactorModel::init(3, 2, 1, 3, 0);
        assert!(matches!(objective(&m, &y, 1.0), Err(Error::ShapeMismatch(_))));
        assert!(compute_gradients(&m, &y, 1.0).is_err());
    }

    #[test]
    fn step_arithmetic() {
        let m = FactorModel::new(array![[2.0]], array![[1.0]], array![[0.0]]).unwrap();
        let g = Gradients {
            users: array![[1.0]],
            items: array![[0.0]],
            thresholds: array![[0.0]],
        };
        let next = gd_step(&m, &g, 0.5).unwrap();
        assert_eq!(next.users[[0, 0]], 1.5);
        let zero = Gradients {
            users: array![[0.0]],
            items: array![[0.0]],
            thresholds: array![[0.0]],
        };
        assert_eq!(gd_step(&m, &zero, 0.5).unwrap(), m);
        let bad = Gradients {
            users: array![[f64::NAN]],
            ..zero
        };
        assert!(matches!(gd_step(&m, &bad, 0.5), Err(Error::Divergence { .. })));
    }

    #[test]
    fn train_rejects_empty_matrix() {
        let y = SparseRatingMatrix::new(2, 2, 5).unwrap();
        assert!(matches!(train(&y, &Hyperparams::default(), 2), Err(Error::Empty(_))));
    }

    #[test]
    fn zero_budget_returns_initial_model() {
        let y = one_by_one(2, 3);
        let hp = Hyperparams {
            max_steps: 0,
            ..Hyperparams::default()
        };
        let (m, trace) = train(&y, &hp, 2).unwrap();
        assert_eq!(m, FactorModel::init(1, 1, 2, 3, hp.seed));
        assert_eq!(trace.objective.len(), 1);
        assert_eq!(trace.iterations, 0);
    }

    #[test]
    fn complete_keeps_observed_cells() {
        let y = SparseRatingMatrix::from_ratings(1, 2, 5, [Rating::new(0, 0, 4)]).unwrap();
        let m = FactorModel::new(array![[1.0]], array![[0.0], [3.0]], array![[1.5, 2.5, 3.5, 4.5]]).unwrap();
        let full = complete_matrix(&m, &y).unwrap();
        assert_eq!(full[[0, 0]], 4);
        assert_eq!(full[[0, 1]], 3);
    }

    #[test]
    fn zero_model_completion_uses_half_open_intervals() {
        // Score 0 lies in (-1, 0], the second interval.
        let y = SparseRatingMatrix::new(2, 3, 5).unwrap();
        let m = FactorModel::new(
            Array2::zeros((2, 2)),
            Array2::zeros((3, 2)),
            array![[-1.0, 0.0, 1.0, 2.0], [-1.0, 0.0, 1.0, 2.0]],
        )
        .unwrap();
        let full = complete_matrix(&m, &y).unwrap();
        assert!(full.iter().all(|&r| r == 2));
    }
}
