//! Biased matrix factorization trained by SGD on squared error
//! (`y ≈ μ + b_u + b_i + P_u·Q_i`), used to measure how a non-MMMF learner
//! responds to the augmented training matrices.

use ndarray::{Array1, Array2};
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::MetricsSnapshot;
use crate::matrix::{Rating, SparseRatingMatrix};
use crate::model::dot;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub factors: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            factors: 20,
            lambda: 0.05,
            epochs: 30,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineModel {
    pub global_mean: f64,
    pub user_bias: Array1<f64>,
    pub item_bias: Array1<f64>,
    pub user_factors: Array2<f64>,
    pub item_factors: Array2<f64>,
    user_known: Vec<bool>,
    item_known: Vec<bool>,
    max_rating: u8,
}

impl BaselineModel {
    fn raw(&self, user: usize, item: usize) -> f64 {
        let mut s = self.global_mean;
        let u = self.user_known.get(user).copied().unwrap_or(false);
        let i = self.item_known.get(item).copied().unwrap_or(false);
        if u {
            s += self.user_bias[user];
        }
        if i {
            s += self.item_bias[item];
        }
        if u && i {
            s += dot(self.user_factors.row(user), self.item_factors.row(item));
        }
        s
    }

    /// Prediction clamped into `[1, R]`. Users or items without training
    /// data contribute neither bias nor factors.
    pub fn predict(&self, user: usize, item: usize) -> f64 {
        self.raw(user, item).clamp(1.0, self.max_rating as f64)
    }
}

fn regularized_loss(model: &BaselineModel, entries: &[Rating], lambda: f64) -> f64 {
    let sq: f64 = entries
        .iter()
        .map(|r| {
            let e = r.value as f64 - model.raw(r.user, r.item);
            e * e
        })
        .sum();
    let norms = model.user_bias.iter().map(|v| v * v).sum::<f64>()
        + model.item_bias.iter().map(|v| v * v).sum::<f64>()
        + model.user_factors.iter().map(|v| v * v).sum::<f64>()
        + model.item_factors.iter().map(|v| v * v).sum::<f64>();
    sq + lambda * norms
}

/// Fits the baseline and returns it with the regularized loss after each
/// epoch. An epoch that raises the loss is undone and the learning rate
/// halved, so the returned losses never increase.
pub fn train_baseline_traced(y: &SparseRatingMatrix, cfg: &BaselineConfig) -> Result<(BaselineModel, Vec<f64>)> {
    if y.is_empty() {
        return Err(Error::Empty("baseline training matrix has no observed entries"));
    }
    if !(cfg.learning_rate > 0.0) || !(cfg.lambda >= 0.0) || cfg.factors == 0 {
        return Err(Error::InvalidConfig(format!("bad baseline configuration {cfg:?}")));
    }
    let mut entries: Vec<Rating> = y.iter().collect();
    let mean = entries.iter().map(|r| r.value as f64).sum::<f64>() / entries.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, m, k) = (y.n_users(), y.n_items(), cfg.factors);

    let (user_factors, item_factors) = if cfg.epochs == 0 {
        (Array2::zeros((n, k)), Array2::zeros((m, k)))
    } else {
        let init = Uniform::new(-0.1, 0.1);
        (
            Array2::from_shape_simple_fn((n, k), || init.sample(&mut rng)),
            Array2::from_shape_simple_fn((m, k), || init.sample(&mut rng)),
        )
    };
    let mut model = BaselineModel {
        global_mean: mean,
        user_bias: Array1::zeros(n),
        item_bias: Array1::zeros(m),
        user_factors,
        item_factors,
        user_known: y.user_counts().iter().map(|&c| c > 0).collect(),
        item_known: y.item_counts().iter().map(|&c| c > 0).collect(),
        max_rating: y.max_rating(),
    };

    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut loss = regularized_loss(&model, &entries, cfg.lambda);
    let mut lr = cfg.learning_rate;
    let lambda = cfg.lambda;
    let mut pu = vec![0.0; k];
    for epoch in 0..cfg.epochs {
        let snapshot = model.clone();
        entries.shuffle(&mut rng);
        for r in &entries {
            let (u, i) = (r.user, r.item);
            let e = r.value as f64 - model.raw(u, i);
            model.user_bias[u] += lr * (e - lambda * model.user_bias[u]);
            model.item_bias[i] += lr * (e - lambda * model.item_bias[i]);
            pu.iter_mut()
                .zip(model.user_factors.row(u))
                .for_each(|(d, s)| *d = *s);
            for f in 0..k {
                let q = model.item_factors[[i, f]];
                model.user_factors[[u, f]] += lr * (e * q - lambda * pu[f]);
                model.item_factors[[i, f]] += lr * (e * pu[f] - lambda * q);
            }
        }
        let next = regularized_loss(&model, &entries, lambda);
        if !next.is_finite() {
            return Err(Error::Divergence {
                step: epoch + 1,
                reason: "baseline loss is not finite".into(),
            });
        }
        if next > loss {
            model = snapshot;
            lr *= 0.5;
        } else {
            loss = next;
        }
        losses.push(loss);
    }
    Ok((model, losses))
}

pub fn train_baseline(y: &SparseRatingMatrix, cfg: &BaselineConfig) -> Result<BaselineModel> {
    train_baseline_traced(y, cfg).map(|(m, _)| m)
}

/// MAE/RMSE of real-valued baseline predictions on `target`.
pub fn evaluate_baseline(model: &BaselineModel, target: &SparseRatingMatrix) -> Result<MetricsSnapshot> {
    let pairs: Vec<(f64, f64)> = target
        .iter()
        .map(|r| (r.value as f64, model.predict(r.user, r.item)))
        .collect();
    MetricsSnapshot::from_pairs(&pairs)
}

/// Retrains the baseline from scratch on each matrix and scores it on the
/// fixed test set. Augmented rounds may hold imputed labels on test cells;
/// those are model predictions, never the held-out ratings, so they are kept.
pub fn rounds_experiment(
    matrices: &[SparseRatingMatrix],
    test: &SparseRatingMatrix,
    cfg: &BaselineConfig,
) -> Result<Vec<MetricsSnapshot>> {
    matrices
        .iter()
        .map(|y| {
            y.check_same_shape(test)?;
            let model = train_baseline(y, cfg)?;
            evaluate_baseline(&model, test)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank_one(n: usize, m: usize) -> SparseRatingMatrix {
        // y_ij = 1 + a_i b_j with a, b in {0, 1, 2} keeps every value in 1..=5.
        let a: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
        let b: Vec<u8> = (0..m).map(|j| ((j + 1) % 3) as u8).collect();
        SparseRatingMatrix::from_ratings(
            n,
            m,
            5,
            (0..n).flat_map(|i| {
                let a = a.clone();
                let b = b.clone();
                (0..m).map(move |j| Rating::new(i, j, 1 + (a[i] * b[j]).min(4)))
            }),
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_is_the_global_mean() {
        let y = rank_one(6, 5);
        let cfg = BaselineConfig {
            epochs: 0,
            ..BaselineConfig::default()
        };
        let model = train_baseline(&y, &cfg).unwrap();
        let values: Vec<f64> = y.iter().map(|r| r.value as f64).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
        let snap = evaluate_baseline(&model, &y).unwrap();
        assert!((snap.rmse - std).abs() < 1e-12);
        assert_eq!(model.predict(0, 0), mean);
    }

    #[test]
    fn predictions_are_clamped() {
        let y = SparseRatingMatrix::from_ratings(1, 1, 5, [Rating::new(0, 0, 4)]).unwrap();
        let mut model = train_baseline(&y, &BaselineConfig { epochs: 0, ..BaselineConfig::default() }).unwrap();
        model.global_mean = 3.6;
        assert_eq!(model.predict(0, 0), 3.6);
        model.global_mean = 7.2;
        assert_eq!(model.predict(0, 0), 5.0);
        model.global_mean = -1.0;
        assert_eq!(model.predict(0, 0), 1.0);
    }

    #[test]
    fn cold_user_uses_mean_and_item_bias() {
        let y = SparseRatingMatrix::from_ratings(2, 2, 5, [Rating::new(0, 0, 4), Rating::new(0, 1, 2)]).unwrap();
        let model = train_baseline(&y, &BaselineConfig::default()).unwrap();
        let expected = (model.global_mean + model.item_bias[1]).clamp(1.0, 5.0);
        assert_eq!(model.predict(1, 1), expected);
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let y = rank_one(8, 7);
        let cfg = BaselineConfig::default();
        assert_eq!(train_baseline(&y, &cfg).unwrap(), train_baseline(&y, &cfg).unwrap());
    }

    #[test]
    fn losses_never_increase() {
        let y = rank_one(10, 9);
        let cfg = BaselineConfig {
            learning_rate: 0.2,
            epochs: 40,
            ..BaselineConfig::default()
        };
        let (_, losses) = train_baseline_traced(&y, &cfg).unwrap();
        assert!(losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fits_a_noiseless_rank_one_matrix() {
        let y = rank_one(12, 10);
        let cfg = BaselineConfig {
            factors: 1,
            lambda: 0.0,
            epochs: 3000,
            learning_rate: 0.02,
            seed: 3,
        };
        let model = train_baseline(&y, &cfg).unwrap();
        let snap = evaluate_baseline(&model, &y).unwrap();
        assert!(snap.rmse <= 0.01, "train rmse {}", snap.rmse);
    }

    #[test]
    fn rounds_yield_one_snapshot_each() {
        let y = rank_one(6, 6);
        let mut train = y.clone();
        let mut test = SparseRatingMatrix::new(6, 6, 5).unwrap();
        for (i, j) in [(0, 0), (3, 4), (5, 5)] {
            let v = train.remove(i, j).unwrap();
            test.insert(i, j, v).unwrap();
        }
        let cfg = BaselineConfig::default();
        let one = rounds_experiment(std::slice::from_ref(&train), &test, &cfg).unwrap();
        assert_eq!(one.len(), 1);
        let two = rounds_experiment(&[train.clone(), train.clone()], &test, &cfg).unwrap();
        assert_eq!(two[0], two[1]);
        let wide = SparseRatingMatrix::new(7, 6, 5).unwrap();
        assert!(rounds_experiment(&[wide], &test, &cfg).is_err());
        assert_eq!(rounds_experiment(&[y], &test, &cfg).unwrap().len(), 1);
    }
}
