use ndarray::{Array2, ArrayView1};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, ThresholdGap};
use crate::matrix::SparseRatingMatrix;

/// User factors `U` (N×d), item factors `V` (M×d) and per-user thresholds
/// `Θ` (N×(R-1)). The `±inf` sentinel thresholds are implied, never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorModel {
    pub(crate) users: Array2<f64>,
    pub(crate) items: Array2<f64>,
    pub(crate) thresholds: Array2<f64>,
}

impl FactorModel {
    pub fn new(users: Array2<f64>, items: Array2<f64>, thresholds: Array2<f64>) -> Result<Self> {
        if users.ncols() != items.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "user factors have d={} but item factors have d={}",
                users.ncols(),
                items.ncols()
            )));
        }
        if thresholds.nrows() != users.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} threshold rows for {} users",
                thresholds.nrows(),
                users.nrows()
            )));
        }
        if thresholds.ncols() < 1 || thresholds.ncols() > u8::MAX as usize - 1 {
            return Err(Error::UnsupportedScale(thresholds.ncols() as u8 + 1, 2));
        }
        let finite = users
            .iter()
            .chain(items.iter())
            .chain(thresholds.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("model contains non-finite values".into()));
        }
        Ok(FactorModel {
            users,
            items,
            thresholds,
        })
    }

    /// Seeded starting point: factors uniform in `(-0.5, 0.5) / sqrt(d)`,
    /// thresholds `θ_r = r - R/2` for every user.
    pub fn init(n_users: usize, n_items: usize, dim: usize, max_rating: u8, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let dist = Uniform::new(-0.5, 0.5);
        let users = Array2::from_shape_simple_fn((n_users, dim), || dist.sample(&mut rng) * scale);
        let items = Array2::from_shape_simple_fn((n_items, dim), || dist.sample(&mut rng) * scale);
        let half = max_rating as f64 / 2.0;
        let thresholds = Array2::from_shape_fn((n_users, max_rating as usize - 1), |(_, r)| {
            (r + 1) as f64 - half
        });
        FactorModel {
            users,
            items,
            thresholds,
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.items.nrows()
    }

    pub fn dim(&self) -> usize {
        self.users.ncols()
    }

    pub fn max_rating(&self) -> u8 {
        (self.thresholds.ncols() + 1) as u8
    }

    pub fn user_factors(&self) -> &Array2<f64> {
        &self.users
    }

    pub fn item_factors(&self) -> &Array2<f64> {
        &self.items
    }

    pub fn thresholds(&self) -> &Array2<f64> {
        &self.thresholds
    }

    /// Stored thresholds `θ_{i,1..R-1}` of one user.
    pub fn threshold_row(&self, user: usize) -> &[f64] {
        self.thresholds
            .row(user)
            .to_slice()
            .expect("threshold matrix is in standard layout")
    }

    /// `θ_{i,r}` for `r` in `0..=R`, sentinels included.
    pub fn threshold(&self, user: usize, r: usize) -> f64 {
        kernel::threshold_at(self.threshold_row(user), r)
    }

    /// Score `U_i · V_j` without bounds reporting.
    #[inline]
    pub(crate) fn score(&self, user: usize, item: usize) -> f64 {
        dot(self.users.row(user), self.items.row(item))
    }

    /// Score `U_i · V_j`.
    pub fn predict_score(&self, user: usize, item: usize) -> Result<f64> {
        if user >= self.n_users() || item >= self.n_items() {
            return Err(Error::IndexOutOfRange {
                user,
                item,
                n_users: self.n_users(),
                n_items: self.n_items(),
            });
        }
        Ok(self.score(user, item))
    }

    /// Rating whose interval of user `user`'s thresholds contains `x`.
    pub fn discretize(&self, user: usize, x: f64) -> u8 {
        kernel::discretize(self.threshold_row(user), x)
    }

    /// Discretized prediction for one cell.
    pub fn predict_rating(&self, user: usize, item: usize) -> u8 {
        self.discretize(user, self.score(user, item))
    }

    pub fn avg_threshold_gap(&self, user: usize) -> Result<ThresholdGap> {
        kernel::avg_threshold_gap(self.threshold_row(user))
    }

    /// Number of adjacent threshold pairs with `θ_{i,r} > θ_{i,r+1}`.
    pub fn threshold_order_violations(&self) -> usize {
        self.thresholds
            .rows()
            .into_iter()
            .map(|row| row.windows(2).into_iter().filter(|w| w[0] > w[1]).count())
            .sum()
    }

    /// Errors unless the model spans exactly the grid and scale of `y`.
    pub fn check_matches(&self, y: &SparseRatingMatrix) -> Result<()> {
        if self.n_users() != y.n_users()
            || self.n_items() != y.n_items()
            || self.max_rating() != y.max_rating()
        {
            return Err(Error::ShapeMismatch(format!(
                "model is {}x{} (R={}), matrix is {}x{} (R={})",
                self.n_users(),
                self.n_items(),
                self.max_rating(),
                y.n_users(),
                y.n_items(),
                y.max_rating()
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    // Fixed left-to-right order keeps every reduction bitwise reproducible.
    a.iter().zip(b.iter()).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Settings of the inner MMMF solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Regularization weight λ.
    pub lambda: f64,
    /// Initial learning rate c.
    pub learning_rate: f64,
    /// Gradient step budget t₁.
    pub max_steps: usize,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
    pub seed: u64,
    /// Accumulate per-user and per-item terms on the rayon pool. Results are
    /// bitwise identical to the sequential path either way.
    pub parallel: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda: 1.0,
            learning_rate: 0.01,
            max_steps: 300,
            tol: 1e-6,
            seed: 0,
            parallel: true,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }
}
