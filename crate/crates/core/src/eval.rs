//! Error metrics, confusion matrices, HR@K and the seeded train/test split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Rating, SparseRatingMatrix};
use crate::model::FactorModel;

pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("no (truth, prediction) pairs"));
    }
    let total: f64 = pairs.iter().map(|(y, p)| (y - p).abs()).sum();
    Ok(total / pairs.len() as f64)
}

pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("no (truth, prediction) pairs"));
    }
    let total: f64 = pairs.iter().map(|(y, p)| (y - p) * (y - p)).sum();
    Ok((total / pairs.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

impl MetricsSnapshot {
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Ok(MetricsSnapshot {
            mae: mae(pairs)?,
            rmse: rmse(pairs)?,
            n: pairs.len(),
        })
    }
}

/// Counts of `(actual, predicted)` rating pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    max_rating: u8,
    /// Row-major `R x R`; `counts[(a-1)*R + (p-1)]`.
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(max_rating: u8) -> Self {
        let r = max_rating as usize;
        ConfusionMatrix {
            max_rating,
            counts: vec![0; r * r],
        }
    }

    /// Builds a matrix from published or precomputed rows.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let r = rows.len();
        if r < 2 || rows.iter().any(|row| row.len() != r) {
            return Err(Error::ShapeMismatch("confusion rows must form a square of side >= 2".into()));
        }
        Ok(ConfusionMatrix {
            max_rating: r as u8,
            counts: rows.concat(),
        })
    }

    pub fn max_rating(&self) -> u8 {
        self.max_rating
    }

    fn check(&self, rating: u8) -> Result<usize> {
        if rating < 1 || rating > self.max_rating {
            return Err(Error::RatingOutOfRange {
                rating: rating as i64,
                max_rating: self.max_rating,
            });
        }
        Ok(rating as usize - 1)
    }

    pub fn record(&mut self, actual: u8, predicted: u8) -> Result<()> {
        let a = self.check(actual)?;
        let p = self.check(predicted)?;
        self.counts[a * self.max_rating as usize + p] += 1;
        Ok(())
    }

    pub fn count(&self, actual: u8, predicted: u8) -> u64 {
        let r = self.max_rating as usize;
        self.counts[(actual as usize - 1) * r + predicted as usize - 1]
    }

    pub fn row(&self, actual: u8) -> &[u64] {
        let r = self.max_rating as usize;
        let a = actual as usize - 1;
        &self.counts[a * r..(a + 1) * r]
    }

    pub fn row_total(&self, actual: u8) -> u64 {
        self.row(actual).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Whether any in-scale rating sits exactly `k` levels from `actual`.
    pub fn hr_applicable(&self, actual: u8, k: u8) -> bool {
        let a = actual as i32;
        let k = k as i32;
        a - k >= 1 || a + k <= self.max_rating as i32
    }

    /// Share of the `actual` row predicted exactly `k` levels away (either
    /// side). `None` marks an inapplicable distance or an empty row.
    pub fn hr_at_k(&self, actual: u8, k: u8) -> Option<f64> {
        if actual < 1 || actual > self.max_rating || !self.hr_applicable(actual, k) {
            return None;
        }
        let total = self.row_total(actual);
        if total == 0 {
            return None;
        }
        let a = actual as i32;
        let k = k as i32;
        let mut hits = 0;
        if a - k >= 1 {
            hits += self.count(actual, (a - k) as u8);
        }
        if k > 0 && a + k <= self.max_rating as i32 {
            hits += self.count(actual, (a + k) as u8);
        }
        Some(hits as f64 / total as f64)
    }

    /// `HR@0..HR@{R-1}` for one row.
    pub fn hr_row(&self, actual: u8) -> Vec<Option<f64>> {
        (0..self.max_rating).map(|k| self.hr_at_k(actual, k)).collect()
    }

    /// Rows rendered as counts followed by HR@K columns, `*` for
    /// inapplicable cells.
    pub fn render(&self) -> String {
        let r = self.max_rating;
        let mut out = String::from("actual");
        for p in 1..=r {
            out.push_str(&format!("\t{p}"));
        }
        for k in 0..r {
            out.push_str(&format!("\tHR@{k}"));
        }
        out.push('\n');
        for a in 1..=r {
            out.push_str(&a.to_string());
            for &c in self.row(a) {
                out.push_str(&format!("\t{c}"));
            }
            for k in 0..r {
                match self.hr_at_k(a, k) {
                    Some(v) => out.push_str(&format!("\t{v:.4}")),
                    None if !self.hr_applicable(a, k) => out.push_str("\t*"),
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Tallies `(actual, predicted)` pairs into a confusion matrix.
pub fn confusion(pairs: &[(u8, u8)], max_rating: u8) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(max_rating);
    for &(a, p) in pairs {
        cm.record(a, p)?;
    }
    Ok(cm)
}

/// Uniform random partition of the observed cells; the first
/// `round(train_frac * |Ω|)` of a seeded shuffle go to the training part.
pub fn split(
    y: &SparseRatingMatrix,
    train_frac: f64,
    seed: u64,
) -> Result<(SparseRatingMatrix, SparseRatingMatrix)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must lie in (0, 1), got {train_frac}"
        )));
    }
    let mut entries: Vec<Rating> = y.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    entries.shuffle(&mut rng);
    let n_train = (train_frac * entries.len() as f64).round() as usize;
    let (a, b) = entries.split_at(n_train);
    let train = SparseRatingMatrix::from_ratings(y.n_users(), y.n_items(), y.max_rating(), a.iter().copied())?;
    let test = SparseRatingMatrix::from_ratings(y.n_users(), y.n_items(), y.max_rating(), b.iter().copied())?;
    Ok((train, test))
}

/// Discretized predictions for the cells of `target`. Users without any
/// observation in `train` get the mid-scale rating `ceil(R/2)`.
pub fn rating_pairs(model: &FactorModel, train: &SparseRatingMatrix, target: &SparseRatingMatrix) -> Result<Vec<(u8, u8)>> {
    model.check_matches(target)?;
    train.check_same_shape(target)?;
    let cold = target.max_rating().div_ceil(2);
    Ok(target
        .iter()
        .map(|r| {
            let p = if train.user_row(r.user).is_empty() {
                cold
            } else {
                model.predict_rating(r.user, r.item)
            };
            (r.value, p)
        })
        .collect())
}

/// MAE/RMSE plus the confusion matrix of `model` on `target`. `None` when
/// `target` is empty.
pub fn evaluate(
    model: &FactorModel,
    train: &SparseRatingMatrix,
    target: &SparseRatingMatrix,
) -> Result<Option<(MetricsSnapshot, ConfusionMatrix)>> {
    let pairs = rating_pairs(model, train, target)?;
    if pairs.is_empty() {
        return Ok(None);
    }
    let real: Vec<(f64, f64)> = pairs.iter().map(|&(a, p)| (a as f64, p as f64)).collect();
    Ok(Some((
        MetricsSnapshot::from_pairs(&real)?,
        confusion(&pairs, target.max_rating())?,
    )))
}
