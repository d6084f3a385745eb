//! Sparse ordinal rating matrix.
//!
//! Cells hold ratings on the scale `1..=R`; an absent cell is unobserved.
//! Rows are kept sorted by item so lookups are a binary search and
//! iteration order is always `(user, item)` ascending.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};

/// One observed cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: u8,
}

impl Rating {
    pub fn new(user: usize, item: usize, value: u8) -> Self {
        Rating { user, item, value }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseRatingMatrix {
    n_users: usize,
    n_items: usize,
    max_rating: u8,
    rows: Vec<Vec<(u32, u8)>>,
    len: usize,
}

impl SparseRatingMatrix {
    /// An empty `n_users x n_items` matrix on the scale `1..=max_rating`.
    pub fn new(n_users: usize, n_items: usize, max_rating: u8) -> Result<Self> {
        if max_rating < 2 {
            return Err(Error::UnsupportedScale(max_rating, 2));
        }
        if n_items > u32::MAX as usize {
            return Err(Error::ShapeMismatch(format!("{n_items} items exceeds u32 indexing")));
        }
        Ok(SparseRatingMatrix {
            n_users,
            n_items,
            max_rating,
            rows: vec![Vec::new(); n_users],
            len: 0,
        })
    }

    /// Builds a matrix from triples, rejecting duplicates and out-of-range cells.
    pub fn from_ratings<I>(n_users: usize, n_items: usize, max_rating: u8, ratings: I) -> Result<Self>
    where
        I: IntoIterator<Item = Rating>,
    {
        let mut m = Self::new(n_users, n_items, max_rating)?;
        for r in ratings {
            m.insert(r.user, r.item, r.value)?;
        }
        Ok(m)
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn max_rating(&self) -> u8 {
        self.max_rating
    }

    /// Number of observed cells, |Ω|.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Total number of cells, N·M.
    pub fn n_cells(&self) -> usize {
        self.n_users * self.n_items
    }

    pub fn n_unobserved(&self) -> usize {
        self.n_cells() - self.len
    }

    fn check_index(&self, user: usize, item: usize) -> Result<()> {
        if user >= self.n_users || item >= self.n_items {
            return Err(Error::IndexOutOfRange {
                user,
                item,
                n_users: self.n_users,
                n_items: self.n_items,
            });
        }
        Ok(())
    }

    pub(crate) fn check_rating(&self, value: i64) -> Result<u8> {
        if value < 1 || value > self.max_rating as i64 {
            return Err(Error::RatingOutOfRange {
                rating: value,
                max_rating: self.max_rating,
            });
        }
        Ok(value as u8)
    }

    pub fn get(&self, user: usize, item: usize) -> Option<u8> {
        let row = self.rows.get(user)?;
        row.binary_search_by_key(&(item as u32), |&(j, _)| j)
            .ok()
            .map(|k| row[k].1)
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.get(user, item).is_some()
    }

    /// Inserts a new observation. Fails if the cell is already observed.
    pub fn insert(&mut self, user: usize, item: usize, value: u8) -> Result<()> {
        self.check_index(user, item)?;
        let value = self.check_rating(value as i64)?;
        let row = &mut self.rows[user];
        match row.binary_search_by_key(&(item as u32), |&(j, _)| j) {
            Ok(_) => Err(Error::AlreadyObserved(user, item)),
            Err(pos) => {
                row.insert(pos, (item as u32, value));
                self.len += 1;
                Ok(())
            }
        }
    }

    /// Makes a cell unobserved again, returning the rating it held.
    pub fn remove(&mut self, user: usize, item: usize) -> Result<u8> {
        self.check_index(user, item)?;
        let row = &mut self.rows[user];
        match row.binary_search_by_key(&(item as u32), |&(j, _)| j) {
            Ok(pos) => {
                self.len -= 1;
                Ok(row.remove(pos).1)
            }
            Err(_) => Err(Error::NotObserved(user, item)),
        }
    }

    /// The observed `(item, rating)` pairs of one user, sorted by item.
    pub fn user_row(&self, user: usize) -> &[(u32, u8)] {
        &self.rows[user]
    }

    /// All observations in `(user, item)` order.
    pub fn iter(&self) -> impl Iterator<Item = Rating> + '_ {
        self.rows.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .map(move |&(j, y)| Rating::new(i, j as usize, y))
        })
    }

    /// Per-label counts, index `r - 1` for rating `r`.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.max_rating as usize];
        for row in &self.rows {
            for &(_, y) in row {
                counts[y as usize - 1] += 1;
            }
        }
        counts
    }

    /// Share of each rating label among the observed cells (all zero when empty).
    pub fn rating_shares(&self) -> Vec<f64> {
        let counts = self.label_counts();
        if self.len == 0 {
            return vec![0.0; counts.len()];
        }
        counts
            .into_iter()
            .map(|c| c as f64 / self.len as f64)
            .collect()
    }

    /// Number of observations per user.
    pub fn user_counts(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    /// Number of observations per item.
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_items];
        for row in &self.rows {
            for &(j, _) in row {
                counts[j as usize] += 1;
            }
        }
        counts
    }

    /// Fraction of cells that are unobserved.
    pub fn sparsity(&self) -> f64 {
        if self.n_cells() == 0 {
            return 0.0;
        }
        1.0 - self.len as f64 / self.n_cells() as f64
    }

    /// True when no `(user, item)` cell is observed in both matrices.
    pub fn is_disjoint(&self, other: &SparseRatingMatrix) -> bool {
        self.iter().all(|r| !other.contains(r.user, r.item))
    }

    /// Checks that `other` has the same grid and scale.
    pub fn check_same_shape(&self, other: &SparseRatingMatrix) -> Result<()> {
        if self.n_users != other.n_users
            || self.n_items != other.n_items
            || self.max_rating != other.max_rating
        {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} (R={}) vs {}x{} (R={})",
                self.n_users, self.n_items, self.max_rating, other.n_users, other.n_items, other.max_rating
            )));
        }
        Ok(())
    }

    /// Content hash over the shape and every observed triple.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        (self.n_users, self.n_items, self.max_rating, self.len).hash(&mut h);
        for r in self.iter() {
            r.hash(&mut h);
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> SparseRatingMatrix {
        SparseRatingMatrix::from_ratings(
            3,
            4,
            5,
            [
                Rating::new(0, 2, 4),
                Rating::new(0, 0, 1),
                Rating::new(2, 3, 5),
                Rating::new(1, 1, 3),
            ],
        )
        .unwrap()
    }

    #[test]
    fn iteration_is_sorted() {
        let m = toy();
        let got: Vec<_> = m.iter().map(|r| (r.user, r.item, r.value)).collect();
        assert_eq!(got, vec![(0, 0, 1), (0, 2, 4), (1, 1, 3), (2, 3, 5)]);
        assert_eq!(m.len(), 4);
        assert_eq!(m.n_unobserved(), 8);
    }

    #[test]
    fn rejects_duplicates_and_bad_values() {
        let mut m = toy();
        assert!(matches!(m.insert(0, 2, 1), Err(Error::AlreadyObserved(0, 2))));
        assert!(matches!(m.insert(0, 1, 0), Err(Error::RatingOutOfRange { .. })));
        assert!(matches!(m.insert(0, 1, 6), Err(Error::RatingOutOfRange { .. })));
        assert!(matches!(m.insert(3, 0, 1), Err(Error::IndexOutOfRange { .. })));
        assert_eq!(m.len(), 4);
    }

    #[test]
    fn remove_then_reinsert() {
        let mut m = toy();
        assert_eq!(m.remove(0, 2).unwrap(), 4);
        assert!(!m.contains(0, 2));
        assert!(matches!(m.remove(0, 2), Err(Error::NotObserved(0, 2))));
        m.insert(0, 2, 2).unwrap();
        assert_eq!(m.get(0, 2), Some(2));
    }

    #[test]
    fn shares_and_counts() {
        let m = toy();
        assert_eq!(m.label_counts(), vec![1, 0, 1, 1, 1]);
        assert_eq!(m.rating_shares(), vec![0.25, 0.0, 0.25, 0.25, 0.25]);
        assert_eq!(m.user_counts(), vec![2, 1, 1]);
        assert_eq!(m.item_counts(), vec![1, 1, 1, 1]);
    }

    #[test]
    fn scale_must_have_two_levels() {
        assert!(SparseRatingMatrix::new(1, 1, 1).is_err());
    }
}
