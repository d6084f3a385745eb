//! MovieLens readers, preprocessing and the STMAT text format.
//!
//! STMAT layout:
//!
//! ```text
//! STMAT 1 <N> <M> <R> <count>
//! <i> <j> <r>        one line per observed cell, sorted by (i, j)
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::matrix::{Rating, SparseRatingMatrix};

/// Which file layout a set of raw ratings came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    /// `u.data`: `user<TAB>item<TAB>rating<TAB>timestamp`.
    MovieLens100K,
    /// `ratings.dat`: `user::item::rating::timestamp`.
    MovieLens1M,
    /// Re-staged from an existing matrix.
    Matrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawRating {
    pub user: u64,
    pub item: u64,
    pub rating: u8,
    pub timestamp: i64,
}

/// Ratings keyed by external ids, before filtering and compaction.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRatings {
    pub records: Vec<RawRating>,
    pub max_rating: u8,
    pub source: Source,
}

impl RawRatings {
    /// Re-stages a matrix with its indices as external ids.
    pub fn from_matrix(y: &SparseRatingMatrix) -> Self {
        RawRatings {
            records: y
                .iter()
                .map(|r| RawRating {
                    user: r.user as u64,
                    item: r.item as u64,
                    rating: r.value,
                    timestamp: 0,
                })
                .collect(),
            max_rating: y.max_rating(),
            source: Source::Matrix,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

const MOVIELENS_MAX_RATING: u8 = 5;

fn parse_field<T: std::str::FromStr>(field: Option<&str>, name: &str, line: usize) -> Result<T> {
    let raw = field.ok_or_else(|| Error::Parse {
        line,
        message: format!("missing {name} field"),
    })?;
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("{name} field {raw:?} is not an integer"),
    })
}

fn parse_delimited<R: BufRead>(reader: R, delimiter: &str, source: Source) -> Result<RawRatings> {
    let mut records = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(delimiter);
        let user = parse_field::<u64>(fields.next(), "user", line_no)?;
        let item = parse_field::<u64>(fields.next(), "item", line_no)?;
        let rating = parse_field::<i64>(fields.next(), "rating", line_no)?;
        let timestamp = parse_field::<i64>(fields.next(), "timestamp", line_no)?;
        if fields.next().is_some() {
            return Err(Error::Parse {
                line: line_no,
                message: "more than four fields".into(),
            });
        }
        if rating < 1 || rating > MOVIELENS_MAX_RATING as i64 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("rating {rating} outside 1..={MOVIELENS_MAX_RATING}"),
            });
        }
        records.push(RawRating {
            user,
            item,
            rating: rating as u8,
            timestamp,
        });
    }
    Ok(RawRatings {
        records,
        max_rating: MOVIELENS_MAX_RATING,
        source,
    })
}

pub fn parse_ml100k<R: BufRead>(reader: R) -> Result<RawRatings> {
    parse_delimited(reader, "\t", Source::MovieLens100K)
}

pub fn parse_ml1m<R: BufRead>(reader: R) -> Result<RawRatings> {
    parse_delimited(reader, "::", Source::MovieLens1M)
}

/// Matrix plus the external ids behind each compact index.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    pub matrix: SparseRatingMatrix,
    /// `user_ids[i]` is the external id of user index `i`.
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
    /// Repeated `(user, item)` records collapsed to the latest timestamp.
    pub duplicates: usize,
    pub removed_users: usize,
}

/// Drops users with fewer than `min_ratings` ratings and compacts the
/// surviving user and item ids to dense indices in ascending id order.
/// Items left without ratings disappear.
pub fn preprocess(raw: &RawRatings, min_ratings: usize) -> Result<Preprocessed> {
    let mut latest: BTreeMap<(u64, u64), (i64, u8)> = BTreeMap::new();
    let mut duplicates = 0;
    for r in &raw.records {
        if r.rating < 1 || r.rating > raw.max_rating {
            return Err(Error::RatingOutOfRange {
                rating: r.rating as i64,
                max_rating: raw.max_rating,
            });
        }
        match latest.get_mut(&(r.user, r.item)) {
            Some(slot) => {
                duplicates += 1;
                if r.timestamp >= slot.0 {
                    *slot = (r.timestamp, r.rating);
                }
            }
            None => {
                latest.insert((r.user, r.item), (r.timestamp, r.rating));
            }
        }
    }

    let mut per_user: BTreeMap<u64, usize> = BTreeMap::new();
    for &(u, _) in latest.keys() {
        *per_user.entry(u).or_default() += 1;
    }
    let user_ids: Vec<u64> = per_user
        .iter()
        .filter(|(_, &n)| n >= min_ratings)
        .map(|(&u, _)| u)
        .collect();
    let removed_users = per_user.len() - user_ids.len();
    let user_index: BTreeMap<u64, usize> = user_ids.iter().enumerate().map(|(k, &u)| (u, k)).collect();

    let mut item_ids: Vec<u64> = latest
        .keys()
        .filter(|(u, _)| user_index.contains_key(u))
        .map(|&(_, j)| j)
        .collect();
    item_ids.sort_unstable();
    item_ids.dedup();
    let item_index: BTreeMap<u64, usize> = item_ids.iter().enumerate().map(|(k, &j)| (j, k)).collect();

    let mut matrix = SparseRatingMatrix::new(user_ids.len(), item_ids.len(), raw.max_rating)?;
    for (&(u, j), &(_, r)) in &latest {
        if let Some(&i) = user_index.get(&u) {
            matrix.insert(i, item_index[&j], r)?;
        }
    }
    Ok(Preprocessed {
        matrix,
        user_ids,
        item_ids,
        duplicates,
        removed_users,
    })
}

pub fn save_matrix<W: Write>(mut w: W, y: &SparseRatingMatrix) -> Result<()> {
    writeln!(
        w,
        "STMAT 1 {} {} {} {}",
        y.n_users(),
        y.n_items(),
        y.max_rating(),
        y.len()
    )?;
    for r in y.iter() {
        writeln!(w, "{} {} {}", r.user, r.item, r.value)?;
    }
    w.flush()?;
    Ok(())
}

fn header_field(fields: &[&str], k: usize, name: &str) -> Result<usize> {
    fields
        .get(k)
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::Format(format!("header field {name} missing or not an integer")))
}

pub fn load_matrix<R: BufRead>(reader: R) -> Result<SparseRatingMatrix> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty STMAT stream".into()))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.first() != Some(&"STMAT") || fields.get(1) != Some(&"1") || fields.len() != 6 {
        return Err(Error::Format(format!("bad STMAT header {header:?}")));
    }
    let n = header_field(&fields, 2, "N")?;
    let m = header_field(&fields, 3, "M")?;
    let max_rating = header_field(&fields, 4, "R")?;
    let count = header_field(&fields, 5, "count")?;
    if !(2..=u8::MAX as usize).contains(&max_rating) {
        return Err(Error::Format(format!("unsupported rating scale {max_rating}")));
    }
    let mut y = SparseRatingMatrix::new(n, m, max_rating as u8)?;
    let mut seen = 0usize;
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected `i j r`, got {line:?}"),
            });
        }
        let i = parse_field::<usize>(Some(parts[0]), "user", line_no)?;
        let j = parse_field::<usize>(Some(parts[1]), "item", line_no)?;
        let r = parse_field::<i64>(Some(parts[2]), "rating", line_no)?;
        let r = y.check_rating(r).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        y.insert(i, j, r).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        seen += 1;
    }
    if seen != count {
        return Err(Error::Format(format!("header declares {count} entries, body has {seen}")));
    }
    Ok(y)
}

/// Builds a matrix directly from `(user, item, rating)` triples with ids
/// already compact.
pub fn matrix_from_triples(
    n_users: usize,
    n_items: usize,
    max_rating: u8,
    triples: &[(usize, usize, u8)],
) -> Result<SparseRatingMatrix> {
    SparseRatingMatrix::from_ratings(
        n_users,
        n_items,
        max_rating,
        triples.iter().map(|&(i, j, r)| Rating::new(i, j, r)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_ml100k_line() {
        let raw = parse_ml100k("196\t242\t3\t881250949\n".as_bytes()).unwrap();
        assert_eq!(
            raw.records,
            vec![RawRating {
                user: 196,
                item: 242,
                rating: 3,
                timestamp: 881250949
            }]
        );
        assert!(parse_ml100k("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn reports_malformed_line_numbers() {
        match parse_ml100k("a\tb\tc\td\n".as_bytes()) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_ml100k("1\t2\t3\t4\n1\t2\t9\t4\n".as_bytes()) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parses_ml1m_lines() {
        let raw = parse_ml1m("1::1193::5::978300760\n\n".as_bytes()).unwrap();
        assert_eq!(raw.len(), 1);
        assert_eq!((raw.records[0].user, raw.records[0].item, raw.records[0].rating), (1, 1193, 5));
        assert!(matches!(
            parse_ml1m("1::1193::0::978300760\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    fn raw_for_user(user: u64, n: u64) -> Vec<RawRating> {
        (0..n)
            .map(|j| RawRating {
                user,
                item: 100 + j,
                rating: 3,
                timestamp: 0,
            })
            .collect()
    }

    #[test]
    fn min_ratings_boundary() {
        let mut records = raw_for_user(7, 19);
        records.extend(raw_for_user(3, 20));
        let raw = RawRatings {
            records,
            max_rating: 5,
            source: Source::MovieLens100K,
        };
        let p = preprocess(&raw, 20).unwrap();
        assert_eq!(p.user_ids, vec![3]);
        assert_eq!(p.removed_users, 1);
        assert_eq!(p.matrix.len(), 20);
        let all = preprocess(&raw, 0).unwrap();
        assert_eq!(all.user_ids, vec![3, 7]);
        assert_eq!(all.matrix.n_items(), 20);
    }

    #[test]
    fn duplicates_keep_latest_timestamp() {
        let data = "1\t10\t2\t100\n1\t10\t5\t300\n1\t10\t4\t200\n2\t11\t1\t5\n";
        let p = preprocess(&parse_ml100k(data.as_bytes()).unwrap(), 0).unwrap();
        assert_eq!(p.duplicates, 2);
        assert_eq!(p.matrix.get(0, 0), Some(5));
        assert_eq!(p.matrix.len(), 2);
    }

    #[test]
    fn stmat_errors() {
        assert!(matches!(
            load_matrix("STMAT 1 2 2 5 2\n0 0 3\n".as_bytes()),
            Err(Error::Format(_))
        ));
        assert!(load_matrix("STMAT 2 2 2 5 0\n".as_bytes()).is_err());
        assert!(load_matrix("STMAT 1 2 2 5 1\n2 0 3\n".as_bytes()).is_err());
        assert!(load_matrix("STMAT 1 2 2 5 1\n0 0 6\n".as_bytes()).is_err());
        assert!(load_matrix("STMAT 1 2 2 5 2\n0 0 1\n0 0 2\n".as_bytes()).is_err());
    }

    #[test]
    fn empty_matrix_round_trips() {
        let y = SparseRatingMatrix::new(3, 4, 5).unwrap();
        let mut buf = Vec::new();
        save_matrix(&mut buf, &y).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "STMAT 1 3 4 5 0\n");
        assert_eq!(load_matrix(buf.as_slice()).unwrap(), y);
    }

    fn arb_matrix() -> impl Strategy<Value = SparseRatingMatrix> {
        (1usize..12, 1usize..12, 2u8..8).prop_flat_map(|(n, m, r)| {
            proptest::collection::btree_map((0..n, 0..m), 1..=r, 0..(n * m)).prop_map(move |cells| {
                SparseRatingMatrix::from_ratings(n, m, r, cells.into_iter().map(|((i, j), v)| Rating::new(i, j, v)))
                    .unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn stmat_round_trip(y in arb_matrix()) {
            let mut buf = Vec::new();
            save_matrix(&mut buf, &y).unwrap();
            prop_assert_eq!(load_matrix(buf.as_slice()).unwrap(), y);
        }

        #[test]
        fn preprocess_is_idempotent(y in arb_matrix(), min in 0usize..4) {
            let once = preprocess(&RawRatings::from_matrix(&y), min).unwrap();
            let twice = preprocess(&RawRatings::from_matrix(&once.matrix), min).unwrap();
            prop_assert_eq!(&once.matrix, &twice.matrix);
            // Compaction is a bijection onto 0..N and 0..M.
            prop_assert!(once.user_ids.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(once.item_ids.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(once.user_ids.len(), once.matrix.n_users());
            prop_assert!(once.matrix.item_counts().iter().all(|&c| c > 0));
        }

        #[test]
        fn ml100k_text_round_trip(cells in proptest::collection::btree_map((1u64..50, 1u64..50), (1u8..=5, 0i64..2_000_000_000), 0..60)) {
            let text: String = cells.iter().map(|(&(u, i), &(r, t))| format!("{u}\t{i}\t{r}\t{t}\n")).collect();
            let parsed = parse_ml100k(text.as_bytes()).unwrap();
            let again: String = parsed.records.iter().map(|r| format!("{}\t{}\t{}\t{}\n", r.user, r.item, r.rating, r.timestamp)).collect();
            prop_assert_eq!(text, again);
        }
    }
}
