//! Self-training outer loop: retrain MMMF on the current matrix, add
//! unobserved cells whose scores sit deep inside a rating interval, and drop
//! observed cells whose scores sit close to a threshold.
//!
//! For user `i` with average threshold gap `g_i`:
//!
//! * an unobserved cell becomes a candidate with rating `r` when
//!   `θ_{r-1} + g_i τ₁ < x < θ_r - g_i τ₁` (sentinels `θ_0 = -inf`, `θ_R = +inf`);
//! * an observed cell is dropped when `θ_r - g_i τ₂ < x < θ_r + g_i τ₂` for
//!   some stored threshold `r`.
//!
//! Candidates are subsampled under a per-iteration cap, with per-label
//! quotas proportional to `1 - Z_r` where `Z_r` is the share of label `r`
//! in the current training matrix.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, ConfusionMatrix};
use crate::kernel::threshold_at;
use crate::matrix::SparseRatingMatrix;
use crate::model::{FactorModel, Hyperparams};
use crate::trainer;

/// A confidently predicted unobserved cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub user: u32,
    pub item: u32,
    pub rating: u8,
}

impl Candidate {
    pub fn new(user: usize, item: usize, rating: u8) -> Self {
        Candidate {
            user: user as u32,
            item: item as u32,
            rating,
        }
    }
}

/// Candidates sorted by `(user, item)`, at most one per cell.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CandidateSet {
    entries: Vec<Candidate>,
}

impl CandidateSet {
    /// Sorts the entries and rejects repeated cells.
    pub fn from_vec(mut entries: Vec<Candidate>) -> Result<Self> {
        entries.sort_unstable();
        if let Some(w) = entries
            .windows(2)
            .find(|w| (w[0].user, w[0].item) == (w[1].user, w[1].item))
        {
            return Err(Error::InvalidConfig(format!(
                "cell ({}, {}) appears twice in a candidate set",
                w[0].user, w[0].item
            )));
        }
        Ok(CandidateSet { entries })
    }

    pub fn entries(&self) -> &[Candidate] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Candidate> {
        self.entries.iter()
    }

    /// Count per label, index `r - 1`.
    pub fn label_counts(&self, max_rating: u8) -> Vec<usize> {
        let mut counts = vec![0; max_rating as usize];
        for c in &self.entries {
            counts[c.rating as usize - 1] += 1;
        }
        counts
    }
}

fn check_fraction(name: &str, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 0.5) {
        return Err(Error::InvalidConfig(format!("{name} must lie in (0, 0.5), got {tau}")));
    }
    Ok(())
}

fn user_gaps(model: &FactorModel) -> Result<Vec<(f64, bool)>> {
    (0..model.n_users())
        .map(|i| model.avg_threshold_gap(i).map(|g| (g.value, g.clamped)))
        .collect()
}

/// Users whose average threshold gap had to be clamped.
pub fn gap_clamp_events(model: &FactorModel) -> Result<usize> {
    Ok(user_gaps(model)?.iter().filter(|(_, c)| *c).count())
}

/// Unobserved cells whose score falls in the shrunken interior of some
/// rating interval. The first matching rating wins when thresholds are
/// unsorted.
pub fn high_confidence_candidates(model: &FactorModel, y: &SparseRatingMatrix, tau1: f64) -> Result<CandidateSet> {
    check_fraction("tau1", tau1)?;
    model.check_matches(y)?;
    let gaps = user_gaps(model)?;
    let levels = y.max_rating() as usize;
    let per_user: Vec<Vec<Candidate>> = (0..y.n_users())
        .into_par_iter()
        .map(|i| {
            let theta = model.threshold_row(i);
            let shift = gaps[i].0 * tau1;
            // -inf + shift and +inf - shift keep their infinities.
            let bands: Vec<(f64, f64)> = (1..=levels)
                .map(|r| (threshold_at(theta, r - 1) + shift, threshold_at(theta, r) - shift))
                .collect();
            let row = y.user_row(i);
            let mut next_observed = row.iter().map(|&(j, _)| j as usize).peekable();
            let mut out = Vec::new();
            for j in 0..y.n_items() {
                if next_observed.peek() == Some(&j) {
                    next_observed.next();
                    continue;
                }
                let x = model.score(i, j);
                if let Some(r) = bands.iter().position(|&(lo, hi)| lo < x && x < hi) {
                    out.push(Candidate::new(i, j, r as u8 + 1));
                }
            }
            out
        })
        .collect();
    Ok(CandidateSet {
        entries: per_user.concat(),
    })
}

/// Observed cells whose score falls within `g_i τ₂` of any stored threshold.
pub fn low_confidence_observed(model: &FactorModel, y: &SparseRatingMatrix, tau2: f64) -> Result<Vec<(usize, usize)>> {
    check_fraction("tau2", tau2)?;
    model.check_matches(y)?;
    let gaps = user_gaps(model)?;
    let per_user: Vec<Vec<(usize, usize)>> = (0..y.n_users())
        .into_par_iter()
        .map(|i| {
            let theta = model.threshold_row(i);
            let shift = gaps[i].0 * tau2;
            y.user_row(i)
                .iter()
                .filter(|&&(j, _)| {
                    let x = model.score(i, j as usize);
                    theta.iter().any(|&t| t - shift < x && x < t + shift)
                })
                .map(|&(j, _)| (i, j as usize))
                .collect()
        })
        .collect();
    Ok(per_user.concat())
}

/// Splits `total` across labels in proportion to `weights`, flooring each
/// share and handing the leftover units to the largest remainders (lower
/// label first on ties).
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if total == 0 || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Per-label augmentation quotas proportional to `1 - Z_r`, summing exactly
/// to `total`.
pub fn skew_allocation(shares: &[f64], total: usize) -> Result<Vec<usize>> {
    if shares.iter().any(|z| !(z.is_finite() && *z >= 0.0)) {
        return Err(Error::DegenerateDistribution(format!("shares must be finite and >= 0: {shares:?}")));
    }
    let denom: f64 = shares.iter().map(|z| 1.0 - z).sum();
    if !(denom > 0.0) {
        return Err(Error::DegenerateDistribution(format!(
            "sum of (1 - Z_r) is {denom}; no label can receive augmentations"
        )));
    }
    let sum: f64 = shares.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::DegenerateDistribution(format!("shares sum to {sum}, not 1")));
    }
    let weights: Vec<f64> = shares.iter().map(|z| 1.0 - z).collect();
    Ok(largest_remainder(&weights, total))
}

/// Subsample of `cands` of size `min(cap, floor(|cands| s / 100))`.
///
/// Label quotas come from [`skew_allocation`]; a label without enough
/// candidates passes its shortfall to the others in proportion to their
/// unused supply. Within a label, cells are drawn uniformly without
/// replacement.
pub fn sample_augment<R: Rng + ?Sized>(
    cands: &CandidateSet,
    shares: &[f64],
    sample_pct: f64,
    cap: usize,
    rng: &mut R,
) -> Result<CandidateSet> {
    if !(sample_pct > 0.0 && sample_pct <= 100.0) {
        return Err(Error::InvalidConfig(format!("sample percentage must lie in (0, 100], got {sample_pct}")));
    }
    let target = ((cands.len() as f64 * sample_pct / 100.0).floor() as usize).min(cap);
    let levels = shares.len();
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); levels];
    for (k, c) in cands.entries.iter().enumerate() {
        let r = c.rating as usize;
        if r == 0 || r > levels {
            return Err(Error::RatingOutOfRange {
                rating: r as i64,
                max_rating: levels as u8,
            });
        }
        by_label[r - 1].push(k);
    }

    let quotas = skew_allocation(shares, target)?;
    let mut take: Vec<usize> = quotas
        .iter()
        .zip(&by_label)
        .map(|(&q, pool)| q.min(pool.len()))
        .collect();
    let shortfall = target - take.iter().sum::<usize>();
    if shortfall > 0 {
        let spare: Vec<f64> = by_label
            .iter()
            .zip(&take)
            .map(|(pool, &t)| (pool.len() - t) as f64)
            .collect();
        let extra = largest_remainder(&spare, shortfall);
        for (k, e) in extra.into_iter().enumerate() {
            take[k] = (take[k] + e).min(by_label[k].len());
        }
    }

    let mut picked = Vec::with_capacity(target);
    for (pool, &n) in by_label.iter().zip(&take) {
        for k in index::sample(rng, pool.len(), n).into_iter() {
            picked.push(cands.entries[pool[k]]);
        }
    }
    picked.sort_unstable();
    Ok(CandidateSet { entries: picked })
}

/// Inserts the selected triples as observations. Nothing is inserted if any
/// selected cell is already observed.
pub fn apply_augment(y: &mut SparseRatingMatrix, selected: &CandidateSet) -> Result<()> {
    if let Some(c) = selected.iter().find(|c| y.contains(c.user as usize, c.item as usize)) {
        return Err(Error::AlreadyObserved(c.user as usize, c.item as usize));
    }
    for c in selected.iter() {
        y.insert(c.user as usize, c.item as usize, c.rating)?;
    }
    Ok(())
}

/// Makes the listed cells unobserved. Nothing is removed if any listed cell
/// is not observed.
pub fn apply_refine(y: &mut SparseRatingMatrix, removals: &[(usize, usize)]) -> Result<()> {
    if let Some(&(i, j)) = removals.iter().find(|&&(i, j)| !y.contains(i, j)) {
        return Err(Error::NotObserved(i, j));
    }
    let mut sorted = removals.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidConfig(format!("cell {:?} listed twice for removal", w[0])));
    }
    for (i, j) in sorted {
        y.remove(i, j)?;
    }
    Ok(())
}

/// Exact-triple overlap between consecutive candidate sets, and the share of
/// `prev` it retains (0 when `prev` is empty).
pub fn overlap_stats(prev: &CandidateSet, cur: &CandidateSet) -> (usize, f64) {
    let (a, b) = (&prev.entries, &cur.entries);
    let (mut x, mut y, mut both) = (0, 0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                both += 1;
                x += 1;
                y += 1;
            }
        }
    }
    let frac = if a.is_empty() { 0.0 } else { both as f64 / a.len() as f64 };
    (both, frac)
}

/// Hyperparameters of the self-training loop and its inner solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainConfig {
    pub dim: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    /// Inner gradient step budget t₁.
    pub max_steps: usize,
    pub tol: f64,
    pub seed: u64,
    /// Interior shift τ₁ as a fraction of the average threshold gap.
    pub tau1: f64,
    /// Refinement half-width τ₂ as a fraction of the average threshold gap.
    pub tau2: f64,
    /// Percentage of candidates eligible for sampling, in (0, 100].
    pub sample_pct: f64,
    /// Maximum augmentations per iteration.
    pub cap: usize,
    /// Outer iteration budget t₂.
    pub max_iters: usize,
    /// Stop after this many consecutive iterations of rising test MAE.
    pub patience: Option<usize>,
    pub parallel: bool,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            dim: 10,
            lambda: 10f64.powf(21.0 / 16.0),
            learning_rate: 0.01,
            max_steps: 300,
            tol: 1e-6,
            seed: 0,
            tau1: 0.4999,
            tau2: 0.10,
            sample_pct: 100.0,
            cap: 5000,
            max_iters: 50,
            patience: Some(5),
            parallel: true,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyperparams().validate()?;
        if self.dim == 0 {
            return Err(Error::InvalidConfig("latent dimension must be >= 1".into()));
        }
        if !(self.tau2 > 0.0 && self.tau2 < self.tau1 && self.tau1 < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < tau2 < tau1 < 0.5, got tau1={} tau2={}",
                self.tau1, self.tau2
            )));
        }
        if !(self.sample_pct > 0.0 && self.sample_pct <= 100.0) {
            return Err(Error::InvalidConfig(format!(
                "sample percentage must lie in (0, 100], got {}",
                self.sample_pct
            )));
        }
        if self.cap == 0 {
            return Err(Error::InvalidConfig("cap must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("iteration budget must be >= 1".into()));
        }
        Ok(())
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            lambda: self.lambda,
            learning_rate: self.learning_rate,
            max_steps: self.max_steps,
            tol: self.tol,
            seed: self.seed,
            parallel: self.parallel,
        }
    }
}

/// Bookkeeping for one outer iteration. Counts of observed and unobserved
/// cells describe the matrix the iteration trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub observed: usize,
    pub unobserved: usize,
    pub candidates: usize,
    pub augmented: usize,
    pub refined: usize,
    pub overlap: usize,
    pub retained_frac: f64,
    pub gap_clamp_events: usize,
    pub test_mae: Option<f64>,
    pub test_rmse: Option<f64>,
    pub train_steps: usize,
    pub train_objective: f64,
    pub threshold_violations: usize,
    pub train_confusion: ConfusionMatrix,
    pub test_confusion: Option<ConfusionMatrix>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    NoCandidates,
    TestPatience,
    Diverged(String),
}

/// Everything the loop hands to an observer after each iteration.
pub struct IterationView<'a> {
    pub report: &'a IterationReport,
    pub model: &'a FactorModel,
    pub candidates: &'a CandidateSet,
    pub selected: &'a CandidateSet,
    pub refined: &'a [(usize, usize)],
    /// Training matrix after refinement and augmentation.
    pub matrix: &'a SparseRatingMatrix,
}

#[derive(Clone, Debug)]
pub struct SelfTrainOutcome {
    /// Model of the last completed iteration.
    pub model: Option<FactorModel>,
    pub reports: Vec<IterationReport>,
    /// Training matrix after the last completed iteration.
    pub matrix: SparseRatingMatrix,
    pub stop: StopReason,
}

/// Runs the loop without an observer.
pub fn selftrain_loop(y0: &SparseRatingMatrix, cfg: &SelfTrainConfig, test: &SparseRatingMatrix) -> Result<SelfTrainOutcome> {
    selftrain_loop_with(y0, cfg, test, |_| {})
}

/// Runs the loop, calling `observe` after every completed iteration.
///
/// `test` only feeds the reports and the patience rule; training never sees
/// it. Inner-solver divergence ends the loop with
/// [`StopReason::Diverged`] and the reports gathered so far.
pub fn selftrain_loop_with<F>(
    y0: &SparseRatingMatrix,
    cfg: &SelfTrainConfig,
    test: &SparseRatingMatrix,
    mut observe: F,
) -> Result<SelfTrainOutcome>
where
    F: FnMut(&IterationView<'_>),
{
    cfg.validate()?;
    y0.check_same_shape(test)?;
    if y0.max_rating() < 3 {
        return Err(Error::UnsupportedScale(y0.max_rating(), 3));
    }
    if !y0.is_disjoint(test) {
        return Err(Error::InvalidConfig("training and test matrices share cells".into()));
    }

    let hp = cfg.hyperparams();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_a11c_a7e5);
    let mut y = y0.clone();
    let mut reports: Vec<IterationReport> = Vec::new();
    let mut last_model = None;
    let mut prev_cands: Option<CandidateSet> = None;
    let mut rising = 0usize;
    let mut stop = StopReason::MaxIterations;

    for iteration in 1..=cfg.max_iters {
        let observed = y.len();
        let unobserved = y.n_unobserved();
        let (model, trace) = match trainer::train(&y, &hp, cfg.dim) {
            Ok(fit) => fit,
            Err(e @ Error::Divergence { .. }) => {
                stop = StopReason::Diverged(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };

        let cands = high_confidence_candidates(&model, &y, cfg.tau1)?;
        let refine = low_confidence_observed(&model, &y, cfg.tau2)?;
        let shares = y.rating_shares();
        let selected = sample_augment(&cands, &shares, cfg.sample_pct, cfg.cap, &mut rng)?;
        let (overlap, retained_frac) = match &prev_cands {
            Some(prev) => overlap_stats(prev, &cands),
            None => (0, 0.0),
        };

        let train_pairs = eval::rating_pairs(&model, &y, &y)?;
        let train_confusion = eval::confusion(&train_pairs, y.max_rating())?;
        let test_eval = eval::evaluate(&model, &y, test)?;

        apply_refine(&mut y, &refine)?;
        apply_augment(&mut y, &selected)?;

        let report = IterationReport {
            iteration,
            observed,
            unobserved,
            candidates: cands.len(),
            augmented: selected.len(),
            refined: refine.len(),
            overlap,
            retained_frac,
            gap_clamp_events: gap_clamp_events(&model)?,
            test_mae: test_eval.as_ref().map(|(m, _)| m.mae),
            test_rmse: test_eval.as_ref().map(|(m, _)| m.rmse),
            train_steps: trace.iterations,
            train_objective: *trace.objective.last().expect("trace holds the initial objective"),
            threshold_violations: trace.threshold_violations,
            train_confusion,
            test_confusion: test_eval.map(|(_, cm)| cm),
        };

        if let (Some(prev), Some(cur)) = (reports.last().and_then(|r| r.test_mae), report.test_mae) {
            rising = if cur > prev { rising + 1 } else { 0 };
        }

        observe(&IterationView {
            report: &report,
            model: &model,
            candidates: &cands,
            selected: &selected,
            refined: &refine,
            matrix: &y,
        });
        reports.push(report);
        last_model = Some(model);

        if cands.is_empty() {
            stop = StopReason::NoCandidates;
            break;
        }
        if cfg.patience.is_some_and(|p| p > 0 && rising >= p) {
            stop = StopReason::TestPatience;
            break;
        }
        prev_cands = Some(cands);
    }

    Ok(SelfTrainOutcome {
        model: last_model,
        reports,
        matrix: y,
        stop,
    })
}
