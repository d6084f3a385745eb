use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};

use stmmmf::baseline::{rounds_experiment, BaselineConfig};
use stmmmf::checkpoint::{load_checkpoint, save_checkpoint};
use stmmmf::grid::{self, GridCell, GridResult};
use stmmmf::ingest::{self, RawRatings};
use stmmmf::report::{self, RoundRow};
use stmmmf::selftrain::selftrain_loop_with;
use stmmmf::{eval, SparseRatingMatrix, StopReason};

use crate::{BaselineArgs, EvaluateArgs, Failure, Flavor, GridArgs, IngestArgs, SelftrainArgs, SplitArgs};

type Outcome = Result<(), Failure>;

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(msg.to_string())
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn read_matrix(path: &Path) -> anyhow::Result<SparseRatingMatrix> {
    ingest::load_matrix(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn write_matrix(path: &Path, y: &SparseRatingMatrix) -> anyhow::Result<()> {
    let mut w = create(path)?;
    ingest::save_matrix(&mut w, y).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

pub fn ingest(a: &IngestArgs, out_dir: &Path) -> Outcome {
    let raw = match a.flavor {
        Flavor::Ml100k => ingest::parse_ml100k(open(&a.input)?),
        Flavor::Ml1m => ingest::parse_ml1m(open(&a.input)?),
        Flavor::Stmat => Ok(RawRatings::from_matrix(&read_matrix(&a.input)?)),
    }
    .with_context(|| format!("parsing {}", a.input.display()))?;
    let pre = ingest::preprocess(&raw, a.min_ratings).map_err(anyhow::Error::from)?;
    let y = &pre.matrix;
    if y.is_empty() {
        return Err(anyhow!("no ratings left after removing users with fewer than {} ratings", a.min_ratings).into());
    }
    let out = a.out.clone().unwrap_or_else(|| out_dir.join("ratings.stmat"));
    write_matrix(&out, y)?;
    println!("{} {} {} {}", y.n_users(), y.n_items(), y.max_rating(), y.len());
    println!("sparsity {:.6}", y.sparsity());
    eprintln!(
        "removed {} users below {} ratings, collapsed {} duplicates; wrote {}",
        pre.removed_users,
        a.min_ratings,
        pre.duplicates,
        out.display()
    );
    Ok(())
}

pub fn split(a: &SplitArgs, out_dir: &Path) -> Outcome {
    if !(a.frac > 0.0 && a.frac < 1.0) {
        return Err(usage(format!("--frac must lie strictly between 0 and 1, got {}", a.frac)));
    }
    let y = read_matrix(&a.input)?;
    let (train, test) = eval::split(&y, a.frac, a.seed).map_err(anyhow::Error::from)?;
    write_matrix(&out_dir.join("train.stmat"), &train)?;
    write_matrix(&out_dir.join("test.stmat"), &test)?;
    println!("train {}", train.len());
    println!("test {}", test.len());
    Ok(())
}

fn snapshot_path(dir: &Path, round: usize) -> PathBuf {
    dir.join(format!("round_{round:03}.stmat"))
}

/// `round_NNN.stmat` files in `dir`, ordered by round.
fn list_snapshots(dir: &Path) -> anyhow::Result<Vec<(usize, PathBuf)>> {
    let mut found = Vec::new();
    if !dir.is_dir() {
        return Ok(found);
    }
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let round = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("round_"))
            .and_then(|n| n.strip_suffix(".stmat"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(r) = round {
            found.push((r, path));
        }
    }
    found.sort();
    Ok(found)
}

pub fn selftrain(a: &SelftrainArgs, out_dir: &Path) -> Outcome {
    let cfg = a.loop_args.config();
    cfg.validate().map_err(usage)?;

    let train = read_matrix(&a.train)?;
    let test = match &a.test {
        Some(p) => read_matrix(p)?,
        None => SparseRatingMatrix::new(train.n_users(), train.n_items(), train.max_rating()).map_err(anyhow::Error::from)?,
    };
    train.check_same_shape(&test).context("train and test matrices")?;
    if !train.is_disjoint(&test) {
        return Err(anyhow!("train and test matrices share cells").into());
    }
    if train.max_rating() < 3 {
        return Err(anyhow!("self-training needs a rating scale of at least 3 levels, got {}", train.max_rating()).into());
    }

    println!("config {}", serde_json::to_string(&cfg).context("encoding config")?);
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let snap_dir = out_dir.join("snapshots");
    if a.snapshot_every > 0 {
        for (_, stale) in list_snapshots(&snap_dir)? {
            fs::remove_file(&stale).with_context(|| format!("removing stale {}", stale.display()))?;
        }
        write_matrix(&snapshot_path(&snap_dir, 0), &train)?;
    }
    let jsonl_path = out_dir.join("iterations.jsonl");
    let mut jsonl = create(&jsonl_path)?;

    let mut io_error: Option<anyhow::Error> = None;
    let outcome = selftrain_loop_with(&train, &cfg, &test, |v| {
        let r = v.report;
        println!(
            "iter {:>3}  observed {:>7}  candidates {:>8}  augmented {:>5}  refined {:>5}  retained {:.4}  test_mae {}",
            r.iteration,
            r.observed,
            r.candidates,
            r.augmented,
            r.refined,
            r.retained_frac,
            r.test_mae.map_or("-".into(), |m| format!("{m:.4}")),
        );
        if io_error.is_some() {
            return;
        }
        let mut step = || -> anyhow::Result<()> {
            report::write_json_line(&mut jsonl, r)?;
            jsonl.flush()?;
            if a.snapshot_every > 0 && r.iteration % a.snapshot_every == 0 {
                write_matrix(&snapshot_path(&snap_dir, r.iteration), v.matrix)?;
            }
            Ok(())
        };
        io_error = step().err();
    })
    .map_err(anyhow::Error::from)?;
    if let Some(e) = io_error {
        return Err(e.context("writing per-iteration output").into());
    }

    let csv_path = out_dir.join("iterations.csv");
    report::write_iteration_csv(create(&csv_path)?, &outcome.reports).context("writing iterations.csv")?;
    if let Some(model) = &outcome.model {
        let ckpt = out_dir.join("model.ckpt");
        save_checkpoint(create(&ckpt)?, model).context("writing model.ckpt")?;
    }
    println!("stop {:?} after {} iterations; outputs in {}", outcome.stop, outcome.reports.len(), out_dir.display());
    if let StopReason::Diverged(why) = &outcome.stop {
        return Err(anyhow!(
            "training diverged ({why}); reports for {} completed iterations kept in {}",
            outcome.reports.len(),
            out_dir.display()
        )
        .into());
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Outcome {
    let model = load_checkpoint(open(&a.model)?).with_context(|| format!("reading {}", a.model.display()))?;
    let test = read_matrix(&a.test)?;
    model.check_matches(&test).context("checkpoint and test matrix disagree")?;
    let train = match &a.train {
        Some(p) => {
            let t = read_matrix(p)?;
            model.check_matches(&t).context("checkpoint and training matrix disagree")?;
            Some(t)
        }
        None => None,
    };
    let (snap, cm) = eval::evaluate(&model, train.as_ref().unwrap_or(&test), &test)
        .map_err(anyhow::Error::from)?
        .ok_or_else(|| anyhow!("{} holds no ratings", a.test.display()))?;
    println!("n {}", snap.n);
    println!("MAE {:.6}", snap.mae);
    println!("RMSE {:.6}", snap.rmse);
    print!("{}", cm.render());
    Ok(())
}

pub fn gridsearch(a: &GridArgs, out_dir: &Path) -> Outcome {
    let base = a.loop_args.config();
    base.validate().map_err(usage)?;
    if a.runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    let lambdas = a.lambda_grid.clone().unwrap_or_else(grid::lambda_grid);
    let tau1_pct = a.tau1_grid.clone().unwrap_or_else(grid::tau1_grid_percent);
    let samples = a.sample_grid.clone().unwrap_or_else(grid::sample_grid);
    if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(usage(format!("λ values must be positive, got {l}")));
    }
    if let Some(t) = tau1_pct.iter().find(|t| !(**t > 0.0 && **t < 50.0)) {
        return Err(usage(format!("τ₁ values must lie in (0, 50) percent, got {t}")));
    }
    if let Some(s) = samples.iter().find(|s| !(**s > 0.0 && **s <= 100.0)) {
        return Err(usage(format!("sampling percentages must lie in (0, 100], got {s}")));
    }
    // τ₁ must stay above τ₂ for the augmentation and refinement bands to be
    // disjoint; such grid points are skipped rather than failing the sweep.
    let (kept, skipped): (Vec<f64>, Vec<f64>) = tau1_pct.iter().partition(|&&t| t / 100.0 > base.tau2);
    if !skipped.is_empty() {
        eprintln!("skipping τ₁ {skipped:?} (must exceed τ₂ = {}%)", base.tau2 * 100.0);
    }
    if kept.is_empty() {
        return Err(usage("no τ₁ value exceeds τ₂"));
    }

    let train = read_matrix(&a.train)?;
    let fractions: Vec<f64> = kept.iter().map(|t| t / 100.0).collect();
    let cells = grid::cells(&lambdas, &fractions, &samples);
    let pct_of = |c: &GridCell| kept[fractions.iter().position(|f| *f == c.tau1).expect("cell from grid")];
    println!("config {}", serde_json::to_string(&base).context("encoding config")?);
    eprintln!("{} cells x {} runs", cells.len(), a.runs);
    let results = grid::run_grid(&train, &base, &cells, a.runs);

    let out = a.out.clone().unwrap_or_else(|| out_dir.join("grid.csv"));
    let mut w = csv::Writer::from_writer(create(&out)?);
    let mut ok: Vec<GridResult> = Vec::new();
    let mut failed = 0;
    for (cell, res) in cells.iter().zip(results) {
        match res {
            Ok(r) => {
                let row = GridResult { tau1: pct_of(cell), ..r };
                w.serialize(&row).context("writing grid CSV")?;
                ok.push(row);
            }
            Err(e) => {
                failed += 1;
                eprintln!("cell λ={} τ₁={}% s={} failed: {e}", cell.lambda, pct_of(cell), cell.sample_pct);
            }
        }
    }
    if ok.is_empty() {
        w.write_record(["lambda", "tau1", "s", "mae", "rmse"]).context("writing grid CSV")?;
    }
    w.flush().context("writing grid CSV")?;
    if let Some(b) = grid::best(&ok) {
        println!("best lambda {} tau1 {} s {} mae {:.6} rmse {:.6}", b.lambda, b.tau1, b.s, b.mae, b.rmse);
    }
    if failed > 0 {
        return Err(anyhow!("{failed} of {} cells failed; completed rows kept in {}", cells.len(), out.display()).into());
    }
    Ok(())
}

pub fn baseline_rounds(a: &BaselineArgs, out_dir: &Path) -> Outcome {
    let cfg = BaselineConfig {
        factors: a.factors,
        lambda: a.lambda,
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: a.seed,
    };
    if cfg.factors == 0 || !(cfg.learning_rate > 0.0) || !(cfg.lambda >= 0.0) {
        return Err(usage("need --factors >= 1, --lr > 0 and --lambda >= 0"));
    }
    let dir = a.snapshots.clone().unwrap_or_else(|| out_dir.join("snapshots"));
    let snaps = list_snapshots(&dir)?;
    if snaps.is_empty() {
        return Err(anyhow!(
            "no round_NNN.stmat snapshots in {}; run `stmmmf selftrain --snapshot-every 1` first or pass --snapshots",
            dir.display()
        )
        .into());
    }
    let test = read_matrix(&a.test)?;
    let matrices = snaps
        .iter()
        .map(|(_, p)| read_matrix(p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let metrics = rounds_experiment(&matrices, &test, &cfg).map_err(anyhow::Error::from)?;
    let rows: Vec<RoundRow> = snaps.iter().zip(&metrics).map(|((r, _), m)| RoundRow::new(*r, m)).collect();
    let out = a.out.clone().unwrap_or_else(|| out_dir.join("baseline_rounds.csv"));
    report::write_round_csv(create(&out)?, &rows).context("writing round CSV")?;
    for row in &rows {
        println!("round {:>3}  mae {:.6}  rmse {:.6}", row.round, row.mae, row.rmse);
    }
    Ok(())
}
