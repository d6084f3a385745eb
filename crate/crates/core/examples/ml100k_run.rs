//! Self-training run on MovieLens 100K with per-iteration output.
//!
//! `cargo run --release --example ml100k_run -- <u.data> [dim lambda lr steps iters]`

use std::fs::File;
use std::io::BufReader;
use std::time::Instant;

use stmmmf::baseline::{rounds_experiment, BaselineConfig};
use stmmmf::selftrain::{selftrain_loop_with, SelfTrainConfig};
use stmmmf::{eval, ingest};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let path = args.get(1).map(String::as_str).unwrap_or("data/ml-100k/u.data");
    let num = |k: usize, d: f64| args.get(k).and_then(|s| s.parse().ok()).unwrap_or(d);
    let raw = ingest::parse_ml100k(BufReader::new(File::open(path)?))?;
    let y = ingest::preprocess(&raw, 20)?.matrix;
    let (train, test) = eval::split(&y, 0.8, 7)?;
    let cfg = SelfTrainConfig {
        dim: num(2, 10.0) as usize,
        lambda: num(3, 10f64.powf(21.0 / 16.0)),
        learning_rate: num(4, 0.01),
        max_steps: num(5, 300.0) as usize,
        max_iters: num(6, 10.0) as usize,
        patience: None,
        tau2: std::env::var("TAU2").ok().and_then(|v| v.parse().ok()).unwrap_or(0.10),
        ..SelfTrainConfig::default()
    };
    println!("{cfg:?}");
    let start = Instant::now();
    let mut rounds = vec![train.clone()];
    let out = selftrain_loop_with(&train, &cfg, &test, |v| {
        rounds.push(v.matrix.clone());
        let r = v.report;
        println!(
            "it={:>2} obs={} cand={} aug={} ref={} ovl={} ret={:.4} mae={:.4} rmse={:.4} steps={} J={:.1} viol={} hr0_1={:.4} cand_labels={:?} t={:.1}s",
            r.iteration,
            r.observed,
            r.candidates,
            r.augmented,
            r.refined,
            r.overlap,
            r.retained_frac,
            r.test_mae.unwrap_or(f64::NAN),
            r.test_rmse.unwrap_or(f64::NAN),
            r.train_steps,
            r.train_objective,
            r.threshold_violations,
            r.train_confusion.hr_at_k(1, 0).unwrap_or(f64::NAN),
            v.candidates.label_counts(5),
            start.elapsed().as_secs_f64(),
        );
    })?;
    println!("stop: {:?}", out.stop);
    if std::env::var("BASELINE").is_ok() {
        let env = |k: &str, d: f64| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
        let bcfg = BaselineConfig {
            factors: env("B_FACTORS", 20.0) as usize,
            lambda: env("B_LAMBDA", 0.05),
            epochs: env("B_EPOCHS", 30.0) as usize,
            learning_rate: env("B_LR", 0.01),
            seed: 0,
        };
        for (k, m) in rounds_experiment(&rounds, &test, &bcfg)?.iter().enumerate() {
            println!("round {k}: mae={:.4} rmse={:.4}", m.mae, m.rmse);
        }
    }
    Ok(())
}
