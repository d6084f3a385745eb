//! JSON-lines and CSV emission of per-iteration reports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::MetricsSnapshot;
use crate::selftrain::IterationReport;

/// Column order of the cumulative iteration CSV.
pub const ITERATION_CSV_COLUMNS: [&str; 10] = [
    "iter",
    "observed",
    "unobserved",
    "candidates",
    "augmented",
    "refined",
    "overlap",
    "retained_frac",
    "test_mae",
    "test_rmse",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationCsvRow {
    pub iter: usize,
    pub observed: usize,
    pub unobserved: usize,
    pub candidates: usize,
    pub augmented: usize,
    pub refined: usize,
    pub overlap: usize,
    pub retained_frac: f64,
    pub test_mae: Option<f64>,
    pub test_rmse: Option<f64>,
}

impl From<&IterationReport> for IterationCsvRow {
    fn from(r: &IterationReport) -> Self {
        IterationCsvRow {
            iter: r.iteration,
            observed: r.observed,
            unobserved: r.unobserved,
            candidates: r.candidates,
            augmented: r.augmented,
            refined: r.refined,
            overlap: r.overlap,
            retained_frac: r.retained_frac,
            test_mae: r.test_mae,
            test_rmse: r.test_rmse,
        }
    }
}

/// Appends one report as a single JSON line.
pub fn write_json_line<W: Write>(mut w: W, report: &IterationReport) -> Result<()> {
    serde_json::to_writer(&mut w, report)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Writes the header plus one row per report.
pub fn write_iteration_csv<W: Write>(w: W, reports: &[IterationReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if reports.is_empty() {
        out.write_record(ITERATION_CSV_COLUMNS)?;
    }
    for r in reports {
        out.serialize(IterationCsvRow::from(r))?;
    }
    out.flush()?;
    Ok(())
}

/// Plot-ready per-round metrics (`round,mae,rmse`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub mae: f64,
    pub rmse: f64,
}

impl RoundRow {
    pub fn new(round: usize, m: &MetricsSnapshot) -> Self {
        RoundRow {
            round,
            mae: m.mae,
            rmse: m.rmse,
        }
    }
}

pub fn write_round_csv<W: Write>(w: W, rows: &[RoundRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(["round", "mae", "rmse"])?;
    }
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::ConfusionMatrix;

    fn report(iteration: usize) -> IterationReport {
        IterationReport {
            iteration,
            observed: 80000,
            unobserved: 1506126,
            candidates: 10,
            augmented: 5,
            refined: 2,
            overlap: 0,
            retained_frac: 0.0,
            gap_clamp_events: 0,
            test_mae: Some(0.75),
            test_rmse: None,
            train_steps: 3,
            train_objective: 1.0,
            threshold_violations: 0,
            train_confusion: ConfusionMatrix::new(5),
            test_confusion: None,
        }
    }

    #[test]
    fn csv_columns_are_fixed() {
        let mut buf = Vec::new();
        write_iteration_csv(&mut buf, &[report(1), report(2)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), ITERATION_CSV_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "1,80000,1506126,10,5,2,0,0.0,0.75,");
        assert_eq!(lines.count(), 1);

        let mut empty = Vec::new();
        write_iteration_csv(&mut empty, &[]).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().trim(), ITERATION_CSV_COLUMNS.join(","));
    }

    #[test]
    fn round_csv_keeps_round_numbers() {
        let snap = MetricsSnapshot { mae: 0.5, rmse: 0.75, n: 4 };
        let mut buf = Vec::new();
        write_round_csv(&mut buf, &[RoundRow::new(0, &snap), RoundRow::new(5, &snap)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "round,mae,rmse\n0,0.5,0.75\n5,0.5,0.75\n");
    }

    #[test]
    fn json_line_round_trips() {
        let mut buf = Vec::new();
        write_json_line(&mut buf, &report(4)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.matches('\n').count(), 1);
        let back: IterationReport = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(back, report(4));
    }
}
