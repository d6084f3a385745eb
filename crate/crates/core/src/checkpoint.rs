//! Text checkpoints of a trained model.
//!
//! ```text
//! STMMMF 1 <N> <M> <d> <R>
//! N lines of d values      (U)
//! M lines of d values      (V)
//! N lines of R-1 values    (Θ)
//! ```
//!
//! Values are written with 17 significant digits, enough to reproduce every
//! `f64` exactly.

use std::io::{BufRead, Write};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::FactorModel;

fn write_block<W: Write>(w: &mut W, block: &Array2<f64>) -> Result<()> {
    for row in block.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn save_checkpoint<W: Write>(mut w: W, model: &FactorModel) -> Result<()> {
    writeln!(
        w,
        "STMMMF 1 {} {} {} {}",
        model.n_users(),
        model.n_items(),
        model.dim(),
        model.max_rating()
    )?;
    write_block(&mut w, model.user_factors())?;
    write_block(&mut w, model.item_factors())?;
    write_block(&mut w, model.thresholds())?;
    w.flush()?;
    Ok(())
}

fn read_block<I>(lines: &mut I, rows: usize, cols: usize, line_no: &mut usize) -> Result<Array2<f64>>
where
    I: Iterator<Item = std::io::Result<String>>,
{
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        *line_no += 1;
        let line = lines.next().ok_or_else(|| Error::Format(format!("checkpoint truncated at line {line_no}")))??;
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: *line_no,
                message: format!("{tok:?} is not a number"),
            })?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::Parse {
                line: *line_no,
                message: format!("expected {cols} values, got {}", data.len() - before),
            });
        }
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("row-checked block"))
}

pub fn load_checkpoint<R: BufRead>(reader: R) -> Result<FactorModel> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty checkpoint".into()))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != "STMMMF" || fields[1] != "1" {
        return Err(Error::Format(format!("bad checkpoint header {header:?}")));
    }
    let nums: Vec<usize> = fields[2..]
        .iter()
        .map(|f| f.parse().map_err(|_| Error::Format(format!("bad checkpoint header {header:?}"))))
        .collect::<Result<_>>()?;
    let (n, m, d, r) = (nums[0], nums[1], nums[2], nums[3]);
    if r < 2 {
        return Err(Error::Format(format!("unsupported rating scale {r}")));
    }
    let mut line_no = 1;
    let users = read_block(&mut lines, n, d, &mut line_no)?;
    let items = read_block(&mut lines, m, d, &mut line_no)?;
    let thresholds = read_block(&mut lines, n, r - 1, &mut line_no)?;
    for rest in lines {
        if !rest?.trim().is_empty() {
            return Err(Error::Format("trailing data after checkpoint blocks".into()));
        }
    }
    FactorModel::new(users, items, thresholds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bitwise(seed in any::<u64>(), n in 1usize..6, m in 1usize..6, d in 1usize..4, r in 2u8..7) {
            let mut model = FactorModel::init(n, m, d, r, seed);
            // Awkward magnitudes exercise the exponent formatting.
            model.users *= 1e-300;
            model.items.mapv_inplace(|v| v * 12345.678);
            let mut buf = Vec::new();
            save_checkpoint(&mut buf, &model).unwrap();
            let back = load_checkpoint(buf.as_slice()).unwrap();
            prop_assert_eq!(back, model);
        }
    }

    #[test]
    fn header_and_body_checks() {
        assert!(load_checkpoint("STMMMF 2 1 1 1 2\n0\n0\n0\n".as_bytes()).is_err());
        assert!(load_checkpoint("STMMMF 1 1 1 1 2\n0\n0\n".as_bytes()).is_err());
        assert!(load_checkpoint("STMMMF 1 1 1 1 2\n0 1\n0\n0\n".as_bytes()).is_err());
        let ok = load_checkpoint("STMMMF 1 1 1 1 3\n1\n2\n-0.5 0.5\n".as_bytes()).unwrap();
        assert_eq!(ok.threshold_row(0), &[-0.5, 0.5]);
    }
}
