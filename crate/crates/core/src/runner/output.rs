use std::path::Path;

use crate::algorithms::IterationRecord;
use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 5] = ["t", "sim_time", "total_batch", "train_loss", "grad_norm_sq"];

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes the records whose `t` is a multiple of `cadence`. `workers` sets
/// the number of `k_i` columns so an empty run still gets a full header.
pub fn emit_csv(records: &[IterationRecord], workers: usize, cadence: usize, path: &Path) -> Result<()> {
    if cadence == 0 {
        return Err(Error::contract("cadence must be >= 1"));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((1..=workers).map(|i| format!("k_{i}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in records.iter().filter(|r| r.t % cadence as u64 == 0) {
        if r.per_worker.len() != workers {
            return Err(Error::DimensionMismatch {
                expected: workers,
                found: r.per_worker.len(),
            });
        }
        let mut row = vec![
            r.t.to_string(),
            r.sim_time.to_string(),
            r.total_batch.to_string(),
            r.train_loss.to_string(),
            r.grad_norm_sq.to_string(),
        ];
        row.extend(r.per_worker.iter().map(|k| k.to_string()));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`emit_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<IterationRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < FIXED_COLUMNS.len() || header.iter().zip(FIXED_COLUMNS).any(|(a, b)| a != b) {
        return Err(parse_err(path, "unexpected header"));
    }
    let workers = header.len() - FIXED_COLUMNS.len();
    let mut out = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let bad = |col: &str| parse_err(path, format!("row {}: bad {col}", line + 1));
        let f = |i: usize| row[i].parse::<f64>().map_err(|_| bad(FIXED_COLUMNS[i]));
        let per_worker = (0..workers)
            .map(|j| row[FIXED_COLUMNS.len() + j].parse::<usize>().map_err(|_| bad("k")))
            .collect::<Result<Vec<_>>>()?;
        out.push(IterationRecord {
            t: row[0].parse().map_err(|_| bad("t"))?,
            sim_time: f(1)?,
            total_batch: row[2].parse().map_err(|_| bad("total_batch"))?,
            train_loss: f(3)?,
            grad_norm_sq: f(4)?,
            per_worker,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: u64) -> IterationRecord {
        IterationRecord {
            t,
            sim_time: 0.1 * (t + 1) as f64 + 1e-13,
            total_batch: 128 + t as usize,
            train_loss: 1.0 / (t as f64 + 3.0),
            grad_norm_sq: 1e-300 * t as f64,
            per_worker: vec![t as usize, 1],
        }
    }

    #[test]
    fn empty_run_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        emit_csv(&[], 3, 1, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "t,sim_time,total_batch,train_loss,grad_norm_sq,k_1,k_2,k_3\n");
        assert!(read_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn cadence_row_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let records: Vec<_> = (0..10).map(rec).collect();
        for cadence in 1..12 {
            emit_csv(&records, 2, cadence, &p).unwrap();
            assert_eq!(read_csv(&p).unwrap().len(), 10usize.div_ceil(cadence));
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let records: Vec<_> = (0..25).map(rec).collect();
        emit_csv(&records, 2, 1, &p).unwrap();
        assert_eq!(read_csv(&p).unwrap(), records);
    }

    #[test]
    fn io_errors_name_the_path() {
        let err = emit_csv(&[], 1, 1, Path::new("/nonexistent-dir/x.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"));
    }
}
