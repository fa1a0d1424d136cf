//! CSV and JSON result writers.
//!
//! The CSV schema is fixed: one row per (condition, repetition, step) with
//! the per-step mean error and rendezvous count. JSON summaries carry the
//! aggregates and the full resolved configuration. All formatting is
//! deterministic so identical runs produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::harness::RunMetrics;

/// Writes per-step metrics with columns
/// `condition,repetition,step,mean_error_pct,rendezvous_count`.
pub fn write_runs_csv(path: &Path, runs: &[(String, Vec<RunMetrics>)]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "condition,repetition,step,mean_error_pct,rendezvous_count")?;
    for (label, metrics) in runs {
        for (rep, run) in metrics.iter().enumerate() {
            for (i, (&err, &count)) in run.error_pct.iter().zip(&run.rendezvous).enumerate() {
                writeln!(out, "{label},{rep},{},{err:.6},{count}", i + 1)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Serializes a summary as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| crate::error::Error::Numerical(format!("JSON serialization failed: {e}")))?;
    out.write_all(text.as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows_follow_the_fixed_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.csv");
        let runs = vec![(
            "uniform".to_string(),
            vec![RunMetrics {
                error_pct: vec![1.25, 2.5],
                rendezvous: vec![0, 3],
                lambdas: vec![],
                non_monotone_inversions: 0,
            }],
        )];
        write_runs_csv(&path, &runs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "condition,repetition,step,mean_error_pct,rendezvous_count");
        assert_eq!(lines[1], "uniform,0,1,1.250000,0");
        assert_eq!(lines[2], "uniform,0,2,2.500000,3");
        assert_eq!(lines.len(), 3);
    }
}
