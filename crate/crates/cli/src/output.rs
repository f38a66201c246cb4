//! CSV, JSON and hashing helpers.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use kinetic_core::diagnostics::DiagnosticsRecord;

use crate::CliError;

/// `t, M, E, H, minF`, one column per norm label, then `A, B`.
pub fn write_series(path: &Path, labels: &[String], records: &[DiagnosticsRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = ["t", "M", "E", "H", "minF"].iter().map(|s| s.to_string()).collect();
    header.extend(labels.iter().cloned());
    header.extend(["A".to_string(), "B".to_string()]);
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row: Vec<String> = [r.t, r.mass, r.energy, r.entropy, r.min_f].iter().map(f64::to_string).collect();
        row.extend(r.norms.iter().map(f64::to_string));
        match &r.smallness {
            Some(s) => row.extend([s.a.to_string(), s.b.to_string()]),
            None => row.extend([String::new(), String::new()]),
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// SHA-256 of the little-endian bytes of `values`, hex encoded.
pub fn hash_values(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}
