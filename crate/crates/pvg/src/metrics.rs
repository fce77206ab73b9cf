//! Metric rows and their CSV wire format.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{PvgError, Result};

/// The fixed metric registry; rows outside it are rejected.
pub const METRIC_REGISTRY: &[&str] = &[
    "accuracy",
    "eps_c",
    "eps_s",
    "zk_tv",
    "acceptance_rate",
    "worst_case_fail_rate",
    "precision",
    "recall",
];

pub const CSV_HEADER: &str = "run_id,protocol,metric,value,step,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub protocol: String,
    pub metric: String,
    pub value: f64,
    pub step: usize,
    pub seed: u64,
}

impl MetricsRow {
    pub fn new(
        run_id: &str,
        protocol: &str,
        metric: &str,
        value: f64,
        step: usize,
        seed: u64,
    ) -> Result<Self> {
        if !METRIC_REGISTRY.contains(&metric) {
            return Err(PvgError::Config(format!(
                "metric `{metric}` is not in the registry {METRIC_REGISTRY:?}"
            )));
        }
        Ok(Self {
            run_id: run_id.into(),
            protocol: protocol.into(),
            metric: metric.into(),
            value,
            step,
            seed,
        })
    }

    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.run_id, self.protocol, self.metric, self.value, self.step, self.seed
        )
    }

    fn from_csv(line: &str) -> Result<Self> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(PvgError::Config(format!("malformed metrics row `{line}`")));
        }
        let parse_err = |what: &str| PvgError::Config(format!("bad {what} in `{line}`"));
        Ok(Self {
            run_id: parts[0].into(),
            protocol: parts[1].into(),
            metric: parts[2].into(),
            value: parts[3].parse().map_err(|_| parse_err("value"))?,
            step: parts[4].parse().map_err(|_| parse_err("step"))?,
            seed: parts[5].parse().map_err(|_| parse_err("seed"))?,
        })
    }
}

/// Append rows to a CSV file, writing the header only when the file is new
/// or empty.
pub fn write_metrics<P: AsRef<Path>>(rows: &[MetricsRow], path: P) -> Result<()> {
    let path = path.as_ref();
    let needs_header = match std::fs::metadata(path) {
        Ok(meta) => meta.len() == 0,
        Err(_) => true,
    };
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut out = std::io::BufWriter::new(file);
    if needs_header {
        writeln!(out, "{CSV_HEADER}")?;
    }
    for row in rows {
        writeln!(out, "{}", row.to_csv())?;
    }
    out.flush()?;
    Ok(())
}

/// Read a metrics CSV back.
pub fn read_metrics<P: AsRef<Path>>(path: P) -> Result<Vec<MetricsRow>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if i == 0 && line == CSV_HEADER {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        rows.push(MetricsRow::from_csv(&line)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("pvg-metrics-test");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn empty_rows_produce_a_header_only_file() {
        let path = tmp("empty.csv");
        let _ = std::fs::remove_file(&path);
        write_metrics(&[], &path).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        assert_eq!(content.trim(), CSV_HEADER);
    }

    #[test]
    fn appending_twice_adds_rows_without_duplicating_the_header() {
        let path = tmp("append.csv");
        let _ = std::fs::remove_file(&path);
        let row = MetricsRow::new("r1", "nip", "accuracy", 0.75, 3, 9).unwrap();
        write_metrics(std::slice::from_ref(&row), &path).unwrap();
        write_metrics(&[row], &path).unwrap();
        let rows = read_metrics(&path).unwrap();
        assert_eq!(rows.len(), 2);
        let content = std::fs::read_to_string(&path).unwrap();
        assert_eq!(content.matches("run_id").count(), 1);
    }

    #[test]
    fn round_trip_preserves_values_exactly() {
        let path = tmp("roundtrip.csv");
        let _ = std::fs::remove_file(&path);
        let rows = vec![
            MetricsRow::new("r", "adp", "eps_c", 0.123456789012345, 1, 2).unwrap(),
            MetricsRow::new("r", "adp", "eps_s", 5.0 / 8.0, 1, 2).unwrap(),
            MetricsRow::new("r", "adp", "zk_tv", 1e-17, 2, 2).unwrap(),
        ];
        write_metrics(&rows, &path).unwrap();
        let back = read_metrics(&path).unwrap();
        assert_eq!(rows, back);
    }

    #[test]
    fn unknown_metric_names_are_rejected() {
        assert!(MetricsRow::new("r", "nip", "vibes", 1.0, 0, 0).is_err());
    }
}
