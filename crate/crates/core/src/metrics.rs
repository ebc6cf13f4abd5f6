//! Per-iteration metrics rows and their CSV form.

use crate::error::{Error, Result};
use crate::nail::NailTrace;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const HEADER: [&str; 7] = [
    "seed",
    "iteration",
    "reverse_kl",
    "j_nail",
    "expected_true_reward",
    "wall_clock_ms",
    "estimator_loss",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub iteration: usize,
    pub reverse_kl: Option<f64>,
    pub j_nail: Option<f64>,
    pub expected_true_reward: Option<f64>,
    pub wall_clock_ms: Option<f64>,
    pub estimator_loss: Option<f64>,
}

impl MetricsRecord {
    fn values(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("reverse_kl", self.reverse_kl),
            ("j_nail", self.j_nail),
            ("expected_true_reward", self.expected_true_reward),
            ("wall_clock_ms", self.wall_clock_ms),
            ("estimator_loss", self.estimator_loss),
        ]
    }
}

/// Rows for one seed; a NaN reverse KL (no evaluator) becomes an empty field.
pub fn records_from_trace(trace: &NailTrace, seed: u64) -> Vec<MetricsRecord> {
    trace
        .records
        .iter()
        .map(|r| MetricsRecord {
            seed,
            iteration: r.iteration,
            reverse_kl: Some(r.reverse_kl).filter(|v| !v.is_nan()),
            j_nail: r.j_nail,
            expected_true_reward: r.expected_true_reward,
            wall_clock_ms: None,
            estimator_loss: r.estimator_loss,
        })
        .collect()
}

/// 12 significant digits in scientific notation.
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.11e}")
    }
}

/// Sorts by `(seed, iteration)` so the output does not depend on how seeds
/// were scheduled.
pub fn sort_records(records: &mut [MetricsRecord]) {
    records.sort_by_key(|r| (r.seed, r.iteration));
}

pub fn write_metrics_to<W: Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(HEADER).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.seed.to_string(), r.iteration.to_string()];
        for (name, v) in r.values() {
            row.push(match v {
                Some(x) if x.is_nan() => {
                    log::warn!(
                        "seed {} iteration {}: {name} is NaN, written as empty",
                        r.seed,
                        r.iteration
                    );
                    String::new()
                }
                Some(x) => format_value(x),
                None => String::new(),
            });
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_metrics_to(records, std::io::BufWriter::new(file))
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let header = rdr.headers().map_err(|e| Error::Io(std::io::Error::other(e)))?.clone();
    if header.iter().ne(HEADER) {
        return Err(Error::Format {
            line: 1,
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Format {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}
