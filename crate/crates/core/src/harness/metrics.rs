use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::DpnoModel;
use crate::pde::{FieldDataset, NormStats};

/// One row of the training history.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `NaN` on epochs without evaluation.
    pub test_mse: f64,
    pub test_rel_l2: f64,
    /// Elapsed time of the training call; kept out of the metrics file.
    pub wall_seconds: f64,
}

const HEADER: &str = "epoch,train_loss,test_mse,test_rel_l2";

/// Renders the history as delimited text. Wall-clock time is left out so
/// that repeated runs produce identical files.
pub fn metrics_csv(history: &[MetricRecord]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.test_mse, r.test_rel_l2);
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::Data("metrics file has an unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Data(format!("metrics row {} is malformed: `{line}`", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(MetricRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: num(f[1])?,
                test_mse: num(f[2])?,
                test_rel_l2: num(f[3])?,
                wall_seconds: f64::NAN,
            })
        })
        .collect()
}

pub fn write_metrics(path: &Path, history: &[MetricRecord]) -> Result<()> {
    std::fs::write(path, metrics_csv(history)).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text)
}

/// Test-set errors in physical units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub mse: f64,
    /// Mean over samples of `||pred - target|| / ||target||`.
    pub rel_l2: f64,
}

/// Errors of `model` on the samples `indices` of `data`.
///
/// Predictions are divided by the target scale before comparison against the
/// raw targets. Per-sample sums are accumulated in index order, so the result
/// does not depend on `batch`.
pub fn evaluate(
    model: &DpnoModel,
    norm: &NormStats,
    data: &FieldDataset,
    indices: &[usize],
    batch: usize,
) -> Result<EvalMetrics> {
    if indices.is_empty() || batch == 0 {
        return Err(Error::Data("evaluation needs samples and a positive batch".into()));
    }
    let mut sq = 0.0;
    let mut rel = 0.0;
    let mut count = 0usize;
    for chunk in indices.chunks(batch) {
        let x = data.normalized_inputs(chunk, norm)?;
        let pred = model.forward(&x)?.scale(1.0 / norm.target_scale);
        let target = data.targets.select_outer(chunk)?;
        if pred.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "prediction {:?} vs target {:?}",
                pred.shape(),
                target.shape()
            )));
        }
        let inner = target.len() / chunk.len();
        for (p, t) in pred.data().chunks_exact(inner).zip(target.data().chunks_exact(inner)) {
            let err: f64 = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
            let norm_t: f64 = t.iter().map(|v| v * v).sum();
            if norm_t == 0.0 {
                return Err(Error::Data("zero-norm target; relative error undefined".into()));
            }
            sq += err;
            rel += err.sqrt() / norm_t.sqrt();
            count += inner;
        }
    }
    Ok(EvalMetrics {
        mse: sq / count as f64,
        rel_l2: rel / indices.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_keeps_nan() {
        let h = vec![
            MetricRecord {
                epoch: 1,
                train_loss: 0.5,
                test_mse: f64::NAN,
                test_rel_l2: f64::NAN,
                wall_seconds: 1.0,
            },
            MetricRecord {
                epoch: 2,
                train_loss: 0.25,
                test_mse: 1e-7,
                test_rel_l2: 0.1,
                wall_seconds: 2.0,
            },
        ];
        let text = metrics_csv(&h);
        assert!(!text.contains("1.0,") && !text.contains("2.0\n"));
        let back = parse_metrics_csv(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back[0].test_mse.is_nan());
        assert_eq!(back[1].test_mse, 1e-7);
        assert_eq!(metrics_csv(&back), text);
    }

    #[test]
    fn malformed_rows_error() {
        assert!(parse_metrics_csv("a,b\n").is_err());
        assert!(parse_metrics_csv(&format!("{HEADER}\n1,2,3\n")).is_err());
    }
}
