//! Evaluation metrics and the experiment record format.

use crate::error::{ModelError, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use vsr_core::tensor::Tensor;

/// WER = unit-cost Levenshtein(hyp, ref) / len(ref).
pub fn word_error_rate(hyp: &[usize], reference: &[usize]) -> Result<f64> {
    if reference.is_empty() {
        return Err(ModelError::EmptyReference);
    }
    let (n, m) = (hyp.len(), reference.len());
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let sub = prev[j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m] as f64 / m as f64)
}

/// Fraction of rows whose argmax equals the label. Ties break toward
/// the lowest class index.
pub fn top1_accuracy(logits: &Tensor<f32>, labels: &[usize]) -> Result<f64> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() || labels.is_empty() {
        return Err(ModelError::invalid(
            "top1_accuracy",
            format!("logits {shape:?} vs {} labels", labels.len()),
        ));
    }
    let c = shape[1];
    let mut hits = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * c..(i + 1) * c];
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        hits += usize::from(best == label);
    }
    Ok(hits as f64 / labels.len() as f64)
}

pub const CSV_HEADER: &str = "run_id,task,regime,fraction,seed,epoch,metric,value";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub task: String,
    pub regime: String,
    pub fraction: f64,
    pub seed: u64,
    pub epoch: usize,
    pub metric: String,
    pub value: f64,
}

impl MetricRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.run_id,
            self.task,
            self.regime,
            self.fraction,
            self.seed,
            self.epoch,
            self.metric,
            self.value
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(ModelError::invalid("metric_csv", format!("bad row {line:?}")));
        }
        Ok(MetricRecord {
            run_id: parts[0].into(),
            task: parts[1].into(),
            regime: parts[2].into(),
            fraction: parts[3]
                .parse()
                .map_err(|e| ModelError::invalid("metric_csv", format!("fraction: {e}")))?,
            seed: parts[4]
                .parse()
                .map_err(|e| ModelError::invalid("metric_csv", format!("seed: {e}")))?,
            epoch: parts[5]
                .parse()
                .map_err(|e| ModelError::invalid("metric_csv", format!("epoch: {e}")))?,
            metric: parts[6].into(),
            value: parts[7]
                .parse()
                .map_err(|e| ModelError::invalid("metric_csv", format!("value: {e}")))?,
        })
    }
}

/// Write header + rows; records must be finite and unique on
/// (run_id, epoch, metric).
pub fn write_metrics_csv(path: impl AsRef<Path>, records: &[MetricRecord]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for r in records {
        if !r.value.is_finite() {
            return Err(ModelError::invalid("metric_csv", format!("non-finite value in {}", r.csv_row())));
        }
        if !seen.insert((r.run_id.clone(), r.task.clone(), r.regime.clone(), r.fraction.to_bits(), r.seed, r.epoch, r.metric.clone())) {
            return Err(ModelError::invalid("metric_csv", format!("duplicate record {}", r.csv_row())));
        }
    }
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{CSV_HEADER}")?;
    for r in records {
        writeln!(f, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(ModelError::invalid("metric_csv", format!("bad header {other:?}"))),
    }
    lines.map(MetricRecord::parse_csv_row).collect()
}
