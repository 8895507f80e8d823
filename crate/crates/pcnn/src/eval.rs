//! Model evaluation: accuracy, confusion matrix, per-class accuracy.

use rayon::prelude::*;

use crate::error::Result;
use crate::network::{forward_trace, predict, Mode, NetworkConfig, NetworkSpec, N_CLASSES};
use crate::photonic::CrosstalkModel;
use crate::scalar::Scalar;
use crate::twin::Samples;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub confusion: [[u32; N_CLASSES]; N_CLASSES],
    pub per_class_acc: [f64; N_CLASSES],
}

/// Runs inference over a dataset and assembles the confusion matrix
/// (rows = true class, columns = predicted class). Deterministic.
pub fn evaluate<S: Scalar>(
    spec: &NetworkSpec,
    config: &NetworkConfig<S>,
    theta: &[S],
    samples: &Samples<'_>,
    mode: Mode,
    crosstalk: Option<&CrosstalkModel<S>>,
) -> Result<EvalResult> {
    let effective = crate::network::effective_theta(theta, mode, crosstalk)?;
    let predictions: Vec<Result<usize>> = samples
        .images
        .par_iter()
        .map(|image| Ok(predict(&forward_trace(spec, config, &effective, image)?.scores)))
        .collect();
    let mut confusion = [[0u32; N_CLASSES]; N_CLASSES];
    for (p, &label) in predictions.into_iter().zip(samples.labels.iter()) {
        confusion[label as usize][p?] += 1;
    }
    let mut correct = 0u64;
    let mut per_class_acc = [0.0f64; N_CLASSES];
    for (c, row) in confusion.iter().enumerate() {
        let total: u32 = row.iter().sum();
        correct += row[c] as u64;
        per_class_acc[c] = if total > 0 { row[c] as f64 / total as f64 } else { 0.0 };
    }
    Ok(EvalResult {
        accuracy: correct as f64 / samples.len() as f64,
        confusion,
        per_class_acc,
    })
}

/// Confusion matrix as CSV with a header row of predicted classes.
pub fn confusion_csv(result: &EvalResult) -> String {
    let mut out = String::from("true\\pred,0,1,2,3,4,5,6,7,8,9\n");
    for (c, row) in result.confusion.iter().enumerate() {
        out.push_str(&c.to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
