//! Evaluation measures: accuracy, structural similarity, 2-D embeddings, the
//! ablation summary and the loss-weight sweep.

pub mod ablation;
pub mod embed;
pub mod ssim;
pub mod sweep;

pub use ablation::{ablation_matrix, AblationMatrix, AblationRow, ABLATION_ROWS};
pub use embed::{embed_2d, pca, tsne, Embedding, EmbeddingMeta, TsneConfig};
pub use sweep::{run_sweep, sweep_configs, SweepParameter, SweepResult, SweepRun, SWEEP_VALUES};
pub use ssim::{mean_intra_class_ssim, ssim, IntraClassSsim, SsimConfig, SsimRow, SsimTable, WindowKind};

use crate::data::{LabelBatch, ProbBatch};
use crate::error::{Error, Result};

/// Fraction of predictions equal to the labels.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::contract(format!("{} predictions for {} labels", predicted.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::Empty("accuracy of an empty set".into()));
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Accuracy of the arg-max class of each probability row.
pub fn prob_accuracy(probs: &ProbBatch, labels: &LabelBatch) -> Result<f64> {
    accuracy(probs.argmax().labels(), labels.labels())
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}
