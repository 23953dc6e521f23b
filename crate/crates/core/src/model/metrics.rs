use serde::{Deserialize, Serialize};

use super::HeegnetModel;
use crate::error::{Error, Result};
use crate::synth::EpochDataset;

const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub balanced_accuracy: f64,
    /// `None` for classes absent from the ground truth.
    pub per_class_recall: Vec<Option<f64>>,
    pub absent_classes: Vec<u32>,
    /// Domains evaluated without statistics of their own.
    pub unseen_domains: Vec<u32>,
}

/// Mean per-class recall over the classes present in `truth`.
pub fn balanced_accuracy(truth: &[u32], pred: &[u32], n_classes: usize) -> Result<(f64, Vec<Option<f64>>)> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::Validation(format!("{} labels vs {} predictions", truth.len(), pred.len())));
    }
    let mut hit = vec![0usize; n_classes];
    let mut tot = vec![0usize; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        let t = t as usize;
        if t >= n_classes {
            return Err(Error::Validation(format!("label {t} out of range for {n_classes} classes")));
        }
        tot[t] += 1;
        hit[t] += usize::from(t == p as usize);
    }
    let recall: Vec<Option<f64>> = (0..n_classes).map(|c| (tot[c] > 0).then(|| hit[c] as f64 / tot[c] as f64)).collect();
    let present: Vec<f64> = recall.iter().flatten().copied().collect();
    Ok((present.iter().sum::<f64>() / present.len() as f64, recall))
}

/// Arg-max class per epoch, plus the domains that fell back to origin/unit statistics.
pub fn predict(model: &HeegnetModel, ds: &EpochDataset, indices: &[usize]) -> Result<(Vec<u32>, Vec<u32>)> {
    let mut pred = Vec::with_capacity(indices.len());
    let mut unseen = vec![];
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (logits, u) = model.logits(ds, chunk)?;
        unseen.extend(u);
        for row in logits.outer_iter() {
            let best = row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            pred.push(best as u32);
        }
    }
    unseen.sort_unstable();
    unseen.dedup();
    Ok((pred, unseen))
}

pub fn evaluate(model: &HeegnetModel, ds: &EpochDataset, indices: &[usize]) -> Result<EvalReport> {
    let (pred, unseen) = predict(model, ds, indices)?;
    let truth: Vec<u32> = indices.iter().map(|&i| ds.labels[i]).collect();
    let (ba, recall) = balanced_accuracy(&truth, &pred, model.config.n_classes)?;
    let absent = recall.iter().enumerate().filter(|(_, r)| r.is_none()).map(|(c, _)| c as u32).collect();
    Ok(EvalReport { n: indices.len(), balanced_accuracy: ba, per_class_recall: recall, absent_classes: absent, unseen_domains: unseen })
}
