use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, ForwardMode, HeegnetModel, ModelConfig};
use crate::alignment::hhsw_loss;
use crate::autodiff::{Adam, Array, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::synth::EpochDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without a new best validation score before stopping.
    pub patience: usize,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 100, batch_size: 40, learning_rate: 1e-3, patience: 10, val_fraction: 0.2 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::Validation("need at least one epoch and batch size >= 2".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Validation(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Validation(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_ce: f64,
    pub val_balanced_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Snapshot at the best validation epoch.
    pub model: HeegnetModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Splits `indices` into train/validation parts, stratified by (domain,
/// class): each cell is shuffled and `round(fraction * n)` of it (at least
/// one when the cell has two or more epochs) goes to validation.
pub fn stratified_split<R: Rng + ?Sized>(ds: &EpochDataset, indices: &[usize], fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut cells: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for &i in indices {
        cells.entry((ds.domains[i], ds.labels[i])).or_default().push(i);
    }
    let (mut train, mut val) = (vec![], vec![]);
    for (_, mut cell) in cells {
        cell.shuffle(rng);
        let mut nv = (fraction * cell.len() as f64).round() as usize;
        if fraction > 0.0 && nv == 0 && cell.len() >= 2 {
            nv = 1;
        }
        val.extend_from_slice(&cell[..nv]);
        train.extend_from_slice(&cell[nv..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Minibatches as unions of per-domain sub-batches: each step takes up to
/// `ceil(batch / domains)` fresh samples from every domain that still has at
/// least two left.
pub(crate) fn domain_batches<R: Rng + ?Sized>(ds: &EpochDataset, indices: &[usize], batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut by_domain: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        by_domain.entry(ds.domains[i]).or_default().push(i);
    }
    let per = batch.div_ceil(by_domain.len().max(1)).max(2);
    let mut lists: Vec<Vec<usize>> = by_domain.into_values().collect();
    lists.iter_mut().for_each(|l| l.shuffle(rng));
    let mut cursor = vec![0usize; lists.len()];
    let mut out = vec![];
    loop {
        let mut b = vec![];
        for (l, c) in lists.iter().zip(cursor.iter_mut()) {
            let left = l.len() - *c;
            if left < 2 {
                continue;
            }
            let take = per.min(left);
            b.extend_from_slice(&l[*c..*c + take]);
            *c += take;
        }
        if b.is_empty() {
            return out;
        }
        out.push(b);
    }
}

/// Cross-entropy plus the weighted distribution loss, on the tape. Returns
/// `(total, cross_entropy)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn loss_on_tape<'t, R1: Rng + ?Sized, R2: Rng + ?Sized>(
    model: &mut HeegnetModel,
    x: Var<'t>,
    v: &[Var<'t>],
    labels: &[usize],
    domains: &[u32],
    mode: ForwardMode,
    dropout_rng: &mut R1,
    hhsw_rng: &mut R2,
) -> Result<(Var<'t>, Var<'t>)> {
    let fwd = model.forward_tape(x, v, domains, mode, dropout_rng)?;
    let ce = fwd.logits.softmax_cross_entropy(labels);
    let w = model.config.effective_hhsw_weight();
    if w == 0.0 {
        return Ok((ce, ce));
    }
    let (emb, tags) = model.hhsw_embeddings(&fwd, domains);
    let h = hhsw_loss(emb, &tags, &model.config.hhsw(), hhsw_rng, model.config.k())?;
    Ok((ce + h * w, ce))
}

/// Value of the training objective for the given epochs (training-mode
/// forward, which also advances the model's running statistics).
pub fn training_loss(model: &mut HeegnetModel, ds: &EpochDataset, indices: &[usize], seed: u64) -> Result<f64> {
    let tape = Tape::new();
    let v = model.params.vars(&tape, false);
    let x = tape.constant(model.batch_input(ds, indices)?);
    let labels: Vec<usize> = indices.iter().map(|&i| ds.labels[i] as usize).collect();
    let domains: Vec<u32> = indices.iter().map(|&i| ds.domains[i]).collect();
    let (l, _) = loss_on_tape(
        model,
        x,
        &v,
        &labels,
        &domains,
        ForwardMode::TRAIN,
        &mut seeded(derive_seed(seed, 1)),
        &mut seeded(derive_seed(seed, 2)),
    )?;
    Ok(l.item())
}

/// One optimizer step on a batch; returns `(total, cross_entropy)`.
pub(crate) fn train_step<R: Rng + ?Sized>(
    model: &mut HeegnetModel,
    opt: &mut Adam,
    ds: &EpochDataset,
    batch: &[usize],
    dropout_rng: &mut R,
    hhsw_rng: &mut R,
) -> Result<(f64, f64)> {
    let tape = Tape::new();
    let v = model.params.vars(&tape, true);
    let x = tape.constant(model.batch_input(ds, batch)?);
    let labels: Vec<usize> = batch.iter().map(|&i| ds.labels[i] as usize).collect();
    let domains: Vec<u32> = batch.iter().map(|&i| ds.domains[i]).collect();
    let (loss, ce) = loss_on_tape(model, x, &v, &labels, &domains, ForwardMode::TRAIN, dropout_rng, hhsw_rng)?;
    let (lv, cv) = (loss.item(), ce.item());
    if !lv.is_finite() {
        return Err(Error::Numeric(format!("training loss became {lv}")));
    }
    tape.backward(loss)?;
    let grads: Vec<Option<Array>> = v.iter().map(|&p| tape.grad(p)).collect();
    let mut params: Vec<&mut Array> = model.params.named_mut().into_iter().map(|(_, a)| a).collect();
    opt.step(&mut params, &grads);
    Ok((lv, cv))
}

/// Trains a fresh model on the given source domains of `ds`.
///
/// Uses a stratified inner train/validation split, Adam, and early stopping
/// on validation balanced accuracy; returns the best snapshot.
pub fn fit(config: &ModelConfig, train: &TrainConfig, ds: &EpochDataset, sources: &[u32]) -> Result<FitResult> {
    train.validate()?;
    let mut model = HeegnetModel::new(config.clone())?;
    if config.n_classes != ds.n_classes() {
        return Err(Error::Dimension(format!("model has {} classes, dataset {}", config.n_classes, ds.n_classes())));
    }
    let mut sources = sources.to_vec();
    sources.sort_unstable();
    sources.dedup();
    if sources.len() < 2 {
        return Err(Error::Validation(format!("need at least 2 source domains, got {}", sources.len())));
    }
    let indices = ds.indices_in(&sources);
    for &d in &sources {
        for c in 0..ds.n_classes() as u32 {
            if !indices.iter().any(|&i| ds.domains[i] == d && ds.labels[i] == c) {
                return Err(Error::Validation(format!("source domain {d} has no epochs of class {c}")));
            }
        }
    }
    if train.batch_size < 2 * sources.len() {
        return Err(Error::Validation(format!(
            "batch size {} cannot give each of {} domains two samples",
            train.batch_size,
            sources.len()
        )));
    }
    let seed = config.seed;
    let (tr, val) = stratified_split(ds, &indices, train.val_fraction, &mut seeded(derive_seed(seed, 10)));
    let mut shuffle_rng = seeded(derive_seed(seed, 11));
    let mut dropout_rng = seeded(derive_seed(seed, 12));
    let mut hhsw_rng = seeded(derive_seed(seed, 13));
    let mut opt = Adam::new(train.learning_rate);

    let mut history = vec![];
    let mut best: Option<(f64, usize, HeegnetModel)> = None;
    for epoch in 0..train.epochs {
        let batches = domain_batches(ds, &tr, train.batch_size, &mut shuffle_rng);
        let (mut sum_l, mut sum_c) = (0.0, 0.0);
        for b in &batches {
            let (l, c) = train_step(&mut model, &mut opt, ds, b, &mut dropout_rng, &mut hhsw_rng)?;
            sum_l += l;
            sum_c += c;
        }
        let nb = batches.len().max(1) as f64;
        let score = if val.is_empty() { -sum_l / nb } else { evaluate(&model, ds, &val)?.balanced_accuracy };
        history.push(EpochRecord { epoch, train_loss: sum_l / nb, train_ce: sum_c / nb, val_balanced_accuracy: score });
        log::debug!("epoch {epoch}: loss {:.4} val {:.4}", sum_l / nb, score);
        match &best {
            Some((s, _, _)) if score <= *s => {}
            _ => best = Some((score, epoch, model.clone())),
        }
        if epoch - best.as_ref().unwrap().1 >= train.patience {
            break;
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(FitResult { model, history, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{tiny_config, tiny_data};

    #[test]
    fn split_is_stratified() {
        let ds = tiny_data(3, 5, 1);
        let all: Vec<usize> = (0..ds.len()).collect();
        let (tr, val) = stratified_split(&ds, &all, 0.2, &mut seeded(1));
        assert_eq!(tr.len() + val.len(), all.len());
        assert_eq!(val.len(), 3 * 4);
        for d in 0..3 {
            for c in 0..4 {
                assert_eq!(val.iter().filter(|&&i| ds.domains[i] == d && ds.labels[i] == c).count(), 1);
            }
        }
    }

    #[test]
    fn batches_are_domain_unions() {
        let ds = tiny_data(3, 5, 1);
        let all: Vec<usize> = (0..ds.len()).collect();
        let batches = domain_batches(&ds, &all, 12, &mut seeded(2));
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), all.len());
        for b in &batches {
            for d in 0..3 {
                let n = b.iter().filter(|&&i| ds.domains[i] == d).count();
                assert!(n == 0 || n >= 2);
                assert!(n <= 4);
            }
        }
    }

    #[test]
    fn zero_weight_loss_is_cross_entropy() {
        let ds = tiny_data(2, 2, 3);
        let idx: Vec<usize> = (0..ds.len()).collect();
        let mut full = HeegnetModel::new(tiny_config()).unwrap();
        let mut plain = HeegnetModel::new(ModelConfig { hhsw_weight: 0.0, ..tiny_config() }).unwrap();
        let lf = training_loss(&mut full, &ds, &idx, 5).unwrap();
        let lp = training_loss(&mut plain, &ds, &idx, 5).unwrap();
        assert!(lf > lp);
        // same forward pass gives the bare cross-entropy
        let tape = Tape::new();
        let mut m = HeegnetModel::new(ModelConfig { hhsw_weight: 0.0, ..tiny_config() }).unwrap();
        let v = m.params.vars(&tape, false);
        let x = tape.constant(m.batch_input(&ds, &idx).unwrap());
        let labels: Vec<usize> = idx.iter().map(|&i| ds.labels[i] as usize).collect();
        let (l, ce) = loss_on_tape(&mut m, x, &v, &labels, &ds.domains, ForwardMode::TRAIN, &mut seeded(1), &mut seeded(2)).unwrap();
        assert_eq!(l.item(), ce.item());
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let tape = Tape::new();
        let logits = tape.constant(Array::zeros(ndarray::IxDyn(&[3, 4])));
        assert!((logits.softmax_cross_entropy(&[0, 1, 3]).item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let ds = tiny_data(2, 6, 4);
        let cfg = ModelConfig { seed: 3, ..tiny_config() };
        let tc = TrainConfig { epochs: 10, batch_size: 16, learning_rate: 1e-2, patience: 100, ..TrainConfig::default() };
        let a = fit(&cfg, &tc, &ds, &[0, 1]).unwrap();
        assert_eq!(a.history.len(), 10);
        assert!(a.history[9].train_loss < a.history[0].train_loss, "{:?}", a.history);
        let b = fit(&cfg, &tc, &ds, &[0, 1]).unwrap();
        assert_eq!(a.history, b.history);
        let best = a.history.iter().map(|r| r.val_balanced_accuracy).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(a.history[a.best_epoch].val_balanced_accuracy, best);
        assert!(fit(&cfg, &tc, &ds, &[0]).is_err());
    }
}
