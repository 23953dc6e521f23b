//! Cross-validation over recording domains and the alignment ablation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{evaluate, fit, sfuda_adapt, AdaptConfig, Alignment, EpochRecord, EvalReport, ModelConfig, TrainConfig};
use crate::rng::derive_seed;
use crate::synth::EpochDataset;

/// With at most this many domains every domain is its own fold.
pub const MAX_LOGO_DOMAINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub sources: Vec<u32>,
    pub targets: Vec<u32>,
}

/// Leave-one-domain-out for up to ten domains; otherwise ten groups formed
/// by dealing the sorted domain ids round-robin.
pub fn folds(domains: &[u32]) -> Result<Vec<Fold>> {
    let mut ids = domains.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 3 {
        return Err(Error::Validation(format!("cross-validation needs at least 3 domains, got {}", ids.len())));
    }
    let groups = ids.len().min(MAX_LOGO_DOMAINS);
    Ok((0..groups)
        .map(|g| {
            let (targets, sources): (Vec<(usize, u32)>, Vec<(usize, u32)>) = ids.iter().copied().enumerate().partition(|(i, _)| i % groups == g);
            Fold { index: g, sources: sources.into_iter().map(|x| x.1).collect(), targets: targets.into_iter().map(|x| x.1).collect() }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub domain: u32,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: Fold,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub scores: Vec<DomainScore>,
}

/// Train on the fold's sources, adapt to its targets, score each target.
pub fn run_fold(model: &ModelConfig, train: &TrainConfig, adapt: &AdaptConfig, ds: &EpochDataset, fold: &Fold) -> Result<FoldResult> {
    let overlap: Vec<u32> = fold.targets.iter().filter(|t| fold.sources.contains(t)).copied().collect();
    if !overlap.is_empty() {
        return Err(Error::Validation(format!("domains {overlap:?} are both source and target")));
    }
    let cfg = ModelConfig { seed: derive_seed(model.seed, fold.index as u64), ..model.clone() };
    let fitted = fit(&cfg, train, ds, &fold.sources)?;
    let adapted = sfuda_adapt(&fitted.model, ds, &fold.targets, adapt)?;
    let scores = fold
        .targets
        .iter()
        .map(|&d| Ok(DomainScore { domain: d, report: evaluate(&adapted, ds, &ds.indices_in(&[d]))? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldResult { fold: fold.clone(), best_epoch: fitted.best_epoch, history: fitted.history, scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
}

impl CvResult {
    /// Target balanced accuracy per domain, ascending by domain.
    pub fn per_domain(&self) -> Vec<(u32, f64)> {
        let mut v: Vec<(u32, f64)> = self.folds.iter().flat_map(|f| f.scores.iter().map(|s| (s.domain, s.report.balanced_accuracy))).collect();
        v.sort_by_key(|x| x.0);
        v
    }

    pub fn grand_mean(&self) -> f64 {
        let v = self.per_domain();
        v.iter().map(|x| x.1).sum::<f64>() / v.len().max(1) as f64
    }
}

/// Runs every fold; with `threads > 1` folds run on a rayon pool. Fold seeds
/// are derived from the model seed and the fold index, so the result does
/// not depend on the thread count.
pub fn cross_validate(model: &ModelConfig, train: &TrainConfig, adapt: &AdaptConfig, ds: &EpochDataset, threads: usize) -> Result<CvResult> {
    let fs = folds(&ds.domain_ids())?;
    let results: Vec<Result<FoldResult>> = if threads > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
        pool.install(|| fs.par_iter().map(|f| run_fold(model, train, adapt, ds, f)).collect())
    } else {
        fs.iter().map(|f| run_fold(model, train, adapt, ds, f)).collect()
    };
    Ok(CvResult { folds: results.into_iter().collect::<Result<Vec<_>>>()? })
}

/// One-sided exact sign test that `a` tends to exceed `b`; ties are dropped.
/// Returns `(wins, non-ties, p)`.
pub fn sign_test(a: &[f64], b: &[f64]) -> (usize, usize, f64) {
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let n = a.iter().zip(b).filter(|(x, y)| x != y).count();
    if n == 0 {
        return (0, 0, 1.0);
    }
    // P[X >= wins] for X ~ Binomial(n, 1/2), via log-binomials
    let ln_choose = |n: usize, k: usize| -> f64 { (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum() };
    let p: f64 = (wins..=n).map(|k| (ln_choose(n, k) - n as f64 * std::f64::consts::LN_2).exp()).sum();
    (wins, n, p.min(1.0))
}

pub const ABLATIONS: [Alignment; 3] = [Alignment::None, Alignment::Moments, Alignment::Full];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub alignment: Alignment,
    pub mean_balanced_accuracy: f64,
    pub per_domain: Vec<(u32, f64)>,
}

/// Cross-validates each alignment setting for each seed. The dataset is
/// generated once per seed by `make_data`.
pub fn ablation(
    model: &ModelConfig,
    train: &TrainConfig,
    adapt: &AdaptConfig,
    seeds: &[u64],
    threads: usize,
    mut make_data: impl FnMut(u64) -> Result<EpochDataset>,
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = vec![];
    for &seed in seeds {
        let ds = make_data(seed)?;
        for alignment in ABLATIONS {
            let cfg = ModelConfig { alignment, seed, ..model.clone() };
            let cv = cross_validate(&cfg, train, adapt, &ds, threads)?;
            let row = AblationRow { seed, alignment, mean_balanced_accuracy: cv.grand_mean(), per_domain: cv.per_domain() };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}
