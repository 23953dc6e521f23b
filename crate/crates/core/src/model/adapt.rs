use serde::{Deserialize, Serialize};

use super::{Alignment, HeegnetModel};
use crate::alignment::{batch_moments, NormMode};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::layers::lorentz::rows_to_points;
use crate::manifold::LorentzPoint;
use crate::rng::seeded;
use crate::synth::EpochDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    /// Passes over the target stream.
    pub passes: usize,
    /// Epochs per update; 0 streams each domain as one batch.
    pub batch_size: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig { passes: 50, batch_size: 0 }
    }
}

/// Encoded sites of the given epochs, grouped per epoch. The encoder runs in
/// eval mode and no state changes.
fn encoded_sites(model: &HeegnetModel, ds: &EpochDataset, indices: &[usize]) -> Result<Vec<Vec<LorentzPoint>>> {
    let mut m = model.clone();
    let sites = m.config.stage1_sites();
    let k = m.config.k();
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(64) {
        let tape = Tape::new();
        let v = m.params.vars(&tape, false);
        let x = tape.constant(m.batch_input(ds, chunk)?);
        let f = m.encode(x, &v, false, &mut seeded(0))?;
        let pts = rows_to_points(&f.value(), k);
        out.extend(pts.chunks(sites).map(<[LorentzPoint]>::to_vec));
    }
    Ok(out)
}

/// Source-free adaptation: the encoder and classifier stay frozen, and only
/// new per-domain statistics for the target domains are estimated from
/// unlabeled target epochs, through the test track.
pub fn sfuda_adapt(model: &HeegnetModel, ds: &EpochDataset, targets: &[u32], cfg: &AdaptConfig) -> Result<HeegnetModel> {
    let mut out = model.clone();
    if model.config.alignment == Alignment::None {
        return Ok(out);
    }
    let mut targets = targets.to_vec();
    targets.sort_unstable();
    targets.dedup();
    if let Some(d) = targets.iter().find(|d| model.stats.contains(**d)) {
        return Err(Error::Validation(format!("target domain {d} already has statistics from training")));
    }
    for &d in &targets {
        let idx = ds.indices_in(&[d]);
        if idx.len() < 2 {
            return Err(Error::Validation(format!("target domain {d} has {} epoch(s); need at least 2", idx.len())));
        }
        let feats = encoded_sites(model, ds, &idx)?;
        let bs = if cfg.batch_size == 0 { feats.len() } else { cfg.batch_size };
        // the stream repeats, so each chunk's moments are computed once
        let moments = feats.chunks(bs).map(|chunk| batch_moments(&chunk.concat())).collect::<Result<Vec<_>>>()?;
        for _ in 0..cfg.passes {
            for (mu, var) in &moments {
                out.stats.blend_test(d, mu, *var, &model.config.momentum)?;
            }
        }
    }
    Ok(out)
}

/// Normalized (post-stage) sites of every epoch of domain `d`, in eval mode.
pub fn adapted_embeddings(model: &HeegnetModel, ds: &EpochDataset, d: u32) -> Result<Vec<LorentzPoint>> {
    let idx = ds.indices_in(&[d]);
    let mut m = model.clone();
    let k = m.config.k();
    let mut out = vec![];
    for chunk in idx.chunks(64) {
        let tape = Tape::new();
        let v = m.params.vars(&tape, false);
        let x = tape.constant(m.batch_input(ds, chunk)?);
        let f = m.encode(x, &v, false, &mut seeded(0))?;
        let fwd = m.head(f, &v, &vec![d; chunk.len()], NormMode::Eval)?;
        out.extend(rows_to_points(&fwd.stage1.value(), k));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{tiny_config, tiny_data};
    use crate::model::{fit, predict, TrainConfig};

    #[test]
    fn adaptation_only_adds_target_statistics() {
        let ds = tiny_data(3, 4, 5);
        let tc = TrainConfig { epochs: 2, batch_size: 16, ..TrainConfig::default() };
        let m = fit(&tiny_config(), &tc, &ds, &[0, 1]).unwrap().model;
        let src = ds.indices_in(&[0, 1]);
        let before = predict(&m, &ds, &src).unwrap();
        let logits_before = m.logits(&ds, &src).unwrap().0;
        let a = sfuda_adapt(&m, &ds, &[2], &AdaptConfig { passes: 5, batch_size: 0 }).unwrap();
        assert_eq!(a.params, m.params);
        assert_eq!(a.bn1, m.bn1);
        assert_eq!(a.stats.domains(), vec![0, 1, 2]);
        assert_eq!(a.stats.tracks[&0], m.stats.tracks[&0]);
        assert_eq!(predict(&a, &ds, &src).unwrap(), before);
        assert_eq!(a.logits(&ds, &src).unwrap().0, logits_before);
        // same stream twice from the same start is the same result
        let b = sfuda_adapt(&m, &ds, &[2], &AdaptConfig { passes: 5, batch_size: 0 }).unwrap();
        assert_eq!(a, b);
        assert!(sfuda_adapt(&m, &ds, &[1], &AdaptConfig::default()).is_err());
        let tgt = ds.indices_in(&[2]);
        assert_eq!(predict(&m, &ds, &tgt).unwrap().1, vec![2]);
        assert!(predict(&a, &ds, &tgt).unwrap().1.is_empty());
    }
}
