//! Run configuration: a TOML file with `data`, `model`, `align`, `train`,
//! `adapt` and `folds` sections plus a few top-level keys. Every key has a
//! default and unknown keys are errors. `section.key=value` overrides are
//! applied on top of the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::{MomentumSchedule, ReferenceKind};
use crate::error::{Error, Result};
use crate::layers::LfcMode;
use crate::manifold::DEFAULT_MAX_NORM;
use crate::model::{AdaptConfig, Alignment, HhswAttach, ModelConfig, TrainConfig};
use crate::synth::{EpochSpec, ShiftPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub domains: usize,
    pub families: usize,
    pub variants: usize,
    pub channels: usize,
    pub times: usize,
    pub sampling_rate: f64,
    pub snr_db: f64,
    pub per_cell: usize,
    pub shift: ShiftPolicy,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = EpochSpec::default();
        DataConfig {
            domains: s.n_domains,
            families: s.families,
            variants: s.variants,
            channels: s.n_channels,
            times: s.n_times,
            sampling_rate: s.sampling_rate,
            snr_db: s.snr_db,
            per_cell: s.per_cell,
            shift: s.shift,
        }
    }
}

impl DataConfig {
    pub fn spec(&self, seed: u64) -> EpochSpec {
        EpochSpec {
            n_domains: self.domains,
            families: self.families,
            variants: self.variants,
            n_channels: self.channels,
            n_times: self.times,
            sampling_rate: self.sampling_rate,
            snr_db: self.snr_db,
            per_cell: self.per_cell,
            shift: self.shift,
            seed,
        }
    }
}

/// Architecture hyperparameters. Channel, sample and class counts come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub curvature: f64,
    pub temporal_filters: usize,
    pub temporal_kernel: usize,
    pub depth_multiplier: usize,
    pub depth_kernel: usize,
    pub pool1: usize,
    pub pool2: usize,
    pub dropout: f64,
    pub max_norm: f64,
    pub lfc_mode: LfcMode,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        ArchConfig {
            curvature: m.curvature,
            temporal_filters: m.temporal_filters,
            temporal_kernel: m.temporal_kernel,
            depth_multiplier: m.depth_multiplier,
            depth_kernel: m.depth_kernel,
            pool1: m.pool1,
            pool2: m.pool2,
            dropout: m.dropout,
            max_norm: DEFAULT_MAX_NORM,
            lfc_mode: m.lfc_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub mode: Alignment,
    pub hhsw_weight: f64,
    pub slices: usize,
    pub exponent: f64,
    pub reference: ReferenceKind,
    pub attach: HhswAttach,
    pub momentum: MomentumSchedule,
}

impl Default for AlignConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        AlignConfig {
            mode: m.alignment,
            hhsw_weight: m.hhsw_weight,
            slices: m.hhsw_slices,
            exponent: m.hhsw_exponent,
            reference: m.hhsw_reference,
            attach: m.hhsw_attach,
            momentum: m.momentum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldPolicy {
    /// Train on `folds.sources`, adapt to and score `folds.targets`.
    #[default]
    Fixed,
    /// Leave-one-domain-out (ten groups beyond ten domains) over the whole dataset.
    Logo,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FoldConfig {
    pub policy: FoldPolicy,
    /// Empty means every domain not listed as a target.
    pub sources: Vec<u32>,
    /// Empty means every domain not listed as a source.
    pub targets: Vec<u32>,
}

impl FoldConfig {
    /// Resolves the fixed split against the domains present in a dataset.
    pub fn resolve(&self, present: &[u32]) -> Result<(Vec<u32>, Vec<u32>)> {
        let rest = |given: &[u32]| present.iter().copied().filter(|d| !given.contains(d)).collect::<Vec<_>>();
        let (s, t) = match (self.sources.is_empty(), self.targets.is_empty()) {
            (true, true) => return Err(Error::Validation("folds.sources or folds.targets must be set".into())),
            (true, false) => (rest(&self.targets), self.targets.clone()),
            (false, true) => (self.sources.clone(), rest(&self.sources)),
            (false, false) => (self.sources.clone(), self.targets.clone()),
        };
        let overlap: Vec<u32> = t.iter().filter(|d| s.contains(d)).copied().collect();
        if !overlap.is_empty() {
            return Err(Error::Validation(format!("domains {overlap:?} are both source and target")));
        }
        if let Some(d) = s.iter().chain(&t).find(|d| !present.contains(d)) {
            return Err(Error::Validation(format!("domain {d} is not in the dataset")));
        }
        Ok((s, t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for fold-parallel work; 0 uses `LORENTZKIT_THREADS` or 1.
    pub threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ArchConfig,
    pub align: AlignConfig,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    pub folds: FoldConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 0,
            out: None,
            data: DataConfig::default(),
            model: ArchConfig::default(),
            align: AlignConfig::default(),
            train: TrainConfig::default(),
            adapt: AdaptConfig::default(),
            folds: FoldConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Validation(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `a.b.c=value`. The value is read as a TOML value when it
    /// parses as one and as a bare string otherwise.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("override {assignment:?} is not key=value")))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::Validation(format!("bad key {key:?}")));
        }
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Table::try_from(&*self).expect("config serializes");
        let mut table = &mut root;
        for part in &path[..path.len() - 1] {
            table = match table.get_mut(*part) {
                Some(toml::Value::Table(t)) => t,
                _ => return Err(Error::Validation(format!("unknown config section {key:?}"))),
            };
        }
        table.insert(path[path.len() - 1].to_string(), value);
        *self = root.try_into().map_err(|e: toml::de::Error| Error::Validation(format!("override {key}: {}", e.message())))?;
        Ok(())
    }

    /// Full model configuration for a dataset of the given shape.
    pub fn model_config(&self, n_channels: usize, n_times: usize, n_classes: usize) -> ModelConfig {
        let (m, a) = (&self.model, &self.align);
        ModelConfig {
            n_channels,
            n_times,
            n_classes,
            curvature: m.curvature,
            temporal_filters: m.temporal_filters,
            temporal_kernel: m.temporal_kernel,
            depth_multiplier: m.depth_multiplier,
            pool1: m.pool1,
            pool2: m.pool2,
            dropout: m.dropout,
            depth_kernel: m.depth_kernel,
            max_norm: m.max_norm,
            lfc_mode: m.lfc_mode,
            alignment: a.mode,
            hhsw_weight: a.hhsw_weight,
            hhsw_slices: a.slices,
            hhsw_exponent: a.exponent,
            hhsw_reference: a.reference,
            hhsw_attach: a.attach,
            momentum: a.momentum,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.spec(self.seed).validate()?;
        self.model_config(self.data.channels, self.data.times, self.data.families * self.data.variants).validate()?;
        self.train.validate()?;
        Ok(())
    }
}
