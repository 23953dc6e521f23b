//! The HEEGNet architecture: a Euclidean temporal/spatial convolution
//! encoder, a lift onto the hyperboloid, a Lorentz pointwise convolution,
//! domain-specific momentum normalization, Lorentz pooling and a Lorentz
//! multinomial logistic regression head.

mod adapt;
mod checkpoint;
mod metrics;
mod train;

use ndarray::IxDyn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{hbn_rows, DomainStats, HhswConfig, MomentumSchedule, NormMode, ReferenceKind, HBN_EPS};
use crate::autodiff::{Array, Conv2d, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::lorentz::{centroid, hmlr, rows_to_points};
use crate::layers::{batch_norm, dropout, hcat, lorentz_avg_pool, lorentz_conv, lorentz_elu, proj_x, Activation, BnState, LfcMode, LfcParams, MlrParams};
use crate::manifold::{Curvature, DEFAULT_MAX_NORM};
use crate::rng::seeded;
use crate::synth::EpochDataset;

pub use adapt::{adapted_embeddings, sfuda_adapt, AdaptConfig};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};
pub use metrics::{balanced_accuracy, evaluate, predict, EvalReport};
pub use train::{fit, stratified_split, training_loss, EpochRecord, FitResult, TrainConfig};
pub(crate) use train::loss_on_tape;

/// Which alignment the model uses after the pointwise Lorentz convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// No normalization stage and no distribution loss.
    None,
    /// Domain-specific moment normalization only.
    Moments,
    /// Moment normalization plus the sliced-Wasserstein distribution loss.
    #[default]
    Full,
}

/// Where the distribution loss reads its per-sample embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HhswAttach {
    /// Every normalized site is a sample of its domain's measure.
    #[default]
    Sites,
    /// Per-sample Lorentzian centroid of the normalized sites.
    Stage1,
    /// The concatenated point fed to the classifier.
    PreMlr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_channels: usize,
    pub n_times: usize,
    pub n_classes: usize,
    pub curvature: f64,
    pub temporal_filters: usize,
    pub temporal_kernel: usize,
    pub depth_multiplier: usize,
    pub pool1: usize,
    pub pool2: usize,
    pub dropout: f64,
    pub depth_kernel: usize,
    pub max_norm: f64,
    pub lfc_mode: LfcMode,
    pub alignment: Alignment,
    pub hhsw_weight: f64,
    pub hhsw_slices: usize,
    pub hhsw_exponent: f64,
    pub hhsw_reference: ReferenceKind,
    pub hhsw_attach: HhswAttach,
    pub momentum: MomentumSchedule,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_channels: 8,
            n_times: 256,
            n_classes: 4,
            curvature: -1.0,
            temporal_filters: 8,
            temporal_kernel: 64,
            depth_multiplier: 2,
            pool1: 4,
            pool2: 8,
            dropout: 0.25,
            depth_kernel: 16,
            max_norm: DEFAULT_MAX_NORM,
            lfc_mode: LfcMode::Gated,
            alignment: Alignment::Full,
            hhsw_weight: 0.5,
            hhsw_slices: 1000,
            hhsw_exponent: 2.0,
            hhsw_reference: ReferenceKind::UnitSphere,
            hhsw_attach: HhswAttach::Sites,
            momentum: MomentumSchedule::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n_channels == 0 || self.n_times == 0 {
            return bad("need at least one channel and one time sample".into());
        }
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.temporal_filters == 0 || self.depth_multiplier == 0 || self.temporal_kernel == 0 || self.depth_kernel == 0 {
            return bad("filter counts and kernel sizes must be positive".into());
        }
        if self.pool1 == 0 || self.pool2 == 0 {
            return bad("pool sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.hhsw_weight >= 0.0) {
            return bad(format!("hhsw_weight {} must be >= 0", self.hhsw_weight));
        }
        if self.hhsw_slices == 0 || !(self.hhsw_exponent >= 1.0) {
            return bad("hhsw needs at least one slice and exponent >= 1".into());
        }
        if !(self.max_norm > 0.0) {
            return bad("max_norm must be positive".into());
        }
        Curvature::new(self.curvature)?;
        self.momentum.validate()
    }

    pub fn k(&self) -> Curvature {
        Curvature::new(self.curvature).expect("validated curvature")
    }

    /// Time samples after right zero-padding to a multiple of the total pool.
    pub fn padded_times(&self) -> usize {
        let m = self.pool1 * self.pool2;
        self.n_times.div_ceil(m) * m
    }

    /// Lorentz space dimension of every site (`F1 * D`).
    pub fn site_dim(&self) -> usize {
        self.temporal_filters * self.depth_multiplier
    }

    /// Number of sites per sample entering the normalization stage.
    pub fn stage1_sites(&self) -> usize {
        self.padded_times() / self.pool1
    }

    /// Sites concatenated before the head.
    pub fn final_sites(&self) -> usize {
        self.padded_times() / (self.pool1 * self.pool2)
    }

    /// Dimension of the classifier input, `site_dim * final_sites + 1` in ambient coordinates.
    pub fn mlr_dim(&self) -> usize {
        self.site_dim() * self.final_sites()
    }

    /// Weight the distribution loss actually gets under the alignment setting.
    pub fn effective_hhsw_weight(&self) -> f64 {
        if self.alignment == Alignment::Full {
            self.hhsw_weight
        } else {
            0.0
        }
    }

    pub fn hhsw(&self) -> HhswConfig {
        HhswConfig { slices: self.hhsw_slices, exponent: self.hhsw_exponent, reference: self.hhsw_reference }
    }
}

/// Trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `[F1, 1, 1, K]`
    pub temporal: Array,
    pub bn1_gamma: Array,
    pub bn1_beta: Array,
    /// `[F1*D, 1, P, 1]`, depthwise over the `F1` temporal maps.
    pub spatial: Array,
    pub bn2_gamma: Array,
    pub bn2_beta: Array,
    /// `[F2, 1, 1, depth_kernel]`, depthwise.
    pub depth: Array,
    pub point: LfcParams,
    /// `[1]`; the normalization scale is `exp(log_gamma)`.
    pub log_gamma: Array,
    pub mlr: MlrParams,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Array {
    let b = 1.0 / (fan_in as f64).sqrt();
    Array::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-b..b))
}

impl Params {
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut rng = seeded(cfg.seed);
        let (f1, f2) = (cfg.temporal_filters, cfg.site_dim());
        Params {
            temporal: uniform(&mut rng, &[f1, 1, 1, cfg.temporal_kernel], cfg.temporal_kernel),
            bn1_gamma: Array::ones(IxDyn(&[f1])),
            bn1_beta: Array::zeros(IxDyn(&[f1])),
            spatial: uniform(&mut rng, &[f2, 1, cfg.n_channels, 1], cfg.n_channels),
            bn2_gamma: Array::ones(IxDyn(&[f2])),
            bn2_beta: Array::zeros(IxDyn(&[f2])),
            depth: uniform(&mut rng, &[f2, 1, 1, cfg.depth_kernel], cfg.depth_kernel),
            point: LfcParams::init(&mut rng, f2, f2, (f2 as f64).sqrt()),
            log_gamma: Array::zeros(IxDyn(&[1])),
            mlr: MlrParams::init(&mut rng, cfg.mlr_dim(), cfg.n_classes),
        }
    }

    /// Every array with a stable name, in canonical order.
    pub fn named(&self) -> Vec<(String, &Array)> {
        let mut v: Vec<(String, &Array)> = vec![
            ("temporal".into(), &self.temporal),
            ("bn1.gamma".into(), &self.bn1_gamma),
            ("bn1.beta".into(), &self.bn1_beta),
            ("spatial".into(), &self.spatial),
            ("bn2.gamma".into(), &self.bn2_gamma),
            ("bn2.beta".into(), &self.bn2_beta),
            ("depth".into(), &self.depth),
        ];
        v.extend(self.point.arrays().into_iter().map(|(n, a)| (format!("point.{n}"), a)));
        v.push(("log_gamma".into(), &self.log_gamma));
        v.push(("mlr.a".into(), &self.mlr.a));
        v.push(("mlr.z".into(), &self.mlr.z));
        v
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Array)> {
        let mut v: Vec<(String, &mut Array)> = vec![
            ("temporal".into(), &mut self.temporal),
            ("bn1.gamma".into(), &mut self.bn1_gamma),
            ("bn1.beta".into(), &mut self.bn1_beta),
            ("spatial".into(), &mut self.spatial),
            ("bn2.gamma".into(), &mut self.bn2_gamma),
            ("bn2.beta".into(), &mut self.bn2_beta),
            ("depth".into(), &mut self.depth),
        ];
        v.extend(self.point.arrays_mut().into_iter().map(|(n, a)| (format!("point.{n}"), a)));
        v.push(("log_gamma".into(), &mut self.log_gamma));
        v.push(("mlr.a".into(), &mut self.mlr.a));
        v.push(("mlr.z".into(), &mut self.mlr.z));
        v
    }

    /// Tape variables in the order of [`Params::named`].
    pub fn vars<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.named().into_iter().map(|(_, a)| if trainable { tape.leaf(a.clone()) } else { tape.constant(a.clone()) }).collect()
    }
}

/// How a forward pass treats the stochastic and stateful parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardMode {
    /// Dropout on and Euclidean BN on batch statistics (updating running ones).
    pub training: bool,
    pub norm: NormMode,
}

impl ForwardMode {
    pub const TRAIN: ForwardMode = ForwardMode { training: true, norm: NormMode::Train };
    pub const EVAL: ForwardMode = ForwardMode { training: false, norm: NormMode::Eval };
    pub const ADAPT: ForwardMode = ForwardMode { training: false, norm: NormMode::Adapt };
}

/// Tape values of one forward pass.
pub struct Forward<'t> {
    /// `[B, C]`
    pub logits: Var<'t>,
    /// Sites after the pointwise Lorentz convolution, `[B*S, n+1]`.
    pub features: Var<'t>,
    /// Sites after the normalization stage (equal to `features` without it), `[B*S, n+1]`.
    pub stage1: Var<'t>,
    /// `[B, N*n+1]`
    pub pre_mlr: Var<'t>,
    pub unseen: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeegnetModel {
    pub config: ModelConfig,
    pub params: Params,
    pub bn1: BnState,
    pub bn2: BnState,
    pub stats: DomainStats,
}

impl HeegnetModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config);
        let f2 = config.site_dim();
        Ok(HeegnetModel {
            bn1: BnState::new(config.temporal_filters),
            bn2: BnState::new(f2),
            stats: DomainStats::new(f2, config.k()),
            params,
            config,
        })
    }

    /// Packs epochs (`indices` into `ds`) as `[B, 1, P, T_pad]`, zero-padded on the right.
    pub fn batch_input(&self, ds: &EpochDataset, indices: &[usize]) -> Result<Array> {
        let c = &self.config;
        if ds.n_channels != c.n_channels || ds.n_times != c.n_times {
            return Err(Error::Dimension(format!(
                "dataset epochs are {}x{}, model expects {}x{}",
                ds.n_channels, ds.n_times, c.n_channels, c.n_times
            )));
        }
        let tp = c.padded_times();
        let mut x = Array::zeros(IxDyn(&[indices.len(), 1, c.n_channels, tp]));
        for (b, &i) in indices.iter().enumerate() {
            let e = ds.epoch(i);
            for ch in 0..c.n_channels {
                for t in 0..c.n_times {
                    x[[b, 0, ch, t]] = e[ch * c.n_times + t] as f64;
                }
            }
        }
        Ok(x)
    }

    /// Euclidean encoder, lift and pointwise Lorentz convolution: `[B*S, n+1]` sites.
    pub fn encode<'t, R: Rng + ?Sized>(&mut self, x: Var<'t>, v: &[Var<'t>], training: bool, rng: &mut R) -> Result<Var<'t>> {
        let c = &self.config;
        let k = c.k();
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != c.n_channels || s[3] != c.padded_times() {
            return Err(Error::Dimension(format!("input {s:?}, expected [B, 1, {}, {}]", c.n_channels, c.padded_times())));
        }
        let b = s[0];
        let (f1, f2) = (c.temporal_filters, c.site_dim());
        let kt = c.temporal_kernel;
        let h = x.conv2d(v[0], Conv2d { padding: (0, 0, (kt - 1) / 2, kt / 2), ..Conv2d::default() });
        let h = batch_norm(h, v[1], v[2], &mut self.bn1, training);
        let h = h.conv2d(v[3], Conv2d { groups: f1, ..Conv2d::default() });
        let h = batch_norm(h, v[4], v[5], &mut self.bn2, training).elu();
        let h = h.avg_pool2d(1, c.pool1);
        let h = if training { dropout(h, c.dropout, rng) } else { h };
        let kd = c.depth_kernel;
        let h = h.conv2d(v[6], Conv2d { padding: (0, 0, (kd - 1) / 2, kd / 2), groups: f2, ..Conv2d::default() });
        // [B, F2, 1, S] -> [B, 1, S, F2] so the channel vector of each time step is a site
        let sites = h.permute(&[0, 2, 3, 1]);
        let lifted = proj_x(sites, c.max_norm, k);
        let point = crate::layers::LfcVars { w: v[7], b: v[8], log_lambda: v[9], v: v[10], b_prime: v[11] };
        let y = lorentz_conv(lifted, 1, 1, (1, 1), &point, Activation::Identity, c.lfc_mode, k)?;
        Ok(y.reshape(&[b * c.stage1_sites(), f2 + 1]))
    }

    /// Normalization stage, ELU, pooling, concatenation and head on encoded sites.
    pub fn head<'t>(&mut self, features: Var<'t>, v: &[Var<'t>], domains: &[u32], norm: NormMode) -> Result<Forward<'t>> {
        let c = &self.config;
        let k = c.k();
        let n1 = c.site_dim() + 1;
        let sites = c.stage1_sites();
        let b = features.shape()[0] / sites;
        if domains.len() != b {
            return Err(Error::Dimension(format!("{} domain tags for a batch of {b}", domains.len())));
        }
        let (stage1, unseen) = if c.alignment == Alignment::None {
            (features, vec![])
        } else {
            let site_domains: Vec<u32> = domains.iter().flat_map(|&d| std::iter::repeat_n(d, sites)).collect();
            let points = rows_to_points(&features.value(), k);
            let rs = self.stats.step(&points, &site_domains, norm, &c.momentum)?;
            (hbn_rows(features, &rs.means, &rs.vars, v[12], HBN_EPS, k), rs.unseen)
        };
        let act = lorentz_elu(stage1, k).reshape(&[b, 1, sites, n1]);
        let pooled = lorentz_avg_pool(act, 1, c.pool2, (1, c.pool2), k)?;
        let pre_mlr = hcat(pooled.reshape(&[b, c.final_sites(), n1]), k);
        let logits = hmlr(pre_mlr, v[13], v[14], k);
        Ok(Forward { logits, features, stage1, pre_mlr, unseen })
    }

    pub fn forward_tape<'t, R: Rng + ?Sized>(
        &mut self,
        x: Var<'t>,
        v: &[Var<'t>],
        domains: &[u32],
        mode: ForwardMode,
        rng: &mut R,
    ) -> Result<Forward<'t>> {
        let f = self.encode(x, v, mode.training, rng)?;
        self.head(f, v, domains, mode.norm)
    }

    /// Embeddings the distribution loss compares, with their domain tags.
    pub fn hhsw_embeddings<'t>(&self, fwd: &Forward<'t>, domains: &[u32]) -> (Var<'t>, Vec<u32>) {
        let c = &self.config;
        let sites = c.stage1_sites();
        match c.hhsw_attach {
            HhswAttach::Sites => (fwd.stage1, domains.iter().flat_map(|&d| std::iter::repeat_n(d, sites)).collect()),
            HhswAttach::Stage1 => {
                let n1 = c.site_dim() + 1;
                let b = fwd.stage1.shape()[0] / sites;
                (centroid(fwd.stage1.reshape(&[b, sites, n1]), c.k()), domains.to_vec())
            }
            HhswAttach::PreMlr => (fwd.pre_mlr, domains.to_vec()),
        }
    }

    /// Eval-mode logits for the given epochs. Does not touch any state.
    pub fn logits(&self, ds: &EpochDataset, indices: &[usize]) -> Result<(Array, Vec<u32>)> {
        let mut m = self.clone();
        let tape = Tape::new();
        let v = m.params.vars(&tape, false);
        let x = tape.constant(m.batch_input(ds, indices)?);
        let domains: Vec<u32> = indices.iter().map(|&i| ds.domains[i]).collect();
        let f = m.forward_tape(x, &v, &domains, ForwardMode::EVAL, &mut seeded(0))?;
        Ok(((*f.logits.value()).clone(), f.unseen))
    }
}
