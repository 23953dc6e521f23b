//! Hyperbolic batch normalization and its domain-specific momentum variant.

use std::collections::BTreeMap;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Var};
use crate::error::{Error, Result};
use crate::frechet::{frechet_variance, momentum_mean_update, weighted_frechet_mean, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::gyro::{gyroadd, gyroinverse, gyromul};
use crate::layers::lorentz::{lift, space_part, time_part};
use crate::manifold::{Curvature, LorentzPoint};

pub const HBN_EPS: f64 = 1e-5;

/// Learnable scale of a hyperbolic batch normalization, `gamma = exp(log_gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HbnParams {
    pub log_gamma: f64,
    pub epsilon: f64,
}

impl Default for HbnParams {
    fn default() -> Self {
        HbnParams { log_gamma: 0.0, epsilon: HBN_EPS }
    }
}

impl HbnParams {
    pub fn with_gamma(gamma: f64) -> Self {
        HbnParams { log_gamma: gamma.ln(), ..Self::default() }
    }

    pub fn gamma(&self) -> f64 {
        self.log_gamma.exp()
    }
}

/// Fréchet mean, falling back to the last iterate when the iteration stalls.
pub(crate) fn batch_mean(points: &[LorentzPoint]) -> Result<LorentzPoint> {
    let w = vec![1.0 / points.len() as f64; points.len()];
    match weighted_frechet_mean(points, &w, DEFAULT_TOL, DEFAULT_MAX_ITER) {
        Ok(r) => Ok(r.mean),
        Err(Error::Convergence { iterations, update_norm, last }) => {
            log::warn!("Fréchet mean stopped after {iterations} iterations (update {update_norm:e})");
            Ok(*last)
        }
        Err(e) => Err(e),
    }
}

/// Fréchet mean and variance of a batch with uniform weights.
pub fn batch_moments(points: &[LorentzPoint]) -> Result<(LorentzPoint, f64)> {
    let mu = batch_mean(points)?;
    let var = frechet_variance(points, &uniform(points.len()), &mu)?;
    Ok((mu, var))
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// `(gamma / sqrt(var + eps)) ⊙ (⊖mean ⊕ p)`.
pub fn normalize_point(p: &LorentzPoint, mean: &LorentzPoint, var: f64, params: &HbnParams) -> Result<LorentzPoint> {
    let centered = gyroadd(&gyroinverse(mean), p)?;
    Ok(gyromul(params.gamma() / (var + params.epsilon).sqrt(), &centered))
}

/// Batch statistics of `batch` and the batch normalized with them.
pub fn hbn(batch: &[LorentzPoint], params: &HbnParams) -> Result<Vec<LorentzPoint>> {
    if batch.is_empty() {
        return Err(Error::Validation("hyperbolic batch norm of an empty batch".into()));
    }
    let mean = batch_mean(batch)?;
    let var = frechet_variance(batch, &uniform(batch.len()), &mean)?;
    batch.iter().map(|p| normalize_point(p, &mean, var, params)).collect()
}

/// `m ⊕ x` row-wise, with constant left operands `m` (`[R, n+1]` or `[1, n+1]`)
/// and differentiable `x` (`[R, n+1]`). Closed form, time coordinate lifted.
pub fn gyroadd_const<'t>(m: &Array, x: Var<'t>, k: Curvature) -> Var<'t> {
    let tape = x.tape();
    let kk = k.k();
    let c = k.sqrt_neg();
    let d = m.shape()[1];
    let mt = m.slice(ndarray::s![.., 0..1]).to_owned().into_dyn();
    let ms = m.slice(ndarray::s![.., 1..d]).to_owned().into_dyn();
    let a_arr = mt.mapv(|t| 1.0 + c * t);
    let np_arr = ms.map_axis(ndarray::Axis(1), |r| r.dot(&r)).insert_axis(ndarray::Axis(1));
    let a = tape.constant(a_arr.clone());
    let np = tape.constant(np_arr.clone());
    let msv = tape.constant(ms);
    let xs = space_part(x);
    let b = time_part(x) * c + 1.0;
    let nq = xs.square().sum_axes(&[1], true);
    let s = (xs * msv).sum_axes(&[1], true);
    let a2 = tape.constant(a_arr.mapv(|v| v * v));
    let dd = a2 * b.square() - a * b * s * (2.0 * kk) + np * nq * (kk * kk);
    let nn = a2 * nq + a * b * s * 2.0 + b.square() * np;
    let den = dd + nn * kk;
    let a_s = a * b.square() - b * s * (2.0 * kk) - a * nq * kk;
    let a_q = b * tape.constant(&a_arr.mapv(|v| v * v) + &np_arr.mapv(|v| kk * v));
    lift((a_s * msv + a_q * xs) * 2.0 / den, k)
}

/// `t ⊙ x` row-wise for a differentiable scale `t` (`[R, 1]` or `[1]`).
pub fn gyromul_var<'t>(t: Var<'t>, x: Var<'t>, k: Curvature) -> Var<'t> {
    let c = k.sqrt_neg();
    let xs = space_part(x);
    let cn = xs.norm_last() * c;
    let r = cn.asinh();
    lift(xs * t * (t * r).sinhc() * cn.asinhc(), k)
}

/// Row-wise `(gamma / sqrt(var + eps)) ⊙ (⊖mean ⊕ x)` with constant statistics
/// `means` (`[R, n+1]`) and `vars` (`[R, 1]`).
pub fn hbn_rows<'t>(x: Var<'t>, means: &Array, vars: &Array, log_gamma: Var<'t>, eps: f64, k: Curvature) -> Var<'t> {
    let mut inv = means.clone();
    inv.slice_mut(ndarray::s![.., 1..]).mapv_inplace(|v| -v);
    let centered = gyroadd_const(&inv, x, k);
    let scale = log_gamma.exp() * x.tape().constant(vars.mapv(|v| 1.0 / (v + eps).sqrt()));
    gyromul_var(scale, centered, k)
}

/// Clamped exponential momentum decay for the training track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentumSchedule {
    pub eta0: f64,
    pub decay_rate: f64,
    pub eta_min: f64,
    pub eta_test: f64,
}

impl Default for MomentumSchedule {
    fn default() -> Self {
        MomentumSchedule { eta0: 1.0, decay_rate: 0.9, eta_min: 0.01, eta_test: 0.1 }
    }
}

impl MomentumSchedule {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.eta0) || !unit(self.eta_min) || !unit(self.eta_test) || !(self.decay_rate > 0.0 && self.decay_rate < 1.0) {
            return Err(Error::Validation(format!("invalid momentum schedule {self:?}")));
        }
        Ok(())
    }

    pub fn eta_train(&self, k: u64) -> f64 {
        (self.eta0 * self.decay_rate.powf(k as f64)).max(self.eta_min)
    }
}

/// Running statistics of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainTrack {
    pub train_mean: LorentzPoint,
    pub train_var: f64,
    pub test_mean: LorentzPoint,
    pub test_var: f64,
    pub steps: u64,
}

impl DomainTrack {
    pub fn new(dim: usize, k: Curvature) -> Self {
        let o = LorentzPoint::origin(dim, k);
        DomainTrack { train_mean: o.clone(), train_var: 1.0, test_mean: o, test_var: 1.0, steps: 0 }
    }
}

/// Per-domain running statistics for a domain-specific normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainStats {
    pub dim: usize,
    pub curvature: Curvature,
    pub tracks: BTreeMap<u32, DomainTrack>,
}

/// Which statistics a domain-specific normalization uses and updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Update both tracks from the batch; normalize with the training track.
    Train,
    /// No updates; normalize with the test track.
    Eval,
    /// Update only the test track (creating it when absent); normalize with it.
    Adapt,
}

/// Statistics chosen for each row of a batch.
#[derive(Debug, Clone)]
pub struct RowStats {
    /// `[R, n+1]`
    pub means: Array,
    /// `[R, 1]`
    pub vars: Array,
    /// Domains normalized with the origin/unit fallback.
    pub unseen: Vec<u32>,
}

impl DomainStats {
    pub fn new(dim: usize, curvature: Curvature) -> Self {
        DomainStats { dim, curvature, tracks: BTreeMap::new() }
    }

    pub fn domains(&self) -> Vec<u32> {
        self.tracks.keys().copied().collect()
    }

    pub fn contains(&self, d: u32) -> bool {
        self.tracks.contains_key(&d)
    }

    /// Blends batch moments into the test track of `d`, creating it when absent.
    /// This is the update an `Adapt` step makes, for callers that reuse the
    /// moments of a fixed batch across passes.
    pub fn blend_test(&mut self, d: u32, mean: &LorentzPoint, var: f64, schedule: &MomentumSchedule) -> Result<()> {
        let track = self.tracks.entry(d).or_insert_with(|| DomainTrack::new(self.dim, self.curvature));
        let et = schedule.eta_test;
        track.test_mean = momentum_mean_update(&track.test_mean, mean, et)?;
        track.test_var = (1.0 - et) * track.test_var + et * var;
        Ok(())
    }

    /// Updates the tracks (depending on `mode`) from the batch and returns the
    /// statistics each row should be normalized with.
    pub fn step(&mut self, points: &[LorentzPoint], domains: &[u32], mode: NormMode, schedule: &MomentumSchedule) -> Result<RowStats> {
        if points.len() != domains.len() {
            return Err(Error::Dimension(format!("{} points with {} domain tags", points.len(), domains.len())));
        }
        if let Some(p) = points.iter().find(|p| p.dim() != self.dim) {
            return Err(Error::Dimension(format!("domain statistics over L^{}, got a point in L^{}", self.dim, p.dim())));
        }
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &d) in domains.iter().enumerate() {
            groups.entry(d).or_default().push(i);
        }
        let mut chosen: BTreeMap<u32, (LorentzPoint, f64)> = BTreeMap::new();
        let mut unseen = vec![];
        for (&d, rows) in &groups {
            let stats = match mode {
                NormMode::Eval => match self.tracks.get(&d) {
                    Some(t) => (t.test_mean.clone(), t.test_var),
                    None => {
                        unseen.push(d);
                        (LorentzPoint::origin(self.dim, self.curvature), 1.0)
                    }
                },
                NormMode::Train | NormMode::Adapt => {
                    if rows.len() < 2 {
                        return Err(Error::Validation(format!("domain {d} has {} sample(s) in the batch; need at least 2", rows.len())));
                    }
                    let pts: Vec<LorentzPoint> = rows.iter().map(|&i| points[i].clone()).collect();
                    let (mu, var) = batch_moments(&pts)?;
                    self.blend_test(d, &mu, var, schedule)?;
                    let track = self.tracks.get_mut(&d).expect("track just created");
                    if mode == NormMode::Train {
                        let eta = schedule.eta_train(track.steps);
                        track.train_mean = momentum_mean_update(&track.train_mean, &mu, eta)?;
                        track.train_var = (1.0 - eta) * track.train_var + eta * var;
                        track.steps += 1;
                        (track.train_mean.clone(), track.train_var)
                    } else {
                        (track.test_mean.clone(), track.test_var)
                    }
                }
            };
            chosen.insert(d, stats);
        }
        let r = points.len();
        let mut means = Array::zeros(IxDyn(&[r, self.dim + 1]));
        let mut vars = Array::zeros(IxDyn(&[r, 1]));
        for (i, d) in domains.iter().enumerate() {
            let (m, v) = &chosen[d];
            for (j, &x) in m.ambient().iter().enumerate() {
                means[[i, j]] = x;
            }
            vars[[i, 0]] = *v;
        }
        Ok(RowStats { means, vars, unseen })
    }
}

/// Output of [`hdsmbn`].
#[derive(Debug, Clone)]
pub struct HdsmbnOutput {
    pub points: Vec<LorentzPoint>,
    /// Domains that had no statistics in eval mode and fell back to origin/unit.
    pub unseen: Vec<u32>,
}

/// Domain-specific momentum batch normalization of a tagged batch.
pub fn hdsmbn(
    batch: &[LorentzPoint],
    domains: &[u32],
    stats: &mut DomainStats,
    schedule: &MomentumSchedule,
    params: &HbnParams,
    mode: NormMode,
) -> Result<HdsmbnOutput> {
    let rs = stats.step(batch, domains, mode, schedule)?;
    let d = stats.dim + 1;
    let means = rs.means.as_slice().unwrap();
    let points = batch
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mean = LorentzPoint::new_unchecked(means[i * d..(i + 1) * d].to_vec(), stats.curvature);
            normalize_point(p, &mean, rs.vars[[i, 0]], params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HdsmbnOutput { points, unseen: rs.unseen })
}
