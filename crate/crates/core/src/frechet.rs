//! Weighted Fréchet mean and variance on the Lorentz model.

use crate::error::{Error, Result};
use crate::manifold::{distance_unchecked, exp_map, log_unchecked, LorentzPoint, TangentVector};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct FrechetResult {
    pub mean: LorentzPoint,
    pub variance: f64,
    pub iterations: usize,
    pub final_grad_norm: f64,
}

fn validate(points: &[LorentzPoint], weights: &[f64]) -> Result<()> {
    let first = points
        .first()
        .ok_or_else(|| Error::Validation("Fréchet mean of an empty set".into()))?;
    if weights.len() != points.len() {
        return Err(Error::Validation(format!(
            "{} weights for {} points",
            weights.len(),
            points.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Validation("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("weights sum to {total}, expected 1")));
    }
    for p in points {
        if p.dim() != first.dim() || p.curvature() != first.curvature() {
            return Err(Error::Dimension("points of mixed dimension or curvature".into()));
        }
    }
    Ok(())
}

fn weighted_log_sum(mu: &LorentzPoint, points: &[LorentzPoint], weights: &[f64]) -> TangentVector {
    let mut acc = vec![0.0; mu.ambient().len()];
    for (p, &w) in points.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let v = log_unchecked(mu, p);
        for (a, x) in acc.iter_mut().zip(v.ambient()) {
            *a += w * x;
        }
    }
    TangentVector::new_unchecked(mu.clone(), acc)
}

/// Karcher fixed-point iteration `μ ← exp_μ(Σ η_i log_μ(p_i))`, started at the
/// point with the largest weight and stopped when the update norm drops below `tol`.
pub fn weighted_frechet_mean(
    points: &[LorentzPoint],
    weights: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<FrechetResult> {
    validate(points, weights)?;
    if points.len() == 1 {
        return Ok(FrechetResult {
            mean: points[0].clone(),
            variance: 0.0,
            iterations: 0,
            final_grad_norm: 0.0,
        });
    }
    let start = weights
        .iter()
        .enumerate()
        .fold(0, |best, (i, w)| if *w > weights[best] { i } else { best });
    let mut mu = points[start].clone();
    let mut f = frechet_variance_unchecked(points, weights, &mu);
    let mut norm = f64::INFINITY;
    for it in 0..=max_iter {
        let step = weighted_log_sum(&mu, points, weights);
        norm = step.norm();
        if !norm.is_finite() {
            return Err(Error::Numeric("Fréchet iteration produced a non-finite update".into()));
        }
        if norm < tol {
            return Ok(FrechetResult { mean: mu, variance: f, iterations: it, final_grad_norm: norm });
        }
        if it == max_iter {
            break;
        }
        // In negative curvature the Hessian of the functional has eigenvalues
        // in [1, h] with h = Σ w_i (c d_i) coth(c d_i), so the full Karcher
        // step overshoots on spread-out sets. Take 2/(1+h), the best fixed
        // step for that spectrum, and halve it if the variance still rises.
        let c = mu.curvature().sqrt_neg();
        let h: f64 = points
            .iter()
            .zip(weights)
            .map(|(p, w)| {
                let x = c * distance_unchecked(&mu, p);
                w * if x < 1e-6 { 1.0 } else { x / x.tanh() }
            })
            .sum();
        let mut t = 2.0 / (1.0 + h);
        loop {
            let cand = exp_map(&mu, &step.clone().scale(t))?;
            let fc = frechet_variance_unchecked(points, weights, &cand);
            if fc <= f * (1.0 + 1e-12) || t < 1e-6 {
                mu = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::Convergence { iterations: max_iter, update_norm: norm, last: Box::new(mu) })
}

/// Uniform-weight convenience wrapper with default tolerances.
pub fn frechet_mean(points: &[LorentzPoint]) -> Result<FrechetResult> {
    let w = vec![1.0 / points.len().max(1) as f64; points.len()];
    weighted_frechet_mean(points, &w, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

fn frechet_variance_unchecked(points: &[LorentzPoint], weights: &[f64], mean: &LorentzPoint) -> f64 {
    points
        .iter()
        .zip(weights)
        .map(|(p, w)| w * distance_unchecked(mean, p).powi(2))
        .sum()
}

/// `Σ η_i d²(mean, p_i)`.
pub fn frechet_variance(points: &[LorentzPoint], weights: &[f64], mean: &LorentzPoint) -> Result<f64> {
    validate(points, weights)?;
    mean.check(crate::manifold::TOL_MANIFOLD)?;
    if mean.dim() != points[0].dim() {
        return Err(Error::Dimension("mean and points differ in dimension".into()));
    }
    Ok(frechet_variance_unchecked(points, weights, mean))
}

/// Two-point weighted Fréchet mean with weights `(1 - eta, eta)`, i.e. the
/// geodesic interpolation `exp_prev(eta log_prev(batch))`.
pub fn momentum_mean_update(prev: &LorentzPoint, batch_mean: &LorentzPoint, eta: f64) -> Result<LorentzPoint> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Validation(format!("momentum {eta} outside [0, 1]")));
    }
    if prev.dim() != batch_mean.dim() || prev.curvature() != batch_mean.curvature() {
        return Err(Error::Dimension("running and batch means differ in shape".into()));
    }
    if eta == 0.0 {
        return Ok(prev.clone());
    }
    if eta == 1.0 {
        return Ok(batch_mean.clone());
    }
    exp_map(prev, &log_unchecked(prev, batch_mean).scale(eta))
}
