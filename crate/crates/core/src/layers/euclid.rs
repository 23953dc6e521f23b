//! Euclidean encoder pieces: batch normalization over feature maps and dropout.

use ndarray::{Axis, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Var};

/// Running statistics of a per-channel batch normalization over `[B, C, H, W]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BnState {
    pub fn new(channels: usize) -> Self {
        BnState { running_mean: vec![0.0; channels], running_var: vec![1.0; channels], momentum: 0.1, eps: 1e-5 }
    }
}

/// Per-channel batch normalization with affine terms `gamma`, `beta` (shape `[C]`).
///
/// In training the batch statistics are used (and differentiated through) and
/// the running statistics are blended with `momentum`, using the unbiased
/// variance. Otherwise the running statistics are used as constants.
pub fn batch_norm<'t>(x: Var<'t>, gamma: Var<'t>, beta: Var<'t>, state: &mut BnState, training: bool) -> Var<'t> {
    let xv = x.value();
    let shape = xv.shape().to_vec();
    assert_eq!(shape.len(), 4, "batch_norm expects [B, C, H, W]");
    let c = shape[1];
    let plane = shape[2] * shape[3];
    assert_eq!(state.running_mean.len(), c, "batch_norm: channel count");
    let n = (shape[0] * plane) as f64;
    let xs = xv.as_standard_layout();
    let xs = xs.as_slice().unwrap();
    // contiguous H*W planes, channel = plane index mod C
    let planes = || xs.chunks(plane).enumerate().map(|(j, p)| (j % c, p));
    let (mean, inv): (Vec<f64>, Vec<f64>) = if training {
        let mut mean = vec![0.0; c];
        for (ch, p) in planes() {
            mean[ch] += p.iter().sum::<f64>();
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for (ch, p) in planes() {
            var[ch] += p.iter().map(|v| (v - mean[ch]) * (v - mean[ch])).sum::<f64>();
        }
        var.iter_mut().for_each(|v| *v /= n);
        let m = state.momentum;
        for ch in 0..c {
            let unbiased = if n > 1.0 { var[ch] * n / (n - 1.0) } else { var[ch] };
            state.running_mean[ch] = (1.0 - m) * state.running_mean[ch] + m * mean[ch];
            state.running_var[ch] = (1.0 - m) * state.running_var[ch] + m * unbiased;
        }
        let inv = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        (mean, inv)
    } else {
        (state.running_mean.clone(), state.running_var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect())
    };
    let g = gamma.value().iter().copied().collect::<Vec<f64>>();
    let bt = beta.value().iter().copied().collect::<Vec<f64>>();
    let mut xhat = Vec::with_capacity(xs.len());
    for (ch, p) in planes() {
        xhat.extend(p.iter().map(|v| (v - mean[ch]) * inv[ch]));
    }
    let mut y = xhat.clone();
    for (j, p) in y.chunks_mut(plane).enumerate() {
        let ch = j % c;
        p.iter_mut().for_each(|v| *v = *v * g[ch] + bt[ch]);
    }

    x.tape().op(Array::from_shape_vec(IxDyn(&shape), y).unwrap(), &[x, gamma, beta], move |gout, m| {
        let go = gout.as_standard_layout();
        let go = go.as_slice().unwrap();
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for (j, (gp, xp)) in go.chunks(plane).zip(xhat.chunks(plane)).enumerate() {
            let ch = j % c;
            for (gv, xh) in gp.iter().zip(xp) {
                sum_g[ch] += gv;
                sum_gx[ch] += gv * xh;
            }
        }
        let gx = m[0].then(|| {
            let mut gx = Vec::with_capacity(go.len());
            for (j, (gp, xp)) in go.chunks(plane).zip(xhat.chunks(plane)).enumerate() {
                let ch = j % c;
                let a = g[ch] * inv[ch];
                if training {
                    // batch statistics depend on x
                    let (mg, mgx) = (sum_g[ch] / n, sum_gx[ch] / n);
                    gx.extend(gp.iter().zip(xp).map(|(gv, xh)| a * (gv - mg - xh * mgx)));
                } else {
                    gx.extend(gp.iter().map(|gv| a * gv));
                }
            }
            Array::from_shape_vec(IxDyn(&shape), gx).unwrap()
        });
        vec![
            gx,
            m[1].then(|| Array::from_shape_vec(IxDyn(&[c]), sum_gx.clone()).unwrap()),
            m[2].then(|| Array::from_shape_vec(IxDyn(&[c]), sum_g.clone()).unwrap()),
        ]
    })
}

/// Inverted dropout: zeroes entries with probability `p` and rescales the rest.
pub fn dropout<'t, R: Rng + ?Sized>(x: Var<'t>, p: f64, rng: &mut R) -> Var<'t> {
    if p <= 0.0 {
        return x;
    }
    let keep = 1.0 - p;
    let mask = Array::from_shape_simple_fn(IxDyn(&x.shape()), || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
    x * x.tape().constant(mask)
}

/// Per-channel mean over all but axis 1 (used by tests and diagnostics).
pub fn channel_means(x: &Array) -> Vec<f64> {
    let c = x.shape()[1];
    (0..c).map(|ch| x.index_axis(Axis(1), ch).mean().unwrap_or(0.0)).collect()
}
