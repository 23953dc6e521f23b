//! Array primitives with hand-written backward rules: convolution, pooling,
//! fused softmax cross-entropy and row sorting.

use ndarray::{linalg::general_mat_mul, s, Array2, ArrayView2, Axis, Ix4, IxDyn};

use super::tape::Var;
use super::Array;

/// Geometry of a 2-D cross-correlation over `[batch, channels, height, width]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub stride: (usize, usize),
    /// (top, bottom, left, right) zero padding.
    pub padding: (usize, usize, usize, usize),
    pub groups: usize,
}

impl Default for Conv2d {
    fn default() -> Self {
        Conv2d { stride: (1, 1), padding: (0, 0, 0, 0), groups: 1 }
    }
}

impl Conv2d {
    /// Output height and width for an `h x w` input and `kh x kw` kernel.
    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let (pt, pb, pl, pr) = self.padding;
        let (hp, wp) = (h + pt + pb, w + pl + pr);
        if hp < kh || wp < kw || self.stride.0 == 0 || self.stride.1 == 0 {
            return None;
        }
        Some(((hp - kh) / self.stride.0 + 1, (wp - kw) / self.stride.1 + 1))
    }
}

struct ConvShape {
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

/// Fills `col` ([cin_g*kh*kw, ho*wo]) from channels `c0..c0+cin_g` of one sample.
/// Output columns `lo..hi` whose stride-1 input column `ow + j - pl` is in range.
fn valid_cols(j: usize, pl: usize, g: &ConvShape) -> (usize, usize) {
    let lo = pl.saturating_sub(j).min(g.wo);
    let hi = (g.w + pl).saturating_sub(j).min(g.wo).max(lo);
    (lo, hi)
}

fn im2col(x: &ndarray::ArrayView3<f64>, c0: usize, g: &ConvShape, cfg: &Conv2d, col: &mut Array2<f64>) {
    let (pt, _, pl, _) = cfg.padding;
    let (sh, sw) = cfg.stride;
    for c in 0..g.cin_g {
        let xc = x.index_axis(Axis(0), c0 + c);
        for i in 0..g.kh {
            for j in 0..g.kw {
                let r = (c * g.kh + i) * g.kw + j;
                let mut row = col.row_mut(r);
                let row = row.as_slice_mut().unwrap();
                for oh in 0..g.ho {
                    let ih = (oh * sh + i) as isize - pt as isize;
                    let dst = &mut row[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih as usize >= g.h {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = xc.row(ih as usize);
                    if let (1, Some(src)) = (sw, src.as_slice()) {
                        let (lo, hi) = valid_cols(j, pl, g);
                        dst[..lo].fill(0.0);
                        dst[hi..].fill(0.0);
                        dst[lo..hi].copy_from_slice(&src[lo + j - pl..hi + j - pl]);
                        continue;
                    }
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = (ow * sw + j) as isize - pl as isize;
                        *d = if iw < 0 || iw as usize >= g.w { 0.0 } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-adds `col` back into channels `c0..c0+cin_g` of one sample.
fn col2im(col: &Array2<f64>, c0: usize, g: &ConvShape, cfg: &Conv2d, gx: &mut ndarray::ArrayViewMut3<f64>) {
    let (pt, _, pl, _) = cfg.padding;
    let (sh, sw) = cfg.stride;
    for c in 0..g.cin_g {
        let mut xc = gx.index_axis_mut(Axis(0), c0 + c);
        for i in 0..g.kh {
            for j in 0..g.kw {
                let r = (c * g.kh + i) * g.kw + j;
                let row = col.row(r);
                for oh in 0..g.ho {
                    let ih = (oh * sh + i) as isize - pt as isize;
                    if ih < 0 || ih as usize >= g.h {
                        continue;
                    }
                    let mut dst = xc.row_mut(ih as usize);
                    if let (1, Some(d)) = (sw, dst.as_slice_mut()) {
                        let (lo, hi) = valid_cols(j, pl, g);
                        let src = &row.as_slice().unwrap()[oh * g.wo..(oh + 1) * g.wo];
                        for (d, s) in d[lo + j - pl..hi + j - pl].iter_mut().zip(&src[lo..hi]) {
                            *d += s;
                        }
                        continue;
                    }
                    for ow in 0..g.wo {
                        let iw = (ow * sw + j) as isize - pl as isize;
                        if iw >= 0 && (iw as usize) < g.w {
                            dst[iw as usize] += row[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    /// Grouped 2-D cross-correlation of `self` `[B, Cin, H, W]` with `kernel`
    /// `[Cout, Cin/groups, kh, kw]`, no bias.
    pub fn conv2d(self, kernel: Var<'t>, cfg: Conv2d) -> Var<'t> {
        let x = self.value();
        let k = kernel.value();
        let x4 = x.view().into_dimensionality::<Ix4>().expect("conv2d: input must be 4-D");
        let k4 = k.view().into_dimensionality::<Ix4>().expect("conv2d: kernel must be 4-D");
        let (b, cin, h, w) = x4.dim();
        let (cout, cin_g, kh, kw) = k4.dim();
        let groups = cfg.groups;
        assert!(groups > 0 && cin % groups == 0 && cout % groups == 0, "conv2d: bad grouping");
        assert_eq!(cin / groups, cin_g, "conv2d: kernel channels do not match input/groups");
        let (ho, wo) = cfg.output_size(h, w, kh, kw).expect("conv2d: kernel larger than padded input");
        let g = ConvShape { cin_g, cout_g: cout / groups, kh, kw, h, w, ho, wo };
        let kdim = cin_g * kh * kw;

        let kmat = k.to_shape((cout, kdim)).unwrap().to_owned();
        let mut out = ndarray::Array4::<f64>::zeros((b, cout, ho, wo));
        let mut col = Array2::<f64>::zeros((kdim, ho * wo));
        for bi in 0..b {
            let xb = x4.index_axis(Axis(0), bi);
            for gi in 0..groups {
                im2col(&xb, gi * cin_g, &g, &cfg, &mut col);
                let wg = kmat.slice(s![gi * g.cout_g..(gi + 1) * g.cout_g, ..]);
                let mut ob = out.slice_mut(s![bi, gi * g.cout_g..(gi + 1) * g.cout_g, .., ..]);
                let mut ob = ob.view_mut().into_shape_with_order((g.cout_g, ho * wo)).unwrap();
                general_mat_mul(1.0, &wg, &col, 0.0, &mut ob);
            }
        }

        self.tape().op(out.into_dyn(), &[self, kernel], move |gout, m| {
            let go = gout.view().into_dimensionality::<Ix4>().unwrap();
            let x4 = x.view().into_dimensionality::<Ix4>().unwrap();
            let mut gk = m[1].then(|| Array2::<f64>::zeros((cout, kdim)));
            let mut gx = m[0].then(|| ndarray::Array4::<f64>::zeros((b, cin, h, w)));
            let mut col = Array2::<f64>::zeros((kdim, ho * wo));
            for bi in 0..b {
                let xb = x4.index_axis(Axis(0), bi);
                for gi in 0..groups {
                    let gob = go.slice(s![bi, gi * g.cout_g..(gi + 1) * g.cout_g, .., ..]);
                    let gob = gob.as_standard_layout();
                    let gob: ArrayView2<f64> = gob.view().into_shape_with_order((g.cout_g, ho * wo)).unwrap();
                    if let Some(gk) = gk.as_mut() {
                        im2col(&xb, gi * cin_g, &g, &cfg, &mut col);
                        let mut gkg = gk.slice_mut(s![gi * g.cout_g..(gi + 1) * g.cout_g, ..]);
                        general_mat_mul(1.0, &gob, &col.t(), 1.0, &mut gkg);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let wg = kmat.slice(s![gi * g.cout_g..(gi + 1) * g.cout_g, ..]);
                        general_mat_mul(1.0, &wg.t(), &gob, 0.0, &mut col);
                        let mut gxb = gx.index_axis_mut(Axis(0), bi);
                        col2im(&col, gi * cin_g, &g, &cfg, &mut gxb);
                    }
                }
            }
            vec![
                gx.map(|a| a.into_dyn()),
                gk.map(|a| a.into_shape_with_order(IxDyn(&[cout, cin_g, kh, kw])).unwrap()),
            ]
        })
    }

    /// Non-overlapping average pooling over the last two axes of `[B, C, H, W]`;
    /// trailing rows/columns that do not fill a window are dropped.
    pub fn avg_pool2d(self, kh: usize, kw: usize) -> Var<'t> {
        let x = self.value();
        let x4 = x.view().into_dimensionality::<Ix4>().expect("avg_pool2d: input must be 4-D");
        let (b, c, h, w) = x4.dim();
        let (ho, wo) = (h / kh, w / kw);
        assert!(ho > 0 && wo > 0, "avg_pool2d: window larger than input");
        let inv = 1.0 / (kh * kw) as f64;
        let mut out = ndarray::Array4::<f64>::zeros((b, c, ho, wo));
        for ((bi, ci, oh, ow), o) in out.indexed_iter_mut() {
            let win = x4.slice(s![bi, ci, oh * kh..(oh + 1) * kh, ow * kw..(ow + 1) * kw]);
            *o = win.sum() * inv;
        }
        self.tape().op(out.into_dyn(), &[self], move |gout, _| {
            let go = gout.view().into_dimensionality::<Ix4>().unwrap();
            let mut gx = ndarray::Array4::<f64>::zeros((b, c, h, w));
            for ((bi, ci, oh, ow), &gv) in go.indexed_iter() {
                gx.slice_mut(s![bi, ci, oh * kh..(oh + 1) * kh, ow * kw..(ow + 1) * kw])
                    .mapv_inplace(|v| v + gv * inv);
            }
            vec![Some(gx.into_dyn())]
        })
    }

    /// Mean cross-entropy of row-wise softmax over `self` `[B, C]` against `labels`.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Var<'t> {
        let x = self.value();
        let x2 = x.view().into_dimensionality::<ndarray::Ix2>().expect("softmax_cross_entropy: logits must be 2-D");
        let (b, c) = x2.dim();
        assert_eq!(labels.len(), b, "softmax_cross_entropy: label count");
        assert!(labels.iter().all(|&l| l < c), "softmax_cross_entropy: label out of range");
        let mut probs = Array2::<f64>::zeros((b, c));
        let mut loss = 0.0;
        for (i, row) in x2.outer_iter().enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            loss += lse - row[labels[i]];
            for (j, &v) in row.iter().enumerate() {
                probs[[i, j]] = (v - lse).exp();
            }
        }
        let labels = labels.to_vec();
        self.tape().op(Array::from_elem(IxDyn(&[]), loss / b as f64), &[self], move |g, _| {
            let gv = *g.iter().next().unwrap() / b as f64;
            let mut d = probs.clone();
            for (i, &l) in labels.iter().enumerate() {
                d[[i, l]] -= 1.0;
            }
            d.mapv_inplace(|v| v * gv);
            vec![Some(d.into_dyn())]
        })
    }

    /// Sorts every row of a 2-D value ascending.
    pub fn sort_rows(self) -> Var<'t> {
        let x = self.value();
        let x2 = x.view().into_dimensionality::<ndarray::Ix2>().expect("sort_rows: value must be 2-D");
        let (r, n) = x2.dim();
        let mut perm = vec![0usize; r * n];
        let mut out = Array2::<f64>::zeros((r, n));
        for (i, row) in x2.outer_iter().enumerate() {
            let p = &mut perm[i * n..(i + 1) * n];
            p.iter_mut().enumerate().for_each(|(k, v)| *v = k);
            p.sort_unstable_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            for (k, &src) in p.iter().enumerate() {
                out[[i, k]] = row[src];
            }
        }
        self.tape().op(out.into_dyn(), &[self], move |g, _| {
            let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let mut gx = Array2::<f64>::zeros((r, n));
            for i in 0..r {
                for k in 0..n {
                    gx[[i, perm[i * n + k]]] = g2[[i, k]];
                }
            }
            vec![Some(gx.into_dyn())]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use ndarray::ArrayD;

    fn arr(shape: &[usize], f: impl Fn(usize) -> f64) -> ArrayD<f64> {
        let n: usize = shape.iter().product();
        ArrayD::from_shape_vec(IxDyn(shape), (0..n).map(f).collect()).unwrap()
    }

    /// Direct nested-loop cross-correlation used as the reference.
    fn naive_conv(x: &ArrayD<f64>, k: &ArrayD<f64>, cfg: Conv2d) -> ArrayD<f64> {
        let x = x.view().into_dimensionality::<Ix4>().unwrap();
        let k = k.view().into_dimensionality::<Ix4>().unwrap();
        let (b, _, h, w) = x.dim();
        let (cout, cin_g, kh, kw) = k.dim();
        let cout_g = cout / cfg.groups;
        let (ho, wo) = cfg.output_size(h, w, kh, kw).unwrap();
        let (pt, _, pl, _) = cfg.padding;
        let mut out = ndarray::Array4::<f64>::zeros((b, cout, ho, wo));
        for bi in 0..b {
            for co in 0..cout {
                let gi = co / cout_g;
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = 0.0;
                        for c in 0..cin_g {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let ih = (oh * cfg.stride.0 + i) as isize - pt as isize;
                                    let iw = (ow * cfg.stride.1 + j) as isize - pl as isize;
                                    if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < w {
                                        acc += x[[bi, gi * cin_g + c, ih as usize, iw as usize]] * k[[co, c, i, j]];
                                    }
                                }
                            }
                        }
                        out[[bi, co, oh, ow]] = acc;
                    }
                }
            }
        }
        out.into_dyn()
    }

    #[test]
    fn conv_matches_direct_loops() {
        let x = arr(&[2, 4, 5, 7], |i| ((i * 37) % 11) as f64 - 5.0);
        for (cfg, kshape) in [
            (Conv2d::default(), [3, 4, 2, 3]),
            (Conv2d { stride: (2, 1), padding: (1, 0, 2, 1), groups: 1 }, [2, 4, 3, 3]),
            (Conv2d { stride: (1, 2), padding: (0, 0, 1, 2), groups: 4 }, [8, 1, 5, 1]),
            (Conv2d { stride: (1, 1), padding: (0, 0, 3, 3), groups: 2 }, [2, 2, 1, 4]),
        ] {
            let k = arr(&kshape, |i| ((i * 13) % 7) as f64 * 0.5 - 1.0);
            let tape = Tape::new();
            let y = tape.constant(x.clone()).conv2d(tape.constant(k.clone()), cfg);
            assert_eq!(*y.value(), naive_conv(&x, &k, cfg));
        }
    }

    #[test]
    fn pool_and_sort_values() {
        let tape = Tape::new();
        let x = tape.constant(arr(&[1, 1, 2, 5], |i| i as f64));
        let p = x.avg_pool2d(1, 2);
        assert_eq!(p.value().as_slice().unwrap(), &[0.5, 2.5, 5.5, 7.5]);
        let r = tape.constant(arr(&[2, 3], |i| [3.0, 1.0, 2.0, -1.0, 5.0, 0.0][i]));
        assert_eq!(r.sort_rows().value().as_slice().unwrap(), &[1.0, 2.0, 3.0, -1.0, 0.0, 5.0]);
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let tape = Tape::new();
        let l = tape.constant(ArrayD::zeros(IxDyn(&[3, 4]))).softmax_cross_entropy(&[0, 1, 3]);
        assert!((l.item() - 4f64.ln()).abs() < 1e-15);
    }
}
