//! Lorentz layers on the tape.
//!
//! Hyperbolic values are arrays whose last axis holds ambient coordinates
//! `[time, space...]`. Every layer ends by recomputing the time coordinate
//! from the space part (or an equivalent closed form), so outputs sit on the
//! hyperboloid up to rounding.

use ndarray::IxDyn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat, Array, Tape, Var};
use crate::error::{Error, Result};
use crate::manifold::{Curvature, LorentzPoint};

pub fn time_part(x: Var<'_>) -> Var<'_> {
    let ax = x.shape().len() - 1;
    x.slice_axis(ax, 0, 1)
}

pub fn space_part(x: Var<'_>) -> Var<'_> {
    let shape = x.shape();
    let ax = shape.len() - 1;
    x.slice_axis(ax, 1, shape[ax])
}

/// `[sqrt(|s|² - 1/K), s]` along the last axis.
pub fn lift(space: Var<'_>, k: Curvature) -> Var<'_> {
    let ax = space.shape().len() - 1;
    let t = space.square().sum_axes(&[ax], true).shift(-1.0 / k.k()).sqrt();
    concat(&[t, space], ax)
}

/// Space part clamped to norm `max_norm`, then lifted.
pub fn proj_x(space: Var<'_>, max_norm: f64, k: Curvature) -> Var<'_> {
    let n = space.norm_last();
    let scale = n.unary(move |x| if x > max_norm { max_norm / x } else { 1.0 }, move |x, _| {
        if x > max_norm {
            -max_norm / (x * x)
        } else {
            0.0
        }
    });
    lift(space * scale, k)
}

/// ELU on the space coordinates, time recomputed.
pub fn lorentz_elu(x: Var<'_>, k: Curvature) -> Var<'_> {
    lift(space_part(x).elu(), k)
}

/// Direct concatenation of the `N` points along axis 1 of `[R, N, n+1]`,
/// giving `[R, nN+1]`.
pub fn hcat(x: Var<'_>, k: Curvature) -> Var<'_> {
    let s = x.shape();
    assert_eq!(s.len(), 3, "hcat expects [rows, N, n+1]");
    let (r, n_pts, d) = (s[0], s[1], s[2]);
    let t = x.slice_axis(2, 0, 1).square().sum_axes(&[1, 2], false).reshape(&[r, 1]);
    let t = t.shift((n_pts as f64 - 1.0) / k.k()).clamp(1e-300, f64::INFINITY).sqrt();
    let space = x.slice_axis(2, 1, d).reshape(&[r, n_pts * (d - 1)]);
    concat(&[t, space], 1)
}

/// Unnormalized Lorentzian centroid of `[R, N, n+1]` over axis 1, rescaled
/// onto the hyperboloid: `c / (sqrt(-K) sqrt(|<c,c>_L|))`.
pub fn centroid(x: Var<'_>, k: Curvature) -> Var<'_> {
    let c = x.mean_axes(&[1], false);
    let ct = time_part(c);
    let cs = space_part(c);
    let ax = cs.shape().len() - 1;
    let q = (ct.square() - cs.square().sum_axes(&[ax], true)).clamp(1e-300, f64::INFINITY);
    c / (q.sqrt() * k.sqrt_neg())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Elu,
}

impl Activation {
    fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Identity => x,
            Activation::Elu => x.elu(),
        }
    }
}

/// How the fully-connected layer produces its space coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LfcMode {
    /// `lambda * sigmoid(<v, p> + b') * u / |u|` with `u = W psi(p) + b`.
    #[default]
    Gated,
    /// `psi(W p + b)`.
    Ungated,
}

/// Parameters of a Lorentz fully-connected layer `L^n -> L^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LfcParams {
    /// `[m, n+1]`
    pub w: Array,
    /// `[m]`
    pub b: Array,
    /// `[1]`; the gate scale is `exp(log_lambda)`.
    pub log_lambda: Array,
    /// `[n+1]`
    pub v: Array,
    /// `[1]`
    pub b_prime: Array,
}

pub struct LfcVars<'t> {
    pub w: Var<'t>,
    pub b: Var<'t>,
    pub log_lambda: Var<'t>,
    pub v: Var<'t>,
    pub b_prime: Var<'t>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Array {
    Array::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-bound..bound))
}

impl LfcParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, lambda: f64) -> Self {
        let bound = 1.0 / ((n + 1) as f64).sqrt();
        LfcParams {
            w: uniform(rng, &[m, n + 1], bound),
            b: Array::zeros(IxDyn(&[m])),
            log_lambda: Array::from_elem(IxDyn(&[1]), lambda.ln()),
            v: uniform(rng, &[n + 1], bound),
            b_prime: Array::zeros(IxDyn(&[1])),
        }
    }

    pub fn lambda(&self) -> f64 {
        self.log_lambda[0].exp()
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[1] - 1
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn vars<'t>(&self, tape: &'t Tape, trainable: bool) -> LfcVars<'t> {
        let mk = |a: &Array| if trainable { tape.leaf(a.clone()) } else { tape.constant(a.clone()) };
        LfcVars { w: mk(&self.w), b: mk(&self.b), log_lambda: mk(&self.log_lambda), v: mk(&self.v), b_prime: mk(&self.b_prime) }
    }

    pub fn arrays(&self) -> [(&'static str, &Array); 5] {
        [("w", &self.w), ("b", &self.b), ("log_lambda", &self.log_lambda), ("v", &self.v), ("b_prime", &self.b_prime)]
    }

    pub fn arrays_mut(&mut self) -> [(&'static str, &mut Array); 5] {
        [
            ("w", &mut self.w),
            ("b", &mut self.b),
            ("log_lambda", &mut self.log_lambda),
            ("v", &mut self.v),
            ("b_prime", &mut self.b_prime),
        ]
    }
}

impl<'t> LfcVars<'t> {
    pub fn all(&self) -> [Var<'t>; 5] {
        [self.w, self.b, self.log_lambda, self.v, self.b_prime]
    }
}

/// Lorentz fully-connected layer on rows `[R, n+1] -> [R, m+1]`.
pub fn lfc<'t>(x: Var<'t>, p: &LfcVars<'t>, act: Activation, mode: LfcMode, k: Curvature) -> Var<'t> {
    let space = match mode {
        LfcMode::Gated => {
            let u = act.apply(x).matmul(p.w.t()) + p.b;
            let d = p.v.shape()[0];
            let gate = (x.matmul(p.v.reshape(&[d, 1])) + p.b_prime).sigmoid() * p.log_lambda.exp();
            gate * u / (u.norm_last() + 1e-12)
        }
        LfcMode::Ungated => act.apply(x.matmul(p.w.t()) + p.b),
    };
    lift(space, k)
}

/// Gathers `kh x kw` windows with the given stride from `[B, H, W, D]` into
/// `[B*Ho*Wo, kh*kw, D]` (row-major over window positions).
pub fn gather_windows(x: Var<'_>, kh: usize, kw: usize, stride: (usize, usize)) -> Result<(Var<'_>, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Dimension(format!("feature map must be [B, H, W, D], got {s:?}")));
    }
    let (b, h, w, d) = (s[0], s[1], s[2], s[3]);
    if kh == 0 || kw == 0 || kh > h || kw > w || stride.0 == 0 || stride.1 == 0 {
        return Err(Error::Dimension(format!("window {kh}x{kw} stride {stride:?} does not fit {h}x{w}")));
    }
    let ho = (h - kh) / stride.0 + 1;
    let wo = (w - kw) / stride.1 + 1;
    if kh == 1 && kw == 1 && stride == (1, 1) {
        return Ok((x.reshape(&[b * h * w, 1, d]), h, w));
    }
    let mut idx = Vec::with_capacity(b * ho * wo * kh * kw);
    for bi in 0..b {
        for oh in 0..ho {
            for ow in 0..wo {
                for i in 0..kh {
                    for j in 0..kw {
                        idx.push((bi * h + oh * stride.0 + i) * w + ow * stride.1 + j);
                    }
                }
            }
        }
    }
    let rows = x.reshape(&[b * h * w, d]).index_select(&idx);
    Ok((rows.reshape(&[b * ho * wo, kh * kw, d]), ho, wo))
}

/// Lorentz convolution: each output site is `lfc(hcat(window))`.
pub fn lorentz_conv<'t>(
    x: Var<'t>,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    p: &LfcVars<'t>,
    act: Activation,
    mode: LfcMode,
    k: Curvature,
) -> Result<Var<'t>> {
    let b = x.shape()[0];
    let (win, ho, wo) = gather_windows(x, kh, kw, stride)?;
    let need = p.w.shape()[1];
    let cat = if kh * kw == 1 { win.reshape(&[win.shape()[0], win.shape()[2]]) } else { hcat(win, k) };
    if cat.shape()[1] != need {
        return Err(Error::Dimension(format!("window concatenation has {} coordinates, LFC expects {need}", cat.shape()[1])));
    }
    let y = lfc(cat, p, act, mode, k);
    let m1 = y.shape()[1];
    Ok(y.reshape(&[b, ho, wo, m1]))
}

/// Lorentzian centroid pooling over windows of `[B, H, W, n+1]`.
pub fn lorentz_avg_pool(x: Var<'_>, kh: usize, kw: usize, stride: (usize, usize), k: Curvature) -> Result<Var<'_>> {
    let s = x.shape();
    let (b, d) = (s[0], s[3]);
    let (win, ho, wo) = gather_windows(x, kh, kw, stride)?;
    Ok(centroid(win, k).reshape(&[b, ho, wo, d]))
}

/// Parameters of the Lorentz multinomial logistic regression head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlrParams {
    /// `[C]`
    pub a: Array,
    /// `[C, n]`
    pub z: Array,
}

impl MlrParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, n: usize, classes: usize) -> Self {
        MlrParams { a: Array::zeros(IxDyn(&[classes])), z: uniform(rng, &[classes, n], 1.0 / (n as f64).sqrt()) }
    }

    pub fn vars<'t>(&self, tape: &'t Tape, trainable: bool) -> (Var<'t>, Var<'t>) {
        if trainable {
            (tape.leaf(self.a.clone()), tape.leaf(self.z.clone()))
        } else {
            (tape.constant(self.a.clone()), tape.constant(self.z.clone()))
        }
    }
}

/// Class logits `[R, C]` for points `[R, n+1]`: signed distance to the
/// hyperplane of each class,
/// `beta_c asinh(sqrt(-K) alpha_c / beta_c) / sqrt(-K)` with
/// `alpha_c = cosh(sqrt(-K) a_c) <z_c, p_s> - sinh(sqrt(-K) a_c) |z_c| p_t`
/// and `beta_c = |z_c|` (floored at 1e-12).
pub fn hmlr<'t>(x: Var<'t>, a: Var<'t>, z: Var<'t>, k: Curvature) -> Var<'t> {
    let c = k.sqrt_neg();
    let classes = a.shape()[0];
    let ca = a.scale(c).reshape(&[1, classes]);
    let zn = z.norm_last().reshape(&[1, classes]);
    let alpha = ca.cosh() * space_part(x).matmul(z.t()) - ca.sinh() * zn * time_part(x);
    let beta = zn.clamp(1e-12, f64::INFINITY);
    beta * (alpha * c / beta).asinh() / c
}

fn point_rows(points: &[LorentzPoint]) -> Array {
    let d = points[0].ambient().len();
    Array::from_shape_fn(IxDyn(&[points.len(), d]), |i| points[i[0]].ambient()[i[1]])
}

fn row_point(a: &Array, row: usize, k: Curvature) -> LorentzPoint {
    let d = a.shape()[a.ndim() - 1];
    let a = a.as_standard_layout();
    let flat = a.as_slice().unwrap();
    LorentzPoint::new_unchecked(flat[row * d..(row + 1) * d].to_vec(), k)
}

/// Rows of an array whose last axis holds ambient coordinates, as points.
pub fn rows_to_points(a: &Array, k: Curvature) -> Vec<LorentzPoint> {
    let d = a.shape()[a.ndim() - 1];
    let a = a.as_standard_layout();
    a.as_slice().unwrap().chunks(d).map(|c| LorentzPoint::new_unchecked(c.to_vec(), k)).collect()
}

/// Points as a `[R, n+1]` array.
pub fn points_to_rows(points: &[LorentzPoint]) -> Array {
    point_rows(points)
}

/// Lorentz ELU of a single point.
pub fn lorentz_elu_point(p: &LorentzPoint) -> LorentzPoint {
    let tape = Tape::new();
    let y = lorentz_elu(tape.constant(point_rows(std::slice::from_ref(p))), p.curvature());
    row_point(&y.value(), 0, p.curvature())
}

/// Lorentz direct concatenation of points.
pub fn hcat_points(points: &[LorentzPoint]) -> Result<LorentzPoint> {
    let first = points.first().ok_or_else(|| Error::Validation("hcat of no points".into()))?;
    if points.iter().any(|p| p.dim() != first.dim() || p.curvature() != first.curvature()) {
        return Err(Error::Dimension("hcat needs points of one dimension and curvature".into()));
    }
    let k = first.curvature();
    let tape = Tape::new();
    let x = tape.constant(point_rows(points).into_shape_with_order(IxDyn(&[1, points.len(), first.dim() + 1])).unwrap());
    Ok(row_point(&hcat(x, k).value(), 0, k))
}

/// Fully-connected layer applied to one point.
pub fn lfc_point(p: &LorentzPoint, params: &LfcParams, act: Activation, mode: LfcMode) -> Result<LorentzPoint> {
    if params.in_dim() != p.dim() {
        return Err(Error::Dimension(format!("LFC expects L^{}, got L^{}", params.in_dim(), p.dim())));
    }
    let tape = Tape::new();
    let v = params.vars(&tape, false);
    let y = lfc(tape.constant(point_rows(std::slice::from_ref(p))), &v, act, mode, p.curvature());
    Ok(row_point(&y.value(), 0, p.curvature()))
}

/// Lorentzian centroid of points with uniform weights.
pub fn centroid_points(points: &[LorentzPoint]) -> Result<LorentzPoint> {
    let first = points.first().ok_or_else(|| Error::Validation("centroid of no points".into()))?;
    let k = first.curvature();
    let tape = Tape::new();
    let x = tape.constant(point_rows(points).into_shape_with_order(IxDyn(&[1, points.len(), first.dim() + 1])).unwrap());
    Ok(row_point(&centroid(x, k).value(), 0, k))
}

/// HMLR logits for one point.
pub fn hmlr_logits(p: &LorentzPoint, params: &MlrParams) -> Result<Vec<f64>> {
    if params.z.shape()[1] != p.dim() {
        return Err(Error::Dimension(format!("MLR expects L^{}, got L^{}", params.z.shape()[1], p.dim())));
    }
    let tape = Tape::new();
    let (a, z) = params.vars(&tape, false);
    let y = hmlr(tape.constant(point_rows(std::slice::from_ref(p))), a, z, p.curvature());
    Ok(y.value().iter().copied().collect())
}

/// A batch of grids of Lorentz points, `[B, H, W, n+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzFeatureMap {
    pub data: Array,
    pub curvature: Curvature,
}

impl LorentzFeatureMap {
    pub fn new(data: Array, curvature: Curvature) -> Result<Self> {
        if data.ndim() != 4 || data.shape()[3] < 2 {
            return Err(Error::Dimension(format!("feature map must be [B, H, W, n+1], got {:?}", data.shape())));
        }
        let fm = LorentzFeatureMap { data: data.as_standard_layout().to_owned(), curvature };
        let worst = fm.max_constraint_residual();
        if worst > 1e-6 {
            return Err(Error::Constraint(format!("feature map site off the hyperboloid by {worst:e}")));
        }
        Ok(fm)
    }

    pub fn sites(&self) -> Vec<LorentzPoint> {
        rows_to_points(&self.data, self.curvature)
    }

    pub fn max_constraint_residual(&self) -> f64 {
        self.sites().iter().map(|p| p.constraint_residual()).fold(0.0, f64::max)
    }
}
