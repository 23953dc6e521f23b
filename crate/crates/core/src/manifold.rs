//! Lorentz model primitives.
//!
//! A point of the `n`-dimensional Lorentz model with curvature `K < 0` is a
//! vector `p = [p_t, p_s] ∈ R^{n+1}` with `<p, p>_L = 1/K` and `p_t > 0`, where
//! `<u, v>_L = <u_s, v_s> - u_t v_t`. Coordinates are stored time-first.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Tolerance on the hyperboloid constraint (relative to `max(1, p_t^2)`).
pub const TOL_MANIFOLD: f64 = 1e-7;

/// Default bound on space components before lifting onto the manifold.
pub const DEFAULT_MAX_NORM: f64 = 32.0;

/// Lower clamp for `acosh` arguments.
pub const ACOSH_FLOOR: f64 = 1.0 + 1e-15;

/// Tangent norms below this take the series limit in exp/log.
pub const SMALL_TANGENT: f64 = 1e-12;

/// Constant negative sectional curvature.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(k: f64) -> Result<Self> {
        if k.is_finite() && k < 0.0 {
            Ok(Curvature(k))
        } else {
            Err(Error::Validation(format!("curvature must be finite and negative, got {k}")))
        }
    }

    #[inline]
    pub fn k(self) -> f64 {
        self.0
    }

    /// `sqrt(-K)`.
    #[inline]
    pub fn sqrt_neg(self) -> f64 {
        (-self.0).sqrt()
    }

    /// Time component of the origin, `sqrt(-1/K)`.
    #[inline]
    pub fn origin_time(self) -> f64 {
        (-1.0 / self.0).sqrt()
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Curvature(-1.0)
    }
}

impl TryFrom<f64> for Curvature {
    type Error = Error;
    fn try_from(k: f64) -> Result<Self> {
        Curvature::new(k)
    }
}

impl From<Curvature> for f64 {
    fn from(c: Curvature) -> f64 {
        c.0
    }
}

#[inline]
pub(crate) fn inner(u: &[f64], v: &[f64]) -> f64 {
    let space: f64 = u[1..].iter().zip(&v[1..]).map(|(a, b)| a * b).sum();
    space - u[0] * v[0]
}

/// Lorentz inner product `<u_s, v_s> - u_t v_t` of two ambient vectors.
pub fn lorentz_inner(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() || u.len() < 2 {
        return Err(Error::Dimension(format!(
            "lorentz inner product needs equal lengths >= 2, got {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(inner(u, v))
}

/// `acosh` with its argument clamped below at [`ACOSH_FLOOR`].
#[inline]
pub fn safe_acosh(x: f64) -> f64 {
    x.max(ACOSH_FLOOR).acosh()
}

/// `acosh(x) / sqrt(x^2 - 1)`, continuous at `x = 1`.
#[inline]
pub(crate) fn acosh_ratio(x: f64) -> f64 {
    let e = x - 1.0;
    if e < 1e-8 {
        1.0 - e.max(0.0) / 3.0
    } else {
        x.acosh() / (e * (x + 1.0)).sqrt()
    }
}

/// `sinh(x) / x`, continuous at zero.
#[inline]
pub(crate) fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 + x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sinh() / x
    }
}

/// A point on the hyperboloid.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl LorentzPoint {
    /// Validates the hyperboloid constraint and the upper-sheet condition.
    pub fn new(ambient: Vec<f64>, curvature: Curvature) -> Result<Self> {
        if ambient.len() < 2 {
            return Err(Error::Dimension(format!(
                "a Lorentz point needs at least 2 coordinates, got {}",
                ambient.len()
            )));
        }
        let p = LorentzPoint { coords: ambient, curvature };
        p.check(TOL_MANIFOLD)?;
        Ok(p)
    }

    /// Builds a point without validation. Callers guarantee the constraint.
    pub fn new_unchecked(ambient: Vec<f64>, curvature: Curvature) -> Self {
        debug_assert!(ambient.len() >= 2);
        LorentzPoint { coords: ambient, curvature }
    }

    /// The origin `[sqrt(-1/K), 0, ..., 0]` of `L^n_K`.
    pub fn origin(n: usize, curvature: Curvature) -> Self {
        let mut coords = vec![0.0; n + 1];
        coords[0] = curvature.origin_time();
        LorentzPoint { coords, curvature }
    }

    pub fn time(&self) -> f64 {
        self.coords[0]
    }

    pub fn space(&self) -> &[f64] {
        &self.coords[1..]
    }

    pub fn ambient(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_ambient(self) -> Vec<f64> {
        self.coords
    }

    /// Intrinsic dimension `n` (ambient length minus one).
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn is_origin(&self) -> bool {
        self.space().iter().all(|&x| x == 0.0)
    }

    /// `|<p,p>_L - 1/K| / max(1, p_t^2)`.
    pub fn constraint_residual(&self) -> f64 {
        let r = (inner(&self.coords, &self.coords) - 1.0 / self.curvature.k()).abs();
        r / self.time().powi(2).max(1.0)
    }

    pub fn is_on_manifold(&self, tol: f64) -> bool {
        self.time() > 0.0 && self.constraint_residual() <= tol
    }

    pub(crate) fn check(&self, tol: f64) -> Result<()> {
        if !self.coords.iter().all(|x| x.is_finite()) {
            return Err(Error::Constraint("non-finite coordinates".into()));
        }
        if !(self.time() > 0.0) {
            return Err(Error::Constraint(format!("time component {} is not positive", self.time())));
        }
        let r = self.constraint_residual();
        if r > tol {
            return Err(Error::Constraint(format!("constraint residual {r:e} exceeds {tol:e}")));
        }
        Ok(())
    }

    /// Recomputes the time component from the space part.
    pub(crate) fn reproject(mut self) -> Self {
        let s2: f64 = self.coords[1..].iter().map(|x| x * x).sum();
        self.coords[0] = (s2 - 1.0 / self.curvature.k()).sqrt();
        self
    }
}

/// A vector of the tangent space at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    ambient: Vec<f64>,
    base: LorentzPoint,
}

impl TangentVector {
    /// Validates `<base, v>_L = 0` (relative to the magnitudes involved).
    pub fn new(base: LorentzPoint, ambient: Vec<f64>) -> Result<Self> {
        if ambient.len() != base.coords.len() {
            return Err(Error::Dimension(format!(
                "tangent vector has {} coordinates, base point {}",
                ambient.len(),
                base.coords.len()
            )));
        }
        let scale = base.time() * ambient.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        let ip = inner(&base.coords, &ambient);
        if ip.abs() > TOL_MANIFOLD * scale {
            return Err(Error::Constraint(format!("vector is not tangent: <base, v>_L = {ip:e}")));
        }
        Ok(TangentVector { ambient, base })
    }

    pub fn new_unchecked(base: LorentzPoint, ambient: Vec<f64>) -> Self {
        TangentVector { ambient, base }
    }

    pub fn zero(base: LorentzPoint) -> Self {
        let ambient = vec![0.0; base.coords.len()];
        TangentVector { ambient, base }
    }

    /// A tangent vector at the origin with the given space part (time component 0).
    pub fn at_origin(space: &[f64], curvature: Curvature) -> Self {
        let base = LorentzPoint::origin(space.len(), curvature);
        let mut ambient = Vec::with_capacity(space.len() + 1);
        ambient.push(0.0);
        ambient.extend_from_slice(space);
        TangentVector { ambient, base }
    }

    /// Projects an arbitrary ambient vector onto the tangent space at `base`.
    pub fn project(base: LorentzPoint, ambient: &[f64]) -> Result<Self> {
        if ambient.len() != base.coords.len() {
            return Err(Error::Dimension("projection onto tangent space".into()));
        }
        let c = base.curvature.k() * inner(&base.coords, ambient);
        let v = ambient.iter().zip(&base.coords).map(|(a, p)| a - c * p).collect();
        Ok(TangentVector { ambient: v, base })
    }

    pub fn ambient(&self) -> &[f64] {
        &self.ambient
    }

    pub fn base(&self) -> &LorentzPoint {
        &self.base
    }

    /// `sqrt(<v,v>_L)`, clamped at zero.
    pub fn norm(&self) -> f64 {
        inner(&self.ambient, &self.ambient).max(0.0).sqrt()
    }

    pub fn scale(mut self, t: f64) -> Self {
        self.ambient.iter_mut().for_each(|x| *x *= t);
        self
    }
}

fn check_pair(p: &LorentzPoint, q: &LorentzPoint) -> Result<()> {
    if p.coords.len() != q.coords.len() {
        return Err(Error::Dimension(format!(
            "points of dimension {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    if p.curvature != q.curvature {
        return Err(Error::Dimension(format!(
            "curvatures {} and {} differ",
            p.curvature.k(),
            q.curvature.k()
        )));
    }
    Ok(())
}

/// Geodesic distance `acosh(K <p,q>_L) / sqrt(-K)`.
pub fn geodesic_distance(p: &LorentzPoint, q: &LorentzPoint) -> Result<f64> {
    check_pair(p, q)?;
    p.check(TOL_MANIFOLD)?;
    q.check(TOL_MANIFOLD)?;
    Ok(distance_unchecked(p, q))
}

#[inline]
pub(crate) fn distance_unchecked(p: &LorentzPoint, q: &LorentzPoint) -> f64 {
    let k = p.curvature;
    let c = k.sqrt_neg();
    let beta = k.k() * inner(&p.coords, &q.coords);
    if beta < 2.0 {
        // acosh loses half the digits near 1; the chord |p - q|_L = 2 sinh(c d / 2) / c does not
        let mut w = -(p.coords[0] - q.coords[0]).powi(2);
        for (a, b) in p.coords[1..].iter().zip(&q.coords[1..]) {
            w += (a - b) * (a - b);
        }
        return 2.0 * (0.5 * c * w.max(0.0).sqrt()).asinh() / c;
    }
    beta.acosh() / c
}

/// Exponential map `cosh(a) p + sinh(a) v / a` with `a = sqrt(-K) |v|_L`.
pub fn exp_map(base: &LorentzPoint, v: &TangentVector) -> Result<LorentzPoint> {
    if v.ambient.len() != base.coords.len() {
        return Err(Error::Dimension("tangent vector and base point differ in length".into()));
    }
    let norm = v.norm();
    if !norm.is_finite() {
        return Err(Error::Numeric("non-finite tangent norm".into()));
    }
    if norm < SMALL_TANGENT {
        return Ok(base.clone());
    }
    let alpha = base.curvature.sqrt_neg() * norm;
    let (c, s) = (alpha.cosh(), alpha.sinh() / alpha);
    let coords = base.coords.iter().zip(&v.ambient).map(|(p, x)| c * p + s * x).collect();
    Ok(LorentzPoint::new_unchecked(coords, base.curvature).reproject())
}

/// Logarithmic map `acosh(b) / sqrt(b^2 - 1) (q - b p)` with `b = K <p,q>_L`.
pub fn log_map(base: &LorentzPoint, q: &LorentzPoint) -> Result<TangentVector> {
    check_pair(base, q)?;
    Ok(log_unchecked(base, q))
}

pub(crate) fn log_unchecked(base: &LorentzPoint, q: &LorentzPoint) -> TangentVector {
    let beta = (base.curvature.k() * inner(&base.coords, &q.coords)).max(1.0);
    if beta - 1.0 < 1e-15 * beta {
        return TangentVector::zero(base.clone());
    }
    let f = acosh_ratio(beta);
    let ambient = q.coords.iter().zip(&base.coords).map(|(q, p)| f * (q - beta * p)).collect();
    TangentVector { ambient, base: base.clone() }
}

/// Parallel transport of `v ∈ T_p` to `T_q` along the geodesic.
pub fn parallel_transport(p: &LorentzPoint, q: &LorentzPoint, v: &TangentVector) -> Result<TangentVector> {
    check_pair(p, q)?;
    if v.ambient.len() != p.coords.len() {
        return Err(Error::Dimension("tangent vector and base point differ in length".into()));
    }
    let k = p.curvature.k();
    let denom = 1.0 + k * inner(&p.coords, &q.coords);
    if denom.abs() < 1e-12 {
        return Err(Error::Numeric("degenerate parallel transport denominator".into()));
    }
    let coef = k * inner(&q.coords, &v.ambient) / denom;
    let ambient = v
        .ambient
        .iter()
        .zip(p.coords.iter().zip(&q.coords))
        .map(|(x, (a, b))| x - coef * (a + b))
        .collect();
    Ok(TangentVector { ambient, base: q.clone() })
}

/// Lifts a space vector onto the hyperboloid: `[sqrt(|s|^2 - 1/K), s]`.
pub fn lift_space(space: &[f64], curvature: Curvature) -> LorentzPoint {
    let s2: f64 = space.iter().map(|x| x * x).sum();
    let mut coords = Vec::with_capacity(space.len() + 1);
    coords.push((s2 - 1.0 / curvature.k()).sqrt());
    coords.extend_from_slice(space);
    LorentzPoint::new_unchecked(coords, curvature)
}

/// Rescales `space` to `max_norm` when its Euclidean norm exceeds it.
pub fn clamp_norm(space: &[f64], max_norm: f64) -> Vec<f64> {
    let n = space.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > max_norm {
        let f = max_norm / n;
        space.iter().map(|x| x * f).collect()
    } else {
        space.to_vec()
    }
}

/// Exponential map at the origin of a space-only tangent vector.
pub fn exp_origin(space: &[f64], curvature: Curvature) -> LorentzPoint {
    let c = curvature.sqrt_neg();
    let n = space.iter().map(|x| x * x).sum::<f64>().sqrt();
    let f = sinhc(c * n);
    let s: Vec<f64> = space.iter().map(|x| x * f).collect();
    lift_space(&s, curvature)
}

/// Random point `exp_0(r u)` with `u` uniform on the sphere and `r ~ U(0, max_radius)`.
pub fn random_point<R: Rng + ?Sized>(rng: &mut R, n: usize, max_radius: f64, curvature: Curvature) -> LorentzPoint {
    let dir = random_unit(rng, n);
    let r = rng.random::<f64>() * max_radius;
    let v: Vec<f64> = dir.iter().map(|x| x * r).collect();
    exp_origin(&v, curvature)
}

/// Random tangent vector at `base` with Lorentz norm uniform in `[0, max_norm]`.
pub fn random_tangent<R: Rng + ?Sized>(rng: &mut R, base: &LorentzPoint, max_norm: f64) -> TangentVector {
    let dir = random_unit(rng, base.dim());
    let r = rng.random::<f64>() * max_norm;
    let v: Vec<f64> = dir.iter().map(|x| x * r).collect();
    let at_origin = TangentVector::at_origin(&v, base.curvature);
    let origin = at_origin.base.clone();
    parallel_transport(&origin, base, &at_origin).expect("transport from the origin is never degenerate")
}

/// Uniform direction on the unit sphere of `R^n`.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return g.into_iter().map(|x| x / norm).collect();
        }
    }
}
