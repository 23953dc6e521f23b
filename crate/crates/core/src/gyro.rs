//! Lorentz gyrovector operations.
//!
//! [`gyroadd`] and [`gyromul`] are closed-form expressions; the `_riemannian`
//! variants compose exp/log/parallel transport directly and serve as their
//! reference.

use crate::error::{Error, Result};
use crate::manifold::{exp_map, log_unchecked, parallel_transport, LorentzPoint};

fn check_pair(p: &LorentzPoint, q: &LorentzPoint) -> Result<()> {
    if p.dim() != q.dim() || p.curvature() != q.curvature() {
        return Err(Error::Dimension(format!(
            "gyro operation on L^{} (K={}) and L^{} (K={})",
            p.dim(),
            p.curvature().k(),
            q.dim(),
            q.curvature().k()
        )));
    }
    Ok(())
}

/// `p ⊕ q = Exp_p(PT_{0→p}(Log_0(q)))`.
pub fn gyroadd_riemannian(p: &LorentzPoint, q: &LorentzPoint) -> Result<LorentzPoint> {
    check_pair(p, q)?;
    let o = LorentzPoint::origin(p.dim(), p.curvature());
    let v = log_unchecked(&o, q);
    let moved = parallel_transport(&o, p, &v)?;
    exp_map(p, &moved)
}

/// `t ⊙ p = Exp_0(t Log_0(p))`.
pub fn gyromul_riemannian(t: f64, p: &LorentzPoint) -> Result<LorentzPoint> {
    let o = LorentzPoint::origin(p.dim(), p.curvature());
    let v = log_unchecked(&o, p).scale(t);
    exp_map(&o, &v)
}

/// Closed-form gyroaddition.
///
/// With `a = 1 + sqrt|K| p_t`, `b = 1 + sqrt|K| q_t`, `n_p = |p_s|^2`,
/// `n_q = |q_s|^2`, `s = <p_s, q_s>`:
/// `D = a²b² - 2Kab·s + K² n_p n_q`, `N = a² n_q + 2ab·s + b² n_p`, and
/// the result is `[(D - KN) / (sqrt|K| (D + KN)), 2 (A_s p_s + A_q q_s) / (D + KN)]`.
pub fn gyroadd(p: &LorentzPoint, q: &LorentzPoint) -> Result<LorentzPoint> {
    check_pair(p, q)?;
    if q.is_origin() {
        return Ok(p.clone());
    }
    if p.is_origin() {
        return Ok(q.clone());
    }
    let k = p.curvature().k();
    let c = p.curvature().sqrt_neg();
    let (ps, qs) = (p.space(), q.space());
    let a = 1.0 + c * p.time();
    let b = 1.0 + c * q.time();
    let np: f64 = ps.iter().map(|x| x * x).sum();
    let nq: f64 = qs.iter().map(|x| x * x).sum();
    let s: f64 = ps.iter().zip(qs).map(|(x, y)| x * y).sum();
    let d = a * a * b * b - 2.0 * k * a * b * s + k * k * np * nq;
    let n = a * a * nq + 2.0 * a * b * s + b * b * np;
    let denom = d + k * n;
    if !(denom.abs() > 1e-300) || !denom.is_finite() {
        return Err(Error::Numeric(format!("gyroaddition denominator {denom:e}")));
    }
    let a_s = a * b * b - 2.0 * k * b * s - k * a * nq;
    let a_q = b * (a * a + k * np);
    let mut coords = Vec::with_capacity(ps.len() + 1);
    coords.push((d - k * n) / (c * denom));
    coords.extend(ps.iter().zip(qs).map(|(x, y)| 2.0 * (a_s * x + a_q * y) / denom));
    Ok(LorentzPoint::new_unchecked(coords, p.curvature()))
}

/// Closed-form gyromultiplication
/// `t ⊙ p = (1/sqrt|K|) [cosh(t r), sinh(t r) p_s / |p_s|]` with `r = acosh(sqrt|K| p_t)`.
pub fn gyromul(t: f64, p: &LorentzPoint) -> LorentzPoint {
    if t == 0.0 || p.is_origin() {
        return LorentzPoint::origin(p.dim(), p.curvature());
    }
    let c = p.curvature().sqrt_neg();
    let ns = p.space().iter().map(|x| x * x).sum::<f64>().sqrt();
    // asinh(sqrt|K| |p_s|) equals acosh(sqrt|K| p_t) on the manifold and is
    // better conditioned near the origin.
    let r = (c * ns).asinh();
    let f = (t * r).sinh() / (c * ns);
    let mut coords = Vec::with_capacity(p.dim() + 1);
    coords.push((t * r).cosh() / c);
    coords.extend(p.space().iter().map(|x| f * x));
    LorentzPoint::new_unchecked(coords, p.curvature())
}

/// `⊖p = [p_t, -p_s]`.
pub fn gyroinverse(p: &LorentzPoint) -> LorentzPoint {
    let mut coords = p.ambient().to_vec();
    coords[1..].iter_mut().for_each(|x| *x = -*x);
    LorentzPoint::new_unchecked(coords, p.curvature())
}

/// `gyr[p, q] z = ⊖(p ⊕ q) ⊕ (p ⊕ (q ⊕ z))`.
pub fn gyration(p: &LorentzPoint, q: &LorentzPoint, z: &LorentzPoint) -> Result<LorentzPoint> {
    let pq = gyroadd(p, q)?;
    let right = gyroadd(p, &gyroadd(q, z)?)?;
    gyroadd(&gyroinverse(&pq), &right)
}

/// Centering by left gyrotranslation: `⊖mean ⊕ p`.
pub fn center(mean: &LorentzPoint, p: &LorentzPoint) -> Result<LorentzPoint> {
    gyroadd(&gyroinverse(mean), p)
}

#[doc(hidden)]
pub fn max_abs_diff(a: &LorentzPoint, b: &LorentzPoint) -> f64 {
    a.ambient().iter().zip(b.ambient()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{geodesic_distance, random_point, Curvature};
    use crate::rng::seeded;

    fn k1() -> Curvature {
        Curvature::default()
    }

    #[test]
    fn identity_element() {
        let mut rng = seeded(11);
        let q = random_point(&mut rng, 3, 2.0, k1());
        let o = LorentzPoint::origin(3, k1());
        assert_eq!(gyroadd(&o, &q).unwrap(), q);
        assert!(max_abs_diff(&gyroadd_riemannian(&o, &q).unwrap(), &q) < 1e-12);
        assert!(max_abs_diff(&gyroadd_riemannian(&q, &o).unwrap(), &q) < 1e-8);
        let inv = gyroinverse(&q);
        assert!(max_abs_diff(&gyroadd_riemannian(&inv, &q).unwrap(), &o) < 1e-8);
        assert!(max_abs_diff(&gyroadd(&inv, &q).unwrap(), &o) < 1e-8);
    }

    #[test]
    fn closed_form_matches_riemannian() {
        for k in [-1.0, -0.3, -2.0] {
            let k = Curvature::new(k).unwrap();
            let mut rng = seeded(12);
            for _ in 0..200 {
                let p = random_point(&mut rng, 4, 2.5, k);
                let q = random_point(&mut rng, 4, 2.5, k);
                let a = gyroadd(&p, &q).unwrap();
                let b = gyroadd_riemannian(&p, &q).unwrap();
                assert!(max_abs_diff(&a, &b) < 1e-8, "{a:?} vs {b:?}");
                assert!(a.is_on_manifold(1e-7));
                let t = rand::Rng::random_range(&mut rng, -3.0..3.0);
                assert!(max_abs_diff(&gyromul(t, &p), &gyromul_riemannian(t, &p).unwrap()) < 1e-8);
            }
        }
    }

    #[test]
    fn gyromul_examples() {
        let p = LorentzPoint::new(vec![1f64.cosh(), 1f64.sinh()], k1()).unwrap();
        let two = gyromul(2.0, &p);
        assert!((two.time() - 2f64.cosh()).abs() < 1e-12);
        assert!((two.space()[0] - 2f64.sinh()).abs() < 1e-12);
        assert!(max_abs_diff(&gyromul(1.0, &p), &p) < 1e-12);
        assert_eq!(gyromul(0.0, &p), LorentzPoint::origin(1, k1()));
        assert!(max_abs_diff(&gyromul_riemannian(0.0, &p).unwrap(), &LorentzPoint::origin(1, k1())) < 1e-15);
    }

    #[test]
    fn inverse_examples() {
        let s = 2f64.sqrt();
        let p = LorentzPoint::new(vec![s, 1.0], k1()).unwrap();
        assert_eq!(gyroinverse(&p).ambient(), &[s, -1.0]);
        let o = LorentzPoint::origin(2, k1());
        assert_eq!(gyroinverse(&o).time(), o.time());
        assert!(gyroinverse(&o).is_origin());
        assert_eq!(gyroinverse(&gyroinverse(&p)), p);
    }

    #[test]
    fn left_gyrotranslation_is_isometry() {
        let mut rng = seeded(13);
        for _ in 0..100 {
            let p = random_point(&mut rng, 3, 2.0, k1());
            let x = random_point(&mut rng, 3, 2.0, k1());
            let y = random_point(&mut rng, 3, 2.0, k1());
            let d0 = geodesic_distance(&x, &y).unwrap();
            let d1 = geodesic_distance(&gyroadd(&p, &x).unwrap(), &gyroadd(&p, &y).unwrap()).unwrap();
            assert!((d0 - d1).abs() < 1e-8);
        }
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let a = LorentzPoint::origin(2, k1());
        let b = LorentzPoint::origin(3, k1());
        assert!(matches!(gyroadd(&a, &b), Err(Error::Dimension(_))));
    }
}
