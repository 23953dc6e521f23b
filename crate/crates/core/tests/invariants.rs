//! Property tests for the geometric invariants, over random seeds.

use proptest::prelude::*;

use lorentzkit::alignment::{busemann_project, hbn, hhsw_between, HbnParams};
use lorentzkit::frechet::{frechet_mean, frechet_variance};
use lorentzkit::gyro::{gyration, gyroadd_riemannian, gyromul_riemannian, max_abs_diff};
use lorentzkit::hyperbolicity::{delta_exact, delta_rel, DistanceMatrix};
use lorentzkit::manifold::{
    exp_map, geodesic_distance, log_map, lorentz_inner, parallel_transport, random_point, random_tangent, random_unit, Curvature, LorentzPoint,
};
use lorentzkit::rng::seeded;
use lorentzkit::{gyroadd, gyroinverse, gyromul};

fn curvature() -> impl Strategy<Value = Curvature> {
    prop_oneof![Just(-1.0), -3.0f64..-0.2].prop_map(|k| Curvature::new(k).unwrap())
}

fn points(seed: u64, n: usize, dim: usize, radius: f64, k: Curvature) -> Vec<LorentzPoint> {
    let mut rng = seeded(seed);
    (0..n).map(|_| random_point(&mut rng, dim, radius, k)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn exp_log_round_trip(seed in any::<u64>(), dim in 1usize..6, len in 0.0f64..5.0, k in curvature()) {
        let mut rng = seeded(seed);
        let p = random_point(&mut rng, dim, 2.0, k);
        let v = random_tangent(&mut rng, &p, 1.0);
        prop_assume!(v.norm() > 1e-6);
        let v = v.clone().scale(len / v.norm());
        let q = exp_map(&p, &v).unwrap();
        prop_assert!(q.is_on_manifold(1e-9 * q.time()));
        let back = log_map(&p, &q).unwrap();
        let err = norm(&back.ambient().iter().zip(v.ambient()).map(|(a, b)| a - b).collect::<Vec<_>>());
        prop_assert!(err <= 1e-9 * norm(v.ambient()).max(1.0), "err {err:e}");
        let d = geodesic_distance(&p, &q).unwrap();
        prop_assert!((d - len).abs() <= 1e-9 * len.max(1.0));
    }

    #[test]
    fn transport_preserves_norm_and_tangency(seed in any::<u64>(), dim in 1usize..6, k in curvature()) {
        let mut rng = seeded(seed);
        let p = random_point(&mut rng, dim, 2.0, k);
        let q = random_point(&mut rng, dim, 2.0, k);
        let v = random_tangent(&mut rng, &p, 3.0);
        let w = parallel_transport(&p, &q, &v).unwrap();
        let scale = q.time() * norm(w.ambient()).max(1.0);
        prop_assert!(lorentz_inner(q.ambient(), w.ambient()).unwrap().abs() <= 1e-9 * scale);
        prop_assert!((w.norm() - v.norm()).abs() <= 1e-9 * v.norm().max(1.0));
    }

    #[test]
    fn distance_is_a_metric(seed in any::<u64>(), k in curvature()) {
        let p = points(seed, 3, 3, 3.0, k);
        let d = |a: usize, b: usize| geodesic_distance(&p[a], &p[b]).unwrap();
        prop_assert_eq!(d(0, 0), 0.0);
        prop_assert!((d(0, 1) - d(1, 0)).abs() < 1e-12 * d(0, 1).max(1.0));
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-9);
    }

    #[test]
    fn closed_form_gyro_matches_riemannian(seed in any::<u64>(), t in -3.0f64..3.0, k in curvature()) {
        let p = points(seed, 2, 3, 2.0, k);
        prop_assert!(max_abs_diff(&gyroadd(&p[0], &p[1]).unwrap(), &gyroadd_riemannian(&p[0], &p[1]).unwrap()) < 1e-8);
        prop_assert!(max_abs_diff(&gyromul(t, &p[0]), &gyromul_riemannian(t, &p[0]).unwrap()) < 1e-8);
    }

    #[test]
    fn gyrogroup_axioms(seed in any::<u64>(), k in curvature()) {
        let p = points(seed, 5, 3, 1.5, k);
        let (a, b, z) = (&p[0], &p[1], &p[2]);
        let o = LorentzPoint::origin(3, k);
        // G1, G2
        prop_assert!(max_abs_diff(&gyroadd(&o, a).unwrap(), a) < 1e-12);
        prop_assert!(max_abs_diff(&gyroadd(&gyroinverse(a), a).unwrap(), &o) < 1e-8);
        // G3: left gyroassociativity, with gyr[a, b] an automorphism fixing the origin
        let g = |x: &LorentzPoint| gyration(a, b, x).unwrap();
        let lhs = gyroadd(a, &gyroadd(b, z).unwrap()).unwrap();
        let rhs = gyroadd(&gyroadd(a, b).unwrap(), &g(z)).unwrap();
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-7);
        let (x, y) = (&p[3], &p[4]);
        prop_assert!(max_abs_diff(&g(&gyroadd(x, y).unwrap()), &gyroadd(&g(x), &g(y)).unwrap()) < 1e-7);
        prop_assert!(max_abs_diff(&g(&o), &o) < 1e-8);
        // gyrocommutative law
        prop_assert!(max_abs_diff(&gyroadd(a, b).unwrap(), &g(&gyroadd(b, a).unwrap())) < 1e-7);
    }

    #[test]
    fn scalar_laws(seed in any::<u64>(), s in -2.0f64..2.0, t in -2.0f64..2.0, k in curvature()) {
        let p = &points(seed, 1, 3, 2.0, k)[0];
        prop_assert!(max_abs_diff(&gyromul(1.0, p), p) < 1e-7);
        let v2 = gyroadd(&gyromul(s, p), &gyromul(t, p)).unwrap();
        prop_assert!(max_abs_diff(&gyromul(s + t, p), &v2) < 1e-7);
        prop_assert!(max_abs_diff(&gyromul(s * t, p), &gyromul(s, &gyromul(t, p))) < 1e-7);
    }

    #[test]
    fn left_gyrotranslation_is_an_isometry(seed in any::<u64>(), k in curvature()) {
        let p = points(seed, 3, 4, 2.0, k);
        let d0 = geodesic_distance(&p[1], &p[2]).unwrap();
        let d1 = geodesic_distance(&gyroadd(&p[0], &p[1]).unwrap(), &gyroadd(&p[0], &p[2]).unwrap()).unwrap();
        prop_assert!((d0 - d1).abs() < 1e-8);
    }

    #[test]
    fn frechet_mean_is_equivariant(seed in any::<u64>(), n in 2usize..12) {
        let k = Curvature::default();
        let x = points(seed, n, 3, 1.5, k);
        let g = &points(seed ^ 1, 1, 3, 1.0, k)[0];
        let moved: Vec<_> = x.iter().map(|p| gyroadd(g, p).unwrap()).collect();
        let m0 = frechet_mean(&x).unwrap();
        let m1 = frechet_mean(&moved).unwrap();
        prop_assert!(geodesic_distance(&gyroadd(g, &m0.mean).unwrap(), &m1.mean).unwrap() < 1e-6);
        prop_assert!((m0.variance - m1.variance).abs() < 1e-6 * m0.variance.max(1.0));
    }

    #[test]
    fn hbn_recenters_and_rescales(seed in any::<u64>(), n in 4usize..24, gamma in 0.3f64..2.0) {
        let k = Curvature::default();
        let x = points(seed, n, 3, 2.0, k);
        let params = HbnParams::with_gamma(gamma);
        let var = frechet_mean(&x).unwrap().variance;
        let y = hbn(&x, &params).unwrap();
        let m = frechet_mean(&y).unwrap();
        prop_assert!(geodesic_distance(&m.mean, &LorentzPoint::origin(3, k)).unwrap() < 1e-6);
        let want = gamma * gamma * var / (var + params.epsilon);
        let got = frechet_variance(&y, &vec![1.0 / n as f64; n], &m.mean).unwrap();
        prop_assert!((got - want).abs() < 1e-4 * want.max(1.0), "{got} vs {want}");
    }

    #[test]
    fn busemann_is_one_lipschitz(seed in any::<u64>(), dim in 1usize..6, k in curvature()) {
        let p = points(seed, 2, dim, 3.0, k);
        let v = random_unit(&mut seeded(seed ^ 7), dim);
        let gap = (busemann_project(&p[0], &v).unwrap() - busemann_project(&p[1], &v).unwrap()).abs();
        prop_assert!(gap <= geodesic_distance(&p[0], &p[1]).unwrap() + 1e-9);
    }

    #[test]
    fn hhsw_vanishes_on_identical_sets_and_is_symmetric(seed in any::<u64>(), n in 2usize..30) {
        let k = Curvature::default();
        let a = points(seed, n, 3, 2.0, k);
        let b = points(seed ^ 3, n, 3, 2.0, k);
        prop_assert_eq!(hhsw_between(&a, &a, 16, 2.0, seed).unwrap().value, 0.0);
        let ab = hhsw_between(&a, &b, 16, 2.0, seed).unwrap().value;
        let ba = hhsw_between(&b, &a, 16, 2.0, seed).unwrap().value;
        prop_assert!(ab >= 0.0 && (ab - ba).abs() <= 1e-12 * ab.max(1.0));
    }

    #[test]
    fn delta_rel_is_scale_invariant(seed in any::<u64>(), n in 4usize..20, c in 1e-3f64..1e3) {
        let d = DistanceMatrix::lorentz(&points(seed, n, 3, 3.0, Curvature::default()));
        let s = d.scaled(c);
        let r0 = delta_rel(delta_exact(&d, 0).unwrap(), d.diameter());
        let r1 = delta_rel(delta_exact(&s, 0).unwrap(), s.diameter());
        prop_assert!((r0 - r1).abs() <= 1e-12 * r0.max(1e-300) + 1e-15);
        prop_assert!(r0 >= 0.0);
    }
}
