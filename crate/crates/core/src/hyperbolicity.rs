//! Gromov δ-hyperbolicity of finite metric spaces.
//!
//! For a base point `w` the Gromov product is `(x, y)_w = ½(d(x,w) + d(y,w) - d(x,y))`
//! and the space is δ-hyperbolic at `w` when
//! `(x, y)_w ≥ min((x, z)_w, (y, z)_w) - δ` for all `x, y, z`. The tight δ at a
//! fixed base is computed with one max–min matrix product over the Gromov
//! product matrix, `O(n³)`.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::manifold::{distance_unchecked, LorentzPoint};
use crate::rng::{derive_seed, seeded};

/// Dense symmetric distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Validates shape, finiteness, symmetry, nonnegativity and the zero diagonal.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Dimension(format!("{} entries for a {n}x{n} matrix", data.len())));
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::Validation(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if !a.is_finite() || a < 0.0 {
                    return Err(Error::Validation(format!("invalid distance {a} at ({i}, {j})")));
                }
                if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(Error::Validation(format!("asymmetric entries at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let d = f(i, j);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        DistanceMatrix { n, data }
    }

    pub fn lorentz(points: &[LorentzPoint]) -> Self {
        Self::from_fn(points.len(), |i, j| distance_unchecked(&points[i], &points[j]))
    }

    pub fn euclidean(rows: &[Vec<f64>]) -> Self {
        Self::from_fn(rows.len(), |i, j| {
            rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn diameter(&self) -> f64 {
        self.data.iter().cloned().fold(0.0, f64::max)
    }

    pub fn scaled(&self, c: f64) -> Self {
        DistanceMatrix { n: self.n, data: self.data.iter().map(|d| d * c).collect() }
    }
}

/// `(i, j)_w = ½(d(i,w) + d(j,w) - d(i,j))`.
pub fn gromov_product(d: &DistanceMatrix, i: usize, j: usize, w: usize) -> Result<f64> {
    let n = d.len();
    if i >= n || j >= n || w >= n {
        return Err(Error::Validation(format!("index out of range for {n} points")));
    }
    Ok(0.5 * (d.get(i, w) + d.get(j, w) - d.get(i, j)))
}

/// Tight δ at base `w`: `max_{p,q} [ max_z min(A_pz, A_zq) - A_pq ]` over the
/// Gromov product matrix `A` at `w`.
pub fn delta_exact(d: &DistanceMatrix, w: usize) -> Result<f64> {
    let n = d.len();
    if w >= n {
        return Err(Error::Validation(format!("base {w} out of range for {n} points")));
    }
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (d.get(i, w) + d.get(j, w) - d.get(i, j));
        }
    }
    let mut delta = 0.0_f64;
    let mut row = vec![0.0; n];
    for p in 0..n {
        row.iter_mut().for_each(|x| *x = f64::NEG_INFINITY);
        let ap = &a[p * n..(p + 1) * n];
        for (z, &apz) in ap.iter().enumerate() {
            let az = &a[z * n..(z + 1) * n];
            for (r, &azq) in row.iter_mut().zip(az) {
                *r = r.max(apz.min(azq));
            }
        }
        for (r, apq) in row.iter().zip(ap) {
            delta = delta.max(r - apq);
        }
    }
    Ok(delta)
}

/// Relative hyperbolicity `2δ / diameter` (0 for a zero diameter).
pub fn delta_rel(delta: f64, diameter: f64) -> f64 {
    if diameter > 0.0 {
        2.0 * delta / diameter
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampledPoints<'a> {
    /// Geodesic distance on the hyperboloid.
    Lorentz(&'a [LorentzPoint]),
    /// Euclidean distance between raw rows.
    Euclidean(&'a [Vec<f64>]),
}

impl SampledPoints<'_> {
    fn len(&self) -> usize {
        match self {
            SampledPoints::Lorentz(p) => p.len(),
            SampledPoints::Euclidean(p) => p.len(),
        }
    }

    fn distances(&self, idx: &[usize]) -> DistanceMatrix {
        match self {
            SampledPoints::Lorentz(p) => {
                DistanceMatrix::from_fn(idx.len(), |i, j| distance_unchecked(&p[idx[i]], &p[idx[j]]))
            }
            SampledPoints::Euclidean(p) => DistanceMatrix::from_fn(idx.len(), |i, j| {
                p[idx[i]].iter().zip(&p[idx[j]]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicityReport {
    pub delta: f64,
    pub delta_std: f64,
    pub diameter: f64,
    pub diameter_std: f64,
    pub delta_rel: f64,
    pub delta_rel_std: f64,
    pub sample_size: usize,
    pub batches: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Averages δ, diameter and δ_rel over `batches` random subsets of
/// `min(batch, n)` points, each measured at its first sampled point.
pub fn delta_sampled(points: SampledPoints<'_>, batch: usize, batches: usize, seed: u64) -> Result<HyperbolicityReport> {
    let n = points.len();
    if n < 4 {
        return Err(Error::Validation(format!("δ-hyperbolicity needs at least 4 points, got {n}")));
    }
    if batch < 4 || batches == 0 {
        return Err(Error::Validation("batch must be >= 4 and batches >= 1".into()));
    }
    let m = batch.min(n);
    let (mut deltas, mut diams, mut rels) = (vec![], vec![], vec![]);
    for b in 0..batches {
        let mut rng = seeded(derive_seed(seed, b as u64));
        let idx = sample(&mut rng, n, m).into_vec();
        let d = points.distances(&idx);
        let delta = delta_exact(&d, 0)?;
        let diam = d.diameter();
        deltas.push(delta);
        diams.push(diam);
        rels.push(delta_rel(delta, diam));
    }
    let (delta, delta_std) = mean_std(&deltas);
    let (diameter, diameter_std) = mean_std(&diams);
    let (delta_rel, delta_rel_std) = mean_std(&rels);
    Ok(HyperbolicityReport {
        delta,
        delta_std,
        diameter,
        diameter_std,
        delta_rel,
        delta_rel_std,
        sample_size: m,
        batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{exp_origin, Curvature};

    fn star(leaves: usize) -> DistanceMatrix {
        // node 0 is the center
        DistanceMatrix::from_fn(leaves + 1, |i, j| if i == 0 || j == 0 { 1.0 } else { 2.0 })
    }

    fn cycle4() -> DistanceMatrix {
        DistanceMatrix::from_fn(4, |i, j| {
            let k = (i as i64 - j as i64).rem_euclid(4);
            k.min(4 - k) as f64
        })
    }

    #[test]
    fn gromov_product_examples() {
        let s = star(2);
        assert_eq!(gromov_product(&s, 1, 2, 0).unwrap(), 0.0);
        assert_eq!(gromov_product(&s, 1, 1, 0).unwrap(), s.get(1, 0));
        let path = DistanceMatrix::from_fn(3, |i, j| (i as f64 - j as f64).abs());
        assert_eq!(gromov_product(&path, 0, 2, 1).unwrap(), 0.0);
        assert!(gromov_product(&path, 0, 3, 1).is_err());
    }

    #[test]
    fn trees_and_lines_are_zero_hyperbolic() {
        for w in 0..6 {
            assert_eq!(delta_exact(&star(5), w).unwrap(), 0.0);
        }
        let line = DistanceMatrix::from_fn(4, |i, j| (i as f64 - j as f64).abs());
        assert_eq!(delta_exact(&line, 0).unwrap(), 0.0);
    }

    #[test]
    fn four_cycle_has_delta_one() {
        for w in 0..4 {
            assert_eq!(delta_exact(&cycle4(), w).unwrap(), 1.0);
        }
    }

    #[test]
    fn validation() {
        assert!(DistanceMatrix::new(2, vec![0.0, 1.0, 2.0, 0.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![1.0, 1.0, 1.0, 0.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![0.0, -1.0, -1.0, 0.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![0.0, 1.0, 1.0]).is_err());
        assert!(DistanceMatrix::new(2, vec![0.0, 1.0, 1.0, 0.0]).is_ok());
    }

    #[test]
    fn geodesic_points_have_zero_relative_delta() {
        let k = Curvature::default();
        let pts: Vec<_> = (0..40).map(|i| exp_origin(&[0.1 * i as f64 - 2.0, 0.0], k)).collect();
        let r = delta_sampled(SampledPoints::Lorentz(&pts), 30, 3, 1).unwrap();
        assert!(r.delta_rel < 1e-6, "{r:?}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos()]).collect();
        let a = delta_sampled(SampledPoints::Euclidean(&rows), 20, 4, 9).unwrap();
        let b = delta_sampled(SampledPoints::Euclidean(&rows), 20, 4, 9).unwrap();
        assert_eq!(a, b);
        assert!(delta_sampled(SampledPoints::Euclidean(&rows[..3]), 20, 4, 9).is_err());
    }

    #[test]
    fn relative_delta_is_scale_invariant() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64).sin(), (i as f64 * 1.3).cos(), i as f64 * 0.01]).collect();
        let d = DistanceMatrix::euclidean(&rows);
        let base = delta_rel(delta_exact(&d, 0).unwrap(), d.diameter());
        let s = d.scaled(4.0);
        assert_eq!(base, delta_rel(delta_exact(&s, 0).unwrap(), s.diameter()));
    }
}
