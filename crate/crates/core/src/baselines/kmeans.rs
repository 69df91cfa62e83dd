//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
/// Iteration stops once no center moves farther than this.
pub const SHIFT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index `i` drawn with probability `weights[i] / Σ weights`, restricted to
/// `allowed`; uniform over `allowed` when the restricted mass is zero.
pub(crate) fn weighted_pick<R: Rng + ?Sized>(weights: &[f64], allowed: &[bool], rng: &mut R) -> usize {
    let mass: f64 = weights.iter().zip(allowed).filter(|(_, &a)| a).map(|(w, _)| w).sum();
    let candidates: Vec<usize> = (0..weights.len()).filter(|&i| allowed[i]).collect();
    if mass <= 0.0 {
        return candidates[rng.random_range(0..candidates.len())];
    }
    let target = rng.random::<f64>() * mass;
    let mut acc = 0.0;
    let mut last = candidates[0];
    for &i in &candidates {
        if weights[i] <= 0.0 {
            continue;
        }
        acc += weights[i];
        last = i;
        if target < acc {
            return i;
        }
    }
    last
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Clusters `features` into `k` groups. Deterministic for a given rng state.
pub fn kmeans<R: Rng + ?Sized>(features: &[Vec<f64>], k: usize, rng: &mut R) -> Result<KMeansResult> {
    let n = features.len();
    if k == 0 || k > n {
        return Err(Error::Invalid(format!("k-means needs 1 <= k <= {n}, got k = {k}")));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::ShapeMismatch("feature vectors differ in length".into()));
    }

    // k-means++ seeding
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![features[first].clone()];
    let mut d2: Vec<f64> = features.iter().map(|f| squared_distance(f, &centers[0])).collect();
    while centers.len() < k {
        let allowed: Vec<bool> = chosen.iter().map(|c| !c).collect();
        let next = weighted_pick(&d2, &allowed, rng);
        chosen[next] = true;
        centers.push(features[next].clone());
        for (d, f) in d2.iter_mut().zip(features) {
            *d = d.min(squared_distance(f, &features[next]));
        }
    }

    let mut assignments = vec![0; n];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        for (a, f) in assignments.iter_mut().zip(features) {
            *a = nearest(f, &centers).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (f, &a) in features.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(f) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        for ((center, sum), &count) in centers.iter_mut().zip(sums).zip(&counts) {
            if count == 0 {
                continue;
            }
            let updated: Vec<f64> = sum.into_iter().map(|s| s / count as f64).collect();
            shift = shift.max(squared_distance(center, &updated).sqrt());
            *center = updated;
        }
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }
    let mut inertia = 0.0;
    for (a, f) in assignments.iter_mut().zip(features) {
        let (k_best, d) = nearest(f, &centers);
        *a = k_best;
        inertia += d;
    }
    Ok(KMeansResult { assignments, centers, inertia, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn one_cluster_per_point() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&pts, 6, &mut seeded(1)).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut a = r.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn single_cluster_center_is_the_mean() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        let r = kmeans(&pts, 1, &mut seeded(0)).unwrap();
        assert!((r.centers[0][0] - 2.0).abs() < 1e-12 && (r.centers[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let mut rng = seeded(8);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for i in 0..60 {
            let blob = i % 2;
            let offset = if blob == 0 { -10.0 } else { 10.0 };
            let x: f64 = StandardNormal.sample(&mut rng);
            let y: f64 = StandardNormal.sample(&mut rng);
            pts.push(vec![offset + x, y]);
            truth.push(blob);
        }
        for seed in 0..20 {
            let r = kmeans(&pts, 2, &mut seeded(seed)).unwrap();
            let flip = r.assignments[0] != truth[0];
            for (a, t) in r.assignments.iter().zip(&truth) {
                assert_eq!(*a == *t, !flip);
            }
        }
    }

    #[test]
    fn too_many_clusters() {
        assert!(kmeans(&[vec![1.0]], 2, &mut seeded(0)).is_err());
        assert!(kmeans(&[vec![1.0]], 0, &mut seeded(0)).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = seeded(3);
        let pts: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random(), rng.random(), rng.random()]).collect();
        assert_eq!(kmeans(&pts, 4, &mut seeded(5)).unwrap(), kmeans(&pts, 4, &mut seeded(5)).unwrap());
    }
}
