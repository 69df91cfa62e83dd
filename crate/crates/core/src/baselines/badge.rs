use rand::Rng;

use super::divers::{Candidate, RegionFeature};
use super::kmeans::{squared_distance, weighted_pick};
use crate::domain::{region_indices, PredictionField, Region};
use crate::error::{Error, Result};

/// Region feature scaled by the mean discrepancy `p − onehot(ŷ)` over the
/// region: entry `a · C + c` is `feature[a] · d[c]`.
pub fn gradient_embedding(region: &Region, pred: &PredictionField, feature: &RegionFeature) -> Result<Vec<f64>> {
    let c = pred.num_classes();
    let probs = pred.full_probs().ok_or(Error::MissingProbabilities)?;
    let idx = region_indices(region, pred.shape())?;
    let mut d = vec![0.0; c];
    for &j in &idx {
        let label = usize::from(pred.pseudo_labels()[j]);
        for (k, (acc, &p)) in d.iter_mut().zip(&probs[j * c..(j + 1) * c]).enumerate() {
            *acc += f64::from(p) - if k == label { 1.0 } else { 0.0 };
        }
    }
    let n = idx.len() as f64;
    Ok(feature.as_slice().iter().flat_map(|&a| d.iter().map(move |&dc| a * dc / n)).collect())
}

/// k-means++ sampling over gradient embeddings. The first pick is uniform
/// among the embeddings of largest norm; with all-zero embeddings the whole
/// selection is uniformly random.
pub fn badge_select<R: Rng + ?Sized>(pool: &[Candidate], budget: usize, rng: &mut R) -> Vec<Region> {
    let embeddings: Vec<&[f64]> = pool.iter().map(|c| c.embedding.as_slice()).collect();
    badge_indices(&embeddings, budget, rng).into_iter().map(|i| pool[i].region).collect()
}

pub(crate) fn badge_indices<R: Rng + ?Sized>(embeddings: &[&[f64]], budget: usize, rng: &mut R) -> Vec<usize> {
    let n = embeddings.len();
    if budget >= n {
        return (0..n).collect();
    }
    if budget == 0 {
        return Vec::new();
    }
    let norms: Vec<f64> = embeddings.iter().map(|e| e.iter().map(|v| v * v).sum()).collect();
    let top = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let widest: Vec<usize> = (0..n).filter(|&i| norms[i] == top).collect();
    let first = widest[rng.random_range(0..widest.len())];

    let mut selected = vec![first];
    let mut allowed = vec![true; n];
    allowed[first] = false;
    let mut d2: Vec<f64> = embeddings.iter().map(|e| squared_distance(e, embeddings[first])).collect();
    while selected.len() < budget {
        let next = weighted_pick(&d2, &allowed, rng);
        allowed[next] = false;
        selected.push(next);
        for (d, e) in d2.iter_mut().zip(embeddings) {
            *d = d.min(squared_distance(e, embeddings[next]));
        }
    }
    selected
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::divers::region_feature;
    use crate::domain::{ImageId, Shape, Square};
    use crate::rng::seeded;

    fn plane(c: usize, probs: Vec<f32>, h: usize, w: usize) -> PredictionField {
        PredictionField::from_probabilities(Shape::Plane { height: h, width: w }, c, probs).unwrap()
    }

    #[test]
    fn embedding_shape_and_one_hot_zero() {
        let probs: Vec<f32> = (0..16).flat_map(|j| if j % 3 == 0 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] }).collect();
        let pred = plane(3, probs, 4, 4);
        let r = Region::square(ImageId(0), Square::new(0, 0, 3), 1);
        let f = region_feature(&r, &pred).unwrap();
        let e = gradient_embedding(&r, &pred, &f).unwrap();
        assert_eq!(e.len(), 2 * 3 * 3);
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embedding_matches_outer_product() {
        // single pixel, p = (0.6, 0.4): d = (-0.4, 0.4), feature = (0.6, 0.4, 1, 0)
        let pred = plane(2, vec![0.6, 0.4], 1, 1);
        let r = Region::square(ImageId(0), Square::new(0, 0, 1), 1);
        let f = region_feature(&r, &pred).unwrap();
        let e = gradient_embedding(&r, &pred, &f).unwrap();
        let want = [-0.24, 0.24, -0.16, 0.16, -0.4, 0.4, 0.0, 0.0];
        for (a, b) in e.iter().zip(want) {
            assert!((a - b).abs() < 1e-6, "{e:?}");
        }
    }

    #[test]
    fn whole_pool_when_budget_covers_it() {
        let e: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let refs: Vec<&[f64]> = e.iter().map(Vec::as_slice).collect();
        assert_eq!(badge_indices(&refs, 4, &mut seeded(0)), vec![0, 1, 2, 3]);
    }

    #[test]
    fn zero_embeddings_are_uniform() {
        let e = vec![vec![0.0; 3]; 5];
        let refs: Vec<&[f64]> = e.iter().map(Vec::as_slice).collect();
        let mut counts = [0usize; 5];
        for seed in 0..5000 {
            counts[badge_indices(&refs, 1, &mut seeded(seed))[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / 5000.0 - 0.2).abs() < 0.03, "{counts:?}");
        }
    }

    #[test]
    fn two_distant_clusters_split_the_budget() {
        let mut rng = seeded(77);
        let mut e = Vec::new();
        for i in 0..20 {
            let centre = if i % 2 == 0 { 10.0 } else { -10.0 };
            e.push(vec![centre + rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1]);
        }
        let refs: Vec<&[f64]> = e.iter().map(Vec::as_slice).collect();
        let mut split = 0;
        for seed in 0..1000 {
            let picks = badge_indices(&refs, 2, &mut seeded(seed));
            if picks[0] % 2 != picks[1] % 2 {
                split += 1;
            }
        }
        assert!(split >= 950, "{split}");
    }
}
