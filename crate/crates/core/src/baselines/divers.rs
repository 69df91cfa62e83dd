use rand::Rng;
use rayon::prelude::*;

use super::kmeans::{kmeans, squared_distance};
use super::uncertainty::uncert_select_regions;
use crate::domain::{region_indices, AnnotationState, ImageId, PredictionField, Region};
use crate::error::{Error, Result};

/// Candidate pool size as a multiple of `n_region`.
pub const DEFAULT_DIVERS_FACTOR: usize = 3;

/// Region descriptor: mean class probabilities over the region followed by
/// the normalized pseudo-label histogram, `2C` entries in total.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionFeature(pub Vec<f64>);

impl RegionFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len() / 2
    }

    pub fn mean_probs(&self) -> &[f64] {
        &self.0[..self.num_classes()]
    }

    pub fn histogram(&self) -> &[f64] {
        &self.0[self.num_classes()..]
    }
}

pub fn region_feature(region: &Region, pred: &PredictionField) -> Result<RegionFeature> {
    let c = pred.num_classes();
    let probs = pred.full_probs().ok_or(Error::MissingProbabilities)?;
    let idx = region_indices(region, pred.shape())?;
    let mut v = vec![0.0; 2 * c];
    for &j in &idx {
        for (acc, &p) in v[..c].iter_mut().zip(&probs[j * c..(j + 1) * c]) {
            *acc += f64::from(p);
        }
        v[c + usize::from(pred.pseudo_labels()[j])] += 1.0;
    }
    let n = idx.len() as f64;
    v.iter_mut().for_each(|x| *x /= n);
    Ok(RegionFeature(v))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub region: Region,
    /// Mean uncertainty over the region.
    pub uncertainty: f64,
    pub feature: RegionFeature,
    /// Gradient embedding, see [`super::gradient_embedding`].
    pub embedding: Vec<f64>,
}

/// One selected image together with its current prediction and uncertainty map.
#[derive(Clone, Copy, Debug)]
pub struct PoolImage<'a> {
    pub image_id: ImageId,
    pub pred: &'a PredictionField,
    pub umap: &'a [f64],
}

/// The `factor · n_region` most uncertain non-overlapping regions of every
/// image, pooled in image order.
pub fn divers_candidate_pool(
    images: &[PoolImage<'_>],
    side: usize,
    factor: usize,
    n_region: usize,
    state: &AnnotationState,
    cycle: u32,
) -> Result<Vec<Candidate>> {
    if factor == 0 {
        return Err(Error::Invalid("candidate pool factor must be at least 1".into()));
    }
    let per_image: Vec<Result<Vec<Candidate>>> = images
        .par_iter()
        .map(|img| {
            let existing: Vec<Region> = state.regions_of(img.image_id).copied().collect();
            let picks = uncert_select_regions(
                img.image_id,
                img.pred.shape(),
                img.umap,
                side,
                factor * n_region,
                &existing,
                cycle,
            );
            picks
                .into_iter()
                .map(|p| {
                    let feature = region_feature(&p.region, img.pred)?;
                    let embedding = super::gradient_embedding(&p.region, img.pred, &feature)?;
                    Ok(Candidate { region: p.region, uncertainty: p.uncertainty, feature, embedding })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for part in per_image {
        out.extend(part?);
    }
    Ok(out)
}

/// `true` when `a` should win a tie-free comparison on uncertainty, falling
/// back to the smaller region key.
fn more_uncertain(a: &Candidate, b: &Candidate) -> bool {
    match a.uncertainty.total_cmp(&b.uncertainty) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => a.region.order_key() < b.region.order_key(),
    }
}

/// k-means over region features with `k = budget`, keeping the most
/// uncertain member of every non-empty cluster.
pub fn divers_cluster_select<R: Rng + ?Sized>(pool: &[Candidate], budget: usize, rng: &mut R) -> Result<Vec<Region>> {
    if budget == 0 || pool.is_empty() {
        return Ok(Vec::new());
    }
    if budget >= pool.len() {
        return Ok(pool.iter().map(|c| c.region).collect());
    }
    let features: Vec<Vec<f64>> = pool.iter().map(|c| c.feature.0.clone()).collect();
    let clusters = kmeans(&features, budget, rng)?;
    let mut best: Vec<Option<usize>> = vec![None; budget];
    for (i, &k) in clusters.assignments.iter().enumerate() {
        if best[k].is_none_or(|b| more_uncertain(&pool[i], &pool[b])) {
            best[k] = Some(i);
        }
    }
    Ok(best.into_iter().flatten().map(|i| pool[i].region).collect())
}

/// Greedy k-center over region features, seeded with the most uncertain
/// candidate.
pub fn divers_coreset_select(pool: &[Candidate], budget: usize) -> Vec<Region> {
    coreset_indices(pool, budget).into_iter().map(|i| pool[i].region).collect()
}

pub(crate) fn coreset_indices(pool: &[Candidate], budget: usize) -> Vec<usize> {
    if budget == 0 || pool.is_empty() {
        return Vec::new();
    }
    let mut seed = 0;
    for i in 1..pool.len() {
        if more_uncertain(&pool[i], &pool[seed]) {
            seed = i;
        }
    }
    let mut selected = vec![seed];
    let mut is_selected = vec![false; pool.len()];
    is_selected[seed] = true;
    let mut min_d: Vec<f64> =
        pool.iter().map(|c| squared_distance(c.feature.as_slice(), pool[seed].feature.as_slice())).collect();
    while selected.len() < budget.min(pool.len()) {
        let mut next: Option<usize> = None;
        for i in (0..pool.len()).filter(|&i| !is_selected[i]) {
            let better = match next {
                None => true,
                Some(n) => match min_d[i].total_cmp(&min_d[n]) {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Less => false,
                    std::cmp::Ordering::Equal => pool[i].region.order_key() < pool[n].region.order_key(),
                },
            };
            if better {
                next = Some(i);
            }
        }
        let n = next.expect("an unselected candidate remains");
        is_selected[n] = true;
        selected.push(n);
        for (d, c) in min_d.iter_mut().zip(pool) {
            *d = d.min(squared_distance(c.feature.as_slice(), pool[n].feature.as_slice()));
        }
    }
    selected
}
