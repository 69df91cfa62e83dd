//! Class-decomposition sampling.
//!
//! Pool predictions give a per-class confidence (share of a class's
//! predictions whose max-probability clears `tau`). Inverted and normalized,
//! the confidences become sampling weights that drive both image ranking
//! (weighted, capped class frequencies) and region picking (sample a class,
//! then take the window holding the most pixels predicted as that class).


use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    region_indices, sample_feasible_region, take_with_restart, AnnotationState, ClassId, ImageId,
    PredictionField, Region, Shape, Square,
};
use crate::error::{Error, Result};
use crate::integral::{window_argmax, IntegralTable};

pub const DEFAULT_TAU: f64 = 0.7;
/// Per-class frequency cap for segmentation, as a fraction of image size.
pub const DEFAULT_CAP_FRACTION: f64 = 0.10;
/// Per-class frequency cap for ROI images, in ROIs.
pub const ROI_CAP: f64 = 1.0;

/// Confident / total prediction counts per class. Partial counts from
/// different images merge by addition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfidenceCounts {
    pub confident: Vec<u64>,
    pub total: Vec<u64>,
}

impl ConfidenceCounts {
    pub fn zeros(num_classes: usize) -> Self {
        Self { confident: vec![0; num_classes], total: vec![0; num_classes] }
    }

    pub fn from_prediction(pred: &PredictionField, tau: f64) -> Self {
        let mut counts = Self::zeros(pred.num_classes());
        for (&c, &p) in pred.pseudo_labels().iter().zip(pred.max_prob()) {
            let c = usize::from(c);
            counts.total[c] += 1;
            if f64::from(p) > tau {
                counts.confident[c] += 1;
            }
        }
        counts
    }

    pub fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.confident.iter_mut().zip(&other.confident) {
            *a += b;
        }
        for (a, b) in self.total.iter_mut().zip(&other.total) {
            *a += b;
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassConfidence {
    /// Share of confident predictions per class; 0 for classes never predicted.
    pub sigma: Vec<f64>,
    pub prediction_counts: Vec<u64>,
}

impl From<ConfidenceCounts> for ClassConfidence {
    fn from(counts: ConfidenceCounts) -> Self {
        let sigma = counts
            .confident
            .iter()
            .zip(&counts.total)
            .map(|(&k, &n)| if n == 0 { 0.0 } else { k as f64 / n as f64 })
            .collect();
        Self { sigma, prediction_counts: counts.total }
    }
}

/// Class confidence over all pixels (or ROIs) of the pool, counting a
/// prediction as confident when its max-probability is strictly above `tau`.
pub fn class_confidence(pool: &[PredictionField], tau: f64) -> Result<ClassConfidence> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Invalid(format!("tau must lie in (0, 1), got {tau}")));
    }
    let first = pool.first().ok_or(Error::EmptyPool)?;
    let num_classes = first.num_classes();
    if pool.iter().any(|p| p.num_classes() != num_classes) {
        return Err(Error::ShapeMismatch("pool predictions disagree on class count".into()));
    }
    let counts = pool
        .par_iter()
        .map(|p| ConfidenceCounts::from_prediction(p, tau))
        .reduce(|| ConfidenceCounts::zeros(num_classes), |a, b| a.merge(&b));
    Ok(counts.into())
}

/// Per-class sampling probabilities; non-negative and summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SamplingWeights(Vec<f64>);

impl SamplingWeights {
    pub fn uniform(num_classes: usize) -> Self {
        Self(vec![1.0 / num_classes as f64; num_classes])
    }

    /// `w_c = (1 − σ_c) / Σ (1 − σ_c')`, uniform when every class is fully confident.
    pub fn from_confidence(conf: &ClassConfidence) -> Self {
        let doubt: Vec<f64> = conf.sigma.iter().map(|s| 1.0 - s).collect();
        let total: f64 = doubt.iter().sum();
        if total <= 0.0 {
            return Self::uniform(doubt.len());
        }
        Self(doubt.into_iter().map(|d| d / total).collect())
    }

    /// Multiplies by a per-class emphasis mask and renormalizes. When the
    /// product has no mass left the normalized mask itself is used.
    pub fn with_mask(&self, mask: &[f64]) -> Result<Self> {
        if mask.len() != self.0.len() || mask.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Invalid("class weight mask must have one non-negative entry per class".into()));
        }
        let mask_total: f64 = mask.iter().sum();
        if mask_total <= 0.0 {
            return Err(Error::Invalid("class weight mask is all zeros".into()));
        }
        let product: Vec<f64> = self.0.iter().zip(mask).map(|(w, m)| w * m).collect();
        let total: f64 = product.iter().sum();
        Ok(if total > 0.0 {
            Self(product.into_iter().map(|p| p / total).collect())
        } else {
            Self(mask.iter().map(|m| m / mask_total).collect())
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn sampling_weights(conf: &ClassConfidence) -> SamplingWeights {
    SamplingWeights::from_confidence(conf)
}

/// Cap applied to each predicted class frequency before weighting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum FrequencyCap {
    /// Fraction of the image's pixel/voxel count.
    Fraction(f64),
    /// Absolute count of units.
    Units(f64),
}

impl FrequencyCap {
    pub fn default_for(shape: &Shape) -> Self {
        if shape.is_rois() {
            FrequencyCap::Units(ROI_CAP)
        } else {
            FrequencyCap::Fraction(DEFAULT_CAP_FRACTION)
        }
    }

    pub fn resolve(&self, shape: &Shape) -> f64 {
        match *self {
            FrequencyCap::Fraction(f) => f * shape.len() as f64,
            FrequencyCap::Units(u) => u,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: ImageId,
    pub score: f64,
}

pub fn class_counts(labels: &[ClassId], num_classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; num_classes];
    for &c in labels {
        counts[usize::from(c)] += 1;
    }
    counts
}

/// `s = Σ_c w_c · min(count_c, cap)` over the image's pseudo-labels.
pub fn image_score(image_id: ImageId, pred: &PredictionField, weights: &SamplingWeights, cap: f64) -> ImageScore {
    let counts = class_counts(pred.pseudo_labels(), pred.num_classes());
    ImageScore { image_id, score: capped_score(&counts, weights.as_slice(), cap) }
}

pub fn capped_score(counts: &[u64], weights: &[f64], cap: f64) -> f64 {
    counts.iter().zip(weights).map(|(&n, &w)| w * (n as f64).min(cap)).sum()
}

/// Ranks images by descending score (ties to the lowest id) and takes the
/// best `n_image` not yet visited in the current loop, restarting the loop
/// when it runs out.
pub fn select_images(scores: &[ImageScore], state: &mut AnnotationState, n_image: usize) -> Result<Vec<ImageId>> {
    if n_image == 0 {
        return Err(Error::Invalid("n_image must be >= 1".into()));
    }
    let mut ranked = scores.to_vec();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.image_id.cmp(&b.image_id)));
    let order: Vec<ImageId> = ranked.iter().map(|s| s.image_id).collect();
    take_with_restart(&order, state.loop_visited_mut(), n_image)
}

/// Draws a class from `weights` restricted to `available`, renormalized.
/// Falls back to a uniform draw when the available classes carry no weight.
pub fn sample_class<R: Rng + ?Sized>(weights: &SamplingWeights, available: &[ClassId], rng: &mut R) -> Option<ClassId> {
    if available.is_empty() {
        return None;
    }
    let w = weights.as_slice();
    let mass: f64 = available.iter().map(|&c| w[usize::from(c)]).sum();
    if mass <= 0.0 {
        return Some(available[rng.random_range(0..available.len())]);
    }
    let target = rng.random::<f64>() * mass;
    let mut acc = 0.0;
    let mut last_positive = available[0];
    for &c in available {
        let wc = w[usize::from(c)];
        if wc <= 0.0 {
            continue;
        }
        acc += wc;
        last_positive = c;
        if target < acc {
            return Some(c);
        }
    }
    Some(last_positive)
}

/// A region picked by [`decomp_select_traced`] and the class that drove it
/// (`None` for the random fallback).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecompPick {
    pub region: Region,
    pub class: Option<ClassId>,
}

/// Per-image search state: unexcluded class counts per slice and lazily
/// built indicator table. Only the last `(slice, class)` table is kept and
/// later ones reuse its allocation, so memory stays at one plane.
struct ClassRegionFinder<'a> {
    image_id: ImageId,
    pred: &'a PredictionField,
    side: usize,
    cycle: u32,
    excluded: Vec<Region>,
    /// `slices × classes` counts of predicted units outside excluded regions
    /// (a single row for ROI images).
    free: Vec<u64>,
    table: Option<((usize, ClassId), IntegralTable<i32>)>,
}

impl<'a> ClassRegionFinder<'a> {
    fn new(image_id: ImageId, pred: &'a PredictionField, side: usize, existing: &[Region], cycle: u32) -> Self {
        let c = pred.num_classes();
        let shape = pred.shape();
        let rows = shape.slices().max(1);
        let plane = shape.plane().map_or(shape.len(), |(h, w)| h * w);
        let mut free = vec![0u64; rows * c];
        for (j, &label) in pred.pseudo_labels().iter().enumerate() {
            free[(j / plane) * c + usize::from(label)] += 1;
        }
        let mut finder = Self {
            image_id,
            pred,
            side,
            cycle,
            excluded: Vec::with_capacity(existing.len() + 8),
            free,
            table: None,
        };
        for r in existing.iter().filter(|r| r.image_id == image_id) {
            finder.exclude(*r);
        }
        finder
    }

    fn exclude(&mut self, region: Region) {
        let shape = self.pred.shape();
        let c = self.pred.num_classes();
        let plane = shape.plane().map_or(shape.len(), |(h, w)| h * w);
        if let Ok(indices) = region_indices(&region, shape) {
            for j in indices {
                let label = usize::from(self.pred.pseudo_labels()[j]);
                let slot = &mut self.free[(j / plane) * c + label];
                *slot = slot.saturating_sub(1);
            }
        }
        self.excluded.push(region);
    }

    fn available_classes(&self) -> Vec<ClassId> {
        let c = self.pred.num_classes();
        (0..c)
            .filter(|&k| self.free.chunks_exact(c).any(|row| row[k] > 0))
            .map(|k| k as ClassId)
            .collect()
    }

    fn excluded_squares_on(&self, slice: Option<usize>) -> Vec<Square> {
        self.excluded
            .iter()
            .filter_map(Region::as_square)
            .filter(|s| s.slice == slice)
            .copied()
            .collect()
    }

    fn best_window_on(&mut self, slice: usize, class: ClassId) -> Option<Square> {
        let (h, w) = self.pred.shape().plane()?;
        if self.side == 0 || self.side > h || self.side > w {
            return None;
        }
        let volume = matches!(self.pred.shape(), Shape::Volume { .. });
        let slice_tag = volume.then_some(slice);
        let excluded = self.excluded_squares_on(slice_tag);
        let labels = self.pred.pseudo_labels();
        let plane = &labels[slice * h * w..(slice + 1) * h * w];
        let table = match &mut self.table {
            Some((key, t)) => {
                if *key != (slice, class) {
                    t.refill_indicator(plane, h, w, class);
                    *key = (slice, class);
                }
                t
            }
            slot @ None => &mut slot.insert(((slice, class), IntegralTable::indicator(plane, h, w, class))).1,
        };
        let hit = window_argmax(table, self.side, &excluded, true)?;
        let square = Square::new(hit.y, hit.x, self.side);
        Some(if volume { square.on_slice(slice) } else { square })
    }

    fn find<R: Rng + ?Sized>(&mut self, class: ClassId, rng: &mut R) -> Option<Region> {
        match *self.pred.shape() {
            Shape::Rois { count } => {
                let taken: Vec<usize> = self.excluded.iter().filter_map(Region::roi_index).collect();
                let k = usize::from(class);
                let mut best: Option<(usize, f32)> = None;
                for j in (0..count).filter(|j| !taken.contains(j)) {
                    let p = match self.pred.probs_at(j) {
                        Some(row) => row[k],
                        None if self.pred.pseudo_labels()[j] == class => self.pred.max_prob()[j],
                        None => 0.0,
                    };
                    if p > 0.0 && best.is_none_or(|(_, b)| p > b) {
                        best = Some((j, p));
                    }
                }
                best.map(|(j, _)| Region::roi(self.image_id, j, self.cycle))
            }
            Shape::Plane { .. } => self
                .best_window_on(0, class)
                .map(|s| Region::square(self.image_id, s, self.cycle)),
            Shape::Volume { depth, .. } => {
                let c = self.pred.num_classes();
                let k = usize::from(class);
                let mut slices: Vec<usize> = (0..depth).filter(|&z| self.free[z * c + k] > 0).collect();
                while !slices.is_empty() {
                    let z = slices.swap_remove(rng.random_range(0..slices.len()));
                    if let Some(s) = self.best_window_on(z, class) {
                        return Some(Region::square(self.image_id, s, self.cycle));
                    }
                }
                None
            }
        }
    }
}

/// Region best representing `class`: the window with the most pixels
/// predicted as `class` that avoids `existing` regions (3-D: on a random
/// slice containing the class; ROI: the unannotated ROI most probably of the
/// class). `None` when no such region holds any of the class.
pub fn select_region_for_class<R: Rng + ?Sized>(
    image_id: ImageId,
    pred: &PredictionField,
    class: ClassId,
    side: usize,
    existing: &[Region],
    cycle: u32,
    rng: &mut R,
) -> Option<Region> {
    ClassRegionFinder::new(image_id, pred, side, existing, cycle).find(class, rng)
}

/// Picks up to `n_region` mutually disjoint regions in one image by
/// repeatedly sampling a class present in the unexcluded area and taking its
/// best window. Classes whose windows are all blocked drop out of the draw;
/// once none remain a uniformly random free region is used instead.
#[allow(clippy::too_many_arguments)]
pub fn decomp_select_traced<R: Rng + ?Sized>(
    image_id: ImageId,
    pred: &PredictionField,
    weights: &SamplingWeights,
    n_region: usize,
    side: usize,
    existing: &[Region],
    cycle: u32,
    rng: &mut R,
) -> Vec<DecompPick> {
    let mut finder = ClassRegionFinder::new(image_id, pred, side, existing, cycle);
    let mut picks = Vec::with_capacity(n_region);
    for _ in 0..n_region {
        let mut available = finder.available_classes();
        let mut pick = None;
        while let Some(c) = sample_class(weights, &available, rng) {
            if let Some(region) = finder.find(c, rng) {
                pick = Some(DecompPick { region, class: Some(c) });
                break;
            }
            available.retain(|&a| a != c);
        }
        if pick.is_none() {
            pick = sample_feasible_region(image_id, pred.shape(), side, &finder.excluded, cycle, rng)
                .map(|region| DecompPick { region, class: None });
        }
        match pick {
            Some(p) => {
                finder.exclude(p.region);
                picks.push(p);
            }
            None => break,
        }
    }
    picks
}

#[allow(clippy::too_many_arguments)]
pub fn decomp_select<R: Rng + ?Sized>(
    image_id: ImageId,
    pred: &PredictionField,
    weights: &SamplingWeights,
    n_region: usize,
    side: usize,
    existing: &[Region],
    cycle: u32,
    rng: &mut R,
) -> Vec<Region> {
    decomp_select_traced(image_id, pred, weights, n_region, side, existing, cycle, rng)
        .into_iter()
        .map(|p| p.region)
        .collect()
}
