use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomp::{select_images, ImageScore};
use crate::domain::{AnnotationState, ImageId, PredictionField, Region, Shape, Square};
use crate::error::{Error, Result};
use crate::integral::{window_argmax, IntegralTable, QUANT_SCALE};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMeasure {
    /// `−Σ p log p` over the softmax output.
    #[default]
    Entropy,
    /// `1 − max p`.
    LeastConfidence,
}

/// Per-unit entropy (natural log, `0 · log 0 = 0`).
pub fn entropy_map(pred: &PredictionField) -> Result<Vec<f64>> {
    let probs = pred.full_probs().ok_or(Error::MissingProbabilities)?;
    Ok(probs
        .chunks_exact(pred.num_classes())
        .map(|row| {
            row.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| {
                    let p = f64::from(p);
                    -p * p.ln()
                })
                .sum()
        })
        .collect())
}

pub fn least_confidence_map(pred: &PredictionField) -> Vec<f64> {
    pred.max_prob().iter().map(|&p| 1.0 - f64::from(p)).collect()
}

pub fn uncertainty_map(pred: &PredictionField, measure: UncertaintyMeasure) -> Result<Vec<f64>> {
    match measure {
        UncertaintyMeasure::Entropy => entropy_map(pred),
        UncertaintyMeasure::LeastConfidence => Ok(least_confidence_map(pred)),
    }
}

pub fn mean_uncertainty(map: &[f64]) -> f64 {
    if map.is_empty() {
        0.0
    } else {
        map.iter().sum::<f64>() / map.len() as f64
    }
}

/// Images ranked by mean uncertainty, with the same loop-restart rule as
/// class-decomposition image selection.
pub fn uncert_select_images(
    mean_uncertainties: &[ImageScore],
    state: &mut AnnotationState,
    n_image: usize,
) -> Result<Vec<ImageId>> {
    select_images(mean_uncertainties, state, n_image)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredRegion {
    pub region: Region,
    /// Mean uncertainty over the region.
    pub uncertainty: f64,
}

/// Greedy non-maximum suppression over stride-1 windows: repeatedly takes
/// the window with the highest mean uncertainty that avoids `existing` and
/// everything already taken, until `n_region` windows or no room is left.
/// Ties go to the smallest `(slice, y, x)`. ROI images rank their
/// unannotated ROIs directly, ties to the lowest index.
pub fn uncert_select_regions(
    image_id: ImageId,
    shape: &Shape,
    umap: &[f64],
    side: usize,
    n_region: usize,
    existing: &[Region],
    cycle: u32,
) -> Vec<ScoredRegion> {
    assert_eq!(umap.len(), shape.len(), "uncertainty map does not match the image shape");
    match *shape {
        Shape::Rois { count } => {
            let taken: Vec<usize> = existing
                .iter()
                .filter(|r| r.image_id == image_id)
                .filter_map(Region::roi_index)
                .collect();
            let mut free: Vec<usize> = (0..count).filter(|j| !taken.contains(j)).collect();
            free.sort_by(|&a, &b| umap[b].total_cmp(&umap[a]).then(a.cmp(&b)));
            free.into_iter()
                .take(n_region)
                .map(|j| ScoredRegion { region: Region::roi(image_id, j, cycle), uncertainty: umap[j] })
                .collect()
        }
        Shape::Plane { height, width } | Shape::Volume { height, width, .. } => {
            if side == 0 || side > height || side > width {
                return Vec::new();
            }
            let volume = matches!(shape, Shape::Volume { .. });
            let plane = height * width;
            let tables: Vec<IntegralTable<i64>> = (0..shape.slices())
                .into_par_iter()
                .map(|z| IntegralTable::quantized(&umap[z * plane..(z + 1) * plane], height, width))
                .collect();
            let mut taken: Vec<Square> = existing
                .iter()
                .filter(|r| r.image_id == image_id)
                .filter_map(Region::as_square)
                .copied()
                .collect();
            let area = (side * side) as f64;
            let mut out = Vec::with_capacity(n_region);
            for _ in 0..n_region {
                let mut best: Option<(i64, Square)> = None;
                for (z, table) in tables.iter().enumerate() {
                    let slice_tag = volume.then_some(z);
                    let excluded: Vec<Square> =
                        taken.iter().filter(|s| s.slice == slice_tag).copied().collect();
                    if let Some(hit) = window_argmax(table, side, &excluded, false) {
                        if best.is_none_or(|(v, _)| hit.value > v) {
                            let s = Square::new(hit.y, hit.x, side);
                            best = Some((hit.value, if volume { s.on_slice(z) } else { s }));
                        }
                    }
                }
                let Some((value, square)) = best else { break };
                taken.push(square);
                out.push(ScoredRegion {
                    region: Region::square(image_id, square, cycle),
                    uncertainty: value as f64 / QUANT_SCALE / area,
                });
            }
            out
        }
    }
}
