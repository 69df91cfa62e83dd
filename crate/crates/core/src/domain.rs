//! Shared data model: images, predictions, regions and the labeled set.
//!
//! Class ids are zero-based (`0..num_classes`). Pixels of an image are
//! addressed by a linear index in row-major `(z, y, x)` order; a 2-D image
//! is a volume with a single slice and ROI images index their ROIs directly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClassId = u16;

/// Rejection attempts before random region sampling falls back to enumeration.
pub const REJECTION_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u32);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Plane { height: usize, width: usize },
    Volume { depth: usize, height: usize, width: usize },
    Rois { count: usize },
}

impl Shape {
    /// Number of pixels, voxels or ROIs.
    pub fn len(&self) -> usize {
        match *self {
            Shape::Plane { height, width } => height * width,
            Shape::Volume { depth, height, width } => depth * height * width,
            Shape::Rois { count } => count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of 2-D slices; zero for ROI images.
    pub fn slices(&self) -> usize {
        match *self {
            Shape::Plane { .. } => 1,
            Shape::Volume { depth, .. } => depth,
            Shape::Rois { .. } => 0,
        }
    }

    /// `(height, width)` of one slice, `None` for ROI images.
    pub fn plane(&self) -> Option<(usize, usize)> {
        match *self {
            Shape::Plane { height, width } | Shape::Volume { height, width, .. } => {
                Some((height, width))
            }
            Shape::Rois { .. } => None,
        }
    }

    pub fn is_rois(&self) -> bool {
        matches!(self, Shape::Rois { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Plane { height, width } => height >= 1 && width >= 1,
            Shape::Volume { depth, height, width } => depth >= 1 && height >= 1 && width >= 1,
            Shape::Rois { count } => count >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("shape components must be >= 1, got {self:?}")))
        }
    }

    pub fn index(&self, c: Coord) -> usize {
        let (h, w) = self.plane().unwrap_or((1, 1));
        (c.z * h + c.y) * w + c.x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coord {
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

/// An axis-aligned `side × side` window with top-left corner `(y, x)`,
/// optionally pinned to slice `slice` of a volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Square {
    pub y: usize,
    pub x: usize,
    pub side: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice: Option<usize>,
}

impl Square {
    pub fn new(y: usize, x: usize, side: usize) -> Self {
        Self { y, x, side, slice: None }
    }

    pub fn on_slice(mut self, z: usize) -> Self {
        self.slice = Some(z);
        self
    }

    pub fn area(&self) -> usize {
        self.side * self.side
    }

    /// Pixel-set intersection test. Squares on different slices never overlap.
    pub fn overlaps(&self, other: &Square) -> bool {
        self.slice.unwrap_or(0) == other.slice.unwrap_or(0)
            && self.y < other.y + other.side
            && other.y < self.y + self.side
            && self.x < other.x + other.side
            && other.x < self.x + self.side
    }

    /// Same test ignoring slices, for callers already working on one plane.
    pub fn overlaps_window(&self, y: usize, x: usize, side: usize) -> bool {
        self.y < y + side && y < self.y + self.side && self.x < x + side && x < self.x + self.side
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RegionKind {
    Square(Square),
    Roi { index: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub image_id: ImageId,
    pub kind: RegionKind,
    /// Active-learning cycle in which the region was selected.
    pub cycle: u32,
}

impl Region {
    pub fn square(image_id: ImageId, square: Square, cycle: u32) -> Self {
        Self { image_id, kind: RegionKind::Square(square), cycle }
    }

    pub fn roi(image_id: ImageId, index: usize, cycle: u32) -> Self {
        Self { image_id, kind: RegionKind::Roi { index }, cycle }
    }

    pub fn as_square(&self) -> Option<&Square> {
        match &self.kind {
            RegionKind::Square(s) => Some(s),
            RegionKind::Roi { .. } => None,
        }
    }

    pub fn roi_index(&self) -> Option<usize> {
        match self.kind {
            RegionKind::Roi { index } => Some(index),
            RegionKind::Square(_) => None,
        }
    }

    /// Annotated unit count: `side²` pixels for squares, 1 for an ROI.
    pub fn area(&self) -> usize {
        match &self.kind {
            RegionKind::Square(s) => s.area(),
            RegionKind::Roi { .. } => 1,
        }
    }

    /// Sort key used for deterministic tie-breaking: `(image, slice, y, x)`.
    pub fn order_key(&self) -> (ImageId, usize, usize, usize) {
        match self.kind {
            RegionKind::Square(s) => (self.image_id, s.slice.unwrap_or(0), s.y, s.x),
            RegionKind::Roi { index } => (self.image_id, 0, index, 0),
        }
    }

    pub fn check_bounds(&self, shape: &Shape) -> Result<()> {
        let fits = match (&self.kind, *shape) {
            (RegionKind::Square(s), Shape::Plane { height, width }) => {
                s.slice.is_none() && s.side >= 1 && s.y + s.side <= height && s.x + s.side <= width
            }
            (RegionKind::Square(s), Shape::Volume { depth, height, width }) => {
                s.slice.is_some_and(|z| z < depth)
                    && s.side >= 1
                    && s.y + s.side <= height
                    && s.x + s.side <= width
            }
            (RegionKind::Roi { index }, Shape::Rois { count }) => *index < count,
            _ => false,
        };
        if fits {
            Ok(())
        } else {
            Err(Error::OutOfBounds { region: *self, shape: *shape })
        }
    }
}

/// Pixels covered by a region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Footprint {
    Pixels(Vec<Coord>),
    Roi(usize),
}

pub fn region_pixels(region: &Region, shape: &Shape) -> Result<Footprint> {
    region.check_bounds(shape)?;
    Ok(match region.kind {
        RegionKind::Square(s) => {
            let z = s.slice.unwrap_or(0);
            let mut coords = Vec::with_capacity(s.area());
            for y in s.y..s.y + s.side {
                for x in s.x..s.x + s.side {
                    coords.push(Coord { z, y, x });
                }
            }
            Footprint::Pixels(coords)
        }
        RegionKind::Roi { index } => Footprint::Roi(index),
    })
}

/// Linear indices covered by a region, row-major.
pub fn region_indices(region: &Region, shape: &Shape) -> Result<Vec<usize>> {
    Ok(match region_pixels(region, shape)? {
        Footprint::Pixels(coords) => coords.into_iter().map(|c| shape.index(c)).collect(),
        Footprint::Roi(index) => vec![index],
    })
}

/// True iff the two regions share at least one pixel (or are the same ROI).
pub fn regions_overlap(a: &Region, b: &Region) -> bool {
    if a.image_id != b.image_id {
        return false;
    }
    match (&a.kind, &b.kind) {
        (RegionKind::Square(sa), RegionKind::Square(sb)) => sa.overlaps(sb),
        (RegionKind::Roi { index: ia }, RegionKind::Roi { index: ib }) => ia == ib,
        _ => false,
    }
}

/// One pool or test image with its features and hidden ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    id: ImageId,
    shape: Shape,
    feature_dim: usize,
    features: Vec<f32>,
    labels: Vec<ClassId>,
}

impl ImageRecord {
    pub fn new(
        id: ImageId,
        shape: Shape,
        feature_dim: usize,
        features: Vec<f32>,
        labels: Vec<ClassId>,
        num_classes: usize,
    ) -> Result<Self> {
        shape.validate()?;
        if feature_dim == 0 {
            return Err(Error::Invalid("feature dimension must be >= 1".into()));
        }
        if features.len() != shape.len() * feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "image {id}: {} feature values for {} units of dimension {feature_dim}",
                features.len(),
                shape.len()
            )));
        }
        if labels.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "image {id}: {} labels for {} units",
                labels.len(),
                shape.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&c| usize::from(c) >= num_classes) {
            return Err(Error::Invalid(format!("image {id}: label {bad} >= {num_classes} classes")));
        }
        Ok(Self { id, shape, feature_dim, features, labels })
    }

    pub fn id(&self) -> ImageId {
        self.id
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn feature(&self, index: usize) -> &[f32] {
        &self.features[index * self.feature_dim..(index + 1) * self.feature_dim]
    }

    /// Ground truth. Selection code must go through an [`Oracle`] instead;
    /// this accessor exists for evaluation and dataset I/O.
    pub fn hidden_labels(&self) -> &[ClassId] {
        &self.labels
    }
}

/// Model output over one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionField {
    shape: Shape,
    num_classes: usize,
    pseudo_labels: Vec<ClassId>,
    max_prob: Vec<f32>,
    full_probs: Option<Vec<f32>>,
}

/// Tolerance for per-unit probability sums of f32-stored softmax outputs.
pub const PROB_SUM_TOLERANCE: f64 = 1e-5;

impl PredictionField {
    /// Builds a field from a `len × num_classes` probability array. The
    /// pseudo-label is the argmax with ties going to the lowest class.
    pub fn from_probabilities(shape: Shape, num_classes: usize, probs: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        if num_classes == 0 || probs.len() != shape.len() * num_classes {
            return Err(Error::ShapeMismatch(format!(
                "{} probabilities for {} units x {num_classes} classes",
                probs.len(),
                shape.len()
            )));
        }
        let mut pseudo_labels = Vec::with_capacity(shape.len());
        let mut max_prob = Vec::with_capacity(shape.len());
        for (j, row) in probs.chunks_exact(num_classes).enumerate() {
            let sum: f64 = row.iter().map(|&p| f64::from(p)).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Invalid(format!("unit {j}: probabilities do not form a distribution")));
            }
            let (arg, best) = argmax_lowest(row);
            pseudo_labels.push(arg as ClassId);
            max_prob.push(best);
        }
        Ok(Self { shape, num_classes, pseudo_labels, max_prob, full_probs: Some(probs) })
    }

    /// Builds a field from pseudo-labels and max-probabilities only.
    pub fn from_labels(
        shape: Shape,
        num_classes: usize,
        pseudo_labels: Vec<ClassId>,
        max_prob: Vec<f32>,
    ) -> Result<Self> {
        shape.validate()?;
        if pseudo_labels.len() != shape.len() || max_prob.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels / {} probabilities for {} units",
                pseudo_labels.len(),
                max_prob.len(),
                shape.len()
            )));
        }
        if pseudo_labels.iter().any(|&c| usize::from(c) >= num_classes) {
            return Err(Error::Invalid("pseudo-label outside class range".into()));
        }
        if max_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Invalid("max probability outside [0, 1]".into()));
        }
        Ok(Self { shape, num_classes, pseudo_labels, max_prob, full_probs: None })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn pseudo_labels(&self) -> &[ClassId] {
        &self.pseudo_labels
    }

    pub fn max_prob(&self) -> &[f32] {
        &self.max_prob
    }

    pub fn full_probs(&self) -> Option<&[f32]> {
        self.full_probs.as_deref()
    }

    pub fn probs_at(&self, index: usize) -> Option<&[f32]> {
        let c = self.num_classes;
        self.full_probs.as_ref().map(|p| &p[index * c..(index + 1) * c])
    }
}

/// Index and value of the largest entry; ties go to the lowest index.
pub fn argmax_lowest(values: &[f32]) -> (usize, f32) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    (best, values[best])
}

/// Stand-in for the human annotator: reveals ground truth inside a region.
pub trait Oracle {
    fn reveal(&self, region: &Region) -> Result<Vec<ClassId>>;
}

/// Oracle backed by the hidden labels of a set of images.
pub struct GroundTruthOracle<'a> {
    images: &'a [ImageRecord],
    by_id: BTreeMap<ImageId, usize>,
}

impl<'a> GroundTruthOracle<'a> {
    pub fn new(images: &'a [ImageRecord]) -> Self {
        let by_id = images.iter().enumerate().map(|(i, im)| (im.id(), i)).collect();
        Self { images, by_id }
    }

    pub fn image(&self, id: ImageId) -> Result<&'a ImageRecord> {
        self.by_id.get(&id).map(|&i| &self.images[i]).ok_or(Error::UnknownImage(id))
    }
}

impl Oracle for GroundTruthOracle<'_> {
    fn reveal(&self, region: &Region) -> Result<Vec<ClassId>> {
        let image = self.image(region.image_id)?;
        let labels = image.hidden_labels();
        Ok(region_indices(region, image.shape())?.into_iter().map(|j| labels[j]).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedRegion {
    pub region: Region,
    /// Ground truth revealed for the region, in [`region_indices`] order.
    pub labels: Vec<ClassId>,
}

/// The labeled set plus image-loop bookkeeping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnnotationState {
    images: BTreeMap<ImageId, Vec<AnnotatedRegion>>,
    loop_visited: BTreeSet<ImageId>,
}

impl AnnotationState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reveals `region` through the oracle and adds it to the labeled set.
    /// Rejects regions that overlap anything already annotated in the image.
    pub fn annotate(&mut self, region: Region, oracle: &impl Oracle) -> Result<()> {
        if self.overlaps_existing(&region) {
            return Err(Error::Overlap(region));
        }
        let labels = oracle.reveal(&region)?;
        self.images
            .entry(region.image_id)
            .or_default()
            .push(AnnotatedRegion { region, labels });
        Ok(())
    }

    pub fn overlaps_existing(&self, region: &Region) -> bool {
        self.regions_of(region.image_id).any(|r| regions_overlap(r, region))
    }

    pub fn annotated(&self, id: ImageId) -> &[AnnotatedRegion] {
        self.images.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn regions_of(&self, id: ImageId) -> impl Iterator<Item = &Region> + '_ {
        self.annotated(id).iter().map(|a| &a.region)
    }

    /// All annotated regions, grouped by image in id order.
    pub fn iter(&self) -> impl Iterator<Item = &AnnotatedRegion> + '_ {
        self.images.values().flatten()
    }

    pub fn region_count(&self) -> usize {
        self.images.values().map(Vec::len).sum()
    }

    pub fn revealed_count(&self) -> usize {
        self.iter().map(|a| a.labels.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.region_count() == 0
    }

    pub fn loop_visited(&self) -> &BTreeSet<ImageId> {
        &self.loop_visited
    }

    pub fn loop_visited_mut(&mut self) -> &mut BTreeSet<ImageId> {
        &mut self.loop_visited
    }
}

/// Takes `n` images in `preference` order, skipping those already visited in
/// the current loop. When the loop runs dry the visited set is cleared and
/// selection continues from the full pool, never repeating an image within
/// one call. Chosen images are marked visited.
pub fn take_with_restart(
    preference: &[ImageId],
    visited: &mut BTreeSet<ImageId>,
    n: usize,
) -> Result<Vec<ImageId>> {
    if preference.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut picked = Vec::with_capacity(n);
    for &id in preference {
        if picked.len() == n {
            break;
        }
        if visited.insert(id) {
            picked.push(id);
        }
    }
    if picked.len() < n {
        visited.clear();
        for &id in preference {
            if picked.len() == n {
                break;
            }
            if !picked.contains(&id) {
                visited.insert(id);
                picked.push(id);
            }
        }
    }
    Ok(picked)
}

/// Uniformly random region of side `side` that does not overlap `existing`.
///
/// Squares are drawn by rejection sampling over `(slice, y, x)`; after
/// [`REJECTION_ATTEMPTS`] misses every feasible origin is enumerated. ROI
/// images draw uniformly from unannotated ROIs. `None` when nothing fits.
pub fn sample_feasible_region<R: Rng + ?Sized>(
    image_id: ImageId,
    shape: &Shape,
    side: usize,
    existing: &[Region],
    cycle: u32,
    rng: &mut R,
) -> Option<Region> {
    match *shape {
        Shape::Rois { count } => {
            let taken: BTreeSet<usize> = existing.iter().filter_map(Region::roi_index).collect();
            let free: Vec<usize> = (0..count).filter(|i| !taken.contains(i)).collect();
            if free.is_empty() {
                None
            } else {
                Some(Region::roi(image_id, free[rng.random_range(0..free.len())], cycle))
            }
        }
        Shape::Plane { height, width } | Shape::Volume { height, width, .. } => {
            if side == 0 || side > height || side > width {
                return None;
            }
            let volume = matches!(shape, Shape::Volume { .. });
            let slices = shape.slices();
            let squares: Vec<Square> = existing.iter().filter_map(|r| r.as_square().copied()).collect();
            let make = |z: usize, y: usize, x: usize| {
                let s = Square::new(y, x, side);
                if volume { s.on_slice(z) } else { s }
            };
            let free = |s: &Square| !squares.iter().any(|e| e.overlaps(s));
            for _ in 0..REJECTION_ATTEMPTS {
                let z = rng.random_range(0..slices);
                let y = rng.random_range(0..=height - side);
                let x = rng.random_range(0..=width - side);
                let s = make(z, y, x);
                if free(&s) {
                    return Some(Region::square(image_id, s, cycle));
                }
            }
            let mut feasible = Vec::new();
            for z in 0..slices {
                for y in 0..=height - side {
                    for x in 0..=width - side {
                        let s = make(z, y, x);
                        if free(&s) {
                            feasible.push(s);
                        }
                    }
                }
            }
            if feasible.is_empty() {
                None
            } else {
                Some(Region::square(image_id, feasible[rng.random_range(0..feasible.len())], cycle))
            }
        }
    }
}
