//! Pixel-wise linear softmax classifier fit by full-batch gradient descent.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{AnnotationState, ClassId, ImageRecord, PredictionField};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Samples per gradient chunk. Chunk partial sums are added in chunk order,
/// so the result does not depend on the number of worker threads.
const CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub epochs: usize,
    /// Step size as a multiple of `1 / L`, `L` being a bound on the loss
    /// curvature; values in `(0, 1]` keep the loss monotone.
    pub learning_rate: f64,
    /// L2 penalty on the non-bias weights.
    pub l2: f64,
    /// Weight every sample by the inverse frequency of its class, so each
    /// class present in the training set contributes equally to the loss.
    pub balanced: bool,
    /// Standard deviation of the initial weights.
    pub init_scale: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { epochs: 100, learning_rate: 1.0, l2: 1e-4, balanced: true, init_scale: 0.01 }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("model.epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 2.0) {
            return Err(Error::Config("model.learning_rate must lie in (0, 2]".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) || !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("model.l2 and model.init_scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Revealed `(feature, label)` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSet {
    pub feature_dim: usize,
    pub features: Vec<f32>,
    pub labels: Vec<ClassId>,
}

impl TrainingSet {
    pub fn new(feature_dim: usize) -> Self {
        Self { feature_dim, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, feature: &[f32], label: ClassId) {
        debug_assert_eq!(feature.len(), self.feature_dim);
        self.features.extend_from_slice(feature);
        self.labels.push(label);
    }

    /// Labels revealed so far, paired with the features of the same units.
    pub fn from_annotations(state: &AnnotationState, pool: &[ImageRecord]) -> Result<Self> {
        let feature_dim = pool.first().map_or(0, ImageRecord::feature_dim);
        let mut set = Self::new(feature_dim);
        for a in state.iter() {
            let image = pool
                .iter()
                .find(|r| r.id() == a.region.image_id)
                .ok_or(Error::UnknownImage(a.region.image_id))?;
            let idx = crate::domain::region_indices(&a.region, image.shape())?;
            for (&j, &label) in idx.iter().zip(&a.labels) {
                set.push(image.feature(j), label);
            }
        }
        Ok(set)
    }

    /// Every unit of every image, with its ground truth.
    pub fn from_images(images: &[ImageRecord]) -> Self {
        let feature_dim = images.first().map_or(0, ImageRecord::feature_dim);
        let mut set = Self::new(feature_dim);
        for r in images {
            set.features.extend_from_slice(r.features());
            set.labels.extend_from_slice(r.hidden_labels());
        }
        set
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    num_classes: usize,
    feature_dim: usize,
    /// Per-feature shift and scale applied before the linear map.
    center: Vec<f64>,
    scale: Vec<f64>,
    /// `(F + 1) × C`, row-major; the last row holds the biases.
    weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Objective before each epoch's update, then after the last one.
    pub losses: Vec<f64>,
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

impl ToyModel {
    pub fn zeros(feature_dim: usize, num_classes: usize) -> Self {
        Self {
            num_classes,
            feature_dim,
            center: vec![0.0; feature_dim],
            scale: vec![1.0; feature_dim],
            weights: vec![0.0; (feature_dim + 1) * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) {
        assert_eq!(weights.len(), self.weights.len());
        self.weights = weights;
    }

    fn standardized(&self, x: &[f32], out: &mut [f64]) {
        for ((o, &v), (c, s)) in out.iter_mut().zip(x).zip(self.center.iter().zip(&self.scale)) {
            *o = (f64::from(v) - c) / s;
        }
    }

    fn probabilities(&self, x: &[f32], xs: &mut [f64], out: &mut [f64]) {
        self.standardized(x, xs);
        let c = self.num_classes;
        out.copy_from_slice(&self.weights[self.feature_dim * c..]);
        for (f, &v) in xs.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(&self.weights[f * c..(f + 1) * c]) {
                *o += v * w;
            }
        }
        softmax_in_place(out);
    }

    /// Standardized features with a trailing 1 per sample.
    fn design(&self, set: &TrainingSet) -> Vec<f64> {
        let f = self.feature_dim;
        let mut out = vec![0.0; set.len() * (f + 1)];
        out.par_chunks_mut((f + 1) * CHUNK)
            .zip(set.features.par_chunks(f * CHUNK))
            .for_each(|(rows, feats)| {
                for (row, x) in rows.chunks_exact_mut(f + 1).zip(feats.chunks_exact(f)) {
                    self.standardized(x, &mut row[..f]);
                    row[f] = 1.0;
                }
            });
        out
    }

    /// Per-class sample weights: `n / (K · n_c)` over the `K` classes present
    /// when balancing, otherwise 1.
    fn class_weights(&self, labels: &[ClassId], balanced: bool) -> Vec<f64> {
        if !balanced {
            return vec![1.0; self.num_classes];
        }
        let counts = crate::decomp::class_counts(labels, self.num_classes);
        let present = counts.iter().filter(|&&n| n > 0).count() as f64;
        let n = labels.len() as f64;
        counts.iter().map(|&k| if k == 0 { 0.0 } else { n / (present * k as f64) }).collect()
    }

    /// Weighted mean cross-entropy plus `l2 / 2 · ‖W‖²` (biases excluded)
    /// and its gradient with respect to the weights.
    pub fn loss_and_gradient(&self, set: &TrainingSet, params: &ModelParams) -> (f64, Vec<f64>) {
        let cw = self.class_weights(&set.labels, params.balanced);
        self.loss_and_gradient_on(&self.design(set), &set.labels, &cw, params.l2)
    }

    fn loss_and_gradient_on(&self, design: &[f64], labels: &[ClassId], cw: &[f64], l2: f64) -> (f64, Vec<f64>) {
        let (c, f) = (self.num_classes, self.feature_dim);
        let d = f + 1;
        let w = &self.weights;
        let parts: Vec<(f64, Vec<f64>)> = labels
            .par_chunks(CHUNK)
            .zip(design.par_chunks(CHUNK * d))
            .map(|(labels, rows)| {
                let mut grad = vec![0.0; d * c];
                let mut loss = 0.0;
                let mut p = vec![0.0; c];
                for (&y, x) in labels.iter().zip(rows.chunks_exact(d)) {
                    p.iter_mut().for_each(|v| *v = 0.0);
                    for (&v, wr) in x.iter().zip(w.chunks_exact(c)) {
                        for (o, &wk) in p.iter_mut().zip(wr) {
                            *o += v * wk;
                        }
                    }
                    let y = usize::from(y);
                    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let margin = p[y] - max;
                    let mut sum = 0.0;
                    for v in p.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    let a = cw[y];
                    loss += a * (sum.ln() - margin);
                    let inv = a / sum;
                    p.iter_mut().for_each(|v| *v *= inv);
                    p[y] -= a;
                    for (&v, gr) in x.iter().zip(grad.chunks_exact_mut(c)) {
                        for (g, &dk) in gr.iter_mut().zip(&p) {
                            *g += v * dk;
                        }
                    }
                }
                (loss, grad)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; d * c];
        for (l, g) in parts {
            loss += l;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        let n = labels.len() as f64;
        loss /= n;
        grad.iter_mut().for_each(|g| *g /= n);
        let penalized = f * c;
        loss += 0.5 * l2 * w[..penalized].iter().map(|v| v * v).sum::<f64>();
        for (g, v) in grad[..penalized].iter_mut().zip(&w[..penalized]) {
            *g += l2 * v;
        }
        (loss, grad)
    }

    /// Fits a fresh model on `set`. Features are standardized with the
    /// training-set statistics; initial weights come from `seed`.
    pub fn fit(set: &TrainingSet, num_classes: usize, params: &ModelParams, seed: u64) -> Result<(Self, TrainReport)> {
        if set.is_empty() {
            return Err(Error::EmptyAnnotations);
        }
        let f = set.feature_dim;
        let n = set.len() as f64;
        let mut center = vec![0.0; f];
        for x in set.features.chunks_exact(f) {
            center.iter_mut().zip(x).for_each(|(m, &v)| *m += f64::from(v));
        }
        center.iter_mut().for_each(|m| *m /= n);
        let mut scale = vec![0.0; f];
        for x in set.features.chunks_exact(f) {
            for ((s, &v), m) in scale.iter_mut().zip(x).zip(&center) {
                *s += (f64::from(v) - m).powi(2);
            }
        }
        scale.iter_mut().for_each(|s| {
            let sd = (*s / n).sqrt();
            *s = if sd > 1e-12 { sd } else { 1.0 };
        });

        let mut model = Self::zeros(f, num_classes);
        model.center = center;
        model.scale = scale;
        if params.init_scale > 0.0 {
            let normal = Normal::new(0.0, params.init_scale).map_err(|e| Error::Config(e.to_string()))?;
            let mut rng = seeded(seed);
            model.weights.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
        }

        // curvature bound: the softmax Hessian is at most ½ E[x̃x̃ᵀ] ⊗ I plus the penalty
        let design = model.design(set);
        let cw = model.class_weights(&set.labels, params.balanced);
        let curvature = largest_eigenvalue(&second_moment(&design, &set.labels, &cw, f + 1), f + 1);
        let step = params.learning_rate / (0.5 * curvature + params.l2);

        let mut losses = Vec::with_capacity(params.epochs + 1);
        for _ in 0..params.epochs {
            let (loss, grad) = model.loss_and_gradient_on(&design, &set.labels, &cw, params.l2);
            losses.push(loss);
            model.weights.iter_mut().zip(&grad).for_each(|(w, g)| *w -= step * g);
        }
        losses.push(model.loss_and_gradient_on(&design, &set.labels, &cw, params.l2).0);
        if model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Invalid("training diverged".into()));
        }
        Ok((model, TrainReport { losses }))
    }

    /// Softmax probabilities for every unit of `image`.
    pub fn predict(&self, image: &ImageRecord) -> Result<PredictionField> {
        if image.feature_dim() != self.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} features, image has {}",
                self.feature_dim,
                image.feature_dim()
            )));
        }
        let c = self.num_classes;
        let mut probs = Vec::with_capacity(image.shape().len() * c);
        let mut xs = vec![0.0; self.feature_dim];
        let mut p = vec![0.0; c];
        for x in image.features().chunks_exact(self.feature_dim) {
            self.probabilities(x, &mut xs, &mut p);
            probs.extend(p.iter().map(|&v| v as f32));
        }
        PredictionField::from_probabilities(*image.shape(), c, probs)
    }
}

/// Class-weighted `E[x xᵀ]` over the rows of a row-major `n × d` matrix.
fn second_moment(rows: &[f64], labels: &[ClassId], cw: &[f64], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for (x, &y) in rows.chunks_exact(d).zip(labels) {
        let w = cw[usize::from(y)];
        for (i, &a) in x.iter().enumerate() {
            for (o, &b) in m[i * d..(i + 1) * d].iter_mut().zip(x) {
                *o += w * a * b;
            }
        }
    }
    let n = (rows.len() / d).max(1) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration, padded by 1% and clipped to the Gershgorin bound. Gradient
/// descent stays monotone for steps below `2 / L`, which leaves ample room
/// for an estimate that falls slightly short.
fn largest_eigenvalue(m: &[f64], d: usize) -> f64 {
    let mut v = vec![1.0; d];
    let mut estimate = 0.0;
    for _ in 0..200 {
        let mut next = vec![0.0; d];
        for (i, o) in next.iter_mut().enumerate() {
            *o = m[i * d..(i + 1) * d].iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = next.into_iter().map(|x| x / norm).collect();
    }
    let gershgorin = (0..d).map(|i| m[i * d..(i + 1) * d].iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    (estimate * 1.01).min(gershgorin)
}
