//! Synthetic label maps and features.
//!
//! Label maps are Voronoi partitions whose cells receive classes so that the
//! class frequencies inside each image follow `class_frequencies`. Features
//! are the class mean plus isotropic Gaussian noise.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ClassId, ImageId, ImageRecord, Shape};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, tag, StreamRng};
use crate::tensor::{Tensor, TensorData};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    #[default]
    Segmentation2d,
    Segmentation3d,
    Roi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDatasetSpec {
    pub mode: DatasetMode,
    pub n_train: usize,
    pub n_test: usize,
    pub height: usize,
    pub width: usize,
    /// Slices per volume (3-D mode only).
    pub depth: usize,
    /// ROIs per image (ROI mode only).
    pub roi_count: usize,
    pub class_frequencies: Vec<f64>,
    pub feature_dim: usize,
    /// `C × F` class means. Drawn from `N(0, mean_scale²)` when absent.
    pub class_means: Option<Vec<Vec<f64>>>,
    pub mean_scale: f64,
    pub noise: f64,
    /// Voronoi seeds per image (per volume in 3-D mode).
    pub voronoi_seeds: usize,
    /// Standard deviation of the per-slice seed displacement, in pixels.
    pub drift: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            mode: DatasetMode::Segmentation2d,
            n_train: 64,
            n_test: 16,
            height: 128,
            width: 128,
            depth: 8,
            roi_count: 32,
            class_frequencies: vec![0.70, 0.15, 0.10, 0.04, 0.01],
            feature_dim: 6,
            class_means: None,
            mean_scale: 1.5,
            noise: 1.0,
            voronoi_seeds: 256,
            drift: 1.5,
            seed: 7,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn num_classes(&self) -> usize {
        self.class_frequencies.len()
    }

    pub fn shape(&self) -> Shape {
        match self.mode {
            DatasetMode::Segmentation2d => Shape::Plane { height: self.height, width: self.width },
            DatasetMode::Segmentation3d => Shape::Volume { depth: self.depth, height: self.height, width: self.width },
            DatasetMode::Roi => Shape::Rois { count: self.roi_count },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("dataset: {msg}")));
        let c = self.num_classes();
        if c < 2 {
            return bad(format!("need at least 2 classes, got {c}"));
        }
        if c > usize::from(ClassId::MAX) {
            return bad(format!("too many classes ({c})"));
        }
        if self.class_frequencies.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return bad("class frequencies must be positive".into());
        }
        let sum: f64 = self.class_frequencies.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("class frequencies sum to {sum}, not 1"));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be >= 1".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be >= 1".into());
        }
        if self.shape().validate().is_err() {
            return bad(format!("invalid image shape {:?}", self.shape()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !(self.mean_scale > 0.0 && self.mean_scale.is_finite()) {
            return bad("noise must be >= 0 and mean_scale > 0".into());
        }
        if !(self.drift >= 0.0 && self.drift.is_finite()) {
            return bad("drift must be >= 0".into());
        }
        if self.voronoi_seeds == 0 {
            return bad("voronoi_seeds must be >= 1".into());
        }
        if let Some(means) = &self.class_means {
            if means.len() != c || means.iter().any(|m| m.len() != self.feature_dim) {
                return bad(format!("class_means must be {c} x {}", self.feature_dim));
            }
            if means.iter().flatten().any(|v| !v.is_finite()) {
                return bad("class_means must be finite".into());
            }
        }
        Ok(())
    }

    fn resolved_means(&self) -> Vec<Vec<f64>> {
        if let Some(m) = &self.class_means {
            return m.clone();
        }
        let mut rng = seeded(derive_seed(self.seed, &[tag::DATASET, u64::MAX]));
        (0..self.num_classes())
            .map(|_| {
                (0..self.feature_dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        self.mean_scale * z
                    })
                    .collect()
            })
            .collect()
    }
}

/// Train pool and fully labeled test set.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub mode: DatasetMode,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub train: Vec<ImageRecord>,
    pub test: Vec<ImageRecord>,
}

impl Dataset {
    pub fn shape(&self) -> &Shape {
        self.train[0].shape()
    }

    /// Units (pixels, voxels or ROIs) in the train pool.
    pub fn pool_units(&self) -> u64 {
        self.train.iter().map(|r| r.shape().len() as u64).sum()
    }
}

pub fn generate_dataset(spec: &SyntheticDatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let means = spec.resolved_means();
    let make = |split: u64, count: usize| -> Result<Vec<ImageRecord>> {
        (0..count)
            .into_par_iter()
            .map(|k| {
                let mut rng = seeded(derive_seed(spec.seed, &[tag::DATASET, split, k as u64]));
                generate_image(spec, &means, ImageId(k as u32), &mut rng)
            })
            .collect()
    };
    Ok(Dataset {
        mode: spec.mode,
        num_classes: spec.num_classes(),
        feature_dim: spec.feature_dim,
        train: make(0, spec.n_train)?,
        test: make(1, spec.n_test)?,
    })
}

fn generate_image(spec: &SyntheticDatasetSpec, means: &[Vec<f64>], id: ImageId, rng: &mut StreamRng) -> Result<ImageRecord> {
    let shape = spec.shape();
    let labels = match spec.mode {
        DatasetMode::Roi => {
            let cdf = cumulative(&spec.class_frequencies);
            (0..spec.roi_count).map(|_| class_at(&cdf, rng.random::<f64>())).collect()
        }
        DatasetMode::Segmentation2d | DatasetMode::Segmentation3d => {
            let depth = shape.slices();
            voronoi_labels(depth, spec.height, spec.width, spec.voronoi_seeds, spec.drift, &spec.class_frequencies, rng)
        }
    };
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut features = Vec::with_capacity(labels.len() * spec.feature_dim);
    for &l in &labels {
        for &m in &means[usize::from(l)] {
            features.push((m + noise.sample(rng)) as f32);
        }
    }
    ImageRecord::new(id, shape, spec.feature_dim, features, labels, spec.num_classes())
}

fn cumulative(freqs: &[f64]) -> Vec<f64> {
    freqs
        .iter()
        .scan(0.0, |acc, f| {
            *acc += f;
            Some(*acc)
        })
        .collect()
}

fn class_at(cdf: &[f64], u: f64) -> ClassId {
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1) as ClassId
}

/// Nearest-seed partition of every slice. In 3-D the seeds take a small
/// random step between slices, so cells drift smoothly through the volume.
/// Cells are then laid end to end in random order and each takes the class
/// found at its area midpoint on the cumulative frequency scale.
fn voronoi_labels(
    depth: usize,
    height: usize,
    width: usize,
    n_seeds: usize,
    drift: f64,
    freqs: &[f64],
    rng: &mut StreamRng,
) -> Vec<ClassId> {
    let mut seeds: Vec<(f64, f64)> = (0..n_seeds)
        .map(|_| (rng.random::<f64>() * height as f64, rng.random::<f64>() * width as f64))
        .collect();
    let plane = height * width;
    let mut cell = vec![0u32; depth * plane];
    for z in 0..depth {
        if z > 0 && drift > 0.0 {
            for s in seeds.iter_mut() {
                let dy: f64 = StandardNormal.sample(rng);
                let dx: f64 = StandardNormal.sample(rng);
                s.0 = (s.0 + drift * dy).clamp(0.0, height as f64);
                s.1 = (s.1 + drift * dx).clamp(0.0, width as f64);
            }
        }
        let out = &mut cell[z * plane..(z + 1) * plane];
        for y in 0..height {
            let py = y as f64 + 0.5;
            for x in 0..width {
                let px = x as f64 + 0.5;
                let mut best = (f64::INFINITY, 0u32);
                for (k, &(sy, sx)) in seeds.iter().enumerate() {
                    let d = (py - sy) * (py - sy) + (px - sx) * (px - sx);
                    if d < best.0 {
                        best = (d, k as u32);
                    }
                }
                out[y * width + x] = best.1;
            }
        }
    }
    let mut area = vec![0usize; n_seeds];
    for &c in &cell {
        area[c as usize] += 1;
    }
    let mut order: Vec<usize> = (0..n_seeds).collect();
    order.shuffle(rng);
    let cdf = cumulative(freqs);
    let total = cell.len() as f64;
    let mut class_of = vec![0 as ClassId; n_seeds];
    let mut before = 0usize;
    for k in order {
        let mid = (before as f64 + area[k] as f64 / 2.0) / total;
        class_of[k] = class_at(&cdf, mid);
        before += area[k];
    }
    cell.into_iter().map(|c| class_of[c as usize]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    mode: DatasetMode,
    num_classes: usize,
    feature_dim: usize,
    shape: Shape,
    n_train: usize,
    n_test: usize,
}

fn split_tensors(images: &[ImageRecord], shape: &Shape, feature_dim: usize) -> Result<(Tensor, Tensor)> {
    let mut dims: Vec<u32> = vec![images.len() as u32];
    dims.extend(match *shape {
        Shape::Plane { height, width } => vec![height as u32, width as u32],
        Shape::Volume { depth, height, width } => vec![depth as u32, height as u32, width as u32],
        Shape::Rois { count } => vec![count as u32],
    });
    let labels: Vec<u16> = images.iter().flat_map(|r| r.hidden_labels().iter().copied()).collect();
    let features: Vec<f32> = images.iter().flat_map(|r| r.features().iter().copied()).collect();
    let label_tensor = Tensor::new(dims.clone(), TensorData::U16(labels))?;
    dims.push(feature_dim as u32);
    Ok((Tensor::new(dims, TensorData::F32(features))?, label_tensor))
}

impl Dataset {
    /// Writes `manifest.json` plus `{train,test}_{features,labels}.dten`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            mode: self.mode,
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
            shape: *self.shape(),
            n_train: self.train.len(),
            n_test: self.test.len(),
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.join("manifest.json"), json + "\n")?;
        for (name, images) in [("train", &self.train), ("test", &self.test)] {
            let (features, labels) = split_tensors(images, self.shape(), self.feature_dim)?;
            features.write_to(fs::File::create(dir.join(format!("{name}_features.dten")))?)?;
            labels.write_to(fs::File::create(dir.join(format!("{name}_labels.dten")))?)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        m.shape.validate()?;
        let units = m.shape.len();
        let read_split = |name: &str, count: usize| -> Result<Vec<ImageRecord>> {
            let features = Tensor::read_from(fs::File::open(dir.join(format!("{name}_features.dten")))?)?;
            let labels = Tensor::read_from(fs::File::open(dir.join(format!("{name}_labels.dten")))?)?;
            let (TensorData::F32(features), TensorData::U16(labels)) = (features.data, labels.data) else {
                return Err(Error::Format(format!("{name}: unexpected tensor dtypes")));
            };
            if labels.len() != count * units || features.len() != count * units * m.feature_dim {
                return Err(Error::Format(format!("{name}: tensor sizes disagree with the manifest")));
            }
            (0..count)
                .map(|k| {
                    ImageRecord::new(
                        ImageId(k as u32),
                        m.shape,
                        m.feature_dim,
                        features[k * units * m.feature_dim..(k + 1) * units * m.feature_dim].to_vec(),
                        labels[k * units..(k + 1) * units].to_vec(),
                        m.num_classes,
                    )
                })
                .collect()
        };
        let train = read_split("train", m.n_train)?;
        let test = read_split("test", m.n_test)?;
        if train.is_empty() || test.is_empty() {
            return Err(Error::Format("dataset needs at least one train and one test image".into()));
        }
        Ok(Self { mode: m.mode, num_classes: m.num_classes, feature_dim: m.feature_dim, train, test })
    }
}
