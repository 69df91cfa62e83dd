//! The active-learning loop: random initial set, then per cycle predict,
//! select, annotate through the oracle, retrain from scratch and evaluate.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::dataset::{generate_dataset, Dataset, DatasetMode};
use super::model::{ToyModel, TrainingSet};
use crate::baselines::{
    badge_select, divers_candidate_pool, divers_cluster_select, divers_coreset_select, mean_uncertainty,
    rand_select_images, rand_select_regions, uncert_select_images, uncert_select_regions, uncertainty_map, PoolImage,
};
use crate::config::{ExperimentConfig, ImageSelector, RegionSelector, Strategy};
use crate::decomp::{class_confidence, decomp_select, image_score, select_images, FrequencyCap, ImageScore, SamplingWeights};
use crate::domain::{
    region_indices, regions_overlap, AnnotationState, ClassId, GroundTruthOracle, ImageId, ImageRecord, PredictionField,
    Region, Shape,
};
use crate::error::{Error, Result};
use crate::metrics::{dice, f1, iou, ClassReport};
use crate::rng::{derive_seed, image_stream, purpose_stream, tag};

/// Outcome of one cycle of one strategy in one repeat.
#[derive(Clone, Debug)]
pub struct CycleRecord {
    pub strategy: Strategy,
    pub repeat: u32,
    pub cycle: u32,
    pub annotated_units: u64,
    pub annotated_fraction: f64,
    /// mIoU, class-averaged Dice or weighted F1, by dataset mode.
    pub metric: f64,
    pub per_class_metric: Vec<Option<f64>>,
    pub per_class_annotated: Vec<u64>,
    /// Class confidence and sampling weights computed from the pool
    /// predictions that drove this cycle's selection (none in cycle 1).
    pub sigma: Option<Vec<f64>>,
    pub weights: Option<Vec<f64>>,
    pub selected: Vec<Region>,
    pub target_reached: bool,
    pub wall_time: Duration,
}

/// Equality ignores `wall_time`.
impl PartialEq for CycleRecord {
    fn eq(&self, o: &Self) -> bool {
        self.strategy == o.strategy
            && self.repeat == o.repeat
            && self.cycle == o.cycle
            && self.annotated_units == o.annotated_units
            && self.annotated_fraction == o.annotated_fraction
            && self.metric == o.metric
            && self.per_class_metric == o.per_class_metric
            && self.per_class_annotated == o.per_class_annotated
            && self.sigma == o.sigma
            && self.weights == o.weights
            && self.selected == o.selected
            && self.target_reached == o.target_reached
    }
}

/// First cycle whose record reached the target.
pub fn cycles_to_target(records: &[CycleRecord]) -> Option<u32> {
    records.iter().find(|r| r.target_reached).map(|r| r.cycle)
}

/// Test-set report for the mode's headline metric.
pub fn evaluate(model: &ToyModel, test: &[ImageRecord], mode: DatasetMode) -> Result<ClassReport> {
    let preds: Vec<PredictionField> = test.par_iter().map(|r| model.predict(r)).collect::<Result<_>>()?;
    let pred: Vec<ClassId> = preds.iter().flat_map(|p| p.pseudo_labels().iter().copied()).collect();
    let truth: Vec<ClassId> = test.iter().flat_map(|r| r.hidden_labels().iter().copied()).collect();
    let c = model.num_classes();
    match mode {
        DatasetMode::Segmentation2d => iou(&pred, &truth, c),
        DatasetMode::Segmentation3d => dice(&pred, &truth, c),
        DatasetMode::Roi => f1(&pred, &truth, c),
    }
}

/// The mode's aggregate: macro for segmentation, support-weighted for ROIs.
pub fn headline(report: &ClassReport, mode: DatasetMode) -> f64 {
    match mode {
        DatasetMode::Roi => report.weighted_avg,
        _ => report.macro_avg,
    }
}

/// Checks that regions within an image are disjoint and that the revealed
/// labels are exactly the ground truth under each region.
pub fn audit(state: &AnnotationState, pool: &[ImageRecord]) -> Result<()> {
    let mut expected = 0usize;
    for image in pool {
        let annotated = state.annotated(image.id());
        for (i, a) in annotated.iter().enumerate() {
            if annotated[..i].iter().any(|b| regions_overlap(&a.region, &b.region)) {
                return Err(Error::Overlap(a.region));
            }
            let idx = region_indices(&a.region, image.shape())?;
            let truth: Vec<ClassId> = idx.iter().map(|&j| image.hidden_labels()[j]).collect();
            if truth != a.labels {
                return Err(Error::Invalid(format!("labels revealed for {:?} do not match the region", a.region)));
            }
            expected += idx.len();
        }
    }
    if expected != state.revealed_count() {
        return Err(Error::Invalid("annotations reference images outside the pool".into()));
    }
    Ok(())
}

/// A dataset together with the configuration and full-annotation reference
/// shared by every run over it.
#[derive(Clone, Debug)]
pub struct Benchmark {
    config: ExperimentConfig,
    dataset: Arc<Dataset>,
    reference: f64,
}

impl Benchmark {
    /// Generates or loads the dataset and trains the full-annotation reference.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dataset = match &config.dataset_path {
            Some(path) => Dataset::load(path)?,
            None => generate_dataset(&config.dataset)?,
        };
        Self::from_dataset(config, Arc::new(dataset))
    }

    pub fn from_dataset(config: ExperimentConfig, dataset: Arc<Dataset>) -> Result<Self> {
        validate_against(&config, &dataset)?;
        let reference = full_annotation_reference(&config, &dataset)?;
        Ok(Self { config, dataset, reference })
    }

    /// Same dataset under a different configuration. The reference is
    /// retrained only if the model settings or master seed changed.
    pub fn with_config(&self, config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        validate_against(&config, &self.dataset)?;
        let reference = if config.model == self.config.model && config.seed == self.config.seed {
            self.reference
        } else {
            full_annotation_reference(&config, &self.dataset)?
        };
        Ok(Self { config, dataset: Arc::clone(&self.dataset), reference })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn reference(&self) -> f64 {
        self.reference
    }

    pub fn target(&self) -> f64 {
        self.config.target_fraction * self.reference
    }

    pub fn repeat_seed(&self, repeat: u32) -> u64 {
        derive_seed(self.config.seed, &[tag::REPEAT, u64::from(repeat)])
    }

    /// Every configured strategy for every repeat, in that order.
    pub fn run_all(&self) -> Result<Vec<CycleRecord>> {
        let jobs: Vec<(Strategy, u32)> = self
            .config
            .strategies
            .iter()
            .flat_map(|&s| (0..self.config.repeats).map(move |r| (s, r)))
            .collect();
        let runs: Vec<Vec<CycleRecord>> = jobs.par_iter().map(|&(s, r)| self.run(s, r)).collect::<Result<_>>()?;
        Ok(runs.into_iter().flatten().collect())
    }

    pub fn run(&self, strategy: Strategy, repeat: u32) -> Result<Vec<CycleRecord>> {
        Run::new(self, strategy, repeat).execute()
    }
}

fn validate_against(config: &ExperimentConfig, dataset: &Dataset) -> Result<()> {
    let bad = |msg: String| Err(Error::Config(msg));
    if dataset.train.iter().enumerate().any(|(k, r)| r.id() != ImageId(k as u32)) {
        return bad("train images must be numbered 0..n".into());
    }
    if config.n_image > dataset.train.len() {
        return bad(format!("n_image = {} exceeds the pool of {} images", config.n_image, dataset.train.len()));
    }
    if let Some((h, w)) = dataset.shape().plane() {
        if config.region_size > h.min(w) {
            return bad(format!("region_size = {} exceeds the image plane {h}x{w}", config.region_size));
        }
    }
    if let Some(mask) = &config.class_weight_mask {
        if mask.len() != dataset.num_classes {
            return bad(format!("class_weight_mask has {} entries for {} classes", mask.len(), dataset.num_classes));
        }
    }
    Ok(())
}

/// Test metric of a model trained on the fully revealed pool.
pub fn full_annotation_reference(config: &ExperimentConfig, dataset: &Dataset) -> Result<f64> {
    let set = TrainingSet::from_images(&dataset.train);
    let seed = derive_seed(config.seed, &[tag::MODEL_INIT]);
    let (model, _) = ToyModel::fit(&set, dataset.num_classes, &config.model, seed)?;
    Ok(headline(&evaluate(&model, &dataset.test, dataset.mode)?, dataset.mode))
}

/// Generates the dataset, then runs every strategy and repeat.
pub fn run_experiment(config: ExperimentConfig) -> Result<Vec<CycleRecord>> {
    Benchmark::new(config)?.run_all()
}

struct Run<'a> {
    bench: &'a Benchmark,
    strategy: Strategy,
    repeat: u32,
    seed: u64,
    state: AnnotationState,
}

impl<'a> Run<'a> {
    fn new(bench: &'a Benchmark, strategy: Strategy, repeat: u32) -> Self {
        Self { bench, strategy, repeat, seed: bench.repeat_seed(repeat), state: AnnotationState::new() }
    }

    fn pool(&self) -> &'a [ImageRecord] {
        &self.bench.dataset.train
    }

    fn execute(mut self) -> Result<Vec<CycleRecord>> {
        let cfg = &self.bench.config;
        let mut records = Vec::new();
        let mut model: Option<ToyModel> = None;
        for cycle in 1..=cfg.max_cycles {
            let started = Instant::now();
            let (selected, sigma, weights) = match &model {
                None => (self.initial_selection()?, None, None),
                Some(m) => {
                    let (sel, s, w) = self.select(m, cycle)?;
                    (sel, Some(s), Some(w))
                }
            };
            let oracle = GroundTruthOracle::new(self.pool());
            for &region in &selected {
                self.state.annotate(region, &oracle)?;
            }
            audit(&self.state, self.pool())?;

            let set = TrainingSet::from_annotations(&self.state, self.pool())?;
            let init = derive_seed(self.seed, &[tag::MODEL_INIT]);
            let (trained, _) = ToyModel::fit(&set, self.bench.dataset.num_classes, &cfg.model, init)?;
            let report = evaluate(&trained, &self.bench.dataset.test, self.bench.dataset.mode)?;
            let metric = headline(&report, self.bench.dataset.mode);
            model = Some(trained);

            let mut per_class_annotated = vec![0u64; self.bench.dataset.num_classes];
            for &l in &set.labels {
                per_class_annotated[usize::from(l)] += 1;
            }
            let annotated_units = set.len() as u64;
            let target_reached = metric >= self.bench.target();
            records.push(CycleRecord {
                strategy: self.strategy,
                repeat: self.repeat,
                cycle,
                annotated_units,
                annotated_fraction: annotated_units as f64 / self.bench.dataset.pool_units() as f64,
                metric,
                per_class_metric: report.per_class,
                per_class_annotated,
                sigma,
                weights,
                selected,
                target_reached,
                wall_time: started.elapsed(),
            });
            if cfg.stop_at_target && target_reached {
                break;
            }
        }
        Ok(records)
    }

    fn ids(&self) -> Vec<ImageId> {
        self.pool().iter().map(ImageRecord::id).collect()
    }

    /// Random images and random regions; depends only on the repeat seed.
    fn initial_selection(&mut self) -> Result<Vec<Region>> {
        let cfg = &self.bench.config;
        let mut rng = purpose_stream(self.seed, 1, tag::IMAGE_SELECTION);
        let images = rand_select_images(&self.ids(), &mut self.state, cfg.n_image, &mut rng)?;
        self.per_image(&images, |id, shape, existing| {
            let mut rng = image_stream(self.seed, 1, id.0);
            Ok(rand_select_regions(id, shape, cfg.region_size, cfg.n_region, existing, 1, &mut rng))
        })
    }

    /// Runs `pick` for every image in parallel, concatenating in order.
    fn per_image<F>(&self, images: &[ImageId], pick: F) -> Result<Vec<Region>>
    where
        F: Fn(ImageId, &Shape, &[Region]) -> Result<Vec<Region>> + Sync,
    {
        let picks: Vec<Vec<Region>> = images
            .par_iter()
            .map(|&id| {
                let existing: Vec<Region> = self.state.regions_of(id).copied().collect();
                pick(id, self.pool()[id.0 as usize].shape(), &existing)
            })
            .collect::<Result<_>>()?;
        Ok(picks.into_iter().flatten().collect())
    }

    fn select(&mut self, model: &ToyModel, cycle: u32) -> Result<(Vec<Region>, Vec<f64>, Vec<f64>)> {
        let cfg = &self.bench.config;
        let pool = self.pool();
        let preds: Vec<PredictionField> = pool.par_iter().map(|r| model.predict(r)).collect::<Result<_>>()?;
        let conf = class_confidence(&preds, cfg.tau)?;
        let mut weights = SamplingWeights::from_confidence(&conf);
        if let Some(mask) = &cfg.class_weight_mask {
            weights = weights.with_mask(mask)?;
        }
        let needs_uncertainty =
            self.strategy.image == ImageSelector::Uncert || self.strategy.region != RegionSelector::Rand
                && self.strategy.region != RegionSelector::Decomp;
        let umaps: Vec<Vec<f64>> = if needs_uncertainty {
            preds.par_iter().map(|p| uncertainty_map(p, cfg.uncertainty)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };

        let images = match self.strategy.image {
            ImageSelector::Rand => {
                let mut rng = purpose_stream(self.seed, cycle, tag::IMAGE_SELECTION);
                rand_select_images(&self.ids(), &mut self.state, cfg.n_image, &mut rng)?
            }
            ImageSelector::Uncert => {
                let scores: Vec<ImageScore> = umaps
                    .iter()
                    .zip(pool)
                    .map(|(u, r)| ImageScore { image_id: r.id(), score: mean_uncertainty(u) })
                    .collect();
                uncert_select_images(&scores, &mut self.state, cfg.n_image)?
            }
            ImageSelector::Decomp => {
                let scores: Vec<ImageScore> = preds
                    .par_iter()
                    .zip(pool)
                    .map(|(p, r)| {
                        let cap = cfg.cap.unwrap_or_else(|| FrequencyCap::default_for(r.shape())).resolve(r.shape());
                        image_score(r.id(), p, &weights, cap)
                    })
                    .collect();
                select_images(&scores, &mut self.state, cfg.n_image)?
            }
        };

        let side = cfg.region_size;
        let n = cfg.n_region;
        let seed = self.seed;
        let selected = match self.strategy.region {
            RegionSelector::Rand => self.per_image(&images, |id, shape, existing| {
                let mut rng = image_stream(seed, cycle, id.0);
                Ok(rand_select_regions(id, shape, side, n, existing, cycle, &mut rng))
            })?,
            RegionSelector::Uncert => self.per_image(&images, |id, shape, existing| {
                let umap = &umaps[id.0 as usize];
                Ok(uncert_select_regions(id, shape, umap, side, n, existing, cycle).into_iter().map(|s| s.region).collect())
            })?,
            RegionSelector::Decomp => self.per_image(&images, |id, _, existing| {
                let mut rng = image_stream(seed, cycle, id.0);
                Ok(decomp_select(id, &preds[id.0 as usize], &weights, n, side, existing, cycle, &mut rng))
            })?,
            RegionSelector::DiversCluster | RegionSelector::DiversCoreset | RegionSelector::Badge => {
                let members: Vec<PoolImage<'_>> = images
                    .iter()
                    .map(|&id| PoolImage { image_id: id, pred: &preds[id.0 as usize], umap: &umaps[id.0 as usize] })
                    .collect();
                let candidates = divers_candidate_pool(&members, side, cfg.divers_factor, n, &self.state, cycle)?;
                let budget = (cfg.n_image * n).min(candidates.len());
                let mut rng = purpose_stream(seed, cycle, tag::POOL_SELECTION);
                match self.strategy.region {
                    RegionSelector::DiversCluster => divers_cluster_select(&candidates, budget, &mut rng)?,
                    RegionSelector::DiversCoreset => divers_coreset_select(&candidates, budget),
                    _ => badge_select(&candidates, budget, &mut rng),
                }
            }
        };
        Ok((selected, conf.sigma, weights.as_slice().to_vec()))
    }
}
