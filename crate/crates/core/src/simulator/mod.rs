//! Synthetic data, a linear softmax model, a ground-truth annotator and the
//! loop that ties them to the selection strategies.

mod dataset;
mod experiment;
mod model;

pub use dataset::{generate_dataset, Dataset, DatasetMode, SyntheticDatasetSpec};
pub use experiment::{
    audit, cycles_to_target, evaluate, full_annotation_reference, headline, run_experiment, Benchmark, CycleRecord,
};
pub use model::{ModelParams, ToyModel, TrainReport, TrainingSet};
