//! Comparison strategies: random, uncertainty, uncertainty-filtered
//! diversity (clustering, core-set) and gradient-embedding (BADGE) sampling.

mod badge;
mod divers;
mod kmeans;
mod random;
mod uncertainty;

pub use badge::{badge_select, gradient_embedding};
pub use divers::{
    divers_candidate_pool, divers_cluster_select, divers_coreset_select, region_feature, Candidate,
    PoolImage, RegionFeature, DEFAULT_DIVERS_FACTOR,
};
pub use kmeans::{kmeans, KMeansResult, MAX_ITERATIONS, SHIFT_TOLERANCE};
pub use random::{rand_select_images, rand_select_regions};
pub use uncertainty::{
    entropy_map, least_confidence_map, mean_uncertainty, uncert_select_images, uncert_select_regions,
    uncertainty_map, ScoredRegion, UncertaintyMeasure,
};
