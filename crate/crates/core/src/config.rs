//! Experiment configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{UncertaintyMeasure, DEFAULT_DIVERS_FACTOR};
use crate::decomp::{FrequencyCap, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::simulator::{ModelParams, SyntheticDatasetSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ImageSelector {
    Rand,
    Uncert,
    Decomp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegionSelector {
    Rand,
    Uncert,
    DiversCluster,
    DiversCoreset,
    Badge,
    Decomp,
}

impl ImageSelector {
    fn name(self) -> &'static str {
        match self {
            ImageSelector::Rand => "rand",
            ImageSelector::Uncert => "uncert",
            ImageSelector::Decomp => "decomp",
        }
    }
}

impl RegionSelector {
    fn name(self) -> &'static str {
        match self {
            RegionSelector::Rand => "rand",
            RegionSelector::Uncert => "uncert",
            RegionSelector::DiversCluster => "divers_cluster",
            RegionSelector::DiversCoreset => "divers_coreset",
            RegionSelector::Badge => "badge",
            RegionSelector::Decomp => "decomp",
        }
    }
}

/// An image selector paired with a region selector. The named strategies
/// (`rand`, `uncert`, `divers_cluster`, `divers_coreset`, `badge`,
/// `decomp`) are fixed pairs; any other pair is written `image+region`,
/// e.g. `uncert+decomp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Strategy {
    pub image: ImageSelector,
    pub region: RegionSelector,
}

impl Strategy {
    pub const RAND: Strategy = Strategy { image: ImageSelector::Rand, region: RegionSelector::Rand };
    pub const UNCERT: Strategy = Strategy { image: ImageSelector::Uncert, region: RegionSelector::Uncert };
    pub const DIVERS_CLUSTER: Strategy = Strategy { image: ImageSelector::Uncert, region: RegionSelector::DiversCluster };
    pub const DIVERS_CORESET: Strategy = Strategy { image: ImageSelector::Uncert, region: RegionSelector::DiversCoreset };
    pub const BADGE: Strategy = Strategy { image: ImageSelector::Uncert, region: RegionSelector::Badge };
    pub const DECOMP: Strategy = Strategy { image: ImageSelector::Decomp, region: RegionSelector::Decomp };

    const NAMED: [(&'static str, Strategy); 6] = [
        ("rand", Strategy::RAND),
        ("uncert", Strategy::UNCERT),
        ("divers_cluster", Strategy::DIVERS_CLUSTER),
        ("divers_coreset", Strategy::DIVERS_CORESET),
        ("badge", Strategy::BADGE),
        ("decomp", Strategy::DECOMP),
    ];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match Strategy::NAMED.iter().find(|(_, s)| s == self) {
            Some((name, _)) => f.write_str(name),
            None => write!(f, "{}+{}", self.image.name(), self.region.name()),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::Config(format!("unknown strategy `{s}`"));
        if let Some((_, named)) = Strategy::NAMED.iter().find(|(n, _)| *n == s) {
            return Ok(*named);
        }
        let (img, reg) = s.split_once('+').ok_or_else(unknown)?;
        let image = [ImageSelector::Rand, ImageSelector::Uncert, ImageSelector::Decomp]
            .into_iter()
            .find(|i| i.name() == img)
            .ok_or_else(unknown)?;
        let region = [
            RegionSelector::Rand,
            RegionSelector::Uncert,
            RegionSelector::DiversCluster,
            RegionSelector::DiversCoreset,
            RegionSelector::Badge,
            RegionSelector::Decomp,
        ]
        .into_iter()
        .find(|r| r.name() == reg)
        .ok_or_else(unknown)?;
        Ok(Strategy { image, region })
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Synthetic dataset, ignored when `dataset_path` is set.
    pub dataset: SyntheticDatasetSpec,
    /// Directory written by `decomp gen`.
    pub dataset_path: Option<PathBuf>,
    pub strategies: Vec<Strategy>,
    pub n_image: usize,
    pub n_region: usize,
    /// Side length `l` of square regions.
    pub region_size: usize,
    pub tau: f64,
    /// Defaults to 10% of the image size, or 1 ROI.
    pub cap: Option<FrequencyCap>,
    pub divers_factor: usize,
    pub uncertainty: UncertaintyMeasure,
    pub max_cycles: u32,
    pub target_fraction: f64,
    /// Stop a run at the first cycle whose metric reaches the target.
    pub stop_at_target: bool,
    pub seed: u64,
    pub repeats: u32,
    /// Optional per-class multipliers applied to the sampling weights.
    pub class_weight_mask: Option<Vec<f64>>,
    pub model: ModelParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: SyntheticDatasetSpec::default(),
            dataset_path: None,
            strategies: vec![Strategy::RAND, Strategy::UNCERT, Strategy::DECOMP],
            n_image: 4,
            n_region: 3,
            region_size: 16,
            tau: DEFAULT_TAU,
            cap: None,
            divers_factor: DEFAULT_DIVERS_FACTOR,
            uncertainty: UncertaintyMeasure::Entropy,
            max_cycles: 10,
            target_fraction: 0.95,
            stop_at_target: false,
            seed: 0,
            repeats: 1,
            class_weight_mask: None,
            model: ModelParams::default(),
        }
    }
}

impl ExperimentConfig {
    /// Checks everything that does not depend on the loaded dataset.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.strategies.is_empty() {
            return bad("at least one strategy is required");
        }
        if self.n_image == 0 || self.n_region == 0 || self.region_size == 0 {
            return bad("n_image, n_region and region_size must be >= 1");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return bad("target_fraction must lie in (0, 1]");
        }
        if self.divers_factor == 0 {
            return bad("divers_factor must be >= 1");
        }
        if self.max_cycles == 0 || self.repeats == 0 {
            return bad("max_cycles and repeats must be >= 1");
        }
        match self.cap {
            Some(FrequencyCap::Fraction(f)) if !(f > 0.0 && f <= 1.0) => return bad("cap fraction must lie in (0, 1]"),
            Some(FrequencyCap::Units(u)) if !(u > 0.0 && u.is_finite()) => return bad("cap units must be > 0"),
            _ => {}
        }
        if let Some(mask) = &self.class_weight_mask {
            if mask.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
                return bad("class_weight_mask entries must be finite and >= 0");
            }
        }
        self.model.validate()?;
        if self.dataset_path.is_none() {
            self.dataset.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for name in ["rand", "uncert", "divers_cluster", "divers_coreset", "badge", "decomp", "uncert+decomp", "decomp+rand"] {
            let s: Strategy = name.parse().unwrap();
            assert_eq!(s.to_string(), name);
        }
        assert_eq!("uncert+uncert".parse::<Strategy>().unwrap(), Strategy::UNCERT);
        assert!("decomp+".parse::<Strategy>().is_err());
        assert!("best".parse::<Strategy>().is_err());
    }

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range_values() {
        let cases: Vec<fn(&mut ExperimentConfig)> = vec![
            |c| c.tau = 1.0,
            |c| c.tau = 0.0,
            |c| c.target_fraction = 1.5,
            |c| c.n_region = 0,
            |c| c.strategies.clear(),
            |c| c.cap = Some(FrequencyCap::Fraction(0.0)),
            |c| c.class_weight_mask = Some(vec![-1.0]),
        ];
        for mutate in cases {
            let mut c = ExperimentConfig::default();
            mutate(&mut c);
            assert!(c.validate().is_err());
        }
    }
}
