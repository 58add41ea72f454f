//! Every numeric threshold used by the pipeline lives in [`PipelineConfig`].

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::candidates::{CandidateConfig, EligibilityConfig};
use crate::classify::ClassifyQcConfig;
use crate::contains::{ContainsQcConfig, GridConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub grid_size: usize,
    pub min_controls: usize,
    pub annotators: usize,
    pub worker_control_rate: f64,
    pub worker_bad_share: f64,
    pub task_control_rate: f64,
    pub sf_high: f64,
    pub wn_far: u32,
    pub min_cands: usize,
    pub trunc: usize,
    pub in_sf_floor: f64,
    pub seen_floor: u32,
    pub dominance: f64,
    pub classify_flag_share: f64,
    pub k_min: usize,
    pub sf_bins: usize,
    pub bootstrap_replicates: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            grid_size: 48,
            min_controls: 5,
            annotators: 9,
            worker_control_rate: 0.20,
            worker_bad_share: 0.50,
            task_control_rate: 0.40,
            sf_high: 0.5,
            wn_far: 5,
            min_cands: 5,
            trunc: 6,
            in_sf_floor: 0.125,
            seen_floor: 6,
            dominance: 2.0,
            classify_flag_share: 1.0 / 3.0,
            k_min: 5,
            sf_bins: 10,
            bootstrap_replicates: 1000,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("worker_control_rate", self.worker_control_rate),
            ("worker_bad_share", self.worker_bad_share),
            ("task_control_rate", self.task_control_rate),
            ("sf_high", self.sf_high),
            ("in_sf_floor", self.in_sf_floor),
            ("classify_flag_share", self.classify_flag_share),
        ];
        for (name, v) in rates {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        let counts = [
            ("grid_size", self.grid_size),
            ("min_controls", self.min_controls),
            ("annotators", self.annotators),
            ("min_cands", self.min_cands),
            ("trunc", self.trunc),
            ("k_min", self.k_min),
            ("sf_bins", self.sf_bins),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.wn_far == 0 || self.seen_floor == 0 {
            return Err(Error::Config("wn_far and seen_floor must be positive".into()));
        }
        if self.min_controls >= self.grid_size {
            return Err(Error::Config(format!(
                "min_controls ({}) must be below grid_size ({})",
                self.min_controls, self.grid_size
            )));
        }
        if !(self.dominance.is_finite() && self.dominance > 0.0) {
            return Err(Error::Config("dominance must be a positive number".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn grid(&self) -> GridConfig {
        GridConfig {
            grid_size: self.grid_size,
            min_controls: self.min_controls,
            annotators_per_grid: self.annotators,
            seed: self.seed,
        }
    }

    pub fn contains_qc(&self) -> ContainsQcConfig {
        ContainsQcConfig {
            worker_control_rate: self.worker_control_rate,
            worker_bad_share: self.worker_bad_share,
            task_control_rate: self.task_control_rate,
        }
    }

    pub fn candidates(&self) -> CandidateConfig {
        CandidateConfig {
            sf_high: self.sf_high,
            wn_far: self.wn_far,
            min_cands: self.min_cands,
            trunc: self.trunc,
            in_sf_floor: self.in_sf_floor,
        }
    }

    pub fn eligibility(&self) -> EligibilityConfig {
        EligibilityConfig {
            seen_floor: self.seen_floor,
            dominance: self.dominance,
        }
    }

    pub fn classify_qc(&self) -> ClassifyQcConfig {
        ClassifyQcConfig {
            worker_flag_share: self.classify_flag_share,
        }
    }
}
