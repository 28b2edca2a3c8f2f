//! Counterfactual generation for a single instance.
//!
//! [`generate_cfs`] runs three procedures in sequence:
//!
//! 1. gradient descent on `L_valid + λ1 L_dist + λ2 L_div` in the encoded
//!    space, with locked features masked and a clip to the constraint
//!    domains every `clip_interval` iterations;
//! 2. per-candidate selection of the `max_changed_features` most changed
//!    features and a masked re-run;
//! 3. projection onto each feature's precision grid followed by unit-step
//!    refinement along the loss gradient until the candidate is valid.

mod config;
mod constraints;
mod loss;
mod search;

use serde::{Deserialize, Serialize};

pub use config::CfConfig;
pub use constraints::{CfConstraints, Domain, RangeSet, Resolved};
pub use loss::{distance, distance_encoded, diversity_loss, mean_pairwise_distance, validity_loss};
pub use search::{select_top_features, CfSearch, FeatureMask, RawCandidates, SparseCandidates, INIT_NOISE};

use crate::model::{Model, Prediction};
use crate::tabular::{Instance, Schema, Value};
use crate::{Class, Result};

/// One feature that differs between a candidate and its origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Change {
    pub feature: String,
    pub from: Value,
    pub to: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfCandidate {
    pub instance: Instance,
    /// Whether the model assigns the target class to `instance`.
    pub valid: bool,
    pub probability: f64,
    pub changes: Vec<Change>,
    pub distance_to_origin: f64,
    pub posthoc_steps: usize,
}

impl CfCandidate {
    pub fn changed_features(&self) -> impl Iterator<Item = &str> {
        self.changes.iter().map(|c| c.feature.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDiagnostics {
    pub validity_loss: f64,
    pub distance: f64,
    pub selected_features: Vec<String>,
    pub posthoc_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub raw_iterations: usize,
    pub sparse_iterations: usize,
    /// Diversity term of the final candidate set (hard overlap metric).
    pub diversity_loss: f64,
    pub candidates: Vec<CandidateDiagnostics>,
}

/// All candidates found for one instance, valid and invalid alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfSet {
    pub features: Vec<String>,
    pub origin: Instance,
    pub origin_prediction: Prediction,
    pub target_class: Class,
    pub candidates: Vec<CfCandidate>,
    /// The configuration with every default filled in.
    pub config: CfConfig,
    pub constraints: CfConstraints,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<String>,
}

impl CfSet {
    pub fn valid(&self) -> impl Iterator<Item = &CfCandidate> {
        self.candidates.iter().filter(|c| c.valid)
    }

    pub fn valid_count(&self) -> usize {
        self.valid().count()
    }
}

/// Generates `config.k_cfs` counterfactuals for `origin`.
///
/// ```
/// use cfprobe::engine::{generate_cfs, CfConfig, CfConstraints};
/// use cfprobe::model::Model;
/// use cfprobe::tabular::{FeatureSpec, Instance, LabelSpec, Schema, Value};
///
/// let schema = Schema::new(
///     "toy",
///     LabelSpec { column: "y".into(), positive: "yes".into(), negative: "no".into() },
///     vec![FeatureSpec::continuous("a", 0.0, 10.0, 1.0)],
/// )
/// .unwrap();
/// let model = Model::zeros(schema.width(), [4, 4], schema.fingerprint());
/// let x = Instance::new(vec![Value::Number(3.0)]);
/// let set = generate_cfs(&schema, &model, &x, &CfConstraints::default(), &CfConfig { k_cfs: 2, ..Default::default() })
///     .unwrap();
/// assert_eq!(set.candidates.len(), 2);
/// ```
pub fn generate_cfs(
    schema: &Schema,
    model: &Model,
    origin: &Instance,
    constraints: &CfConstraints,
    config: &CfConfig,
) -> Result<CfSet> {
    Ok(CfSearch::new(schema, model, origin, constraints, config)?.run())
}
