use serde::{Deserialize, Serialize};

use crate::{Class, Error, Result};

/// Knobs for counterfactual generation.
///
/// `k_cfs` is the number of candidates returned; `max_changed_features` is
/// the sparsity budget per candidate. They are unrelated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfConfig {
    pub k_cfs: usize,
    /// `None` leaves every mutable feature eligible.
    pub max_changed_features: Option<usize>,
    pub lambda_dist: f64,
    pub lambda_div: f64,
    /// `None` targets the opposite of the instance's current prediction.
    pub target_class: Option<Class>,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub clip_interval: usize,
    /// Step scale of the post-hoc refinement; `None` uses the learning rate.
    pub posthoc_epsilon: Option<f64>,
    /// `None` uses the number of features.
    pub posthoc_max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for CfConfig {
    fn default() -> Self {
        CfConfig {
            k_cfs: 5,
            max_changed_features: None,
            lambda_dist: 0.5,
            lambda_div: 1.0,
            target_class: None,
            learning_rate: 0.05,
            max_iters: 500,
            clip_interval: 50,
            posthoc_epsilon: None,
            posthoc_max_steps: None,
            seed: 0,
        }
    }
}

impl CfConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.k_cfs == 0 {
            return fail("k_cfs must be positive");
        }
        if self.max_changed_features == Some(0) {
            return fail("max_changed_features must be positive");
        }
        if !(self.lambda_dist >= 0.0 && self.lambda_dist.is_finite()) {
            return fail("lambda_dist must be a non-negative number");
        }
        if !(self.lambda_div >= 0.0 && self.lambda_div.is_finite()) {
            return fail("lambda_div must be a non-negative number");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.max_iters == 0 {
            return fail("max_iters must be positive");
        }
        if self.clip_interval == 0 {
            return fail("clip_interval must be positive");
        }
        if let Some(eps) = self.posthoc_epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return fail("posthoc_epsilon must be positive");
            }
        }
        if self.posthoc_max_steps == Some(0) {
            return fail("posthoc_max_steps must be positive");
        }
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        self.posthoc_epsilon.unwrap_or(self.learning_rate)
    }

    /// Copy with every `None` default filled in for a schema of
    /// `n_features` features and an instance predicted as `predicted`.
    pub fn resolved(&self, n_features: usize, predicted: Class) -> CfConfig {
        CfConfig {
            max_changed_features: Some(self.max_changed_features.unwrap_or(n_features)),
            target_class: Some(self.target_class.unwrap_or(predicted.flip())),
            posthoc_epsilon: Some(self.epsilon()),
            posthoc_max_steps: Some(self.posthoc_max_steps.unwrap_or(n_features)),
            ..self.clone()
        }
    }
}
