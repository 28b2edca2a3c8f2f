//! Counterfactual explanations for differentiable binary classifiers on mixed
//! tabular data.
//!
//! The crate is organized around four pieces:
//!
//! * [`tabular`]: schemas, dataset loading, per-feature statistics and the
//!   encoding between human-unit instances and normalized model inputs.
//! * [`model`]: a two-hidden-layer MLP with analytic input gradients and a
//!   small seeded trainer used to produce fixture models.
//! * [`engine`]: counterfactual generation for a single instance (constrained
//!   gradient descent, top-k sparsification and precision-aware refinement).
//! * [`subgroup`]: range-defined subgroups, rule-support counterfactuals that
//!   relax one feature at a time, and the impurity/flow analytics built on
//!   top of them.
//!
//! The book under `book/` walks through each of these with runnable snippets.

pub mod bench;
pub mod engine;
mod error;
pub mod model;
pub mod pool;
pub mod subgroup;
pub mod tabular;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Binary class label, also used for model predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Negative,
    Positive,
}

impl Class {
    /// Decision threshold on the model probability. A probability exactly at
    /// the threshold is positive.
    pub const THRESHOLD: f64 = 0.5;

    pub fn from_probability(p: f64) -> Self {
        if p >= Self::THRESHOLD {
            Class::Positive
        } else {
            Class::Negative
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Class::Negative => Class::Positive,
            Class::Positive => Class::Negative,
        }
    }

    /// The `±1` encoding used by the ranking loss.
    pub fn sign(self) -> f64 {
        match self {
            Class::Negative => -1.0,
            Class::Positive => 1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Class::Negative => 0,
            Class::Positive => 1,
        }
    }
}

impl std::fmt::Display for Class {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Class::Negative => f.write_str("negative"),
            Class::Positive => f.write_str("positive"),
        }
    }
}

/// Mixes a base seed with a stream index (splitmix64 finalizer), so that work
/// items seeded this way do not depend on scheduling or batch layout.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/generation.md")]
    mod generation {}
    #[doc = include_str!("../../../book/src/refinement.md")]
    mod refinement {}
    #[doc = include_str!("../../../book/src/subgroups.md")]
    mod subgroups {}
    #[doc = include_str!("../../../book/src/impurity.md")]
    mod impurity {}
    #[doc = include_str!("../../../book/src/serving.md")]
    mod serving {}
}
