//! Batch generation over many dataset rows with quality metrics.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{generate_cfs, mean_pairwise_distance, CfConfig, CfConstraints, CfSet};
use crate::model::Model;
use crate::tabular::{Dataset, Schema};
use crate::{derive_seed, Result};

/// Aggregate quality of a batch of counterfactual sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub instances: usize,
    pub candidates: usize,
    /// Share of instances with at least one valid candidate.
    pub instance_validity: f64,
    /// Share of valid candidates.
    pub candidate_validity: f64,
    /// Mean distance to the origin over valid candidates.
    pub proximity: f64,
    /// Mean pairwise distance among the valid candidates of a set, averaged
    /// over sets with at least two of them.
    pub diversity: f64,
    /// Mean number of changed features over valid candidates.
    pub sparsity: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl Metrics {
    pub fn from_sets(schema: &Schema, sets: &[CfSet]) -> Self {
        let valid: Vec<_> = sets.iter().flat_map(|s| s.valid()).collect();
        let candidates: usize = sets.iter().map(|s| s.candidates.len()).sum();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Metrics {
            instances: sets.len(),
            candidates,
            instance_validity: ratio(sets.iter().filter(|s| s.valid_count() > 0).count(), sets.len()),
            candidate_validity: ratio(valid.len(), candidates),
            proximity: mean(valid.iter().map(|c| c.distance_to_origin)),
            diversity: mean(sets.iter().filter(|s| s.valid_count() >= 2).map(|s| {
                let instances: Vec<_> = s.valid().map(|c| &c.instance).collect();
                mean_pairwise_distance(schema, &instances)
            })),
            sparsity: mean(valid.iter().map(|c| c.changes.len() as f64)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dataset: String,
    pub rows: usize,
    pub threads: usize,
    pub elapsed_secs: f64,
    pub metrics: Metrics,
}

/// `size` distinct row indices drawn with a seeded shuffle, in sorted order;
/// every row when `size` is `None` or at least the row count.
pub fn sample_rows(n: usize, size: Option<usize>, seed: u64) -> Vec<usize> {
    let mut rows: Vec<usize> = (0..n).collect();
    if let Some(size) = size.filter(|&s| s < n) {
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        rows.truncate(size);
        rows.sort_unstable();
    }
    rows
}

/// Generates counterfactuals for each of `rows` in parallel. Row `r` uses
/// the seed `derive_seed(config.seed, r)`, so results do not depend on the
/// thread count.
pub fn run_bench(
    dataset: &Dataset,
    model: &Model,
    rows: &[usize],
    constraints: &CfConstraints,
    config: &CfConfig,
) -> Result<(BenchReport, Vec<CfSet>)> {
    config.validate()?;
    model.check_schema(&dataset.schema)?;
    let start = Instant::now();
    let sets: Vec<CfSet> = rows
        .par_iter()
        .map(|&r| {
            let cfg = CfConfig { seed: derive_seed(config.seed, r as u64), ..config.clone() };
            generate_cfs(&dataset.schema, model, &dataset.rows[r], constraints, &cfg)
        })
        .collect::<Result<_>>()?;
    let elapsed_secs = start.elapsed().as_secs_f64();
    let report = BenchReport {
        dataset: dataset.name.clone(),
        rows: rows.len(),
        threads: rayon::current_num_threads(),
        elapsed_secs,
        metrics: Metrics::from_sets(&dataset.schema, &sets),
    };
    Ok((report, sets))
}
