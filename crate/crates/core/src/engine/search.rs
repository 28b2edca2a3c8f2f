//! The three generation procedures: constrained gradient descent on the
//! relaxed objective, top-k feature selection followed by a masked re-run,
//! and precision projection with unit-step refinement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::CfConfig;
use super::constraints::{CfConstraints, Domain, Resolved};
use super::loss::{distance, validity_loss, Objective};
use super::{CandidateDiagnostics, CfCandidate, CfSet, Change, Diagnostics};
use crate::model::{Model, Prediction};
use crate::tabular::{grid_point, FeatureKind, FeatureSpec, Instance, Schema, Value};
use crate::{Class, Error, Result};

/// Amplitude of the uniform noise added to each starting candidate, in
/// scaled units.
pub const INIT_NOISE: f64 = 0.05;

/// Per-candidate, per-feature optimization mask.
pub type FeatureMask = Vec<bool>;

/// Candidates in encoded form after one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCandidates {
    pub candidates: Vec<Vec<f64>>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCandidates {
    pub candidates: Vec<Vec<f64>>,
    pub masks: Vec<FeatureMask>,
    /// Iterations of the masked re-run; 0 when every mask kept all mutable
    /// features and the raw result was reused.
    pub iterations: usize,
}

/// A counterfactual search for one origin instance.
///
/// Construction resolves constraints and defaults; each stage can then be
/// run on its own or through [`CfSearch::run`].
pub struct CfSearch<'a> {
    schema: &'a Schema,
    model: &'a Model,
    origin: &'a Instance,
    origin_encoded: Vec<f64>,
    prediction: Prediction,
    constraints: CfConstraints,
    resolved: Resolved,
    config: CfConfig,
    target: Class,
    coord_feature: Vec<usize>,
    forced: Vec<bool>,
}

impl<'a> CfSearch<'a> {
    pub fn new(
        schema: &'a Schema,
        model: &'a Model,
        origin: &'a Instance,
        constraints: &CfConstraints,
        config: &CfConfig,
    ) -> Result<Self> {
        config.validate()?;
        if model.input_width() != schema.width() {
            return Err(Error::ShapeMismatch(format!(
                "model input width {} does not match encoded width {}",
                model.input_width(),
                schema.width()
            )));
        }
        let resolved = constraints.resolve(schema, origin)?;
        Self::with_resolved(schema, model, origin, constraints.clone(), resolved, config)
    }

    /// Builds a search from already resolved constraints (used for
    /// subgroup-level generation, where domains come from a subgroup).
    pub fn with_resolved(
        schema: &'a Schema,
        model: &'a Model,
        origin: &'a Instance,
        constraints: CfConstraints,
        resolved: Resolved,
        config: &CfConfig,
    ) -> Result<Self> {
        config.validate()?;
        let origin_encoded = schema.encode(origin)?;
        let prediction = model.predict(&origin_encoded)?;
        let config = config.resolved(schema.len(), prediction.class);
        let target = config.target_class.expect("resolved");
        let mut coord_feature = vec![0; schema.width()];
        for i in 0..schema.len() {
            for d in schema.slot(i).range() {
                coord_feature[d] = i;
            }
        }
        let forced: Vec<bool> =
            (0..schema.len()).map(|i| !resolved.domains[i].contains(origin.get(i), schema.feature(i))).collect();
        let n_forced = forced.iter().filter(|&&f| f).count();
        let budget = config.max_changed_features.expect("resolved");
        if n_forced > budget {
            return Err(Error::InvalidConstraint(format!(
                "{n_forced} features must leave their current value to meet the ranges, \
                 but max_changed_features is {budget}"
            )));
        }
        Ok(CfSearch {
            schema,
            model,
            origin,
            origin_encoded,
            prediction,
            constraints,
            resolved,
            config,
            target,
            coord_feature,
            forced,
        })
    }

    pub fn config(&self) -> &CfConfig {
        &self.config
    }

    pub fn target(&self) -> Class {
        self.target
    }

    pub fn resolved(&self) -> &Resolved {
        &self.resolved
    }

    pub fn origin_encoded(&self) -> &[f64] {
        &self.origin_encoded
    }

    fn budget(&self) -> usize {
        self.config.max_changed_features.expect("resolved")
    }

    /// Mask with every mutable feature enabled.
    pub fn full_mask(&self) -> FeatureMask {
        self.resolved.mutable.clone()
    }

    fn objective(&self, lambda_div: f64) -> Objective<'_> {
        Objective::new(self.schema, self.model, &self.origin_encoded, self.target, self.config.lambda_dist, lambda_div)
    }

    /// Projects encoded coordinates of enabled features back into their
    /// domains: continuous values are clamped, categorical blocks projected
    /// onto the probability simplex over the allowed categories.
    fn clip(&self, c: &mut [f64], mask: &FeatureMask) {
        for (i, spec) in self.schema.features().iter().enumerate() {
            if !mask[i] {
                continue;
            }
            let slot = self.schema.slot(i);
            match (&spec.kind, &self.resolved.domains[i]) {
                (FeatureKind::Continuous { min, max, .. }, Domain::Interval { lo, hi }) => {
                    let range = max - min;
                    let (lo_s, hi_s) = ((lo - min) / range, (hi - min) / range);
                    c[slot.offset] = c[slot.offset].clamp(lo_s, hi_s);
                }
                (FeatureKind::Categorical { .. }, Domain::Categories(allowed)) => {
                    project_to_simplex(&mut c[slot.range()], allowed);
                }
                _ => unreachable!("domains follow the schema"),
            }
        }
    }

    /// Runs gradient descent from seeded starting points with the given
    /// per-candidate feature masks. Disabled features stay exactly at the
    /// origin. The continuous distance term enters as a proximal step after
    /// each gradient step, so coordinates settle on the origin instead of
    /// oscillating around it.
    fn optimize(&self, masks: &[FeatureMask]) -> RawCandidates {
        let k = self.config.k_cfs;
        let width = self.schema.width();
        let coord_masks: Vec<Vec<bool>> =
            masks.iter().map(|m| self.coord_feature.iter().map(|&f| m[f]).collect()).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut candidates: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let mut c = self.origin_encoded.clone();
                for (d, v) in c.iter_mut().enumerate() {
                    let noise = rng.random_range(-INIT_NOISE..INIT_NOISE);
                    if coord_masks[i][d] {
                        *v += noise;
                    }
                }
                c
            })
            .collect();
        for (c, m) in candidates.iter_mut().zip(masks) {
            self.clip(c, m);
        }

        let objective = self.objective(self.config.lambda_div).proximal();
        let mut grads = vec![vec![0.0; width]; k];
        let lr = self.config.learning_rate;
        let interval = self.config.clip_interval;
        for t in 1..=self.config.max_iters {
            objective.gradients(&candidates, &mut grads);
            for ((c, g), cm) in candidates.iter_mut().zip(&grads).zip(&coord_masks) {
                for d in 0..width {
                    if cm[d] {
                        c[d] -= lr * g[d];
                    }
                }
                objective.shrink(c, cm, lr);
            }
            if t % interval == 0 {
                for (c, m) in candidates.iter_mut().zip(masks) {
                    self.clip(c, m);
                }
            }
        }
        if self.config.max_iters % interval != 0 {
            for (c, m) in candidates.iter_mut().zip(masks) {
                self.clip(c, m);
            }
        }
        RawCandidates { candidates, iterations: self.config.max_iters }
    }

    /// First procedure: `k_cfs` candidates optimizing validity, proximity and
    /// diversity over every mutable feature.
    pub fn generate_raw(&self) -> RawCandidates {
        let masks = vec![self.full_mask(); self.config.k_cfs];
        self.optimize(&masks)
    }

    /// Normalized change of each feature in an encoded candidate:
    /// `|Δ_scaled| / (1 + MAD)` for continuous features and `1 - s[origin]`
    /// for categorical blocks. Locked features score 0.
    pub fn change_scores(&self, candidate: &[f64]) -> Vec<f64> {
        self.schema
            .features()
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                if !self.resolved.mutable[i] {
                    return 0.0;
                }
                let slot = self.schema.slot(i);
                match spec.kind {
                    FeatureKind::Continuous { mad, .. } => {
                        (candidate[slot.offset] - self.origin_encoded[slot.offset]).abs() / (1.0 + mad)
                    }
                    FeatureKind::Categorical { .. } => {
                        let block = &candidate[slot.range()];
                        let origin_k = crate::tabular::encoding_argmax(&self.origin_encoded[slot.range()]);
                        let total: f64 = block.iter().sum();
                        let share = if total > 0.0 { block[origin_k] / total } else { 0.0 };
                        (1.0 - share).max(0.0)
                    }
                }
            })
            .collect()
    }

    /// Top-`max_changed_features` selection over `scores`. Features whose
    /// origin value violates the constraints are always kept; the rest are
    /// ranked by score (lowest index first on ties) and must have changed.
    pub fn select_features(&self, scores: &[f64]) -> FeatureMask {
        select_top_features(scores, &self.forced, &self.resolved.mutable, self.budget())
    }

    /// Second procedure: keep each candidate's top features and re-run the
    /// optimization with every other feature reset to the origin and masked.
    pub fn sparsify(&self, raw: &RawCandidates) -> SparseCandidates {
        let masks: Vec<FeatureMask> = raw.candidates.iter().map(|c| self.select_features(&self.change_scores(c))).collect();
        let full = self.full_mask();
        if masks.iter().all(|m| *m == full) {
            // The masked re-run would repeat the raw run exactly.
            return SparseCandidates { candidates: raw.candidates.clone(), masks, iterations: 0 };
        }
        let rerun = self.optimize(&masks);
        SparseCandidates { candidates: rerun.candidates, masks, iterations: rerun.iterations }
    }

    /// Maps an encoded candidate to human units on each feature's precision
    /// grid, inside the constraint domains. Coordinates still equal to the
    /// origin (bit for bit) keep the origin's value; continuous values within
    /// half a unit of the origin snap back to it; grid ties round away from
    /// the origin.
    pub fn project_to_precision(&self, candidate: &[f64]) -> Instance {
        let values = self
            .schema
            .features()
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let slot = self.schema.slot(i);
                let origin = self.origin.get(i);
                match (&spec.kind, &self.resolved.domains[i]) {
                    (FeatureKind::Continuous { min, max, .. }, Domain::Interval { lo, hi }) => {
                        let c = candidate[slot.offset];
                        if c == self.origin_encoded[slot.offset] && self.resolved.domains[i].contains(origin, spec) {
                            return origin.clone();
                        }
                        let v = min + c * (max - min);
                        Value::Number(snap_within(spec, v, origin.as_number().expect("continuous"), *lo, *hi))
                    }
                    (FeatureKind::Categorical { categories, .. }, Domain::Categories(allowed)) => {
                        let block = &candidate[slot.range()];
                        let mut best: Option<usize> = None;
                        for k in (0..block.len()).filter(|&k| allowed[k]) {
                            if best.is_none_or(|b| block[k] > block[b]) {
                                best = Some(k);
                            }
                        }
                        Value::Category(categories[best.expect("non-empty category set")].clone())
                    }
                    _ => unreachable!("domains follow the schema"),
                }
            })
            .collect();
        Instance::new(values)
    }

    /// Third procedure: while the candidate is invalid, step the enabled
    /// feature with the largest normalized loss gradient by
    /// `max(unit, ε|grad|)` against the gradient, re-snap it to the grid and
    /// keep it inside its domain. Stops when valid or after
    /// `posthoc_max_steps` steps.
    pub fn posthoc_refine(&self, projected: &Instance, mask: &FeatureMask) -> CfCandidate {
        let max_steps = self.config.posthoc_max_steps.expect("resolved");
        let epsilon = self.config.epsilon();
        let objective = self.objective(0.0);
        let mut current = projected.clone();
        let mut exhausted = vec![false; self.schema.len()];
        let mut steps = 0;
        let mut grads = vec![vec![0.0; self.schema.width()]];

        let mut encoded = self.schema.encode(&current).expect("projected candidates are schema-valid");
        let mut probability = self.model.forward(&encoded).expect("width checked");
        while Class::from_probability(probability) != self.target && steps < max_steps {
            objective.gradients(std::slice::from_ref(&encoded), &mut grads);
            let grad = &grads[0];
            let Some(step) = self.best_step(&current, grad, mask, &exhausted) else {
                break;
            };
            let changed = self.apply_step(&mut current, &step, grad, epsilon);
            if !changed {
                exhausted[step.feature] = true;
                continue;
            }
            steps += 1;
            encoded = self.schema.encode(&current).expect("steps stay in domain");
            probability = self.model.forward(&encoded).expect("width checked");
        }
        self.finish(current, probability, steps)
    }

    fn best_step(&self, current: &Instance, grad: &[f64], mask: &FeatureMask, exhausted: &[bool]) -> Option<Step> {
        let mut best: Option<Step> = None;
        for (i, spec) in self.schema.features().iter().enumerate() {
            if !mask[i] || !self.resolved.mutable[i] || exhausted[i] {
                continue;
            }
            let slot = self.schema.slot(i);
            let candidate = match (&spec.kind, &self.resolved.domains[i]) {
                (FeatureKind::Continuous { mad, .. }, Domain::Interval { lo, hi }) => {
                    let g = grad[slot.offset];
                    let v = current.number(i);
                    let movable = (g < 0.0 && v < *hi) || (g > 0.0 && v > *lo);
                    movable.then(|| Step { feature: i, score: g.abs() * (1.0 + mad), category: None })
                }
                (FeatureKind::Categorical { .. }, Domain::Categories(allowed)) => {
                    let cur = spec.category_index(current.get(i).as_category().expect("categorical")).expect("valid");
                    let block = &grad[slot.range()];
                    let mut choice: Option<(usize, f64)> = None;
                    for k in (0..block.len()).filter(|&k| allowed[k] && k != cur) {
                        let delta = block[k] - block[cur];
                        if delta < 0.0 && choice.is_none_or(|(_, d)| delta < d) {
                            choice = Some((k, delta));
                        }
                    }
                    choice.map(|(k, delta)| Step { feature: i, score: -delta, category: Some(k) })
                }
                _ => unreachable!("domains follow the schema"),
            };
            if let Some(c) = candidate {
                if c.score > 0.0 && best.as_ref().is_none_or(|b| c.score > b.score) {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn apply_step(&self, current: &mut Instance, step: &Step, grad: &[f64], epsilon: f64) -> bool {
        let i = step.feature;
        let spec = self.schema.feature(i);
        match (&spec.kind, &self.resolved.domains[i]) {
            (FeatureKind::Continuous { min, max, precision_unit, .. }, Domain::Interval { lo, hi }) => {
                let g = grad[self.schema.slot(i).offset];
                let range = max - min;
                let size = (precision_unit / range).max(epsilon * g.abs()) * range;
                let v = current.number(i);
                let target = v - g.signum() * size;
                let origin = self.origin.number(i);
                let next = snap_within(spec, target, origin, *lo, *hi);
                current.set(i, Value::Number(next));
                next != v
            }
            (FeatureKind::Categorical { categories, .. }, _) => {
                let k = step.category.expect("categorical step");
                current.set(i, Value::Category(categories[k].clone()));
                true
            }
            _ => unreachable!("domains follow the schema"),
        }
    }

    fn finish(&self, instance: Instance, probability: f64, steps: usize) -> CfCandidate {
        let changes = self
            .schema
            .features()
            .iter()
            .enumerate()
            .filter(|&(i, _)| instance.get(i) != self.origin.get(i))
            .map(|(i, spec)| Change {
                feature: spec.name.clone(),
                from: self.origin.get(i).clone(),
                to: instance.get(i).clone(),
            })
            .collect();
        CfCandidate {
            distance_to_origin: distance(self.schema, &instance, self.origin),
            valid: Class::from_probability(probability) == self.target,
            probability,
            changes,
            posthoc_steps: steps,
            instance,
        }
    }

    /// Runs all three procedures and assembles the result.
    pub fn run(&self) -> CfSet {
        let mut warnings = Vec::new();
        if self.target == self.prediction.class {
            let msg = format!("target class {} equals the current prediction", self.target);
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let raw = self.generate_raw();
        let sparse = self.sparsify(&raw);
        let mut candidates = Vec::with_capacity(self.config.k_cfs);
        let mut per_candidate = Vec::with_capacity(self.config.k_cfs);
        for (c, mask) in sparse.candidates.iter().zip(&sparse.masks) {
            let projected = self.project_to_precision(c);
            let candidate = self.posthoc_refine(&projected, mask);
            per_candidate.push(CandidateDiagnostics {
                validity_loss: validity_loss(candidate.probability, self.target),
                distance: candidate.distance_to_origin,
                selected_features: mask
                    .iter()
                    .enumerate()
                    .filter(|(_, &m)| m)
                    .map(|(i, _)| self.schema.feature(i).name.clone())
                    .collect(),
                posthoc_steps: candidate.posthoc_steps,
            });
            candidates.push(candidate);
        }
        let encoded: Vec<Vec<f64>> =
            candidates.iter().map(|c| self.schema.encode(&c.instance).expect("schema-valid")).collect();
        let diversity_loss = super::loss::diversity_loss(self.schema, &encoded).expect("k_cfs > 0");
        CfSet {
            features: self.schema.feature_names(),
            origin: self.origin.clone(),
            origin_prediction: self.prediction,
            target_class: self.target,
            candidates,
            config: self.config.clone(),
            constraints: self.constraints.clone(),
            diagnostics: Diagnostics {
                raw_iterations: raw.iterations,
                sparse_iterations: sparse.iterations,
                diversity_loss,
                candidates: per_candidate,
            },
            warnings,
        }
    }
}

struct Step {
    feature: usize,
    score: f64,
    category: Option<usize>,
}

/// Ranking used by [`CfSearch::select_features`], exposed for testing.
pub fn select_top_features(scores: &[f64], forced: &[bool], mutable: &[bool], budget: usize) -> FeatureMask {
    let mut mask = forced.to_vec();
    let mut remaining = budget.saturating_sub(forced.iter().filter(|&&f| f).count());
    let mut order: Vec<usize> = (0..scores.len()).filter(|&i| mutable[i] && !forced[i] && scores[i] > 0.0).collect();
    // stable sort keeps the lowest index first among equal scores
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    for i in order {
        if remaining == 0 {
            break;
        }
        mask[i] = true;
        remaining -= 1;
    }
    mask
}

/// Euclidean projection of the allowed entries of `block` onto the
/// probability simplex; disallowed entries become 0.
pub(crate) fn project_to_simplex(block: &mut [f64], allowed: &[bool]) {
    let mut sorted: Vec<f64> = block.iter().zip(allowed).filter(|(_, &a)| a).map(|(&v, _)| v).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for (v, &a) in block.iter_mut().zip(allowed) {
        *v = if a { (*v - theta).max(0.0) } else { 0.0 };
    }
}

/// Snaps a continuous value to the feature's precision grid inside
/// `[lo, hi]`. Values within half a unit of `origin` return `origin` when it
/// is allowed; grid ties round away from `origin`. When no grid point lies
/// in `[lo, hi]` the clamped value is returned as is.
pub(crate) fn snap_within(spec: &FeatureSpec, value: f64, origin: f64, lo: f64, hi: f64) -> f64 {
    let FeatureKind::Continuous { min, max, precision_unit: unit, .. } = spec.kind else {
        panic!("snap_within on a categorical feature");
    };
    let v = value.clamp(lo, hi);
    if (v - origin).abs() < unit / 2.0 && origin >= lo && origin <= hi {
        return origin;
    }
    let steps = (v - min) / unit;
    let down = grid_point(steps.floor(), min, max, unit);
    let up = grid_point(steps.ceil(), min, max, unit);
    let picked = match (v - down).total_cmp(&(up - v)) {
        std::cmp::Ordering::Less => down,
        std::cmp::Ordering::Greater => up,
        std::cmp::Ordering::Equal => {
            if (down - origin).abs() >= (up - origin).abs() {
                down
            } else {
                up
            }
        }
    };
    if picked < lo {
        let g = grid_point(((lo - min) / unit - 1e-9).ceil(), min, max, unit);
        return if g >= lo && g <= hi { g } else { v };
    }
    if picked > hi {
        let g = grid_point(((hi - min) / unit + 1e-9).floor(), min, max, unit);
        return if g >= lo && g <= hi { g } else { v };
    }
    picked
}
