//! Loss terms and their (sub)gradients.
//!
//! Reported distances use the MAD-weighted Manhattan/overlap metric on hard
//! values. Inside the optimizer each categorical block is a vector of scores;
//! the distance of a block to the origin is `1 - s[origin]` and between two
//! candidates `1 - <s_i, s_j>`, both of which equal the overlap metric on
//! one-hot blocks.

use std::ops::Range;

use crate::model::Model;
use crate::tabular::{FeatureKind, Instance, Schema, Value};
use crate::{Class, Error, Result};

/// Zero-margin ranking loss `max(0, -target * (p - 0.5))` with `target = ±1`.
pub fn validity_loss(probability: f64, target: Class) -> f64 {
    (-target.sign() * (probability - Class::THRESHOLD)).max(0.0)
}

/// Distance between two instances in human units:
/// `|a - b| / ((1 + MAD) * range)` per continuous feature plus `1` per
/// differing categorical feature.
pub fn distance(schema: &Schema, a: &Instance, b: &Instance) -> f64 {
    schema
        .features()
        .iter()
        .enumerate()
        .map(|(i, spec)| match (&spec.kind, a.get(i), b.get(i)) {
            (FeatureKind::Continuous { min, max, mad, .. }, Value::Number(x), Value::Number(y)) => {
                (x - y).abs() / ((1.0 + mad) * (max - min))
            }
            (_, x, y) => f64::from(u8::from(x != y)),
        })
        .sum()
}

/// Same metric on encoded vectors. Since continuous features are min-max
/// scaled, `|Δ_scaled| / (1 + MAD)` equals the human-unit term; categorical
/// blocks are compared by argmax.
pub fn distance_encoded(schema: &Schema, a: &[f64], b: &[f64]) -> Result<f64> {
    for v in [a, b] {
        if v.len() != schema.width() {
            return Err(Error::LengthMismatch { expected: schema.width(), actual: v.len() });
        }
    }
    Ok(schema
        .features()
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let slot = schema.slot(i);
            match spec.kind {
                FeatureKind::Continuous { mad, .. } => (a[slot.offset] - b[slot.offset]).abs() / (1.0 + mad),
                FeatureKind::Categorical { .. } => {
                    let r = slot.range();
                    let differs = crate::tabular::encoding_argmax(&a[r.clone()]) != crate::tabular::encoding_argmax(&b[r]);
                    f64::from(u8::from(differs))
                }
            }
        })
        .sum())
}

/// `-(1/k) * Σ_i Σ_{j≥i} dist(c_i, c_j)`; the self-pairs contribute zero.
pub fn diversity_loss(schema: &Schema, candidates: &[Vec<f64>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let k = candidates.len();
    let mut total = 0.0;
    for i in 0..k {
        for j in i..k {
            total += distance_encoded(schema, &candidates[i], &candidates[j])?;
        }
    }
    Ok(-total / k as f64)
}

/// Mean pairwise distance between instances (0 for fewer than two).
pub fn mean_pairwise_distance(schema: &Schema, instances: &[&Instance]) -> f64 {
    let k = instances.len();
    if k < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += distance(schema, instances[i], instances[j]);
        }
    }
    total / (k * (k - 1) / 2) as f64
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct Block {
    coords: Range<usize>,
    origin: usize,
}

/// The relaxed objective `L_valid + λ1 L_dist + λ2 L_div` for a set of
/// encoded candidates around one origin.
pub(crate) struct Objective<'a> {
    model: &'a Model,
    origin: &'a [f64],
    /// `(coordinate, 1 / (1 + MAD))` for every continuous feature.
    continuous: Vec<(usize, f64)>,
    blocks: Vec<Block>,
    target: Class,
    lambda_dist: f64,
    lambda_div: f64,
    /// Leave the continuous distance term out of `gradients`; it is applied
    /// through [`Objective::shrink`] instead.
    proximal: bool,
}

impl<'a> Objective<'a> {
    pub fn new(schema: &Schema, model: &'a Model, origin: &'a [f64], target: Class, lambda_dist: f64, lambda_div: f64) -> Self {
        let mut continuous = Vec::new();
        let mut blocks = Vec::new();
        for (i, spec) in schema.features().iter().enumerate() {
            let slot = schema.slot(i);
            match spec.kind {
                FeatureKind::Continuous { mad, .. } => continuous.push((slot.offset, 1.0 / (1.0 + mad))),
                FeatureKind::Categorical { .. } => {
                    let coords = slot.range();
                    let origin_k = crate::tabular::encoding_argmax(&origin[coords.clone()]);
                    blocks.push(Block { origin: coords.start + origin_k, coords });
                }
            }
        }
        Objective { model, origin, continuous, blocks, target, lambda_dist, lambda_div, proximal: false }
    }

    pub fn proximal(mut self) -> Self {
        self.proximal = true;
        self
    }

    /// Proximal step of size `lr` for the continuous distance term: moves
    /// each enabled continuous coordinate toward the origin by
    /// `lr * λ1 / (1 + MAD)`, stopping at the origin instead of crossing it.
    pub fn shrink(&self, c: &mut [f64], enabled: &[bool], lr: f64) {
        for &(j, w) in &self.continuous {
            if enabled[j] {
                let delta = c[j] - self.origin[j];
                let t = lr * self.lambda_dist * w;
                c[j] = self.origin[j] + sign(delta) * (delta.abs() - t).max(0.0);
            }
        }
    }

    /// Writes `dL/dc_i` into `grads[i]` and returns the per-candidate
    /// predicted probabilities.
    pub fn gradients(&self, candidates: &[Vec<f64>], grads: &mut [Vec<f64>]) -> Vec<f64> {
        let k = candidates.len();
        let mut probabilities = Vec::with_capacity(k);
        for (c, g) in candidates.iter().zip(grads.iter_mut()) {
            let (p, dp) = self.model.probability_and_gradient(c, -self.target.sign());
            probabilities.push(p);
            if validity_loss(p, self.target) > 0.0 {
                g.copy_from_slice(&dp);
            } else {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
            if self.lambda_dist > 0.0 {
                if !self.proximal {
                    for &(j, w) in &self.continuous {
                        g[j] += self.lambda_dist * w * sign(c[j] - self.origin[j]);
                    }
                }
                for b in &self.blocks {
                    g[b.origin] -= self.lambda_dist;
                }
            }
        }
        if k > 1 && self.lambda_div > 0.0 {
            let scale = self.lambda_div / k as f64;
            for i in 0..k {
                for j in 0..k {
                    if i == j {
                        continue;
                    }
                    let (ci, cj) = (&candidates[i], &candidates[j]);
                    let g = &mut grads[i];
                    for &(d, w) in &self.continuous {
                        g[d] -= scale * w * sign(ci[d] - cj[d]);
                    }
                    for b in &self.blocks {
                        for d in b.coords.clone() {
                            g[d] += scale * cj[d];
                        }
                    }
                }
            }
        }
        probabilities
    }

    /// Value of the relaxed objective, for diagnostics and tests.
    #[cfg(test)]
    pub fn value(&self, candidates: &[Vec<f64>]) -> f64 {
        let k = candidates.len();
        let dist = |a: &[f64], b: &[f64], to_origin: bool| -> f64 {
            let cont: f64 = self.continuous.iter().map(|&(j, w)| w * (a[j] - b[j]).abs()).sum();
            let cat: f64 = self
                .blocks
                .iter()
                .map(|blk| {
                    if to_origin {
                        1.0 - a[blk.origin]
                    } else {
                        1.0 - blk.coords.clone().map(|d| a[d] * b[d]).sum::<f64>()
                    }
                })
                .sum();
            cont + cat
        };
        let mut total = 0.0;
        for c in candidates {
            let p = self.model.forward(c).expect("width checked by caller");
            total += validity_loss(p, self.target) + self.lambda_dist * dist(c, self.origin, true);
        }
        let mut div = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                div += dist(&candidates[i], &candidates[j], false);
            }
        }
        total - self.lambda_div * div / k as f64
    }
}
