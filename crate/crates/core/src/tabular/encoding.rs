use super::schema::{FeatureKind, Instance, Schema, Value};
use crate::{Error, Result};

/// Number of decimal places needed to write `x` exactly (capped at 12).
pub fn decimals_of(x: f64) -> u32 {
    for d in 0..12 {
        let scaled = x * 10f64.powi(d as i32);
        if (scaled - scaled.round()).abs() <= 1e-9 * scaled.abs().max(1.0) {
            return d;
        }
    }
    12
}

pub fn round_to_decimals(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (x * scale).round() / scale
}

/// Snaps `value` to the nearest point of the grid `min + n * unit` that lies
/// in `[min, max]`. Half-way values round up.
pub fn snap_to_grid(value: f64, min: f64, max: f64, unit: f64) -> f64 {
    grid_point(((value - min) / unit).round(), min, max, unit)
}

pub(crate) fn grid_point(steps: f64, min: f64, max: f64, unit: f64) -> f64 {
    let decimals = decimals_of(unit).max(decimals_of(min));
    let max_steps = ((max - min) / unit + 1e-9).floor();
    let n = steps.clamp(0.0, max_steps);
    round_to_decimals(min + n * unit, decimals)
}

impl Schema {
    /// Encodes `instance` into the model's input space: continuous features
    /// min-max scaled to `[0, 1]`, categorical features one-hot.
    pub fn encode(&self, instance: &Instance) -> Result<Vec<f64>> {
        self.validate(instance)?;
        let mut out = vec![0.0; self.width()];
        for (i, spec) in self.features().iter().enumerate() {
            let slot = self.slot(i);
            match (&spec.kind, instance.get(i)) {
                (FeatureKind::Continuous { min, max, .. }, Value::Number(v)) => {
                    out[slot.offset] = (v - min) / (max - min);
                }
                (FeatureKind::Categorical { .. }, Value::Category(c)) => {
                    let k = spec.category_index(c).expect("validated");
                    out[slot.offset + k] = 1.0;
                }
                _ => unreachable!("validated"),
            }
        }
        Ok(out)
    }

    /// Inverse of [`Schema::encode`]. Continuous values are clamped to the
    /// domain and rounded to the precision grid; categorical blocks take the
    /// argmax, lowest index on ties.
    pub fn decode(&self, encoded: &[f64]) -> Result<Instance> {
        if encoded.len() != self.width() {
            return Err(Error::LengthMismatch { expected: self.width(), actual: encoded.len() });
        }
        let values = self
            .features()
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let block = &encoded[self.slot(i).range()];
                match &spec.kind {
                    FeatureKind::Continuous { min, max, precision_unit, .. } => {
                        let raw = min + block[0] * (max - min);
                        Value::Number(snap_to_grid(raw, *min, *max, *precision_unit))
                    }
                    FeatureKind::Categorical { categories, .. } => Value::Category(categories[argmax(block)].clone()),
                }
            })
            .collect();
        Ok(Instance::new(values))
    }
}

/// Index of the largest element, lowest index on ties.
pub(crate) fn argmax(block: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in block.iter().enumerate().skip(1) {
        if v > block[best] {
            best = k;
        }
    }
    best
}
