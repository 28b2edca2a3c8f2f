//! Seeded mini-batch Adam trainer for fixture models.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{relu, sigmoid, Dense, Model};
use crate::tabular::Dataset;
use crate::{Class, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub hidden: [usize; 2],
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of rows held out for the test split.
    pub split_fraction: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { hidden: [16, 16], epochs: 200, learning_rate: 0.002, batch_size: 32, seed: 0, split_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub train_size: usize,
    pub test_size: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [&mut f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            **p -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

fn he_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Dense {
    let limit = (6.0 / cols as f64).sqrt();
    Dense {
        rows,
        cols,
        weights: (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect(),
        bias: vec![0.0; rows],
    }
}

fn accuracy(model: &Model, xs: &[Vec<f64>], ys: &[Class], idx: &[usize]) -> f64 {
    let correct = idx.iter().filter(|&&i| model.predict(&xs[i]).map(|p| p.class == ys[i]).unwrap_or(false)).count();
    correct as f64 / idx.len() as f64
}

/// Trains a fixture model with binary cross-entropy on a seeded split.
///
/// Identical `(dataset, params)` produce bit-identical weights.
pub fn train_baseline(dataset: &Dataset, params: &TrainParams) -> Result<(Model, TrainReport)> {
    if params.epochs == 0 || params.batch_size == 0 || params.hidden.contains(&0) {
        return Err(Error::InvalidConfig("epochs, batch size and hidden widths must be positive".into()));
    }
    if !(params.learning_rate > 0.0) {
        return Err(Error::InvalidConfig("learning rate must be positive".into()));
    }
    let n = dataset.len();
    let n_test = (n as f64 * params.split_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::DegenerateSplit(format!("{n} rows with split fraction {}", params.split_fraction)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (test_idx, train_idx) = order.split_at(n_test);
    let mut train_idx = train_idx.to_vec();

    let xs = dataset.encoded_rows();
    let ys = &dataset.labels;
    let width = dataset.schema.width();
    let [h1, h2] = params.hidden;
    let layers = [he_uniform(&mut rng, h1, width), he_uniform(&mut rng, h2, h1), he_uniform(&mut rng, 1, h2)];
    let mut model = Model::new(layers, dataset.schema.fingerprint())?;

    let n_params: usize = model.layers().iter().map(|l| l.weights.len() + l.bias.len()).sum();
    let mut adam = Adam::new(n_params);
    let mut grads = vec![0.0; n_params];

    for _ in 0..params.epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(params.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                accumulate(&model, &xs[i], ys[i], &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            let mut params_mut: Vec<&mut f64> = model
                .layers_mut()
                .iter_mut()
                .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
                .collect();
            adam.step(&mut params_mut, &grads, params.learning_rate);
        }
    }

    let report = TrainReport {
        train_accuracy: accuracy(&model, &xs, ys, &train_idx),
        test_accuracy: accuracy(&model, &xs, ys, test_idx),
        train_size: train_idx.len(),
        test_size: test_idx.len(),
    };
    Ok((model, report))
}

/// Adds the cross-entropy parameter gradient for one example to `grads`,
/// laid out layer by layer as weights then biases.
fn accumulate(model: &Model, x: &[f64], y: Class, grads: &mut [f64]) {
    let [l1, l2, l3] = model.layers();
    let mut z1 = Vec::new();
    l1.apply(x, &mut z1);
    let a1: Vec<f64> = z1.iter().map(|&z| relu(z)).collect();
    let mut z2 = Vec::new();
    l2.apply(&a1, &mut z2);
    let a2: Vec<f64> = z2.iter().map(|&z| relu(z)).collect();
    let mut z3 = Vec::new();
    l3.apply(&a2, &mut z3);
    let target = if y == Class::Positive { 1.0 } else { 0.0 };
    let d3 = sigmoid(z3[0]) - target;

    let mut offset = 0;
    let mut layer_grad = |layer: &Dense, input: &[f64], delta: &[f64], offset: &mut usize| {
        for r in 0..layer.rows {
            for c in 0..layer.cols {
                grads[*offset + r * layer.cols + c] += delta[r] * input[c];
            }
        }
        *offset += layer.weights.len();
        for r in 0..layer.rows {
            grads[*offset + r] += delta[r];
        }
        *offset += layer.bias.len();
    };

    let mut d2 = Vec::new();
    l3.backward(&[d3], &mut d2);
    super::mask_relu(&mut d2, &z2);
    let mut d1 = Vec::new();
    l2.backward(&d2, &mut d1);
    super::mask_relu(&mut d1, &z1);

    layer_grad(l1, x, &d1, &mut offset);
    layer_grad(l2, &a1, &d2, &mut offset);
    layer_grad(l3, &a2, &[d3], &mut offset);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{FeatureSpec, Instance, LabelSpec, Schema, Value};

    fn toy() -> Dataset {
        let schema = Schema::new(
            "toy",
            LabelSpec { column: "y".into(), positive: "1".into(), negative: "0".into() },
            vec![FeatureSpec::continuous("a", 0.0, 1.0, 0.01), FeatureSpec::continuous("b", 0.0, 1.0, 0.01)],
        )
        .unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..=20 {
            for j in 0..=20 {
                let (a, b) = (i as f64 / 20.0, j as f64 / 20.0);
                rows.push(Instance::new(vec![Value::Number(a), Value::Number(b)]));
                labels.push(if a + b > 1.0 { Class::Positive } else { Class::Negative });
            }
        }
        Dataset::from_rows(schema, rows, labels).unwrap()
    }

    #[test]
    fn learns_a_linear_boundary() {
        let params = TrainParams { epochs: 60, learning_rate: 0.01, ..TrainParams::default() };
        let (_, report) = train_baseline(&toy(), &params).unwrap();
        assert!(report.train_accuracy > 0.9, "{report:?}");
        assert!(report.test_accuracy > 0.85, "{report:?}");
        assert_eq!(report.train_size + report.test_size, 441);
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let params = TrainParams { epochs: 5, ..TrainParams::default() };
        let (a, _) = train_baseline(&toy(), &params).unwrap();
        let (b, _) = train_baseline(&toy(), &params).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let (c, _) = train_baseline(&toy(), &TrainParams { seed: 1, ..params }).unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn degenerate_split_is_rejected() {
        let params = TrainParams { split_fraction: 0.0, ..TrainParams::default() };
        assert!(matches!(train_baseline(&toy(), &params), Err(Error::DegenerateSplit(_))));
        let params = TrainParams { split_fraction: 1.0, ..TrainParams::default() };
        assert!(matches!(train_baseline(&toy(), &params), Err(Error::DegenerateSplit(_))));
    }
}
