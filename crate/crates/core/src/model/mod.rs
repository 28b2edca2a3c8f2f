//! Two-hidden-layer MLP binary classifier.
//!
//! Hidden layers use ReLU, the output a sigmoid, so `forward` returns a
//! probability. `input_gradient` back-propagates to the encoded input, which
//! is all the counterfactual optimizer needs from a model. At a ReLU kink
//! (pre-activation exactly zero) the subgradient 0 is used.

mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tabular::Schema;
use crate::{Class, Error, Result};

pub use train::{train_baseline, TrainParams, TrainReport};

pub const MODEL_FORMAT: &str = "cfprobe-mlp/1";

/// Fully connected layer, `weights` row-major with shape `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense { rows, cols, weights: vec![0.0; rows * cols], bias: vec![0.0; rows] }
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(r, b)| {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        }));
    }

    /// `W^T * upstream`
    fn backward(&self, upstream: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.cols, 0.0);
        for (r, &u) in upstream.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * u;
            }
        }
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.rows * self.cols || self.bias.len() != self.rows {
            return Err(Error::ShapeMismatch(format!(
                "layer declared {}x{} but has {} weights and {} biases",
                self.rows,
                self.cols,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|w| !w.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite parameter".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: [usize; 2],
    pub output: usize,
    pub hidden_activation: String,
    pub output_activation: String,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    architecture: Architecture,
    layers: Vec<Dense>,
    schema_fingerprint: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    pub class: Class,
}

impl Prediction {
    pub fn from_probability(probability: f64) -> Self {
        Prediction { probability, class: Class::from_probability(probability) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: [Dense; 3],
    schema_fingerprint: String,
}

struct Activations {
    z1: Vec<f64>,
    z2: Vec<f64>,
    probability: f64,
}

impl Model {
    pub fn new(layers: [Dense; 3], schema_fingerprint: impl Into<String>) -> Result<Self> {
        for l in &layers {
            l.check()?;
        }
        if layers[1].cols != layers[0].rows || layers[2].cols != layers[1].rows {
            return Err(Error::ShapeMismatch("layer widths do not chain".into()));
        }
        if layers[2].rows != 1 {
            return Err(Error::ShapeMismatch(format!("output width must be 1, got {}", layers[2].rows)));
        }
        Ok(Model { layers, schema_fingerprint: schema_fingerprint.into() })
    }

    /// A model whose every parameter is zero; it predicts 0.5 everywhere.
    pub fn zeros(input: usize, hidden: [usize; 2], schema_fingerprint: impl Into<String>) -> Self {
        let layers = [Dense::zeros(hidden[0], input), Dense::zeros(hidden[1], hidden[0]), Dense::zeros(1, hidden[1])];
        Model { layers, schema_fingerprint: schema_fingerprint.into() }
    }

    pub fn layers(&self) -> &[Dense; 3] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense; 3] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].cols
    }

    pub fn schema_fingerprint(&self) -> &str {
        &self.schema_fingerprint
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input: self.input_width(),
            hidden: [self.layers[0].rows, self.layers[1].rows],
            output: 1,
            hidden_activation: "relu".into(),
            output_activation: "sigmoid".into(),
        }
    }

    /// Fails unless this model was built for `schema`.
    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        if self.input_width() != schema.width() {
            return Err(Error::ShapeMismatch(format!(
                "model input width {} does not match encoded width {}",
                self.input_width(),
                schema.width()
            )));
        }
        let actual = schema.fingerprint();
        if self.schema_fingerprint != actual {
            return Err(Error::FingerprintMismatch { expected: self.schema_fingerprint.clone(), actual });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::ShapeMismatch(format!("unsupported model format `{}`", file.format)));
        }
        let arch = &file.architecture;
        if arch.hidden_activation != "relu" || arch.output_activation != "sigmoid" {
            return Err(Error::ShapeMismatch("only relu hidden and sigmoid output activations are supported".into()));
        }
        let layers: [Dense; 3] = file
            .layers
            .try_into()
            .map_err(|l: Vec<Dense>| Error::ShapeMismatch(format!("expected 3 layers, found {}", l.len())))?;
        let model = Model::new(layers, file.schema_fingerprint)?;
        if model.architecture() != *arch {
            return Err(Error::ShapeMismatch("layers disagree with the declared architecture".into()));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            architecture: self.architecture(),
            layers: self.layers.to_vec(),
            schema_fingerprint: self.schema_fingerprint.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    /// Loads a weight file and checks it against `schema`.
    pub fn load(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model = Self::from_json(&text)?;
        model.check_schema(schema)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_width() {
            return Err(Error::LengthMismatch { expected: self.input_width(), actual: x.len() });
        }
        Ok(())
    }

    fn activations(&self, x: &[f64]) -> Activations {
        let (mut z1, mut z2, mut z3) = (Vec::new(), Vec::new(), Vec::new());
        self.layers[0].apply(x, &mut z1);
        let a1: Vec<f64> = z1.iter().map(|&z| relu(z)).collect();
        self.layers[1].apply(&a1, &mut z2);
        let a2: Vec<f64> = z2.iter().map(|&z| relu(z)).collect();
        self.layers[2].apply(&a2, &mut z3);
        Activations { z1, z2, probability: sigmoid(z3[0]) }
    }

    /// Probability of the positive class.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        Ok(self.activations(x).probability)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        self.forward(x).map(Prediction::from_probability)
    }

    /// `upstream * d(probability)/d(x)`.
    pub fn input_gradient(&self, x: &[f64], upstream: f64) -> Result<Vec<f64>> {
        self.check_len(x)?;
        Ok(self.probability_and_gradient(x, upstream).1)
    }

    /// Forward pass and scaled input gradient in one go.
    pub fn probability_and_gradient(&self, x: &[f64], upstream: f64) -> (f64, Vec<f64>) {
        let acts = self.activations(x);
        let p = acts.probability;
        let d3 = upstream * p * (1.0 - p);
        let mut d2 = Vec::new();
        self.layers[2].backward(&[d3], &mut d2);
        mask_relu(&mut d2, &acts.z2);
        let mut d1 = Vec::new();
        self.layers[1].backward(&d2, &mut d1);
        mask_relu(&mut d1, &acts.z1);
        let mut dx = Vec::new();
        self.layers[0].backward(&d1, &mut dx);
        (p, dx)
    }

    /// Hidden pre-activations, used to detect inputs sitting on a ReLU kink.
    pub fn pre_activations(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_len(x)?;
        let acts = self.activations(x);
        Ok((acts.z1, acts.z2))
    }
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

fn mask_relu(grad: &mut [f64], pre: &[f64]) {
    for (g, &z) in grad.iter_mut().zip(pre) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
