use std::io::Read;
use std::path::Path;

use super::schema::{FeatureKind, Instance, Schema, Value};
use super::stats::compute_mad;
use crate::{Class, Error, Result};

/// Labeled rows plus a schema whose statistics were computed from them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub schema: Schema,
    pub rows: Vec<Instance>,
    pub labels: Vec<Class>,
}

impl Dataset {
    /// Loads a CSV file whose header holds every schema feature plus the
    /// label column, in any order.
    pub fn load(csv_path: impl AsRef<Path>, schema_path: impl AsRef<Path>) -> Result<Self> {
        let schema = Schema::load(schema_path)?;
        let csv_path = csv_path.as_ref();
        let file = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
        Self::from_reader(file, schema)
    }

    pub fn from_reader(reader: impl Read, schema: Schema) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = csv.headers()?.clone();
        let position = |name: &str| {
            header.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let columns = schema.features().iter().map(|f| position(&f.name)).collect::<Result<Vec<_>>>()?;
        let label_col = position(&schema.label.column)?;
        if header.len() != schema.len() + 1 {
            let extra = header
                .iter()
                .find(|h| *h != schema.label.column && schema.index_of(h).is_err())
                .unwrap_or_default();
            return Err(Error::Schema(format!("unexpected column `{extra}`")));
        }

        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (row, record) in csv.records().enumerate() {
            let record = record?;
            let mut values = Vec::with_capacity(schema.len());
            for (spec, &col) in schema.features().iter().zip(&columns) {
                let raw = record.get(col).unwrap_or("");
                let value = match &spec.kind {
                    FeatureKind::Continuous { min, max, .. } => {
                        let v: f64 = raw.parse().map_err(|_| Error::ParseNumber {
                            row,
                            column: spec.name.clone(),
                            value: raw.to_string(),
                        })?;
                        if !v.is_finite() {
                            return Err(Error::ParseNumber { row, column: spec.name.clone(), value: raw.to_string() });
                        }
                        if v < *min || v > *max {
                            return Err(Error::RowOutOfDomain { row, column: spec.name.clone(), value: v });
                        }
                        Value::Number(v)
                    }
                    FeatureKind::Categorical { categories, .. } => {
                        if !categories.iter().any(|c| c == raw) {
                            return Err(Error::UnknownCategory {
                                row,
                                column: spec.name.clone(),
                                value: raw.to_string(),
                            });
                        }
                        Value::Category(raw.to_string())
                    }
                };
                values.push(value);
            }
            let label = record.get(label_col).unwrap_or("");
            let class = if label == schema.label.positive {
                Class::Positive
            } else if label == schema.label.negative {
                Class::Negative
            } else {
                return Err(Error::UnknownLabel { row, value: label.to_string() });
            };
            rows.push(Instance::new(values));
            labels.push(class);
        }
        Self::from_rows(schema, rows, labels)
    }

    /// Builds a dataset from already-parsed rows, validating each against the
    /// schema and computing per-feature statistics.
    pub fn from_rows(mut schema: Schema, rows: Vec<Instance>, labels: Vec<Class>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch { expected: rows.len(), actual: labels.len() });
        }
        for row in &rows {
            schema.validate(row)?;
        }
        let n_features = schema.len();
        for i in 0..n_features {
            let column: Vec<&Value> = rows.iter().map(|r| r.get(i)).collect();
            match &mut schema.features_mut()[i].kind {
                FeatureKind::Continuous { mad, .. } => {
                    let values: Vec<f64> = column.iter().filter_map(|v| v.as_number()).collect();
                    *mad = compute_mad(&values)?;
                }
                FeatureKind::Categorical { categories, counts } => {
                    *counts = categories
                        .iter()
                        .map(|c| column.iter().filter(|v| v.as_category() == Some(c)).count())
                        .collect();
                }
            }
        }
        Ok(Dataset { name: schema.name.clone(), schema, rows, labels })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Numeric column of a continuous feature.
    pub fn column(&self, feature: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.number(feature)).collect()
    }

    pub fn label_counts(&self) -> [usize; 2] {
        let pos = self.labels.iter().filter(|&&c| c == Class::Positive).count();
        [self.labels.len() - pos, pos]
    }

    pub fn encoded_rows(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| self.schema.encode(r).expect("rows are validated at load")).collect()
    }
}
