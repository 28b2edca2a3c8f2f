use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Per-feature schema entry.
///
/// Domain bounds and precision come from the schema document. `mad` and
/// `counts` are statistics filled in from training rows when a [`Dataset`]
/// is built; they stay at their defaults for a bare schema.
///
/// [`Dataset`]: super::Dataset
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous {
        min: f64,
        max: f64,
        precision_unit: f64,
        #[serde(default)]
        mad: f64,
    },
    Categorical {
        categories: Vec<String>,
        #[serde(default)]
        counts: Vec<usize>,
    },
}

impl FeatureSpec {
    pub fn continuous(name: impl Into<String>, min: f64, max: f64, precision_unit: f64) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Continuous { min, max, precision_unit, mad: 0.0 },
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, categories: impl IntoIterator<Item = S>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical {
                categories: categories.into_iter().map(Into::into).collect(),
                counts: Vec::new(),
            },
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, FeatureKind::Continuous { .. })
    }

    /// `max - min` for continuous features, `None` for categorical ones.
    pub fn range(&self) -> Option<f64> {
        match self.kind {
            FeatureKind::Continuous { min, max, .. } => Some(max - min),
            FeatureKind::Categorical { .. } => None,
        }
    }

    /// MAD of a continuous feature (0 for categorical).
    pub fn mad(&self) -> f64 {
        match self.kind {
            FeatureKind::Continuous { mad, .. } => mad,
            FeatureKind::Categorical { .. } => 0.0,
        }
    }

    pub fn categories(&self) -> Option<&[String]> {
        match &self.kind {
            FeatureKind::Categorical { categories, .. } => Some(categories),
            FeatureKind::Continuous { .. } => None,
        }
    }

    pub fn category_index(&self, category: &str) -> Option<usize> {
        self.categories()?.iter().position(|c| c == category)
    }

    /// Width of this feature's block in the encoded vector.
    pub fn encoded_len(&self) -> usize {
        match &self.kind {
            FeatureKind::Continuous { .. } => 1,
            FeatureKind::Categorical { categories, .. } => categories.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Schema(format!("feature `{}`: {msg}", self.name)));
        match &self.kind {
            FeatureKind::Continuous { min, max, precision_unit, mad } => {
                if !(min.is_finite() && max.is_finite()) || min >= max {
                    return fail(format!("min ({min}) must be below max ({max})"));
                }
                if !(*precision_unit > 0.0) || *precision_unit > max - min {
                    return fail(format!("precision unit {precision_unit} must be in (0, max - min]"));
                }
                if !(*mad >= 0.0) {
                    return fail(format!("mad {mad} must be non-negative"));
                }
            }
            FeatureKind::Categorical { categories, counts } => {
                if categories.len() < 2 {
                    return fail("needs at least two categories".into());
                }
                let distinct: HashSet<&String> = categories.iter().collect();
                if distinct.len() != categories.len() {
                    return fail("duplicate category".into());
                }
                if !counts.is_empty() && counts.len() != categories.len() {
                    return fail("category counts do not match categories".into());
                }
            }
        }
        Ok(())
    }
}

/// Name of the label column and the two class values it may hold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub column: String,
    pub positive: String,
    pub negative: String,
}

/// Position of one feature inside the encoded vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    pub fn range(self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Maps features (in schema order) onto the encoded vector: all continuous
/// features first, then one block per categorical feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Layout {
    pub slots: Vec<Slot>,
    pub width: usize,
}

impl Layout {
    fn new(features: &[FeatureSpec]) -> Self {
        let mut slots = vec![Slot { offset: 0, len: 0 }; features.len()];
        let mut offset = 0;
        for (i, f) in features.iter().enumerate().filter(|(_, f)| f.is_continuous()) {
            slots[i] = Slot { offset, len: f.encoded_len() };
            offset += 1;
        }
        for (i, f) in features.iter().enumerate().filter(|(_, f)| !f.is_continuous()) {
            slots[i] = Slot { offset, len: f.encoded_len() };
            offset += f.encoded_len();
        }
        Layout { slots, width: offset }
    }
}

#[derive(Deserialize)]
struct RawSchema {
    name: String,
    label: LabelSpec,
    features: Vec<FeatureSpec>,
}

/// A validated feature schema together with its encoding layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct Schema {
    pub name: String,
    pub label: LabelSpec,
    features: Vec<FeatureSpec>,
    #[serde(skip)]
    layout: Layout,
}

impl TryFrom<RawSchema> for Schema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        Schema::new(raw.name, raw.label, raw.features)
    }
}

impl Schema {
    pub fn new(name: impl Into<String>, label: LabelSpec, features: Vec<FeatureSpec>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Schema("no features declared".into()));
        }
        let mut names = HashSet::new();
        for f in &features {
            f.validate()?;
            if !names.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature `{}`", f.name)));
            }
        }
        if names.contains(label.column.as_str()) {
            return Err(Error::Schema(format!("label column `{}` is also a feature", label.column)));
        }
        if label.positive == label.negative {
            return Err(Error::Schema("positive and negative labels must differ".into()));
        }
        let layout = Layout::new(&features);
        Ok(Schema { name: name.into(), label, features, layout })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn feature(&self, index: usize) -> &FeatureSpec {
        &self.features[index]
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn slot(&self, index: usize) -> Slot {
        self.layout.slots[index]
    }

    pub fn width(&self) -> usize {
        self.layout.width
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    pub(crate) fn features_mut(&mut self) -> &mut [FeatureSpec] {
        &mut self.features
    }

    /// SHA-256 over the declared part of the schema (names, kinds, domains,
    /// precision units, categories and label encoding). Data statistics are
    /// excluded, so a model stays bound to the schema rather than to a
    /// particular sample.
    pub fn fingerprint(&self) -> String {
        let features: Vec<serde_json::Value> = self
            .features
            .iter()
            .map(|f| match &f.kind {
                FeatureKind::Continuous { min, max, precision_unit, .. } => serde_json::json!({
                    "name": f.name, "kind": "continuous", "min": min, "max": max, "precision_unit": precision_unit,
                }),
                FeatureKind::Categorical { categories, .. } => serde_json::json!({
                    "name": f.name, "kind": "categorical", "categories": categories,
                }),
            })
            .collect();
        let doc = serde_json::json!({ "label": self.label, "features": features });
        let digest = Sha256::digest(doc.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks that `instance` has one value per feature, of the right kind
    /// and inside the declared domain.
    pub fn validate(&self, instance: &Instance) -> Result<()> {
        if instance.len() != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), actual: instance.len() });
        }
        for (spec, value) in self.features.iter().zip(instance.values()) {
            let out = |detail: String| Error::OutOfDomain { feature: spec.name.clone(), detail };
            match (&spec.kind, value) {
                (FeatureKind::Continuous { min, max, .. }, Value::Number(v)) => {
                    if !(v >= min && v <= max) {
                        return Err(out(format!("{v} not in [{min}, {max}]")));
                    }
                }
                (FeatureKind::Categorical { categories, .. }, Value::Category(c)) => {
                    if !categories.contains(c) {
                        return Err(out(format!("unknown category `{c}`")));
                    }
                }
                (FeatureKind::Continuous { .. }, Value::Category(c)) => {
                    return Err(out(format!("expected a number, got `{c}`")));
                }
                (FeatureKind::Categorical { .. }, Value::Number(v)) => {
                    return Err(out(format!("expected a category, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Parses an instance given either as an array in schema order or as an
    /// object keyed by feature name, then validates it.
    pub fn parse_instance(&self, json: &serde_json::Value) -> Result<Instance> {
        let to_value = |spec: &FeatureSpec, v: &serde_json::Value| -> Result<Value> {
            let bad = || Error::OutOfDomain { feature: spec.name.clone(), detail: format!("cannot interpret {v}") };
            match (&spec.kind, v) {
                (FeatureKind::Continuous { .. }, serde_json::Value::Number(n)) => {
                    Ok(Value::Number(n.as_f64().ok_or_else(bad)?))
                }
                (FeatureKind::Continuous { .. }, serde_json::Value::String(s)) => {
                    Ok(Value::Number(s.trim().parse().map_err(|_| bad())?))
                }
                (FeatureKind::Categorical { .. }, serde_json::Value::String(s)) => Ok(Value::Category(s.clone())),
                (FeatureKind::Categorical { .. }, serde_json::Value::Number(n)) => Ok(Value::Category(n.to_string())),
                _ => Err(bad()),
            }
        };
        let values = match json {
            serde_json::Value::Array(items) => {
                if items.len() != self.len() {
                    return Err(Error::LengthMismatch { expected: self.len(), actual: items.len() });
                }
                self.features.iter().zip(items).map(|(s, v)| to_value(s, v)).collect::<Result<Vec<_>>>()?
            }
            serde_json::Value::Object(map) => {
                if let Some(unknown) = map.keys().find(|k| self.index_of(k).is_err()) {
                    return Err(Error::UnknownFeature(unknown.clone()));
                }
                self.features
                    .iter()
                    .map(|s| {
                        let v = map.get(&s.name).ok_or_else(|| Error::MissingColumn(s.name.clone()))?;
                        to_value(s, v)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            other => {
                return Err(Error::Schema(format!("an instance must be an array or an object, got {other}")));
            }
        };
        let instance = Instance::new(values);
        self.validate(&instance)?;
        Ok(instance)
    }

    /// Object keyed by feature name, in schema order.
    pub fn instance_to_json(&self, instance: &Instance) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .features
            .iter()
            .zip(instance.values())
            .map(|(s, v)| (s.name.clone(), serde_json::to_value(v).expect("values serialize")))
            .collect();
        serde_json::Value::Object(map)
    }
}

/// A single feature value in human units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Category(String),
}

impl Value {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            Value::Category(_) => None,
        }
    }

    pub fn as_category(&self) -> Option<&str> {
        match self {
            Value::Category(c) => Some(c),
            Value::Number(_) => None,
        }
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Number(v) => write!(f, "{v}"),
            Value::Category(c) => f.write_str(c),
        }
    }
}

/// One row in human units, values in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Instance {
    values: Vec<Value>,
}

impl Instance {
    pub fn new(values: Vec<Value>) -> Self {
        Instance { values }
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn get(&self, index: usize) -> &Value {
        &self.values[index]
    }

    pub fn set(&mut self, index: usize, value: Value) {
        self.values[index] = value;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Numeric value of feature `index`; panics on a categorical feature.
    pub fn number(&self, index: usize) -> f64 {
        self.values[index].as_number().expect("continuous feature")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label() -> LabelSpec {
        LabelSpec { column: "y".into(), positive: "yes".into(), negative: "no".into() }
    }

    #[test]
    fn layout_puts_continuous_first() {
        let schema = Schema::new(
            "t",
            label(),
            vec![
                FeatureSpec::categorical("sex", ["female", "male"]),
                FeatureSpec::continuous("age", 18.0, 90.0, 1.0),
                FeatureSpec::categorical("job", ["a", "b", "c"]),
                FeatureSpec::continuous("income", 0.0, 1e5, 1.0),
            ],
        )
        .unwrap();
        assert_eq!(schema.width(), 7);
        assert_eq!(schema.slot(1), Slot { offset: 0, len: 1 });
        assert_eq!(schema.slot(3), Slot { offset: 1, len: 1 });
        assert_eq!(schema.slot(0), Slot { offset: 2, len: 2 });
        assert_eq!(schema.slot(2), Slot { offset: 4, len: 3 });
    }

    #[test]
    fn rejects_bad_features() {
        let bad = [
            FeatureSpec::continuous("a", 1.0, 1.0, 0.1),
            FeatureSpec::continuous("a", 0.0, 1.0, 2.0),
            FeatureSpec::continuous("a", 0.0, 1.0, 0.0),
            FeatureSpec::categorical("a", ["x"]),
            FeatureSpec::categorical("a", ["x", "x"]),
        ];
        for f in bad {
            assert!(Schema::new("t", label(), vec![f.clone()]).is_err(), "{f:?}");
        }
        let dup = vec![FeatureSpec::continuous("a", 0.0, 1.0, 0.1), FeatureSpec::continuous("a", 0.0, 1.0, 0.1)];
        assert!(Schema::new("t", label(), dup).is_err());
    }

    #[test]
    fn parses_schema_document() {
        let text = r#"{
            "name": "demo",
            "label": {"column": "y", "positive": "yes", "negative": "no"},
            "features": [
                {"name": "age", "kind": "continuous", "min": 0, "max": 100, "precision_unit": 1},
                {"name": "sex", "kind": "categorical", "categories": ["female", "male"]}
            ]
        }"#;
        let schema = Schema::from_json(text).unwrap();
        assert_eq!(schema.len(), 2);
        assert_eq!(schema.feature(0).range(), Some(100.0));
        assert_eq!(schema.width(), 3);
        let again = Schema::from_json(&serde_json::to_string(&schema).unwrap()).unwrap();
        assert_eq!(again.fingerprint(), schema.fingerprint());
    }

    #[test]
    fn fingerprint_ignores_statistics() {
        let mut schema = Schema::new("t", label(), vec![FeatureSpec::continuous("a", 0.0, 1.0, 0.1)]).unwrap();
        let before = schema.fingerprint();
        if let FeatureKind::Continuous { mad, .. } = &mut schema.features_mut()[0].kind {
            *mad = 0.25;
        }
        assert_eq!(before, schema.fingerprint());
        let other = Schema::new("t", label(), vec![FeatureSpec::continuous("a", 0.0, 2.0, 0.1)]).unwrap();
        assert_ne!(before, other.fingerprint());
    }

    #[test]
    fn parse_instance_accepts_arrays_and_objects() {
        let schema = Schema::new(
            "t",
            label(),
            vec![FeatureSpec::continuous("age", 0.0, 100.0, 1.0), FeatureSpec::categorical("sex", ["f", "m"])],
        )
        .unwrap();
        let a = schema.parse_instance(&serde_json::json!([30, "m"])).unwrap();
        let b = schema.parse_instance(&serde_json::json!({"sex": "m", "age": 30})).unwrap();
        assert_eq!(a, b);
        assert!(schema.parse_instance(&serde_json::json!([300, "m"])).is_err());
        assert!(schema.parse_instance(&serde_json::json!([30, "x"])).is_err());
        assert!(schema.parse_instance(&serde_json::json!({"age": 30})).is_err());
        assert!(matches!(
            schema.parse_instance(&serde_json::json!({"age": 30, "sex": "m", "height": 1})),
            Err(Error::UnknownFeature(_))
        ));
    }
}
