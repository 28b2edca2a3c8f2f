use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tabular::{FeatureKind, Instance, Schema, Value};
use crate::{Error, Result};

/// Per-feature value restrictions keyed by feature name: closed intervals
/// for continuous features, allowed category sets for categorical ones.
/// Features not mentioned keep their full domain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RangeSet {
    pub ranges: BTreeMap<String, [f64; 2]>,
    pub categories: BTreeMap<String, Vec<String>>,
}

impl RangeSet {
    pub fn range(mut self, feature: impl Into<String>, lo: f64, hi: f64) -> Self {
        self.ranges.insert(feature.into(), [lo, hi]);
        self
    }

    pub fn allow<S: Into<String>>(mut self, feature: impl Into<String>, categories: impl IntoIterator<Item = S>) -> Self {
        self.categories.insert(feature.into(), categories.into_iter().map(Into::into).collect());
        self
    }

    /// Resolves names against `schema` into one [`Domain`] per feature.
    pub fn resolve(&self, schema: &Schema) -> Result<Vec<Domain>> {
        let mut domains: Vec<Domain> = schema.features().iter().map(Domain::full).collect();
        for (name, &[lo, hi]) in &self.ranges {
            let i = schema.index_of(name)?;
            let FeatureKind::Continuous { min, max, .. } = schema.feature(i).kind else {
                return Err(Error::InvalidConstraint(format!("`{name}` is categorical; use a category set")));
            };
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::InvalidConstraint(format!("empty range [{lo}, {hi}] for `{name}`")));
            }
            if lo < min || hi > max {
                return Err(Error::InvalidConstraint(format!(
                    "range [{lo}, {hi}] for `{name}` leaves the domain [{min}, {max}]"
                )));
            }
            domains[i] = Domain::Interval { lo, hi };
        }
        for (name, allowed) in &self.categories {
            let i = schema.index_of(name)?;
            let spec = schema.feature(i);
            let Some(categories) = spec.categories() else {
                return Err(Error::InvalidConstraint(format!("`{name}` is continuous; use a range")));
            };
            if allowed.is_empty() {
                return Err(Error::InvalidConstraint(format!("empty category set for `{name}`")));
            }
            let mut mask = vec![false; categories.len()];
            for c in allowed {
                let k = spec
                    .category_index(c)
                    .ok_or_else(|| Error::InvalidConstraint(format!("unknown category `{c}` for `{name}`")))?;
                mask[k] = true;
            }
            domains[i] = Domain::Categories(mask);
        }
        Ok(domains)
    }
}

/// Allowed values of one feature.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Interval { lo: f64, hi: f64 },
    Categories(Vec<bool>),
}

impl Domain {
    pub fn full(spec: &crate::tabular::FeatureSpec) -> Self {
        match &spec.kind {
            FeatureKind::Continuous { min, max, .. } => Domain::Interval { lo: *min, hi: *max },
            FeatureKind::Categorical { categories, .. } => Domain::Categories(vec![true; categories.len()]),
        }
    }

    fn point(value: &Value, spec: &crate::tabular::FeatureSpec) -> Self {
        match value {
            Value::Number(v) => Domain::Interval { lo: *v, hi: *v },
            Value::Category(c) => {
                let n = spec.categories().map_or(0, <[String]>::len);
                let k = spec.category_index(c);
                Domain::Categories((0..n).map(|i| Some(i) == k).collect())
            }
        }
    }

    pub fn contains(&self, value: &Value, spec: &crate::tabular::FeatureSpec) -> bool {
        match (self, value) {
            (Domain::Interval { lo, hi }, Value::Number(v)) => v >= lo && v <= hi,
            (Domain::Categories(mask), Value::Category(c)) => spec.category_index(c).is_some_and(|k| mask[k]),
            _ => false,
        }
    }
}

/// User constraints for one counterfactual search: locked features plus
/// value ranges.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfConstraints {
    pub locked: Vec<String>,
    #[serde(flatten)]
    pub bounds: RangeSet,
}

impl CfConstraints {
    pub fn lock(mut self, feature: impl Into<String>) -> Self {
        self.locked.push(feature.into());
        self
    }

    pub fn range(mut self, feature: impl Into<String>, lo: f64, hi: f64) -> Self {
        self.bounds = self.bounds.range(feature, lo, hi);
        self
    }

    pub fn allow<S: Into<String>>(mut self, feature: impl Into<String>, categories: impl IntoIterator<Item = S>) -> Self {
        self.bounds = self.bounds.allow(feature, categories);
        self
    }

    pub fn resolve(&self, schema: &Schema, origin: &Instance) -> Result<Resolved> {
        schema.validate(origin)?;
        let mut domains = self.bounds.resolve(schema)?;
        let mut mutable = vec![true; schema.len()];
        for name in &self.locked {
            let i = schema.index_of(name)?;
            mutable[i] = false;
            domains[i] = Domain::point(origin.get(i), schema.feature(i));
        }
        Ok(Resolved { domains, mutable })
    }
}

/// Constraints resolved against a schema and an origin instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub domains: Vec<Domain>,
    pub mutable: Vec<bool>,
}

impl Resolved {
    /// Every feature mutable within `domains`.
    pub fn from_domains(domains: Vec<Domain>) -> Self {
        let mutable = vec![true; domains.len()];
        Resolved { domains, mutable }
    }

    pub fn satisfied_by(&self, schema: &Schema, instance: &Instance) -> bool {
        self.violations(schema, instance).is_empty()
    }

    /// Indices of features whose value in `instance` breaks a constraint.
    pub fn violations(&self, schema: &Schema, instance: &Instance) -> Vec<usize> {
        (0..schema.len())
            .filter(|&i| !self.domains[i].contains(instance.get(i), schema.feature(i)))
            .collect()
    }
}
