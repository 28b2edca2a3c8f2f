//! Range-defined subgroups and rule-support counterfactuals.
//!
//! A subgroup is the set of dataset rows inside a box of per-feature ranges.
//! Its r-counterfactuals for feature `j` give every member one counterfactual
//! in which only `j` may leave the box (it may roam its full domain). If no
//! valid counterfactual for any feature stays inside the box, the model's
//! prediction on the box is robust and the hypothesis "rows in this box get
//! this prediction" is supported.

mod impurity;
mod rcf;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use impurity::{
    candidate_splits, count_classes, gini_impurity, information_gain, information_gain_profile, ClassCounts,
    ImpurityProfile, Split, SplitGain,
};
pub use rcf::{
    flow_links, generate_rcf, hypothesis_support, ClassHistogram, FlowLink, RcfGroup, RcfMember, RcfOptions,
    Verdict, Witness,
};

use crate::engine::{Domain, RangeSet};
use crate::model::Model;
use crate::tabular::Dataset;
use crate::{Class, Error, Result};

/// Prediction statistics of a set of rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    /// Rows per predicted class.
    pub predicted: ClassCounts,
    /// Rows per ground-truth label.
    pub actual: ClassCounts,
    /// Rows predicted positive whose label is negative.
    pub false_positive: usize,
    /// Rows predicted negative whose label is positive.
    pub false_negative: usize,
}

impl PredictionSummary {
    pub fn from_rows(predictions: &[Class], labels: &[Class], rows: &[usize]) -> Self {
        let mut s = PredictionSummary::default();
        for &r in rows {
            s.predicted[predictions[r].index()] += 1;
            s.actual[labels[r].index()] += 1;
            match (predictions[r], labels[r]) {
                (Class::Positive, Class::Negative) => s.false_positive += 1,
                (Class::Negative, Class::Positive) => s.false_negative += 1,
                _ => {}
            }
        }
        s
    }
}

/// Predicted class of every dataset row.
pub fn predict_rows(dataset: &Dataset, model: &Model) -> Result<Vec<Class>> {
    dataset
        .rows
        .iter()
        .map(|row| Ok(model.predict(&dataset.schema.encode(row)?)?.class))
        .collect()
}

/// One immutable version of a subgroup definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgroup {
    pub id: u64,
    /// The version this one was refined or copied from.
    pub parent: Option<u64>,
    pub name: String,
    pub ranges: RangeSet,
    pub members: Vec<usize>,
    pub summary: PredictionSummary,
}

impl Subgroup {
    /// Builds a subgroup from `ranges`; rows are members when every feature
    /// value lies inside its range (closed intervals, allowed category sets).
    pub fn define(
        id: u64,
        name: impl Into<String>,
        ranges: RangeSet,
        dataset: &Dataset,
        predictions: &[Class],
    ) -> Result<Self> {
        let domains = ranges.resolve(&dataset.schema)?;
        let members = members_of(dataset, &domains);
        let summary = PredictionSummary::from_rows(predictions, &dataset.labels, &members);
        Ok(Subgroup { id, parent: None, name: name.into(), ranges, members, summary })
    }

    pub fn domains(&self, dataset: &Dataset) -> Result<Vec<Domain>> {
        self.ranges.resolve(&dataset.schema)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn members_of(dataset: &Dataset, domains: &[Domain]) -> Vec<usize> {
    let schema = &dataset.schema;
    (0..dataset.len())
        .filter(|&r| {
            let row = &dataset.rows[r];
            domains.iter().enumerate().all(|(i, d)| d.contains(row.get(i), schema.feature(i)))
        })
        .collect()
}

/// Every subgroup version created in one session.
///
/// Refining or copying never changes an existing version; it adds a new one
/// whose `parent` points back, so the exploration history stays available.
#[derive(Debug)]
pub struct SubgroupRegistry {
    versions: BTreeMap<u64, Subgroup>,
    next_id: u64,
}

impl Default for SubgroupRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl SubgroupRegistry {
    pub fn new() -> Self {
        SubgroupRegistry { versions: BTreeMap::new(), next_id: 1 }
    }

    fn insert(&mut self, mut subgroup: Subgroup, parent: Option<u64>) -> &Subgroup {
        subgroup.parent = parent;
        let id = subgroup.id;
        self.next_id += 1;
        self.versions.entry(id).or_insert(subgroup)
    }

    fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn define(
        &mut self,
        name: impl Into<String>,
        ranges: RangeSet,
        dataset: &Dataset,
        predictions: &[Class],
    ) -> Result<&Subgroup> {
        let sg = Subgroup::define(self.next_id(), name, ranges, dataset, predictions)?;
        Ok(self.insert(sg, None))
    }

    /// New version of `id` with `ranges`.
    pub fn refine(&mut self, id: u64, ranges: RangeSet, dataset: &Dataset, predictions: &[Class]) -> Result<&Subgroup> {
        let name = self.get(id)?.name.clone();
        let sg = Subgroup::define(self.next_id(), name, ranges, dataset, predictions)?;
        Ok(self.insert(sg, Some(id)))
    }

    pub fn copy(&mut self, id: u64) -> Result<&Subgroup> {
        let mut sg = self.get(id)?.clone();
        sg.id = self.next_id();
        sg.name = format!("{} (copy)", sg.name);
        Ok(self.insert(sg, Some(id)))
    }

    pub fn delete(&mut self, id: u64) -> Result<Subgroup> {
        self.versions.remove(&id).ok_or(Error::UnknownSubgroup(id))
    }

    pub fn get(&self, id: u64) -> Result<&Subgroup> {
        self.versions.get(&id).ok_or(Error::UnknownSubgroup(id))
    }

    pub fn list(&self) -> impl Iterator<Item = &Subgroup> {
        self.versions.values()
    }

    /// `id` followed by its ancestors that still exist.
    pub fn history(&self, id: u64) -> Result<Vec<&Subgroup>> {
        let mut chain = vec![self.get(id)?];
        while let Some(p) = chain.last().and_then(|s| s.parent).and_then(|p| self.versions.get(&p)) {
            chain.push(p);
        }
        Ok(chain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{FeatureSpec, Instance, LabelSpec, Schema, Value};

    fn dataset() -> Dataset {
        let schema = Schema::new(
            "t",
            LabelSpec { column: "y".into(), positive: "1".into(), negative: "0".into() },
            vec![FeatureSpec::continuous("a", 0.0, 10.0, 1.0), FeatureSpec::categorical("c", ["u", "v"])],
        )
        .unwrap();
        let rows = (0..10)
            .map(|i| Instance::new(vec![Value::Number(i as f64), Value::Category(if i % 2 == 0 { "u" } else { "v" }.into())]))
            .collect();
        let labels = (0..10).map(|i| if i >= 5 { Class::Positive } else { Class::Negative }).collect();
        Dataset::from_rows(schema, rows, labels).unwrap()
    }

    #[test]
    fn membership_matches_brute_force() {
        let d = dataset();
        let preds = d.labels.clone();
        let sg = Subgroup::define(1, "s", RangeSet::default().range("a", 2.0, 6.0).allow("c", ["u"]), &d, &preds).unwrap();
        assert_eq!(sg.members, vec![2, 4, 6]);
        assert_eq!(sg.summary.predicted, [2, 1]);
        let all = Subgroup::define(2, "all", RangeSet::default(), &d, &preds).unwrap();
        assert_eq!(all.members, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn disjoint_range_is_empty() {
        let d = dataset();
        let sg = Subgroup::define(1, "s", RangeSet::default().range("a", 9.5, 10.0), &d, &d.labels).unwrap();
        assert!(sg.is_empty());
        assert_eq!(sg.summary, PredictionSummary::default());
    }

    #[test]
    fn bad_ranges_are_rejected() {
        let d = dataset();
        assert!(Subgroup::define(1, "s", RangeSet::default().range("a", 5.0, 2.0), &d, &d.labels).is_err());
        assert!(matches!(
            Subgroup::define(1, "s", RangeSet::default().range("zz", 0.0, 1.0), &d, &d.labels),
            Err(Error::UnknownFeature(_))
        ));
    }

    #[test]
    fn summary_counts_false_predictions() {
        let preds = [Class::Positive, Class::Negative, Class::Positive];
        let labels = [Class::Negative, Class::Positive, Class::Positive];
        let s = PredictionSummary::from_rows(&preds, &labels, &[0, 1, 2]);
        assert_eq!((s.false_positive, s.false_negative), (1, 1));
        assert_eq!(s.predicted, [1, 2]);
    }

    #[test]
    fn registry_keeps_history() {
        let d = dataset();
        let mut reg = SubgroupRegistry::new();
        let first = reg.define("s", RangeSet::default().range("a", 0.0, 8.0), &d, &d.labels).unwrap().id;
        let second = reg.refine(first, RangeSet::default().range("a", 0.0, 4.0), &d, &d.labels).unwrap().id;
        assert_ne!(first, second);
        assert_eq!(reg.get(first).unwrap().members.len(), 9);
        assert_eq!(reg.get(second).unwrap().members.len(), 5);
        let ids: Vec<u64> = reg.history(second).unwrap().iter().map(|s| s.id).collect();
        assert_eq!(ids, vec![second, first]);
        let copy = reg.copy(second).unwrap().id;
        assert_eq!(reg.get(copy).unwrap().ranges, reg.get(second).unwrap().ranges);
        reg.delete(first).unwrap();
        assert!(matches!(reg.get(first), Err(Error::UnknownSubgroup(_))));
        assert_eq!(reg.history(second).unwrap().len(), 1);
    }
}
