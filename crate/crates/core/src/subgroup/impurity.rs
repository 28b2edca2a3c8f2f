//! Gini impurity and the split profile shown under each subgroup cell.

use serde::{Deserialize, Serialize};

use crate::engine::Domain;
use crate::tabular::{Binning, FeatureSpec, Value};
use crate::Class;

/// Per-class counts, indexed by [`Class::index`].
pub type ClassCounts = [usize; 2];

pub fn count_classes<'a>(labels: impl IntoIterator<Item = &'a Class>) -> ClassCounts {
    let mut counts = [0; 2];
    for c in labels {
        counts[c.index()] += 1;
    }
    counts
}

/// `1 - p_neg² - p_pos²`; 0 for an empty set.
pub fn gini_impurity(counts: ClassCounts) -> f64 {
    let n = counts[0] + counts[1];
    if n == 0 {
        return 0.0;
    }
    let (a, b) = (counts[0] as f64 / n as f64, counts[1] as f64 / n as f64);
    1.0 - a * a - b * b
}

/// `1 - (N_l/N) G(l) - (N_r/N) G(r)`.
pub fn information_gain(left: ClassCounts, right: ClassCounts) -> f64 {
    let (nl, nr) = ((left[0] + left[1]) as f64, (right[0] + right[1]) as f64);
    let n = nl + nr;
    if n == 0.0 {
        return 1.0;
    }
    1.0 - nl / n * gini_impurity(left) - nr / n * gini_impurity(right)
}

/// Where a candidate split separates the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Split {
    /// Left side holds values `< threshold`.
    Threshold { threshold: f64 },
    /// Left side holds this category, right side every other one.
    Category { category: String },
}

impl Split {
    pub fn goes_left(&self, value: &Value) -> bool {
        match (self, value) {
            (Split::Threshold { threshold }, Value::Number(v)) => v < threshold,
            (Split::Category { category }, Value::Category(c)) => c == category,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitGain {
    pub split: Split,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpurityProfile {
    pub splits: Vec<SplitGain>,
    /// Gini impurity of the points inside the current range of the feature.
    pub range_gini: f64,
}

impl ImpurityProfile {
    /// Index of the split with the largest gain (first one on ties).
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, s) in self.splits.iter().enumerate() {
            if best.is_none_or(|b| s.gain > self.splits[b].gain) {
                best = Some(i);
            }
        }
        best
    }
}

/// Candidate splits for a binning: interior bin edges for continuous
/// features, one-vs-rest per category for categorical ones.
pub fn candidate_splits(binning: &Binning) -> Vec<Split> {
    match binning {
        Binning::Continuous { edges } => {
            edges[1..edges.len() - 1].iter().map(|&threshold| Split::Threshold { threshold }).collect()
        }
        Binning::Categorical { categories } => {
            categories.iter().map(|c| Split::Category { category: c.clone() }).collect()
        }
    }
}

/// Gain of every candidate split over `points` (feature value and class),
/// plus the impurity of the points that fall inside `range`.
pub fn information_gain_profile(
    points: &[(Value, Class)],
    spec: &FeatureSpec,
    binning: &Binning,
    range: &Domain,
) -> ImpurityProfile {
    let splits = candidate_splits(binning)
        .into_iter()
        .map(|split| {
            let mut left = [0; 2];
            let mut right = [0; 2];
            for (v, c) in points {
                if split.goes_left(v) {
                    left[c.index()] += 1;
                } else {
                    right[c.index()] += 1;
                }
            }
            SplitGain { gain: information_gain(left, right), split }
        })
        .collect();
    let inside = count_classes(points.iter().filter(|(v, _)| range.contains(v, spec)).map(|(_, c)| c));
    ImpurityProfile { splits, range_gini: gini_impurity(inside) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gini_examples() {
        assert_eq!(gini_impurity([2, 2]), 0.5);
        assert_eq!(gini_impurity([0, 7]), 0.0);
        assert_eq!(gini_impurity([3, 1]), 0.375);
        assert_eq!(gini_impurity([0, 0]), 0.0);
    }

    #[test]
    fn pure_split_has_gain_one() {
        assert_eq!(information_gain([4, 0], [0, 3]), 1.0);
    }

    #[test]
    fn independent_labels_give_flat_profile() {
        // every bin holds one negative and one positive point
        let spec = FeatureSpec::continuous("x", 0.0, 4.0, 0.5);
        let binning = Binning::for_feature(&spec, 4);
        let points: Vec<(Value, Class)> = (0..4)
            .flat_map(|i| [(Value::Number(i as f64 + 0.5), Class::Negative), (Value::Number(i as f64 + 0.5), Class::Positive)])
            .collect();
        let full = Domain::Interval { lo: 0.0, hi: 4.0 };
        let p = information_gain_profile(&points, &spec, &binning, &full);
        assert_eq!(p.splits.len(), 3);
        for s in &p.splits {
            assert!((s.gain - (1.0 - 0.5)).abs() < 1e-12);
        }
        assert_eq!(p.range_gini, 0.5);
    }

    #[test]
    fn six_point_best_split() {
        // exhaustive search over all midpoints: best threshold separates {1,2,3} from {7,8,9}
        let spec = FeatureSpec::continuous("x", 0.0, 10.0, 1.0);
        let binning = Binning::for_feature(&spec, 2);
        let pts: Vec<(Value, Class)> = [(1.0, Class::Negative), (2.0, Class::Negative), (3.0, Class::Positive), (7.0, Class::Positive), (8.0, Class::Positive), (9.0, Class::Positive)]
            .into_iter()
            .map(|(v, c)| (Value::Number(v), c))
            .collect();
        let mut best = (f64::NEG_INFINITY, 0.0);
        for t in [1.5, 2.5, 3.5, 5.0, 7.5, 8.5] {
            let l = count_classes(pts.iter().filter(|(v, _)| v.as_number().unwrap() < t).map(|(_, c)| c));
            let r = count_classes(pts.iter().filter(|(v, _)| v.as_number().unwrap() >= t).map(|(_, c)| c));
            let g = information_gain(l, r);
            if g > best.0 {
                best = (g, t);
            }
        }
        assert_eq!(best.1, 2.5);
        assert_eq!(best.0, 1.0);
        let p = information_gain_profile(&pts, &spec, &binning, &Domain::Interval { lo: 0.0, hi: 10.0 });
        assert_eq!(p.splits[0].split, Split::Threshold { threshold: 5.0 });
    }

    #[test]
    fn categorical_one_vs_rest() {
        let spec = FeatureSpec::categorical("c", ["a", "b"]);
        let binning = Binning::for_feature(&spec, 10);
        let cat = |s: &str| Value::Category(s.into());
        let pts = vec![(cat("a"), Class::Positive), (cat("a"), Class::Positive), (cat("b"), Class::Negative)];
        let p = information_gain_profile(&pts, &spec, &binning, &Domain::Categories(vec![true, false]));
        assert_eq!(p.splits.len(), 2);
        assert_eq!(p.splits[0].gain, 1.0);
        assert_eq!(p.range_gini, 0.0);
    }

    proptest! {
        #[test]
        fn impurity_bounds(a in 0usize..50, b in 0usize..50, c in 0usize..50, d in 0usize..50) {
            let g = gini_impurity([a, b]);
            prop_assert!((0.0..=0.5).contains(&g));
            let gain = information_gain([a, b], [c, d]);
            prop_assert!((0.0..=1.0).contains(&gain));
        }
    }
}
