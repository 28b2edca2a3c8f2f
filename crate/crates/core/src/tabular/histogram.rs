use serde::{Deserialize, Serialize};

use super::schema::{FeatureKind, FeatureSpec, Value};

/// Bin layout for one feature.
///
/// Continuous features use `bin_count` equal-width bins over the declared
/// domain. Every bin is half-open `[lo, hi)` except the last, which also
/// contains `max`. Categorical features get one bin per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Binning {
    Continuous { edges: Vec<f64> },
    Categorical { categories: Vec<String> },
}

impl Binning {
    pub fn for_feature(spec: &FeatureSpec, bin_count: usize) -> Self {
        match &spec.kind {
            FeatureKind::Continuous { min, max, .. } => {
                let n = bin_count.max(1);
                let edges = (0..=n).map(|i| edge(*min, *max, i, n)).collect();
                Binning::Continuous { edges }
            }
            FeatureKind::Categorical { categories, .. } => Binning::Categorical { categories: categories.clone() },
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Binning::Continuous { edges } => edges.len() - 1,
            Binning::Categorical { categories } => categories.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bin index of a continuous value. Values outside the domain land in the
    /// first or last bin.
    pub fn bin_of_number(&self, v: f64) -> usize {
        let Binning::Continuous { edges } = self else {
            panic!("bin_of_number on a categorical binning");
        };
        let n = edges.len() - 1;
        let (min, max) = (edges[0], edges[n]);
        let mut idx = (((v - min) / (max - min)) * n as f64).floor().clamp(0.0, (n - 1) as f64) as usize;
        // agree exactly with the stored edges
        while idx > 0 && v < edges[idx] {
            idx -= 1;
        }
        while idx + 1 < n && v >= edges[idx + 1] {
            idx += 1;
        }
        idx
    }

    pub fn bin_of(&self, value: &Value) -> Option<usize> {
        match (self, value) {
            (Binning::Continuous { .. }, Value::Number(v)) => Some(self.bin_of_number(*v)),
            (Binning::Categorical { categories }, Value::Category(c)) => categories.iter().position(|x| x == c),
            _ => None,
        }
    }
}

fn edge(min: f64, max: f64, i: usize, n: usize) -> f64 {
    if i == n {
        max
    } else {
        min + (max - min) * (i as f64) / (n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Binning,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn empty(bins: Binning) -> Self {
        let counts = vec![0; bins.len()];
        Histogram { bins, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Histogram of `values` for feature `spec`. Values of the wrong kind or
/// unknown categories are skipped.
pub fn bin_feature(values: &[Value], spec: &FeatureSpec, bin_count: usize) -> Histogram {
    let mut hist = Histogram::empty(Binning::for_feature(spec, bin_count));
    for v in values {
        if let Some(b) = hist.bins.bin_of(v) {
            hist.counts[b] += 1;
        }
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nums(v: &[f64]) -> Vec<Value> {
        v.iter().map(|&x| Value::Number(x)).collect()
    }

    #[test]
    fn half_open_bins_with_closed_last() {
        let spec = FeatureSpec::continuous("x", 0.0, 10.0, 1.0);
        let h = bin_feature(&nums(&[0.0, 5.0, 10.0]), &spec, 2);
        // 5 starts the second bin [5, 10]
        assert_eq!(h.counts, vec![1, 2]);
        assert_eq!(h.bins, Binning::Continuous { edges: vec![0.0, 5.0, 10.0] });
    }

    #[test]
    fn empty_values_give_zero_counts() {
        let spec = FeatureSpec::continuous("x", 0.0, 10.0, 1.0);
        assert_eq!(bin_feature(&[], &spec, 4).counts, vec![0; 4]);
    }

    #[test]
    fn categorical_counts() {
        let spec = FeatureSpec::categorical("c", ["a", "b", "c"]);
        let vals: Vec<Value> = ["a", "c", "c", "b", "c"].iter().map(|s| Value::Category(s.to_string())).collect();
        let h = bin_feature(&vals, &spec, 99);
        assert_eq!(h.counts, vec![1, 1, 3]);
        assert_eq!(h.total(), vals.len());
    }

    proptest! {
        #[test]
        fn counts_sum_and_bins_match_edges(
            v in prop::collection::vec(-5.0f64..25.0, 0..200),
            lo in -3.0f64..3.0, width in 0.5f64..20.0, n in 1usize..30,
        ) {
            let spec = FeatureSpec::continuous("x", lo, lo + width, width / 1000.0);
            let h = bin_feature(&nums(&v), &spec, n);
            prop_assert_eq!(h.total(), v.len());
            let Binning::Continuous { edges } = &h.bins else { unreachable!() };
            prop_assert_eq!(edges.len(), n + 1);
            for &x in &v {
                let b = h.bins.bin_of_number(x);
                let inside = x >= edges[b] && (x < edges[b + 1] || b == n - 1);
                let clamped = x < edges[0] && b == 0 || x > edges[n] && b == n - 1;
                prop_assert!(inside || clamped, "x={} bin={} edges={:?}", x, b, edges);
            }
        }
    }
}
