use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::impurity::{information_gain_profile, ClassCounts, ImpurityProfile};
use super::Subgroup;
use crate::engine::{CfCandidate, CfConfig, CfConstraints, CfSearch, Domain, Resolved};
use crate::model::Model;
use crate::tabular::{Binning, Dataset, Value, DEFAULT_BIN_COUNT};
use crate::{derive_seed, Class, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RcfOptions {
    /// Members optimized per minibatch. Results do not depend on it.
    pub batch_size: usize,
    pub bin_count: usize,
}

impl Default for RcfOptions {
    fn default() -> Self {
        RcfOptions { batch_size: 64, bin_count: DEFAULT_BIN_COUNT }
    }
}

/// Per-bin class counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub bins: Binning,
    pub counts: Vec<ClassCounts>,
}

impl ClassHistogram {
    pub fn new(bins: Binning) -> Self {
        let counts = vec![[0; 2]; bins.len()];
        ClassHistogram { bins, counts }
    }

    pub fn add(&mut self, value: &Value, class: Class) {
        if let Some(b) = self.bins.bin_of(value) {
            self.counts[b][class.index()] += 1;
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|c| c[0] + c[1]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowLink {
    pub source: usize,
    pub target: usize,
    pub count: usize,
}

/// Links from each origin value's bin to its counterfactual value's bin,
/// sorted by `(source, target)`.
pub fn flow_links<'a>(pairs: impl IntoIterator<Item = (&'a Value, &'a Value)>, bins: &Binning) -> Vec<FlowLink> {
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (from, to) in pairs {
        if let (Some(s), Some(t)) = (bins.bin_of(from), bins.bin_of(to)) {
            *counts.entry((s, t)).or_default() += 1;
        }
    }
    counts.into_iter().map(|((source, target), count)| FlowLink { source, target, count }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcfMember {
    pub row: usize,
    pub prediction: Class,
    pub candidate: CfCandidate,
    /// Valid and still inside the subgroup's range on the relaxed feature.
    pub inside: bool,
}

/// The r-counterfactuals of one subgroup for one relaxed feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcfGroup {
    pub subgroup_id: u64,
    pub feature: String,
    pub feature_index: usize,
    pub config: CfConfig,
    pub options: RcfOptions,
    pub members: Vec<RcfMember>,
    /// Members binned on the relaxed feature by predicted class.
    pub original: ClassHistogram,
    /// Valid counterfactuals binned by their predicted class.
    pub counterfactual: ClassHistogram,
    /// Members without a valid counterfactual, binned by their origin value.
    pub invalid_by_bin: Vec<usize>,
    pub flows: Vec<FlowLink>,
    pub inside_count: usize,
    pub outside_count: usize,
    pub invalid_count: usize,
    pub impurity: ImpurityProfile,
}

impl RcfGroup {
    pub fn witnesses(&self) -> impl Iterator<Item = &RcfMember> {
        self.members.iter().filter(|m| m.inside)
    }
}

/// One counterfactual per subgroup member, where every feature but `feature`
/// stays inside the subgroup's ranges and `feature` may take any value of its
/// domain. Each member targets the flip of its current prediction and uses
/// its own seed derived from `config.seed` and its row index.
pub fn generate_rcf(
    dataset: &Dataset,
    model: &Model,
    subgroup: &Subgroup,
    feature: &str,
    config: &CfConfig,
    options: &RcfOptions,
) -> Result<RcfGroup> {
    config.validate()?;
    if options.batch_size == 0 || options.bin_count == 0 {
        return Err(Error::InvalidConfig("batch_size and bin_count must be positive".into()));
    }
    let schema = &dataset.schema;
    let j = schema.index_of(feature)?;
    if subgroup.is_empty() {
        return Err(Error::EmptySubgroup);
    }
    model.check_schema(schema)?;
    let domains = subgroup.domains(dataset)?;
    let mut relaxed = domains.clone();
    relaxed[j] = Domain::full(schema.feature(j));
    let mut bounds = subgroup.ranges.clone();
    bounds.ranges.remove(feature);
    bounds.categories.remove(feature);
    let constraints = CfConstraints { locked: Vec::new(), bounds };

    let member_config = CfConfig { k_cfs: 1, target_class: None, ..config.clone() };
    let run_member = |&row: &usize| -> Result<RcfMember> {
        let origin = &dataset.rows[row];
        let cfg = CfConfig { seed: derive_seed(config.seed, row as u64), ..member_config.clone() };
        let search =
            CfSearch::with_resolved(schema, model, origin, constraints.clone(), Resolved::from_domains(relaxed.clone()), &cfg)?;
        let set = search.run();
        let candidate = set.candidates.into_iter().next().expect("k_cfs = 1");
        let inside = candidate.valid && domains[j].contains(candidate.instance.get(j), schema.feature(j));
        Ok(RcfMember { row, prediction: set.origin_prediction.class, candidate, inside })
    };
    let mut members = Vec::with_capacity(subgroup.len());
    for batch in subgroup.members.chunks(options.batch_size) {
        let done: Vec<RcfMember> = batch.par_iter().map(run_member).collect::<Result<_>>()?;
        members.extend(done);
    }

    let spec = schema.feature(j);
    let bins = Binning::for_feature(spec, options.bin_count);
    let mut original = ClassHistogram::new(bins.clone());
    let mut counterfactual = ClassHistogram::new(bins.clone());
    let mut invalid_by_bin = vec![0; bins.len()];
    let mut points = Vec::new();
    for m in &members {
        let from = dataset.rows[m.row].get(j);
        original.add(from, m.prediction);
        points.push((from.clone(), m.prediction));
        if m.candidate.valid {
            let to = m.candidate.instance.get(j);
            let class = Class::from_probability(m.candidate.probability);
            counterfactual.add(to, class);
            points.push((to.clone(), class));
        } else if let Some(b) = bins.bin_of(from) {
            invalid_by_bin[b] += 1;
        }
    }
    let flows = flow_links(
        members.iter().filter(|m| m.candidate.valid).map(|m| (dataset.rows[m.row].get(j), m.candidate.instance.get(j))),
        &bins,
    );
    let invalid_count = members.iter().filter(|m| !m.candidate.valid).count();
    let inside_count = members.iter().filter(|m| m.inside).count();
    let impurity = information_gain_profile(&points, spec, &bins, &domains[j]);

    Ok(RcfGroup {
        subgroup_id: subgroup.id,
        feature: feature.to_string(),
        feature_index: j,
        config: member_config,
        options: *options,
        outside_count: members.len() - invalid_count - inside_count,
        inside_count,
        invalid_count,
        members,
        original,
        counterfactual,
        invalid_by_bin,
        flows,
        impurity,
    })
}

/// A valid r-counterfactual that stayed inside the subgroup's range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub feature: String,
    pub row: usize,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict {
    Supported,
    Refuted { witnesses: Vec<Witness> },
}

impl Verdict {
    pub fn is_supported(&self) -> bool {
        matches!(self, Verdict::Supported)
    }
}

/// Supported when no valid counterfactual in any group stays inside the
/// subgroup's range on its relaxed feature.
pub fn hypothesis_support(groups: &[RcfGroup]) -> Verdict {
    let witnesses: Vec<Witness> = groups
        .iter()
        .flat_map(|g| {
            g.witnesses().map(move |m| Witness {
                feature: g.feature.clone(),
                row: m.row,
                value: m.candidate.instance.get(g.feature_index).clone(),
            })
        })
        .collect();
    if witnesses.is_empty() {
        Verdict::Supported
    } else {
        Verdict::Refuted { witnesses }
    }
}
