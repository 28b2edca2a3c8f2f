//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use cfprobe::bench::{run_bench, sample_rows};
use cfprobe::engine::{generate_cfs, mean_pairwise_distance, CfConfig, CfConstraints, CfSet, RangeSet};
use cfprobe::model::{train_baseline, Dense, Model, TrainParams};
use cfprobe::subgroup::{
    generate_rcf, hypothesis_support, information_gain_profile, predict_rows, RcfGroup, RcfOptions, Subgroup,
};
use cfprobe::tabular::{Binning, Dataset, FeatureKind, FeatureSpec, Instance, Value};
use cfprobe::Class;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Fixture {
    pima: Dataset,
    pima_model: Model,
    german: Dataset,
    german_model: Model,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let pima = common::pima();
        let german = common::german();
        Fixture { pima_model: common::pima_model(&pima), german_model: common::german_model(&german), pima, german }
    })
}

fn fixture_fidelity() -> Outcome {
    let f = fixture();
    let t = Instant::now();
    let (_, pima) = train_baseline(&f.pima, &TrainParams::default()).map_err(|e| e.to_string())?;
    let pima_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let params = TrainParams { epochs: 30, ..TrainParams::default() };
    let (_, german) = train_baseline(&f.german, &params).map_err(|e| e.to_string())?;
    let german_secs = t.elapsed().as_secs_f64();
    check(
        pima.test_accuracy >= 0.70 && german.train_accuracy >= 0.75 && pima_secs < 120.0 && german_secs < 120.0,
        format!(
            "pima test acc {:.3} ({pima_secs:.1}s), german train acc {:.3} ({german_secs:.1}s)",
            pima.test_accuracy, german.train_accuracy
        ),
    )
}

/// One randomized constraint run: origin, locks, bounds, budget and result.
struct Run {
    dataset: &'static Dataset,
    origin: Instance,
    locked: Vec<bool>,
    bounds: Vec<Option<Value>>,
    budget: usize,
    set: CfSet,
}

fn random_bound(spec: &FeatureSpec, rng: &mut ChaCha8Rng) -> Value {
    match &spec.kind {
        FeatureKind::Continuous { min, max, precision_unit, .. } => {
            let steps = ((max - min) / precision_unit).round() as i64;
            let a = rng.random_range(0..=steps);
            let b = rng.random_range(0..=steps);
            let snap = |s: i64| {
                let v = min + s as f64 * precision_unit;
                (v * 1e6).round() / 1e6
            };
            // encoded as "lo..hi" to keep a single Value per feature
            Value::Category(format!("{}..{}", snap(a.min(b)), snap(a.max(b))))
        }
        FeatureKind::Categorical { categories, .. } => {
            let mut picked: Vec<&String> = categories.iter().filter(|_| rng.random_bool(0.5)).collect();
            if picked.is_empty() {
                picked.push(categories.choose(rng).unwrap());
            }
            Value::Category(picked.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("|"))
        }
    }
}

fn bound_contains(bound: &str, spec: &FeatureSpec, value: &Value) -> bool {
    match (&spec.kind, value) {
        (FeatureKind::Continuous { .. }, Value::Number(v)) => {
            let (lo, hi) = bound.split_once("..").unwrap();
            let (lo, hi): (f64, f64) = (lo.parse().unwrap(), hi.parse().unwrap());
            lo <= *v && *v <= hi
        }
        (FeatureKind::Categorical { .. }, Value::Category(c)) => bound.split('|').any(|a| a == c),
        _ => false,
    }
}

fn in_schema_domain(spec: &FeatureSpec, value: &Value) -> bool {
    match (&spec.kind, value) {
        (FeatureKind::Continuous { min, max, .. }, Value::Number(v)) => min <= v && v <= max,
        (FeatureKind::Categorical { categories, .. }, Value::Category(c)) => categories.contains(c),
        _ => false,
    }
}

fn constrained_runs() -> &'static [Run] {
    static RUNS: OnceLock<Vec<Run>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let f = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        (0..200)
            .map(|i| {
                let (dataset, model) = if i % 2 == 0 { (&f.pima, &f.pima_model) } else { (&f.german, &f.german_model) };
                let schema = &dataset.schema;
                let origin = dataset.rows[rng.random_range(0..dataset.len())].clone();
                let n = schema.len();
                let mut locked = vec![false; n];
                let mut bounds = vec![None; n];
                let mut constraints = CfConstraints::default();
                for (j, spec) in schema.features().iter().enumerate() {
                    if rng.random_bool(0.25) {
                        locked[j] = true;
                        constraints = constraints.lock(&spec.name);
                    } else if rng.random_bool(0.3) {
                        let b = random_bound(spec, &mut rng);
                        let text = b.as_category().unwrap().to_string();
                        constraints = if let Some((lo, hi)) = text.split_once("..") {
                            constraints.range(&spec.name, lo.parse().unwrap(), hi.parse().unwrap())
                        } else {
                            constraints.allow(&spec.name, text.split('|').map(str::to_string).collect::<Vec<_>>())
                        };
                        bounds[j] = Some(b);
                    }
                }
                let forced = (0..n)
                    .filter(|&j| bounds[j].as_ref().is_some_and(|b| !bound_contains(b.as_category().unwrap(), schema.feature(j), origin.get(j))))
                    .count();
                let budget = rng.random_range(forced.max(1)..=n);
                let config = CfConfig { max_changed_features: Some(budget), seed: rng.random(), ..CfConfig::default() };
                let set = generate_cfs(schema, model, &origin, &constraints, &config).expect("valid constraints");
                Run { dataset, origin, locked, bounds, budget, set }
            })
            .collect()
    })
}

fn constraint_soundness() -> Outcome {
    let runs = constrained_runs();
    let mut candidates = 0;
    let mut violations = 0;
    for run in runs {
        let schema = &run.dataset.schema;
        for c in &run.set.candidates {
            candidates += 1;
            let bad = (0..schema.len()).any(|j| {
                let v = c.instance.get(j);
                let spec = schema.feature(j);
                !in_schema_domain(spec, v)
                    || (run.locked[j] && v != run.origin.get(j))
                    || run.bounds[j].as_ref().is_some_and(|b| !bound_contains(b.as_category().unwrap(), spec, v))
            });
            violations += usize::from(bad);
        }
    }
    check(candidates >= 1000 && violations == 0, format!("{violations} violations in {candidates} candidates"))
}

fn sparsity() -> Outcome {
    let runs = constrained_runs();
    let mut candidates = 0;
    let mut over = 0;
    for run in runs {
        for c in &run.set.candidates {
            candidates += 1;
            let changed = (0..run.origin.len()).filter(|&j| c.instance.get(j) != run.origin.get(j)).count();
            over += usize::from(changed > run.budget);
        }
    }
    check(candidates >= 1000 && over == 0, format!("{over} of {candidates} candidates exceed the budget"))
}

fn random_layer(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Dense {
    let mut d = Dense::zeros(rows, cols);
    for w in d.weights.iter_mut().chain(d.bias.iter_mut()) {
        *w = rng.random_range(-1.0..1.0);
    }
    d
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    while pairs < 100 {
        let width = rng.random_range(2..=12);
        let (h1, h2) = (rng.random_range(2..=16), rng.random_range(2..=16));
        let layers = [random_layer(h1, width, &mut rng), random_layer(h2, h1, &mut rng), random_layer(1, h2, &mut rng)];
        let model = Model::new(layers, "random").unwrap();
        let x: Vec<f64> = (0..width).map(|_| rng.random_range(0.0..1.0)).collect();
        let (z1, z2) = model.pre_activations(&x).unwrap();
        // finite differences are meaningless across a ReLU kink
        if z1.iter().chain(&z2).any(|z| z.abs() < 1e-3) {
            continue;
        }
        pairs += 1;
        let analytic = model.input_gradient(&x, 1.0).unwrap();
        for i in 0..width {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[i] += h;
            lo[i] -= h;
            let numeric = (model.forward(&hi).unwrap() - model.forward(&lo).unwrap()) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    check(worst < 1e-4, format!("max relative error {worst:.2e} over {pairs} pairs"))
}

fn posthoc_validity_rate() -> Outcome {
    let f = fixture();
    let rows = sample_rows(f.pima.len(), Some(50), 7);
    let t = Instant::now();
    let (_, sets) =
        run_bench(&f.pima, &f.pima_model, &rows, &CfConstraints::default(), &CfConfig::default()).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let hit = sets.iter().filter(|s| s.valid_count() > 0).count();
    let rate = hit as f64 / sets.len() as f64;
    check(rate >= 0.9 && secs < 60.0, format!("{hit}/{} instances with a valid candidate ({secs:.1}s)", sets.len()))
}

/// Spearman rank correlation of `ys` against their position.
fn spearman_vs_index(ys: &[f64]) -> f64 {
    let n = ys.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ys[a].total_cmp(&ys[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && ys[order[j + 1]] == ys[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            ranks[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, mr) = (mean(&xs), mean(&ranks));
    let cov: f64 = xs.iter().zip(&ranks).map(|(x, r)| (x - mx) * (r - mr)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vr: f64 = ranks.iter().map(|r| (r - mr).powi(2)).sum();
    if vr == 0.0 {
        0.0
    } else {
        cov / (vx * vr).sqrt()
    }
}

fn sweep(lambda_dist: f64, lambda_div: f64) -> Vec<CfSet> {
    let f = fixture();
    let rows = sample_rows(f.pima.len(), Some(20), 11);
    (0..3u64)
        .flat_map(|seed| {
            let config = CfConfig { lambda_dist, lambda_div, seed, ..CfConfig::default() };
            run_bench(&f.pima, &f.pima_model, &rows, &CfConstraints::default(), &config).unwrap().1
        })
        .collect()
}

fn lambda_trends() -> Outcome {
    let schema = &fixture().pima.schema;
    let diversity: Vec<f64> = [0.0, 0.5, 1.0, 2.0]
        .iter()
        .map(|&l2| {
            let per_set: Vec<f64> = sweep(0.5, l2)
                .iter()
                .map(|s| s.valid().map(|c| &c.instance).collect::<Vec<_>>())
                .filter(|v| v.len() >= 2)
                .map(|v| mean_pairwise_distance(schema, &v))
                .collect();
            per_set.iter().sum::<f64>() / per_set.len().max(1) as f64
        })
        .collect();
    let proximity: Vec<f64> = [0.1, 0.5, 1.0, 5.0]
        .iter()
        .map(|&l1| {
            let d: Vec<f64> = sweep(l1, 1.0).iter().flat_map(|s| s.valid().map(|c| c.distance_to_origin)).collect();
            d.iter().sum::<f64>() / d.len().max(1) as f64
        })
        .collect();
    let div_up = diversity.windows(2).all(|w| w[1] >= w[0]);
    let prox_down = proximity.windows(2).all(|w| w[1] <= w[0]);
    check(
        div_up && prox_down,
        format!(
            "diversity {:.4?} (rho {:.2}), proximity {:.4?} (rho {:.2})",
            diversity,
            spearman_vs_index(&diversity),
            proximity,
            spearman_vs_index(&proximity)
        ),
    )
}

fn gini(pos: f64, neg: f64) -> f64 {
    let n = pos + neg;
    if n == 0.0 {
        0.0
    } else {
        1.0 - (pos / n).powi(2) - (neg / n).powi(2)
    }
}

/// Brute-force gain of splitting `points` at `s` (left is `x < s`).
fn oracle_gain(points: &[(f64, bool)], s: f64) -> f64 {
    let n = points.len() as f64;
    let (mut lp, mut ln, mut rp, mut rn) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        match (x < s, y) {
            (true, true) => lp += 1.0,
            (true, false) => ln += 1.0,
            (false, true) => rp += 1.0,
            (false, false) => rn += 1.0,
        }
    }
    1.0 - (lp + ln) / n * gini(lp, ln) - (rp + rn) / n * gini(rp, rn)
}

fn information_gain_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = FeatureSpec::continuous("x", 0.0, 10.0, 0.01);
    let domain = cfprobe::engine::Domain::full(&spec);
    let mut worst: f64 = 0.0;
    let mut bracketed = 0;
    let mut datasets = 0;
    while datasets < 50 {
        let n = rng.random_range(4..=64);
        let t: f64 = rng.random_range(1.0..9.0);
        let flip = rng.random_bool(0.5);
        let points: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let x = f64::from(rng.random_range(0..=1000u32)) / 100.0;
                (x, (x >= t) != flip)
            })
            .collect();
        if points.iter().all(|p| p.1) || points.iter().all(|p| !p.1) {
            continue;
        }
        datasets += 1;
        let bins = Binning::for_feature(&spec, rng.random_range(4..=12));
        let labelled: Vec<(Value, Class)> = points
            .iter()
            .map(|&(x, y)| (Value::Number(x), if y { Class::Positive } else { Class::Negative }))
            .collect();
        let profile = information_gain_profile(&labelled, &spec, &bins, &domain);
        let Binning::Continuous { edges } = &bins else { unreachable!() };
        for (k, s) in profile.splits.iter().enumerate() {
            worst = worst.max((s.gain - oracle_gain(&points, edges[k + 1])).abs());
        }
        let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let best_mid = xs
            .windows(2)
            .map(|w| (w[0] + w[1]) / 2.0)
            .fold((f64::NEG_INFINITY, f64::NAN), |acc, m| {
                let g = oracle_gain(&points, m);
                if g > acc.0 {
                    (g, m)
                } else {
                    acc
                }
            })
            .1;
        // edges in the same empty gap tie exactly; any of them may be the argmax
        let best = profile.splits[profile.argmax().unwrap()].gain;
        let hit = (0..profile.splits.len())
            .filter(|&k| profile.splits[k].gain == best)
            .any(|k| edges[k] <= best_mid && best_mid <= edges[k + 2]);
        bracketed += usize::from(hit);
    }
    check(
        worst <= 1e-9 && bracketed == datasets,
        format!("{bracketed}/{datasets} optima bracketed, max gain error {worst:.1e}"),
    )
}

fn initial_ranges() -> RangeSet {
    RangeSet::default().range("glucose", 0.0, 99.0).range("age", 21.0, 39.0)
}

fn final_ranges() -> RangeSet {
    initial_ranges()
        .range("bmi", 0.0, 34.9)
        .range("dpf", 0.0, 0.599)
        .range("pregnancies", 0.0, 6.0)
        .range("blood_pressure", 40.0, 125.0)
}

fn rcf_groups(ranges: RangeSet, batch_size: usize) -> Vec<RcfGroup> {
    let f = fixture();
    let predictions = predict_rows(&f.pima, &f.pima_model).unwrap();
    let subgroup = Subgroup::define(1, "young", ranges, &f.pima, &predictions).unwrap();
    let options = RcfOptions { batch_size, ..RcfOptions::default() };
    f.pima
        .schema
        .feature_names()
        .iter()
        .map(|name| generate_rcf(&f.pima, &f.pima_model, &subgroup, name, &CfConfig::default(), &options).unwrap())
        .collect()
}

fn initial_groups() -> &'static [RcfGroup] {
    static G: OnceLock<Vec<RcfGroup>> = OnceLock::new();
    G.get_or_init(|| rcf_groups(initial_ranges(), RcfOptions::default().batch_size))
}

fn rcf_soundness() -> Outcome {
    let f = fixture();
    let schema = &f.pima.schema;
    let domains = initial_ranges().resolve(schema).unwrap();
    let groups = initial_groups();
    let mut total = 0;
    let mut escaped = 0;
    for g in groups {
        for m in &g.members {
            total += 1;
            let ok = (0..schema.len()).all(|i| {
                let v = m.candidate.instance.get(i);
                if i == g.feature_index {
                    in_schema_domain(schema.feature(i), v)
                } else {
                    domains[i].contains(v, schema.feature(i))
                }
            });
            escaped += usize::from(!ok);
        }
    }
    let members = groups[0].members.len();
    let single = rcf_groups(initial_ranges(), 1);
    let whole = rcf_groups(initial_ranges(), members);
    let same = |a: &[RcfGroup], b: &[RcfGroup]| {
        a.iter().zip(b).all(|(x, y)| {
            x.members == y.members && x.counterfactual == y.counterfactual && x.flows == y.flows && x.impurity == y.impurity
        })
    };
    let invariant = same(&single, &whole) && same(&single, groups);
    check(
        escaped == 0 && invariant,
        format!("{escaped} of {total} candidates leave the other ranges; batching invariant: {invariant}"),
    )
}

fn scenario_direction() -> Outcome {
    let f = fixture();
    let bmi = f.pima.schema.index_of("bmi").unwrap();
    let initial = initial_groups();
    let group = &initial[bmi];
    let original: Vec<f64> = group.members.iter().map(|m| f.pima.rows[m.row].number(bmi)).collect();
    let shifted: Vec<f64> = group.members.iter().filter(|m| m.candidate.valid).map(|m| m.candidate.instance.number(bmi)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let (before, after) = (mean(&original), mean(&shifted));
    let refined = rcf_groups(final_ranges(), RcfOptions::default().batch_size);
    let inside_initial: usize = initial.iter().map(|g| g.inside_count).sum();
    let inside_final: usize = refined.iter().map(|g| g.inside_count).sum();
    let reduction = 1.0 - inside_final as f64 / inside_initial.max(1) as f64;
    let verdict = if hypothesis_support(&refined).is_supported() { "supported" } else { "refuted" };
    check(
        !shifted.is_empty() && after > before && reduction >= 0.8,
        format!(
            "bmi mean {before:.2} -> {after:.2} over {} valid CFs; inside {inside_initial} -> {inside_final} ({:.0}% fewer, final verdict {verdict})",
            shifted.len(),
            100.0 * reduction
        ),
    )
}

fn throughput() -> Outcome {
    let f = fixture();
    let rows = sample_rows(f.pima.len(), None, 0);
    let config = CfConfig { k_cfs: 1, ..CfConfig::default() };
    let (report, _) = run_bench(&f.pima, &f.pima_model, &rows, &CfConstraints::default(), &config).map_err(|e| e.to_string())?;
    check(
        report.rows == 768 && report.elapsed_secs < 60.0,
        format!("{} rows in {:.1}s on {} threads", report.rows, report.elapsed_secs, report.threads),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("fixture fidelity", fixture_fidelity),
        ("constraint soundness", constraint_soundness),
        ("sparsity", sparsity),
        ("gradient correctness", gradient_correctness),
        ("post-hoc validity rate", posthoc_validity_rate),
        ("diversity/proximity trends", lambda_trends),
        ("information gain oracle", information_gain_oracle),
        ("r-counterfactual soundness", rcf_soundness),
        ("scenario direction", scenario_direction),
        ("throughput", throughput),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
