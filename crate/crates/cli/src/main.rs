use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use cfprobe::bench::{run_bench, sample_rows};
use cfprobe::engine::{generate_cfs, CfConfig, CfConstraints, CfSet, RangeSet};
use cfprobe::model::{train_baseline, Model, TrainParams};
use cfprobe::subgroup::{generate_rcf, predict_rows, RcfOptions, Subgroup};
use cfprobe::tabular::{Dataset, Value};
use cfprobe::Class;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cfprobe", version, about = "Counterfactual explanations for tabular binary classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate counterfactuals for one instance.
    Gen(GenArgs),
    /// Generate r-counterfactuals for a subgroup and one relaxed feature.
    Rcf(RcfArgs),
    /// Train a fixture model.
    Train(TrainArgs),
    /// Generate counterfactuals for many rows and report timing and quality.
    Bench(BenchArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset CSV.
    #[arg(long)]
    dataset: PathBuf,
    /// Schema JSON; defaults to the dataset path with `.schema.json`.
    #[arg(long)]
    schema: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> anyhow::Result<Dataset> {
        let schema = self.schema.clone().unwrap_or_else(|| self.dataset.with_extension("schema.json"));
        Ok(Dataset::load(&self.dataset, &schema)?)
    }
}

/// One flag per `CfConfig` field.
#[derive(Args, Default)]
struct CfArgs {
    #[arg(long)]
    k_cfs: Option<usize>,
    #[arg(long)]
    max_changed_features: Option<usize>,
    #[arg(long)]
    lambda_dist: Option<f64>,
    #[arg(long)]
    lambda_div: Option<f64>,
    #[arg(long, value_enum)]
    target_class: Option<ClassArg>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    clip_interval: Option<usize>,
    #[arg(long)]
    posthoc_epsilon: Option<f64>,
    #[arg(long)]
    posthoc_max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassArg {
    Negative,
    Positive,
}

impl CfArgs {
    fn config(&self) -> CfConfig {
        let d = CfConfig::default();
        CfConfig {
            k_cfs: self.k_cfs.unwrap_or(d.k_cfs),
            max_changed_features: self.max_changed_features.or(d.max_changed_features),
            lambda_dist: self.lambda_dist.unwrap_or(d.lambda_dist),
            lambda_div: self.lambda_div.unwrap_or(d.lambda_div),
            target_class: self.target_class.map(|c| match c {
                ClassArg::Negative => Class::Negative,
                ClassArg::Positive => Class::Positive,
            }),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            clip_interval: self.clip_interval.unwrap_or(d.clip_interval),
            posthoc_epsilon: self.posthoc_epsilon.or(d.posthoc_epsilon),
            posthoc_max_steps: self.posthoc_max_steps.or(d.posthoc_max_steps),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Dataset row to explain.
    #[arg(long, conflicts_with = "instance", required_unless_present = "instance")]
    row: Option<usize>,
    /// JSON file holding the instance (array in schema order or object).
    #[arg(long)]
    instance: Option<PathBuf>,
    /// JSON constraints document (`locked`, `ranges`, `categories`).
    #[arg(long)]
    constraints: Option<PathBuf>,
    #[command(flatten)]
    cf: CfArgs,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RcfArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// JSON ranges document (`ranges`, `categories`) defining the subgroup.
    #[arg(long)]
    ranges: PathBuf,
    /// Feature allowed to leave the subgroup's ranges.
    #[arg(long)]
    feature: String,
    #[arg(long, default_value_t = RcfOptions::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = RcfOptions::default().bin_count)]
    bin_count: usize,
    #[command(flatten)]
    cf: CfArgs,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Where to write the model JSON.
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, num_args = 2, value_delimiter = ',', default_values_t = TrainParams::default().hidden)]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = TrainParams::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainParams::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = TrainParams::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainParams::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = TrainParams::default().split_fraction)]
    split_fraction: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Number of rows to sample; every row when omitted.
    #[arg(long)]
    sample_size: Option<usize>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    threads: Option<usize>,
    /// Also write every generated set as a JSON array.
    #[arg(long)]
    raw: Option<PathBuf>,
    #[command(flatten)]
    cf: CfArgs,
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| cfprobe::Error::Json(e).into())
}

fn load_model(path: &Path, dataset: &Dataset) -> anyhow::Result<Model> {
    Ok(Model::load(path, &dataset.schema)?)
}

/// One row per candidate: index, validity, probability, distance, then every
/// feature value.
fn cf_csv(set: &CfSet) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["candidate".to_string(), "valid".into(), "probability".into(), "distance".into()];
    header.extend(set.features.iter().cloned());
    w.write_record(&header)?;
    let fmt = |v: &Value| v.to_string();
    let mut origin = vec!["origin".to_string(), String::new(), set.origin_prediction.probability.to_string(), "0".into()];
    origin.extend(set.origin.values().iter().map(fmt));
    w.write_record(&origin)?;
    for (i, c) in set.candidates.iter().enumerate() {
        let mut rec = vec![i.to_string(), c.valid.to_string(), c.probability.to_string(), c.distance_to_origin.to_string()];
        rec.extend(c.instance.values().iter().map(fmt));
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn gen(args: &GenArgs) -> anyhow::Result<()> {
    let dataset = args.data.load()?;
    let model = load_model(&args.model, &dataset)?;
    let instance = match (&args.instance, args.row) {
        (Some(path), _) => dataset.schema.parse_instance(&read_json(path)?)?,
        (None, Some(r)) => match dataset.rows.get(r) {
            Some(x) => x.clone(),
            None => return Err(cfprobe::Error::InvalidConfig(format!("row {r} is out of range")).into()),
        },
        (None, None) => bail!("give --row or --instance"),
    };
    let constraints: CfConstraints = args.constraints.as_deref().map(read_json).transpose()?.unwrap_or_default();
    let set = generate_cfs(&dataset.schema, &model, &instance, &constraints, &args.cf.config())?;
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&set)? + "\n",
        Format::Csv => cf_csv(&set)?,
    };
    write_output(args.output.as_deref(), &text)
}

fn rcf(args: &RcfArgs) -> anyhow::Result<()> {
    let dataset = args.data.load()?;
    let model = load_model(&args.model, &dataset)?;
    let ranges: RangeSet = read_json(&args.ranges)?;
    let predictions = predict_rows(&dataset, &model)?;
    let subgroup = Subgroup::define(1, "cli", ranges, &dataset, &predictions)?;
    let options = RcfOptions { batch_size: args.batch_size, bin_count: args.bin_count };
    let group = generate_rcf(&dataset, &model, &subgroup, &args.feature, &args.cf.config(), &options)?;
    write_output(args.output.as_deref(), &(serde_json::to_string_pretty(&group)? + "\n"))
}

fn train(args: &TrainArgs) -> anyhow::Result<()> {
    let dataset = args.data.load()?;
    let params = TrainParams {
        hidden: [args.hidden[0], args.hidden[1]],
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        seed: args.seed,
        split_fraction: args.split_fraction,
    };
    let (model, report) = train_baseline(&dataset, &params)?;
    model.save(&args.output)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn bench(args: &BenchArgs) -> anyhow::Result<()> {
    let dataset = args.data.load()?;
    let model = load_model(&args.model, &dataset)?;
    let config = CfConfig { k_cfs: args.cf.k_cfs.unwrap_or(1), ..args.cf.config() };
    let rows = sample_rows(dataset.len(), args.sample_size, config.seed);
    let threads = args.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let (report, sets) =
        pool.install(|| run_bench(&dataset, &model, &rows, &CfConstraints::default(), &config))?;
    if let Some(path) = &args.raw {
        std::fs::write(path, serde_json::to_string(&sets)?).with_context(|| format!("writing {}", path.display()))?;
    }
    let m = &report.metrics;
    println!("dataset             {}", report.dataset);
    println!("rows                {}", report.rows);
    println!("threads             {}", report.threads);
    println!("elapsed_secs        {:.3}", report.elapsed_secs);
    println!("instance_validity   {:.4}", m.instance_validity);
    println!("candidate_validity  {:.4}", m.candidate_validity);
    println!("proximity           {:.4}", m.proximity);
    println!("diversity           {:.4}", m.diversity);
    println!("sparsity            {:.4}", m.sparsity);
    Ok(())
}

fn serve(config: &Path) -> anyhow::Result<()> {
    let config = cfprobe_service::ServiceConfig::load(config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(cfprobe_service::serve(config))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Serve { config } => serve(config),
        Command::Gen(a) => gen(a),
        Command::Rcf(a) => rcf(a),
        Command::Train(a) => train(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            // invalid input (not I/O) exits with 2
            let invalid = e.downcast_ref::<cfprobe::Error>().is_some_and(|e| !matches!(e, cfprobe::Error::Io { .. }));
            ExitCode::from(if invalid { 2 } else { 1 })
        }
    }
}
