use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mixopt::corpus::{baseline_weights_from_counts, ingest, resample_dataset, Corpus, MixtureSpec};
use mixopt::driver::{iterated_doremi, run_dir_name, run_round, RunDir, DEFAULT_TOL};
use mixopt::dro::{self, Clipping, DroConfig, ObjectiveMode, RunManifest};
use mixopt::loss::{DirichletUnigramModel, ReplayRole, ReplayStore, ReplayedLossModel};
use mixopt::report::{compare_weights, read_trajectory_csv, render_comparison, trajectory_svg, DEFAULT_EMA_DECAY};
use mixopt::toy::{self, ReferenceChoice, ToySimConfig};
use mixopt::weights_io::{read_weights, write_weights, WeightFormat};
use mixopt::DomainWeights;

const EXIT_INPUT: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Domain-weight optimization for multi-domain text corpora.
#[derive(Parser, Debug)]
#[command(name = "mixopt", version)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tokenize and chunk a corpus manifest; print its fingerprint.
    Ingest(IngestArgs),
    /// Run one reweighting round and write the averaged weights.
    Optimize(OptimizeArgs),
    /// Repeat rounds, feeding each result back as the reference mixture.
    Iterate(IterateArgs),
    /// Draw a new dataset from the corpus under given weights.
    Resample(ResampleArgs),
    /// Run the three-domain unigram simulation and its oracle checks.
    ToySim(ToySimArgs),
    /// Compare two weight files and plot a trajectory.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Corpus manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for corpus.json and baseline weights.
    #[arg(long)]
    out: PathBuf,
    /// Format of the baseline weight file.
    #[arg(long, default_value = "json")]
    format: WeightFormat,
}

#[derive(Args, Debug, Clone)]
struct DroArgs {
    /// Corpus manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Reweighting steps per round.
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Step size of the weight update.
    #[arg(long, default_value_t = dro::DEFAULT_ETA)]
    eta: f64,
    /// Mixing weight toward uniform after each update.
    #[arg(long = "smoothing-c", default_value_t = dro::DEFAULT_SMOOTHING)]
    smoothing_c: f64,
    #[arg(long, default_value = "excess", value_parser = ["excess", "hardest", "easiest"])]
    objective: String,
    #[arg(long, default_value = "per-token", value_parser = ["per-token", "per-domain", "none"])]
    clipping: String,
    /// Master seed; every random stream is derived from it.
    #[arg(long)]
    seed: u64,
    /// Reference mixture (default: uniform).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Format of --weights when the extension does not say.
    #[arg(long)]
    format: Option<WeightFormat>,
    /// Total Dirichlet pseudo-count per domain of the built-in unigram models.
    #[arg(long, default_value_t = 1.0)]
    prior_mass: f64,
}

impl DroArgs {
    fn config(&self) -> Result<DroConfig> {
        let mut c = DroConfig::new(self.steps, self.batch_size, self.seed);
        c.eta = self.eta;
        c.smoothing = self.smoothing_c;
        c.objective = self.objective.parse::<ObjectiveMode>()?;
        c.clipping = self.clipping.parse::<Clipping>()?;
        c.validate()?;
        Ok(c)
    }

    fn alpha_ref(&self, corpus: &Corpus) -> Result<DomainWeights> {
        match &self.weights {
            None => Ok(DomainWeights::uniform(corpus.domains().clone())),
            Some(path) => {
                let loaded = read_weights(path, self.format)?;
                for w in &loaded.warnings {
                    log::warn!("{}: {w}", path.display());
                }
                align(&loaded.weights, corpus)
            }
        }
    }
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[command(flatten)]
    dro: DroArgs,
    /// Line-delimited JSON of externally computed proxy and reference losses.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IterateArgs {
    #[command(flatten)]
    dro: DroArgs,
    /// Stop once no weight moves by this much between rounds.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = 10)]
    max_rounds: usize,
}

#[derive(Args, Debug)]
struct ResampleArgs {
    /// Corpus manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Target mixture.
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    format: Option<WeightFormat>,
    /// Number of examples to draw.
    #[arg(long)]
    n_out: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for per-domain JSONL files and manifest.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ToySimArgs {
    /// First seed; runs use seed, seed+1, ...
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    num_seeds: u64,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long = "smoothing-c", default_value_t = 0.0)]
    smoothing_c: f64,
    #[arg(long, default_value_t = 10)]
    eval_per_domain: usize,
    #[arg(long, default_value_t = 10)]
    eval_len: usize,
    #[arg(long, default_value = "per-token", value_parser = ["per-token", "per-domain", "none"])]
    clipping: String,
    #[arg(long, default_value = "training-set-fit", value_parser = ["training-set-fit", "independent-fit", "ground-truth"])]
    reference: String,
    /// Monte Carlo trials per (domain, count) cell of the error table.
    #[arg(long, default_value_t = 200_000)]
    lemma_trials: usize,
    /// Report path (default: print to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Weights for the left column.
    #[arg(long)]
    baseline: PathBuf,
    /// Weights for the right column.
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    format: Option<WeightFormat>,
    /// Trajectory CSV to plot.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Smoothing of the plotted trajectory.
    #[arg(long, default_value_t = DEFAULT_EMA_DECAY)]
    ema_decay: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// Reorders `weights` into the corpus's domain order.
fn align(weights: &DomainWeights, corpus: &Corpus) -> Result<DomainWeights> {
    if weights.len() != corpus.num_domains() {
        bail!(mixopt::Error::DimensionMismatch {
            expected: corpus.num_domains(),
            actual: weights.len(),
        });
    }
    let values = corpus
        .domains()
        .iter()
        .map(|name| {
            weights
                .get(name)
                .ok_or_else(|| mixopt::Error::UnknownDomain(name.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DomainWeights::new(corpus.domains().clone(), values)?)
}

fn load_corpus(manifest: &Path) -> Result<Corpus> {
    let (_, corpus) = ingest(manifest)?;
    log::info!(
        "ingested {} examples in {} domains from {}",
        corpus.total_examples(),
        corpus.num_domains(),
        manifest.display()
    );
    Ok(corpus)
}

fn unigram_factory(corpus: &Corpus, mass: f64) -> impl Fn() -> mixopt::Result<DirichletUnigramModel> {
    let (k, vocab) = (corpus.num_domains(), corpus.vocab_size());
    move || DirichletUnigramModel::symmetric(k, vocab, mass)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).map_err(|e| mixopt::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    let (manifest, corpus) = ingest(&args.manifest)?;
    let baseline = baseline_weights_from_counts(&corpus, &manifest.epochs())?;
    for w in &baseline.warnings {
        log::warn!("{w}");
    }
    let fingerprint = corpus.fingerprint();
    let summary = json!({
        "fingerprint": fingerprint,
        "tokenizer": corpus.tokenizer(),
        "vocab_size": corpus.vocab_size(),
        "max_len": corpus.max_len(),
        "examples": corpus.domains().iter().zip(corpus.counts()).map(|(n, c)| (n.to_string(), json!(c))).collect::<serde_json::Map<_, _>>(),
        "baseline_weights": baseline.weights,
    });
    write_text(
        &args.out.join("corpus.json"),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    let path = args.out.join(format!("baseline_weights.{}", args.format.extension()));
    write_weights(&baseline.weights, &path, args.format)?;
    println!("{fingerprint}");
    Ok(())
}

fn cmd_optimize(args: &OptimizeArgs) -> Result<()> {
    let corpus = load_corpus(&args.dro.manifest)?;
    let config = args.dro.config()?;
    fs::create_dir_all(&args.dro.out).with_context(|| format!("creating {}", args.dro.out.display()))?;
    let (averaged, trajectory, objectives) = match &args.replay {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| mixopt::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let store = Arc::new(ReplayStore::from_jsonl(BufReader::new(file), &corpus)?);
            let reference = ReplayedLossModel::new(store.clone(), ReplayRole::Reference);
            let proxy = ReplayedLossModel::new(store, ReplayRole::Proxy);
            let r = dro::run(&config, &corpus, Some(&reference), proxy)?;
            (r.averaged, r.trajectory, r.objectives)
        }
        None => {
            let alpha_ref = args.dro.alpha_ref(&corpus)?;
            let fresh = unigram_factory(&corpus, args.dro.prior_mass);
            let record = run_round(&corpus, &alpha_ref, &config, 1, &fresh, None)?;
            let objectives = record
                .trajectory
                .iter()
                .map(|s| dro::dro_objective(&s.excess, &s.weights))
                .collect::<mixopt::Result<Vec<_>>>()?;
            (record.averaged, record.trajectory, objectives)
        }
    };
    let out = &args.dro.out;
    for format in [WeightFormat::Json, WeightFormat::Tsv] {
        write_weights(&averaged, &out.join(format!("weights.{}", format.extension())), format)?;
    }
    let csv = dro::write_trajectory_csv(&trajectory, &objectives, Vec::new())?;
    write_text(&out.join("trajectory.csv"), &String::from_utf8(csv)?)?;
    let manifest = RunManifest::new(&config, &corpus, &averaged);
    write_text(
        &out.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?;
    print_json(&json!({ "weights": averaged }))
}

fn cmd_iterate(args: &IterateArgs) -> Result<()> {
    let corpus = load_corpus(&args.dro.manifest)?;
    let config = args.dro.config()?;
    let alpha_init = args.dro.alpha_ref(&corpus)?;
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let dir = RunDir::create(&args.dro.out, &run_dir_name(&config, &corpus.fingerprint(), now))?;
    let fresh = unigram_factory(&corpus, args.dro.prior_mass);
    let records = iterated_doremi(
        &corpus,
        &alpha_init,
        &config,
        args.tol,
        args.max_rounds,
        &fresh,
        Some(&dir),
    )?;
    let last = records.last().expect("at least one round");
    for format in [WeightFormat::Json, WeightFormat::Tsv] {
        write_weights(
            &last.averaged,
            &dir.path().join(format!("weights.{}", format.extension())),
            format,
        )?;
    }
    print_json(&json!({
        "run_dir": dir.path(),
        "rounds": records.len(),
        "converged": last.change < args.tol,
        "change": last.change,
        "weights": last.averaged,
    }))
}

fn cmd_resample(args: &ResampleArgs) -> Result<()> {
    let corpus = load_corpus(&args.manifest)?;
    let loaded = read_weights(&args.weights, args.format)?;
    for w in &loaded.warnings {
        log::warn!("{}: {w}", args.weights.display());
    }
    let weights = align(&loaded.weights, &corpus)?;
    let spec = MixtureSpec::new(weights, args.n_out, args.seed)?;
    let manifest = resample_dataset(&corpus, &spec, &args.out)?;
    print_json(&json!({ "out": args.out, "realized_counts": manifest.realized_counts }))
}

fn cmd_toy_sim(args: &ToySimArgs) -> Result<()> {
    let config = ToySimConfig {
        steps: args.steps,
        eta: args.eta,
        batch_size: args.batch_size,
        eval_per_domain: args.eval_per_domain,
        eval_len: args.eval_len,
        smoothing: args.smoothing_c,
        clipping: args.clipping.parse()?,
        reference: args.reference.parse::<ReferenceChoice>()?,
    };
    if args.num_seeds == 0 {
        bail!(mixopt::Error::InvalidParameter("num-seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..args.num_seeds).map(|i| args.seed.wrapping_add(i)).collect();
    let instance = toy::no_tradeoff_instance();
    let report = toy::toy_sim_report(&instance, &config, &seeds, &[0, 1, 10, 100], args.lemma_trials)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &args.out {
        Some(path) => {
            write_text(path, &text)?;
            print_json(&json!({
                "mean_weights": report.mean_weights,
                "improves_all_count": report.improves_all_count,
                "seeds": seeds.len(),
            }))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let baseline = read_weights(&args.baseline, args.format)?.weights;
    let optimized = read_weights(&args.weights, args.format)?.weights;
    let rows = compare_weights(&baseline, &optimized)?;
    let table = render_comparison(&rows, "Baseline", "Optimized");
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_text(&args.out.join("comparison.md"), &table)?;
    write_text(
        &args.out.join("comparison.json"),
        &(serde_json::to_string_pretty(&rows)? + "\n"),
    )?;
    if let Some(path) = &args.trajectory {
        let text = fs::read_to_string(path).map_err(|e| mixopt::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let traj = read_trajectory_csv(&text, path)?;
        write_text(
            &args.out.join("trajectory.svg"),
            &trajectory_svg(&traj, args.ema_decay)?,
        )?;
    }
    print!("{table}");
    Ok(())
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("MIXOPT_LOG", "warn");
    env_logger::Builder::from_env(env)
        .format(|buf, record| {
            let line = json!({
                "level": record.level().to_string().to_lowercase(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .init();
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<mixopt::Error>()) {
        Some(e) if !e.is_input_error() => EXIT_RUNTIME,
        Some(_) => EXIT_INPUT,
        None => EXIT_RUNTIME,
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Iterate(a) => cmd_iterate(a),
        Command::Resample(a) => cmd_resample(a),
        Command::ToySim(a) => cmd_toy_sim(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            let kind = if code == EXIT_INPUT { "input" } else { "runtime" };
            let causes: Vec<String> = err.chain().skip(1).map(|c| c.to_string()).collect();
            eprintln!(
                "{}",
                json!({ "error": kind, "message": err.to_string(), "causes": causes, "exit_code": code })
            );
            ExitCode::from(code)
        }
    }
}
