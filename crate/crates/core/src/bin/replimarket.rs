use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use replimarket::agents::AgentPool;
use replimarket::config::ExperimentConfig;
use replimarket::dataset::{fit_normalization, generate_synthetic, load_dataset, normalize_all, save_dataset, FeatureSchema, PaperRecord};
use replimarket::eval::{self, read_roster, roster_for, MarketRun};
use replimarket::evolution::{train_market_with_progress, write_metrics_csv};
use replimarket::market::write_trade_log;
use replimarket::rng::rng_from_seed;
use replimarket::service::http::{serve, Service};
use replimarket::service::EventConfig;

#[derive(Parser)]
#[command(name = "replimarket", version, about = "Agent and hybrid prediction markets on replication outcomes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve an agent pool on a labelled dataset.
    Train(TrainArgs),
    /// Run bot-only markets over a dataset and write a result CSV.
    RunArtificial(RunArgs),
    /// Run markets with scripted human traders alongside the agents.
    RunHybridScripted {
        #[command(flatten)]
        run: RunArgs,
        /// Roster CSV: traderId,strategy,priorProbability,aggressiveness[,margin][,claimId]
        #[arg(long)]
        humans: PathBuf,
    },
    /// Compare two result CSVs market by market.
    Evaluate(EvaluateArgs),
    /// Start the market service.
    Serve(ServeArgs),
    /// Write a synthetic labelled dataset.
    GenerateSynthetic {
        #[arg(long, default_value_t = 450)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        difficulty: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Labelled training dataset (CSV).
    #[arg(long = "train", alias = "dataset")]
    train: PathBuf,
    /// Output pool file. The fitted schema goes to `<out>.schema` and epoch
    /// metrics to `<out>.metrics.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `rngSeed` from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Feature schema; the built-in 41-feature schema when absent.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Train on the features as given instead of z-scoring them.
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    /// Result CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Schema used to read and normalize the dataset; defaults to
    /// `<pool>.schema` when present.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Write every market's trade log (JSON lines) into this directory.
    #[arg(long)]
    trade_logs: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Result CSV of the first setting (for example hybrid markets).
    a: PathBuf,
    /// Result CSV of the second setting (for example artificial markets).
    b: PathBuf,
    #[arg(long, default_value = "hybrid")]
    label_a: String,
    #[arg(long, default_value = "artificial")]
    label_b: String,
    /// Per-market comparison table (CSV). Printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    /// Default agent pool for events that do not name one.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Event config (JSON) to create at startup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the startup event's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Start the startup event's clock immediately.
    #[arg(long)]
    open: bool,
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.training.rng_seed = seed;
    }
    let schema = match &args.schema {
        Some(p) => FeatureSchema::load(p)?,
        None => FeatureSchema::default_schema(),
    };
    let records = load_dataset(&args.train, &schema).with_context(|| format!("reading {}", args.train.display()))?;
    let (schema, records) = if args.no_normalize {
        (schema, records)
    } else {
        let fitted = fit_normalization(&records, &schema)?;
        let normalized = normalize_all(&records, &fitted)?;
        (fitted, normalized)
    };
    eprintln!(
        "training on {} papers: population {}, {} epochs, seed {}",
        records.len(),
        cfg.training.population_size,
        cfg.training.epochs,
        cfg.training.rng_seed
    );
    let run = train_market_with_progress(&records, &schema, &cfg.training, |m| {
        eprintln!(
            "epoch {:>3}  meanTrainingAE {:.4}  survivors {:.1}  meanWealth {:.3}",
            m.epoch, m.mean_training_ae, m.survivors, m.mean_wealth
        )
    })?;
    AgentPool::new(&schema, run.pool).save(&args.out)?;
    schema.save(sidecar(&args.out, ".schema"))?;
    write_metrics_csv(File::create(sidecar(&args.out, ".metrics.csv"))?, &run.metrics)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn load_run_inputs(args: &RunArgs) -> Result<(AgentPool, FeatureSchema, Vec<PaperRecord>)> {
    let pool = AgentPool::load(&args.pool).with_context(|| format!("reading pool {}", args.pool.display()))?;
    let default_schema = sidecar(&args.pool, ".schema");
    let schema = match &args.schema {
        Some(p) => FeatureSchema::load(p)?,
        None if default_schema.exists() => FeatureSchema::load(&default_schema)?,
        None => FeatureSchema::default_schema(),
    };
    pool.check_schema(&schema)?;
    let mut records = load_dataset(&args.dataset, &schema).with_context(|| format!("reading {}", args.dataset.display()))?;
    if schema.is_fitted() {
        records = normalize_all(&records, &schema)?;
    }
    Ok((pool, schema, records))
}

fn run_markets(args: RunArgs, humans: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let (pool, schema, records) = load_run_inputs(&args)?;
    let roster = match &humans {
        Some(p) => read_roster(File::open(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => Vec::new(),
    };
    let runs = eval::run_batch(&records, &pool, &schema, cfg.market, cfg.human_endowment, args.seed, |p| {
        roster_for(&roster, &p.claim_id)
    })?;
    report_runs(&runs);
    if let Some(dir) = &args.trade_logs {
        std::fs::create_dir_all(dir)?;
        for r in &runs {
            write_trade_log(BufWriter::new(File::create(dir.join(format!("{}.jsonl", r.market_id)))?), &r.trade_log)?;
        }
    }
    let results: Vec<_> = runs.iter().filter_map(MarketRun::result).collect();
    if results.len() < runs.len() {
        eprintln!("{} papers have no outcome and are left out of the result CSV", runs.len() - results.len());
    }
    eval::save_results(&args.out, &results)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn report_runs(runs: &[MarketRun]) {
    for r in runs {
        eprintln!(
            "{:<16} price {:.4}  agent trades {:>5}  human trades {:>5}",
            r.market_id, r.final_price_yes, r.agent_trades, r.human_trades
        );
    }
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let a = eval::load_results(&args.a)?;
    let b = eval::load_results(&args.b)?;
    let summary = eval::summarize(&a, &b)?;
    match &args.out {
        Some(p) => summary.write_table(File::create(p)?, &args.label_a, &args.label_b)?,
        None => summary.write_table(std::io::stdout().lock(), &args.label_a, &args.label_b)?,
    }
    let n = summary.rows.len();
    println!("mean AE {}: {:.4}", args.label_a, summary.mean_ae_a);
    println!("mean AE {}: {:.4}", args.label_b, summary.mean_ae_b);
    println!("correct: {} {}/{n}, {} {}/{n}", args.label_a, summary.count_correct_a, args.label_b, summary.count_correct_b);
    println!("{} AE lower in {} of {n} markets", args.label_a, summary.count_a_lower);
    println!(
        "{} correct where {} incorrect: {}; the reverse: {}",
        args.label_a, args.label_b, summary.count_flipped_to_correct, summary.count_flipped_to_incorrect
    );
    match summary.wilcoxon() {
        Ok(w) => println!("Wilcoxon signed ranks: n = {}, W+ = {}, z = {:.4}, two-sided p = {:.4}", w.n, w.w_plus, w.z, w.p_two_sided),
        Err(e) => println!("Wilcoxon signed ranks: {e}"),
    }
    Ok(())
}

async fn run_service(args: ServeArgs) -> Result<()> {
    let pool = args.pool.as_ref().map(AgentPool::load).transpose()?;
    let svc = Service::new(pool);
    if let Some(p) = &args.config {
        let mut cfg: EventConfig = serde_json::from_reader(File::open(p)?).with_context(|| format!("reading {}", p.display()))?;
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        let event = svc.create_event(cfg)?;
        tracing::info!(event = event.event_id(), "event created");
        if args.open {
            svc.open_event(event.event_id())?;
        }
    } else if args.open {
        bail!("--open needs --config");
    }
    let listener = tokio::net::TcpListener::bind(&args.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    serve(listener, svc).await?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => train(args),
        Command::RunArtificial(args) => run_markets(args, None),
        Command::RunHybridScripted { run, humans } => run_markets(run, Some(humans)),
        Command::Evaluate(args) => evaluate(args),
        Command::Serve(args) => {
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
                )
                .init();
            tokio::runtime::Runtime::new()?.block_on(run_service(args))
        }
        Command::GenerateSynthetic { n, difficulty, seed, out } => {
            let records = generate_synthetic(n, difficulty, &mut rng_from_seed(seed));
            save_dataset(&out, &records, &FeatureSchema::default_schema())?;
            eprintln!("wrote {} papers to {}", records.len(), out.display());
            Ok(())
        }
    }
}
