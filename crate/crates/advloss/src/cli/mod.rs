//! Command-line surface wiring the library together.
//!
//! Subcommands: `gen-data`, `train`, `search`, `eval`, `landscape`,
//! `gradcheck`, `simplify`. Every parameter resolves with the precedence
//! CLI flag > `--config` file > default, numeric output is fixed at six
//! decimals, and identical invocations with identical seeds produce
//! byte-identical artifacts regardless of `--workers`.

mod gradcheck;
mod kv;

pub use gradcheck::{all_pass, run_gradcheck, CheckRow};
pub use kv::{resolve, KvFile};

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::attack::{AttackError, AttackSpec, NormKind};
use crate::expr;
use crate::losses::{builtin_catalog, LossError, SurrogateLoss};
use crate::model::{
    self, load_dataset, load_model, save_dataset, save_model, AtMode, ModelError,
    TrainConfig,
};
use crate::riskeval::{
    approx_risk, find_landscape_anchors, landscape_grid, write_landscape_files, RiskError,
    RiskReport,
};
use crate::search::{run_search, SearchConfig, SearchError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Expr(#[from] expr::ExprError),
    #[error(transparent)]
    Parse(#[from] expr::ParseError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Parser)]
#[command(
    name = "advloss",
    version,
    about = "Adversarial risk evaluation with pluggable surrogate losses and evolutionary loss search"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset file (blobs, rings, or an MNIST-format subset)
    GenData(GenDataArgs),
    /// Train an MLP fixture, optionally with FGSM adversarial training
    Train(TrainArgs),
    /// Search for a surrogate loss with the GP engine
    Search(SearchArgs),
    /// Evaluate adversarial risk of a model under a surrogate loss
    Eval(EvalArgs),
    /// Export loss-landscape grids over two adversarial directions
    Landscape(LandscapeArgs),
    /// Check analytic gradients against central finite differences
    Gradcheck(GradcheckArgs),
    /// Algebraically simplify an expression file
    Simplify(SimplifyArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// key=value configuration file; flags override its entries
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master random seed
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads for fitness/risk evaluation (results are
    /// worker-count invariant)
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Output path (file or directory depending on the command)
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

/// Attack flags shared by search, eval and landscape.
#[derive(Debug, Args, Default)]
pub struct AttackArgs {
    /// Perturbation norm: linf or l2
    #[arg(long, value_name = "NORM")]
    pub norm: Option<String>,
    /// Perturbation budget
    #[arg(long, value_name = "F")]
    pub eps: Option<f64>,
    /// Attack steps
    #[arg(long, value_name = "N")]
    pub steps: Option<usize>,
    /// Attack step size (default 2.5*eps/steps)
    #[arg(long, value_name = "F")]
    pub step_size: Option<f64>,
    /// Disable the uniform random start
    #[arg(long)]
    pub no_random_start: bool,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// blobs, rings, or mnist-subset
    #[arg(long)]
    pub kind: Option<String>,
    /// Number of samples
    #[arg(long)]
    pub n: Option<usize>,
    /// Feature dimensions (blobs only; rings are 2-D)
    #[arg(long)]
    pub dims: Option<usize>,
    /// Number of classes
    #[arg(long)]
    pub classes: Option<usize>,
    /// Blob standard deviation
    #[arg(long)]
    pub std: Option<f64>,
    /// IDX image file for kind=mnist-subset
    #[arg(long, value_name = "PATH")]
    pub mnist_images: Option<PathBuf>,
    /// IDX label file for kind=mnist-subset
    #[arg(long, value_name = "PATH")]
    pub mnist_labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset file
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Hidden layer widths, comma separated (e.g. 16,16)
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adversarial training mode: none or fgsm
    #[arg(long)]
    pub at: Option<String>,
    /// FGSM budget when --at fgsm
    #[arg(long)]
    pub eps: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub attack: AttackArgs,
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub population_size: Option<usize>,
    #[arg(long)]
    pub tournament_size: Option<usize>,
    #[arg(long)]
    pub crossover_rate: Option<f64>,
    #[arg(long)]
    pub mutation_rate: Option<f64>,
    #[arg(long)]
    pub fitness_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub attack: AttackArgs,
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Catalog loss name or expression file path
    #[arg(long)]
    pub loss: Option<String>,
}

#[derive(Debug, Args)]
pub struct LandscapeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub attack: AttackArgs,
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Handcrafted anchor loss (name or expression file)
    #[arg(long)]
    pub hc_loss: Option<String>,
    /// Searched anchor loss (name or expression file)
    #[arg(long)]
    pub bs_loss: Option<String>,
    /// Losses to chart, comma separated catalog names
    #[arg(long)]
    pub losses: Option<String>,
    /// Lattice resolution per axis
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Use this sample index instead of scanning for anchors
    #[arg(long)]
    pub sample: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SimplifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Expression file to simplify
    #[arg(long, value_name = "PATH")]
    pub expr: Option<PathBuf>,
}

/// Dispatch a parsed command line. Errors bubble up for `main` to print
/// as a single `error: ...` line with a nonzero exit code.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Search(args) => cmd_search(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Landscape(args) => cmd_landscape(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Simplify(args) => cmd_simplify(args),
    }
}

fn load_kv(common: &CommonArgs) -> Result<KvFile, CliError> {
    match &common.config {
        Some(path) => KvFile::load(path),
        None => Ok(KvFile::empty()),
    }
}

fn resolve_seed(common: &CommonArgs, kv: &KvFile) -> Result<u64, CliError> {
    resolve(common.seed, kv, "seed", 0)
}

fn resolve_out(common: &CommonArgs, kv: &KvFile) -> Result<Option<PathBuf>, CliError> {
    Ok(match &common.out {
        Some(p) => Some(p.clone()),
        None => kv.raw("out").map(PathBuf::from),
    })
}

fn require_out(common: &CommonArgs, kv: &KvFile) -> Result<PathBuf, CliError> {
    resolve_out(common, kv)?
        .ok_or_else(|| CliError::Usage("--out is required for this command".into()))
}

fn require_path(
    flag: &Option<PathBuf>,
    kv: &KvFile,
    key: &str,
) -> Result<PathBuf, CliError> {
    if let Some(p) = flag {
        return Ok(p.clone());
    }
    kv.raw(key)
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Usage(format!("--{key} is required")))
}

fn parse_norm(text: &str) -> Result<NormKind, CliError> {
    match text {
        "linf" => Ok(NormKind::Linf),
        "l2" => Ok(NormKind::L2),
        other => Err(CliError::Usage(format!(
            "unknown norm `{other}` (expected linf or l2)"
        ))),
    }
}

/// Resolve the attack spec from flags, file and defaults. The step-size
/// default tracks the resolved epsilon and step count.
fn resolve_attack(
    args: &AttackArgs,
    kv: &KvFile,
    seed: u64,
    default: &AttackSpec,
) -> Result<AttackSpec, CliError> {
    let norm_text = match &args.norm {
        Some(t) => t.clone(),
        None => kv
            .raw("norm")
            .unwrap_or(default.norm.name())
            .to_string(),
    };
    let norm = parse_norm(&norm_text)?;
    let epsilon = resolve(args.eps, kv, "eps", default.epsilon)?;
    let steps = resolve(args.steps, kv, "steps", default.steps)?;
    let step_size = match args.step_size {
        Some(s) => s,
        None => match kv.get::<f64>("step_size")? {
            Some(s) => s,
            None => AttackSpec::pgd(norm, epsilon, steps).step_size,
        },
    };
    let random_start = if args.no_random_start {
        false
    } else {
        kv.get::<bool>("random_start")?.unwrap_or(true)
    };
    let spec = AttackSpec {
        norm,
        epsilon,
        steps,
        step_size,
        random_start,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

/// Run a closure in a dedicated thread pool when --workers is given.
fn with_pool<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, CliError> {
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// A loss given as a catalog name or as an expression file path.
fn resolve_loss(text: &str) -> Result<SurrogateLoss, CliError> {
    let catalog = builtin_catalog();
    if let Ok(loss) = catalog.get(text) {
        return Ok(loss.clone());
    }
    let path = Path::new(text);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "`{text}` is neither a catalog loss ({}) nor an expression file",
            catalog.names().join(", ")
        )));
    }
    let source = fs::read_to_string(path)?;
    let tree = expr::parse(source.trim())?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("custom");
    Ok(SurrogateLoss::from_tree(name, tree))
}

const GEN_DATA_KEYS: &[&str] = &[
    "kind", "n", "dims", "classes", "std", "mnist_images", "mnist_labels", "seed", "out",
];

fn cmd_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let kv = load_kv(&args.common)?;
    kv.check_keys(GEN_DATA_KEYS)?;
    let seed = resolve_seed(&args.common, &kv)?;
    let out = require_out(&args.common, &kv)?;
    let kind = match &args.kind {
        Some(k) => k.clone(),
        None => kv.raw("kind").unwrap_or("blobs").to_string(),
    };
    let n = resolve(args.n, &kv, "n", 1000)?;
    let dims = resolve(args.dims, &kv, "dims", 2)?;
    let classes = resolve(args.classes, &kv, "classes", 3)?;
    let std = resolve(args.std, &kv, "std", 0.08)?;

    let dataset = match kind.as_str() {
        "blobs" => model::make_blobs(n, dims, classes, std, seed)?,
        "rings" => model::make_rings(n, classes, seed)?,
        "mnist-subset" | "mnist_subset" => {
            let images = require_path(&args.mnist_images, &kv, "mnist_images")?;
            let labels = require_path(&args.mnist_labels, &kv, "mnist_labels")?;
            model::mnist_subset(&images, &labels, n, seed)?
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown dataset kind `{other}` (expected blobs, rings, or mnist-subset)"
            )))
        }
    };
    save_dataset(&dataset, &out)?;
    println!(
        "wrote {} ({} samples, {} dims, {} classes)",
        out.display(),
        dataset.n_samples(),
        dataset.input_dim(),
        dataset.num_classes()
    );
    Ok(())
}

const TRAIN_KEYS: &[&str] = &[
    "data",
    "hidden",
    "epochs",
    "lr",
    "batch_size",
    "at",
    "eps",
    "seed",
    "out",
];

fn parse_hidden(text: &str) -> Result<Vec<usize>, CliError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("bad hidden width `{t}`")))
        })
        .collect()
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let kv = load_kv(&args.common)?;
    kv.check_keys(TRAIN_KEYS)?;
    let seed = resolve_seed(&args.common, &kv)?;
    let out = require_out(&args.common, &kv)?;
    let data_path = require_path(&args.data, &kv, "data")?;
    let dataset = load_dataset(&data_path)?;

    let hidden_text = match &args.hidden {
        Some(h) => h.clone(),
        None => kv.raw("hidden").unwrap_or("16,16").to_string(),
    };
    let at_text = match &args.at {
        Some(a) => a.clone(),
        None => kv.raw("at").unwrap_or("none").to_string(),
    };
    let at_mode = match at_text.as_str() {
        "none" => AtMode::None,
        "fgsm" => AtMode::Fgsm,
        other => {
            return Err(CliError::Usage(format!(
                "unknown at mode `{other}` (expected none or fgsm)"
            )))
        }
    };
    let config = TrainConfig {
        hidden: parse_hidden(&hidden_text)?,
        epochs: resolve(args.epochs, &kv, "epochs", 60)?,
        lr: resolve(args.lr, &kv, "lr", 0.5)?,
        batch_size: resolve(args.batch_size, &kv, "batch_size", 32)?,
        at_mode,
        epsilon: resolve(args.eps, &kv, "eps", 0.0)?,
        seed,
    };
    let outcome = model::train(&dataset, &config)?;
    save_model(&outcome.model, &out)?;
    let last = outcome.curve.last().expect("at least one epoch");
    println!(
        "clean_accuracy={:.6} final_loss={:.6} epochs={} model={}",
        last.accuracy,
        last.mean_loss,
        outcome.curve.len(),
        out.display()
    );
    Ok(())
}

const SEARCH_KEYS: &[&str] = &[
    "data",
    "model",
    "generations",
    "max_depth",
    "population_size",
    "tournament_size",
    "crossover_rate",
    "mutation_rate",
    "fitness_samples",
    "norm",
    "eps",
    "steps",
    "step_size",
    "random_start",
    "seed",
    "workers",
    "out",
];

fn cmd_search(args: SearchArgs) -> Result<(), CliError> {
    let kv = load_kv(&args.common)?;
    kv.check_keys(SEARCH_KEYS)?;
    let seed = resolve_seed(&args.common, &kv)?;
    let workers = match args.common.workers {
        Some(w) => Some(w),
        None => kv.get::<usize>("workers")?,
    };
    let out_dir = require_out(&args.common, &kv)?;
    let dataset = load_dataset(&require_path(&args.data, &kv, "data")?)?;
    let net = load_model(&require_path(&args.model, &kv, "model")?)?;

    let defaults = SearchConfig::default();
    let attack = resolve_attack(&args.attack, &kv, seed, &defaults.attack)?;
    let config = SearchConfig {
        generations: resolve(args.generations, &kv, "generations", defaults.generations)?,
        max_depth: resolve(args.max_depth, &kv, "max_depth", defaults.max_depth)?,
        population_size: resolve(
            args.population_size,
            &kv,
            "population_size",
            defaults.population_size,
        )?,
        tournament_size: resolve(
            args.tournament_size,
            &kv,
            "tournament_size",
            defaults.tournament_size,
        )?,
        crossover_rate: resolve(
            args.crossover_rate,
            &kv,
            "crossover_rate",
            defaults.crossover_rate,
        )?,
        mutation_rate: resolve(
            args.mutation_rate,
            &kv,
            "mutation_rate",
            defaults.mutation_rate,
        )?,
        fitness_samples: resolve(
            args.fitness_samples,
            &kv,
            "fitness_samples",
            defaults.fitness_samples,
        )?,
        attack,
        seed,
    };

    let outcome = with_pool(workers, || run_search(&config, &net, &dataset))??;

    fs::create_dir_all(&out_dir)?;
    let log_path = out_dir.join("search_log.csv");
    let mut log_bytes = Vec::new();
    outcome.log.write_csv(&mut log_bytes)?;
    fs::write(&log_path, log_bytes)?;
    let expr_path = out_dir.join("best_expression.txt");
    fs::write(
        &expr_path,
        format!("{}\n", outcome.best.tree().expect("tree loss")),
    )?;
    println!(
        "best_fitness={:.6} best_expression={} log={}",
        outcome.best_fitness,
        outcome.best.tree().expect("tree loss"),
        log_path.display()
    );
    Ok(())
}

const EVAL_KEYS: &[&str] = &[
    "data",
    "model",
    "loss",
    "norm",
    "eps",
    "steps",
    "step_size",
    "random_start",
    "seed",
    "workers",
    "out",
];

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let kv = load_kv(&args.common)?;
    kv.check_keys(EVAL_KEYS)?;
    let seed = resolve_seed(&args.common, &kv)?;
    let workers = match args.common.workers {
        Some(w) => Some(w),
        None => kv.get::<usize>("workers")?,
    };
    let dataset = load_dataset(&require_path(&args.data, &kv, "data")?)?;
    let net = load_model(&require_path(&args.model, &kv, "model")?)?;
    let loss_text = match &args.loss {
        Some(l) => l.clone(),
        None => kv
            .raw("loss")
            .ok_or_else(|| CliError::Usage("--loss is required".into()))?
            .to_string(),
    };
    let loss = resolve_loss(&loss_text)?;
    let default_attack = AttackSpec::pgd(NormKind::Linf, 8.0 / 255.0, 100);
    let spec = resolve_attack(&args.attack, &kv, seed, &default_attack)?;

    let report: RiskReport =
        with_pool(workers, || approx_risk(&net, &loss, &dataset, &spec))??;
    let text = format!("{}\n{}\n", RiskReport::csv_header(), report.csv_row());
    match resolve_out(&args.common, &kv)? {
        Some(path) => {
            fs::write(&path, &text)?;
            println!(
                "adversarial_accuracy={:.6} r_double_prime={:.6} report={}",
                report.adversarial_accuracy,
                report.r_double_prime,
                path.display()
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}

const LANDSCAPE_KEYS: &[&str] = &[
    "data",
    "model",
    "hc_loss",
    "bs_loss",
    "losses",
    "resolution",
    "sample",
    "norm",
    "eps",
    "steps",
    "step_size",
    "random_start",
    "seed",
    "out",
];

fn cmd_landscape(args: LandscapeArgs) -> Result<(), CliError> {
    let kv = load_kv(&args.common)?;
    kv.check_keys(LANDSCAPE_KEYS)?;
    let seed = resolve_seed(&args.common, &kv)?;
    let out_dir = require_out(&args.common, &kv)?;
    let dataset = load_dataset(&require_path(&args.data, &kv, "data")?)?;
    let net = load_model(&require_path(&args.model, &kv, "model")?)?;

    let hc_text = match &args.hc_loss {
        Some(t) => t.clone(),
        None => kv.raw("hc_loss").unwrap_or("cw").to_string(),
    };
    let bs_text = match &args.bs_loss {
        Some(t) => t.clone(),
        None => kv.raw("bs_loss").unwrap_or("bs5").to_string(),
    };
    let hc_loss = resolve_loss(&hc_text)?;
    let bs_loss = resolve_loss(&bs_text)?;
    let losses_text = match &args.losses {
        Some(t) => t.clone(),
        None => kv
            .raw("losses")
            .unwrap_or("zero_one,ce,cw,bs3,bs5")
            .to_string(),
    };
    let chart_losses: Vec<SurrogateLoss> = losses_text
        .split(',')
        .map(|name| resolve_loss(name.trim()))
        .collect::<Result<_, _>>()?;
    let resolution = resolve(args.resolution, &kv, "resolution", 21)?;
    let default_attack = AttackSpec::pgd(NormKind::Linf, 8.0 / 255.0, 100);
    let spec = resolve_attack(&args.attack, &kv, seed, &default_attack)?;

    let sample_override = match args.sample {
        Some(s) => Some(s),
        None => kv.get::<usize>("sample")?,
    };
    let anchors = match sample_override {
        Some(index) => {
            use crate::riskeval::LandscapeAnchors;
            use crate::seeds::derive_seed;
            if index >= dataset.n_samples() {
                return Err(CliError::Usage(format!(
                    "sample {index} out of range for {} samples",
                    dataset.n_samples()
                )));
            }
            let sample = dataset.subset(&[index]);
            let row_spec = AttackSpec {
                seed: derive_seed(spec.seed, index as u64),
                ..spec.clone()
            };
            let hc = crate::attack::pgd(&net, &hc_loss, sample.features(), sample.labels(), &row_spec)?;
            let bs = crate::attack::pgd(&net, &bs_loss, sample.features(), sample.labels(), &row_spec)?;
            LandscapeAnchors {
                sample_index: index,
                x: sample.features().clone(),
                label: sample.labels()[0],
                x_adv_hc: hc.x_adv,
                x_adv_bs: bs.x_adv,
            }
        }
        None => find_landscape_anchors(&net, &hc_loss, &bs_loss, &dataset, &spec)?
            .ok_or_else(|| {
                CliError::Usage(
                    "no sample found where the handcrafted attack fails and the \
                     searched attack succeeds; pass --sample to force one"
                        .into(),
                )
            })?,
    };

    let refs: Vec<&SurrogateLoss> = chart_losses.iter().collect();
    let grids = landscape_grid(
        &net,
        &refs,
        &anchors.x,
        &[anchors.label],
        &anchors.x_adv_hc,
        &anchors.x_adv_bs,
        resolution,
    )?;
    let paths = write_landscape_files(&grids, &out_dir)?;
    println!(
        "sample={} label={} files={}",
        anchors.sample_index,
        anchors.label,
        paths.len()
    );
    Ok(())
}

const GRADCHECK_KEYS: &[&str] = &["seed", "out"];

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let kv = load_kv(&args.common)?;
    kv.check_keys(GRADCHECK_KEYS)?;
    let seed = resolve_seed(&args.common, &kv)?;
    let rows = run_gradcheck(seed);
    let mut text = String::from("check,max_rel_err,threshold,status\n");
    for row in &rows {
        text.push_str(&format!(
            "{},{:.6e},{:.6e},{}\n",
            row.name,
            row.max_rel_err,
            row.threshold,
            if row.pass { "pass" } else { "FAIL" }
        ));
    }
    match resolve_out(&args.common, &kv)? {
        Some(path) => fs::write(&path, &text)?,
        None => print!("{text}"),
    }
    if rows.iter().any(|r| !r.pass) {
        return Err(CliError::Usage("gradient check failed".into()));
    }
    Ok(())
}

const SIMPLIFY_KEYS: &[&str] = &["expr", "seed", "out"];

fn cmd_simplify(args: SimplifyArgs) -> Result<(), CliError> {
    let kv = load_kv(&args.common)?;
    kv.check_keys(SIMPLIFY_KEYS)?;
    let out = require_out(&args.common, &kv)?;
    let expr_path = require_path(&args.expr, &kv, "expr")?;
    let source = fs::read_to_string(&expr_path)?;
    let tree = expr::parse(source.trim())?;
    let simplified = expr::simplify(&tree);
    fs::write(&out, format!("{simplified}\n"))?;
    println!("{tree} -> {simplified}");
    Ok(())
}
