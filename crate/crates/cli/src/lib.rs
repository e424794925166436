//! The `sgen` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sgen_core::data::{self, make_scenario, BinaryDataset, Mnist, ScenarioManifest, ScenarioSplit};
use sgen_core::experiment::{
    emit_table, run_experiment, train_generator, ExperimentConfig, ExperimentResult, FilterFlag, GeneratorKind,
    Profile, TableFormat,
};
use sgen_core::mlp::{evaluate, train_classifier, Architecture, MlpClassifier};
use sgen_core::persist;
use sgen_core::sampler::{chain_grid_export, chain_rng, mean_grid_export, Generator, SampleChain};
use sgen_core::Error;

pub const EXIT_MODULE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sgen", version, about = "Generative data augmentation for scarce labeled MNIST")]
struct Cli {
    /// Directory with the MNIST IDX files or ingested stores [env: SGEN_DATA_DIR]
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the IDX files into binarized stores, optionally drawing a scenario manifest.
    Ingest(IngestArgs),
    /// Train an RBM or VAE on the pool of a scenario.
    TrainGenerator(TrainGeneratorArgs),
    /// Run the Markov chain from labeled seed images.
    Generate(GenerateArgs),
    /// Train a classifier on a scenario's labeled samples plus optional chains.
    TrainClassifier(TrainClassifierArgs),
    /// Run every replication of one table cell.
    RunExperiment(RunExperimentArgs),
    /// Report a classifier's test error percentage.
    Evaluate(EvaluateArgs),
    /// Render a chain file as a PGM grid.
    ExportGrid(ExportGridArgs),
    /// Collect result files into one table.
    Table(TableArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Output directory for train.sgd / test.sgd (defaults to the data directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pool size of a scenario to draw; requires --labeled and --seed.
    #[arg(long, requires_all = ["labeled", "seed"])]
    total: Option<usize>,
    #[arg(long, requires = "total")]
    labeled: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ModuleOverrides {
    /// Experiment config supplying the module sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hidden_units: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainGeneratorArgs {
    /// b-rbm, g-rbm or vae.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: ModuleOverrides,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    length: usize,
    #[arg(long)]
    seed: u64,
    /// Seed image index: into the manifest's labeled set if given, else into the training set.
    #[arg(long)]
    seed_sample: Option<usize>,
    /// Without --seed-sample, one chain per labeled sample is written into --out as a directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the Bernoulli means of every step as a PGM grid.
    #[arg(long)]
    means_grid: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainClassifierArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Directory of chain files whose seed indices refer to the labeled set.
    #[arg(long)]
    chains: Option<PathBuf>,
    /// y (self-filtered) or n.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    /// fc1 or fc2.
    #[arg(long)]
    architecture: Option<String>,
    #[command(flatten)]
    overrides: ModuleOverrides,
}

#[derive(Debug, Args)]
struct RunExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; replaces the config's.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// full or quick.
    #[arg(long)]
    profile: Option<String>,
    /// Same as --profile quick.
    #[arg(long, conflicts_with = "profile")]
    quick: bool,
    #[arg(long)]
    total: Option<usize>,
    #[arg(long)]
    labeled: Option<usize>,
    /// none, b-rbm, g-rbm or vae.
    #[arg(long)]
    generator: Option<String>,
    #[arg(long)]
    chain_length: Option<usize>,
    #[arg(long)]
    chains_per_seed: Option<usize>,
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    architecture: Option<String>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    classifier_epochs: Option<usize>,
    #[arg(long)]
    rbm_hidden_units: Option<usize>,
    #[arg(long)]
    vae_hidden_units: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Args)]
struct ExportGridArgs {
    #[arg(long)]
    chain: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TableArgs {
    /// result.json files sharing one scenario.
    #[arg(long, num_args = 1.., required = true)]
    results: Vec<PathBuf>,
    /// csv or markdown.
    #[arg(long, default_value = "markdown")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Module(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Module(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `argv` (program name first), runs the command and returns the exit
/// status. Failures print one `error kind=... message="..."` line to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let message = e.to_string();
            let summary: Vec<&str> = message
                .lines()
                .take_while(|l| !l.trim().is_empty())
                .map(str::trim)
                .collect();
            let summary = summary.join(" ");
            report("Usage", summary.trim_start_matches("error: "));
            return EXIT_USAGE;
        }
    };
    let data_dir = cli.data_dir.clone().unwrap_or_else(|| data::data_dir_or("data/mnist"));
    match dispatch(cli.command, &data_dir) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            report("Usage", &m);
            EXIT_USAGE
        }
        Err(Failure::Module(e)) => {
            report(e.kind(), &e.to_string());
            EXIT_MODULE
        }
    }
}

fn report(kind: &str, message: &str) {
    let _ = writeln!(std::io::stderr(), "error kind={kind} message={message:?}");
}

fn usage(message: impl Into<String>) -> Failure {
    Failure::Usage(message.into())
}

fn parse_with<T>(parse: fn(&str) -> sgen_core::Result<T>, text: &str) -> std::result::Result<T, Failure> {
    parse(text).map_err(|e| usage(e.to_string()))
}

fn parse_architecture(text: &str) -> sgen_core::Result<Architecture> {
    match text.to_ascii_lowercase().as_str() {
        "fc1" => Ok(Architecture::Fc1),
        "fc2" => Ok(Architecture::Fc2),
        other => Err(Error::Config(format!("unknown architecture {other:?}"))),
    }
}

fn dispatch(command: Command, data_dir: &Path) -> CmdResult {
    match command {
        Command::Ingest(a) => ingest(a, data_dir),
        Command::TrainGenerator(a) => train_generator_cmd(a, data_dir),
        Command::Generate(a) => generate(a, data_dir),
        Command::TrainClassifier(a) => train_classifier_cmd(a, data_dir),
        Command::RunExperiment(a) => run_experiment_cmd(a, data_dir),
        Command::Evaluate(a) => evaluate_cmd(a, data_dir),
        Command::ExportGrid(a) => {
            chain_grid_export(&SampleChain::load(&a.chain)?, &a.out)?;
            println!("wrote={}", a.out.display());
            Ok(())
        }
        Command::Table(a) => table(a),
    }
}

fn ingest(a: IngestArgs, data_dir: &Path) -> CmdResult {
    let mnist = Mnist::load(data_dir)?;
    let out = a.out.unwrap_or_else(|| data_dir.to_path_buf());
    persist::write_file(&out.join(data::TRAIN_STORE), &mnist.train.to_store_bytes())?;
    persist::write_file(&out.join(data::TEST_STORE), &mnist.test.to_store_bytes())?;
    println!("train={} test={}", mnist.train.len(), mnist.test.len());
    if let (Some(total), Some(labeled), Some(seed)) = (a.total, a.labeled, a.seed) {
        let split = make_scenario(&mnist.train, total, labeled, seed)?;
        let path = out.join(format!("scenario-{total}-{labeled}-{seed}.toml"));
        split.manifest().save(&path)?;
        println!("manifest={}", path.display());
    }
    Ok(())
}

fn base_config(overrides: &ModuleOverrides, seed: u64) -> std::result::Result<ExperimentConfig, Failure> {
    match &overrides.config {
        Some(path) => Ok(ExperimentConfig::load(path)?),
        None => Ok(ExperimentConfig::new(
            100,
            10,
            GeneratorKind::BRbm,
            0,
            FilterFlag::Y,
            Architecture::Fc1,
            seed,
        )),
    }
}

fn load_split(train: &BinaryDataset, manifest: &Path) -> std::result::Result<ScenarioSplit, Failure> {
    Ok(ScenarioSplit::from_manifest(train, &ScenarioManifest::load(manifest)?)?)
}

fn train_generator_cmd(a: TrainGeneratorArgs, data_dir: &Path) -> CmdResult {
    let kind = parse_with(GeneratorKind::parse, &a.kind)?;
    if kind == GeneratorKind::None {
        return Err(usage("--kind must be b-rbm, g-rbm or vae"));
    }
    let mut cfg = base_config(&a.overrides, a.seed)?;
    cfg.generator.kind = kind;
    let o = &a.overrides;
    match kind {
        GeneratorKind::Vae => {
            cfg.vae.hidden_units = o.hidden_units.unwrap_or(cfg.vae.hidden_units);
            cfg.vae.epochs = o.epochs.unwrap_or(cfg.vae.epochs);
            cfg.vae.learning_rate = o.learning_rate.unwrap_or(cfg.vae.learning_rate);
        }
        _ => {
            cfg.rbm.hidden_units = o.hidden_units.unwrap_or(cfg.rbm.hidden_units);
            cfg.rbm.learning_rate = o.learning_rate.unwrap_or(cfg.rbm.learning_rate);
            if let Some(e) = o.epochs {
                cfg.rbm.bad_epochs = e;
                cfg.rbm.good_epochs = e;
            }
        }
    }
    let mnist = Mnist::load(data_dir)?;
    let split = load_split(&mnist.train, &a.manifest)?;
    let generator = train_generator(&cfg, &split, a.seed)?.expect("kind is not none");
    generator.save(&a.out)?;
    println!("generator={} pool={} wrote={}", kind.label(), split.total, a.out.display());
    Ok(())
}

fn generate(a: GenerateArgs, data_dir: &Path) -> CmdResult {
    let generator = Generator::load(&a.model)?;
    let mnist = Mnist::load(data_dir)?;
    let seeds = match &a.manifest {
        Some(m) => load_split(&mnist.train, m)?.labeled,
        None => mnist.train,
    };
    let picked: Vec<usize> = match a.seed_sample {
        Some(i) if i < seeds.len() => vec![i],
        Some(i) => return Err(usage(format!("--seed-sample {i} is outside the {} available seeds", seeds.len()))),
        None if a.manifest.is_some() => (0..seeds.len()).collect(),
        None => return Err(usage("--seed-sample is required without --manifest")),
    };
    let single = a.seed_sample.is_some();
    for i in picked {
        let mut r = chain_rng(a.seed, i, 0);
        let (samples, means) = generator.generate_chain_with_means(seeds.image(i), a.length, &mut r)?;
        let chain = SampleChain {
            seed_index: i,
            seed_label: seeds.label(i).ok_or(Error::MissingLabels("seed images"))?,
            samples,
        };
        let path = if single {
            a.out.clone()
        } else {
            a.out.join(format!("chain-{i:05}.chn"))
        };
        chain.save(&path)?;
        if let Some(grid) = &a.means_grid {
            let grid = if single {
                grid.clone()
            } else {
                grid.join(format!("means-{i:05}.pgm"))
            };
            if !means.is_empty() {
                mean_grid_export(&means, &grid)?;
            }
        }
        println!("seed_index={i} seed_label={} length={} wrote={}", chain.seed_label, chain.len(), path.display());
    }
    Ok(())
}

fn load_chains(dir: &Path) -> std::result::Result<Vec<SampleChain>, Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "chn"))
        .collect();
    paths.sort();
    Ok(paths.iter().map(|p| SampleChain::load(p)).collect::<sgen_core::Result<_>>()?)
}

fn train_classifier_cmd(a: TrainClassifierArgs, data_dir: &Path) -> CmdResult {
    let mut cfg = base_config(&a.overrides, a.seed)?;
    if let Some(f) = &a.filter {
        cfg.labeler.filter = parse_with(FilterFlag::parse, f)?;
    }
    cfg.labeler.warmup_epochs = a.warmup_epochs.unwrap_or(cfg.labeler.warmup_epochs);
    if let Some(arch) = &a.architecture {
        cfg.classifier.architecture = parse_with(parse_architecture, arch)?;
    }
    cfg.classifier.epochs = a.overrides.epochs.unwrap_or(cfg.classifier.epochs);
    cfg.classifier.learning_rate = a.overrides.learning_rate.unwrap_or(cfg.classifier.learning_rate);
    if a.overrides.hidden_units.is_some() {
        return Err(usage("--hidden-units does not apply to fixed classifier architectures"));
    }
    let mnist = Mnist::load(data_dir)?;
    let split = load_split(&mnist.train, &a.manifest)?;
    let chains = match &a.chains {
        Some(dir) => load_chains(dir)?,
        None => Vec::new(),
    };
    let trained = train_classifier(&split.labeled, &chains, cfg.labeler.mode(), &cfg.classifier.schedule(a.seed))?;
    trained.classifier.save(&a.out)?;
    let error = evaluate(&trained.classifier, &mnist.test)?;
    println!(
        "architecture={} chains={} test_error={error} wrote={}",
        cfg.classifier.architecture.name(),
        chains.len(),
        a.out.display()
    );
    Ok(())
}

fn run_experiment_cmd(a: RunExperimentArgs, data_dir: &Path) -> CmdResult {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let (Some(total), Some(labeled), Some(kind), Some(length)) =
                (a.total, a.labeled, a.generator.as_deref(), a.chain_length)
            else {
                return Err(usage(
                    "without --config, --total, --labeled, --generator and --chain-length are required",
                ));
            };
            ExperimentConfig::new(
                total,
                labeled,
                parse_with(GeneratorKind::parse, kind)?,
                length,
                FilterFlag::Y,
                Architecture::Fc1,
                a.seed,
            )
        }
    };
    let profile = match (&a.profile, a.quick) {
        (Some(p), _) => parse_with(Profile::parse, p)?,
        (None, true) => Profile::Quick,
        (None, false) => Profile::Full,
    };
    profile.apply(&mut cfg);
    cfg.master_seed = a.seed;
    cfg.scenario.total = a.total.unwrap_or(cfg.scenario.total);
    cfg.scenario.labeled_count = a.labeled.unwrap_or(cfg.scenario.labeled_count);
    if let Some(g) = &a.generator {
        cfg.generator.kind = parse_with(GeneratorKind::parse, g)?;
    }
    cfg.generator.chain_length = a.chain_length.unwrap_or(cfg.generator.chain_length);
    cfg.generator.chains_per_seed = a.chains_per_seed.unwrap_or(cfg.generator.chains_per_seed);
    if let Some(f) = &a.filter {
        cfg.labeler.filter = parse_with(FilterFlag::parse, f)?;
    }
    cfg.labeler.warmup_epochs = a.warmup_epochs.unwrap_or(cfg.labeler.warmup_epochs);
    if let Some(arch) = &a.architecture {
        cfg.classifier.architecture = parse_with(parse_architecture, arch)?;
    }
    cfg.replications = a.replications.unwrap_or(cfg.replications);
    cfg.classifier.epochs = a.classifier_epochs.unwrap_or(cfg.classifier.epochs);
    cfg.rbm.hidden_units = a.rbm_hidden_units.unwrap_or(cfg.rbm.hidden_units);
    cfg.vae.hidden_units = a.vae_hidden_units.unwrap_or(cfg.vae.hidden_units);
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let mnist = Mnist::load(data_dir)?;
    let result = run_experiment(&cfg, &mnist, a.out.as_deref())?;
    if let Some(dir) = &a.out {
        for (name, format) in [("table.csv", TableFormat::Csv), ("table.md", TableFormat::Markdown)] {
            let path = dir.join(name);
            let text = emit_table(std::slice::from_ref(&result), format)?;
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
    }
    println!(
        "mean_error={} std_error={} baseline_mean={} baseline_std={} config_hash={}",
        result.mean_error, result.std_error, result.baseline_mean, result.baseline_std, result.config_hash
    );
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs, data_dir: &Path) -> CmdResult {
    let clf = MlpClassifier::load(&a.model)?;
    let mnist = Mnist::load(data_dir)?;
    println!("test_error={}", evaluate(&clf, &mnist.test)?);
    Ok(())
}

fn table(a: TableArgs) -> CmdResult {
    let format = parse_with(TableFormat::parse, &a.format)?;
    let results = a
        .results
        .iter()
        .map(|p| ExperimentResult::load(p))
        .collect::<sgen_core::Result<Vec<_>>>()?;
    let text = emit_table(&results, format)?;
    match &a.out {
        Some(path) => fs::write(path, &text).map_err(|e| Error::io(path, e))?,
        None => print!("{text}"),
    }
    Ok(())
}

