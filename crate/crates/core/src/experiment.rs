//! End-to-end scenario runs: split, generator, chains, augmented and baseline
//! classifiers, aggregation and result tables.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{make_scenario, Mnist, ScenarioSplit};
use crate::error::{Error, Result};
use crate::labeler::{FilterMode, DEFAULT_WARMUP_EPOCHS};
use crate::mlp::{evaluate, train_classifier, train_classifier_observed, Architecture, BatchPolicy, EpochKeep, TrainSchedule};
use crate::rbm::{train_rbm, Regime, RbmTrainConfig};
use crate::rng::{self, Stream};
use crate::sampler::{generate_chains, Generator};
use crate::vae::{train_vae, VaeTrainConfig};

pub const CONFIG_FORMAT: &str = "sgen-experiment";
pub const RESULT_FILE: &str = "result.json";
pub const LOG_FILE: &str = "log.txt";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GeneratorKind {
    /// Baseline only; no generator is trained.
    #[serde(rename = "none")]
    None,
    #[serde(rename = "b-rbm")]
    BRbm,
    #[serde(rename = "g-rbm")]
    GRbm,
    #[serde(rename = "vae")]
    Vae,
}

impl GeneratorKind {
    pub fn label(self) -> &'static str {
        match self {
            GeneratorKind::None => "none",
            GeneratorKind::BRbm => "B-RBM",
            GeneratorKind::GRbm => "G-RBM",
            GeneratorKind::Vae => "VAE",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text.to_ascii_lowercase().as_str() {
            "none" => Ok(GeneratorKind::None),
            "b-rbm" | "brbm" => Ok(GeneratorKind::BRbm),
            "g-rbm" | "grbm" => Ok(GeneratorKind::GRbm),
            "vae" => Ok(GeneratorKind::Vae),
            other => Err(Error::Config(format!("unknown generator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FilterFlag {
    #[serde(rename = "y")]
    Y,
    #[serde(rename = "n")]
    N,
}

impl FilterFlag {
    pub fn mode(self, warmup_epochs: usize) -> FilterMode {
        match self {
            FilterFlag::Y => FilterMode::SelfFiltered { warmup_epochs },
            FilterFlag::N => FilterMode::All,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "y" => Ok(FilterFlag::Y),
            "n" => Ok(FilterFlag::N),
            other => Err(Error::Config(format!("filter must be 'y' or 'n', got {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FilterFlag::Y => "y",
            FilterFlag::N => "n",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub total: usize,
    pub labeled_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    pub chain_length: usize,
    #[serde(default = "one")]
    pub chains_per_seed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbmSection {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub cd_steps: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub bad_epochs: usize,
    pub good_epochs: usize,
}

impl Default for RbmSection {
    fn default() -> Self {
        let base = RbmTrainConfig::for_regime(Regime::Bad, 0);
        RbmSection {
            hidden_units: base.hidden_units,
            learning_rate: base.learning_rate,
            cd_steps: base.cd_steps,
            batch_size: base.batch_size,
            momentum: base.momentum,
            weight_decay: base.weight_decay,
            bad_epochs: Regime::Bad.default_epochs(),
            good_epochs: Regime::Good.default_epochs(),
        }
    }
}

impl RbmSection {
    pub fn train_config(&self, regime: Regime, seed: u64) -> RbmTrainConfig {
        RbmTrainConfig {
            regime,
            epochs: match regime {
                Regime::Bad => self.bad_epochs,
                Regime::Good => self.good_epochs,
            },
            hidden_units: self.hidden_units,
            learning_rate: self.learning_rate,
            cd_steps: self.cd_steps,
            batch_size: self.batch_size,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeSection {
    pub hidden_units: usize,
    pub latent_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for VaeSection {
    fn default() -> Self {
        let base = VaeTrainConfig::default();
        VaeSection {
            hidden_units: base.hidden_units,
            latent_dim: base.latent_dim,
            epochs: base.epochs,
            learning_rate: base.learning_rate,
            batch_size: base.batch_size,
        }
    }
}

impl VaeSection {
    pub fn train_config(&self, seed: u64) -> VaeTrainConfig {
        VaeTrainConfig {
            hidden_units: self.hidden_units,
            latent_dim: self.latent_dim,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelerSection {
    pub filter: FilterFlag,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
}

impl Default for LabelerSection {
    fn default() -> Self {
        LabelerSection {
            filter: FilterFlag::Y,
            warmup_epochs: DEFAULT_WARMUP_EPOCHS,
        }
    }
}

impl LabelerSection {
    pub fn mode(&self) -> FilterMode {
        self.filter.mode(self.warmup_epochs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub architecture: Architecture,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub input_noise_sigma: f64,
    pub dropout_rate: f64,
    pub seeds_per_batch: usize,
    pub min_batch: usize,
    pub max_batch: usize,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let s = TrainSchedule::new(Architecture::Fc1, 0);
        ClassifierSection {
            architecture: s.architecture,
            epochs: s.epochs,
            learning_rate: s.learning_rate,
            momentum: s.momentum,
            input_noise_sigma: s.input_noise_sigma,
            dropout_rate: s.dropout_rate,
            seeds_per_batch: s.batch.seeds_per_batch,
            min_batch: s.batch.min_batch,
            max_batch: s.batch.max_batch,
        }
    }
}

impl ClassifierSection {
    pub fn schedule(&self, seed: u64) -> TrainSchedule {
        TrainSchedule {
            architecture: self.architecture.clone(),
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            input_noise_sigma: self.input_noise_sigma,
            dropout_rate: self.dropout_rate,
            seed,
            batch: BatchPolicy {
                seeds_per_batch: self.seeds_per_batch,
                min_batch: self.min_batch,
                max_batch: self.max_batch,
            },
        }
    }
}

/// Scale presets. `Quick` shrinks generators to 64 hidden units, classifier
/// training to 50 epochs and chains to 100 samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Full,
    Quick,
}

impl Profile {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "full" => Ok(Profile::Full),
            "quick" => Ok(Profile::Quick),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig) {
        if self == Profile::Quick {
            cfg.rbm.hidden_units = 64;
            cfg.vae.hidden_units = 64;
            cfg.classifier.epochs = 50;
            cfg.generator.chain_length = 100;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "config_format")]
    pub format: String,
    pub master_seed: u64,
    #[serde(default = "three")]
    pub replications: usize,
    pub scenario: ScenarioConfig,
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub labeler: LabelerSection,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub rbm: RbmSection,
    #[serde(default)]
    pub vae: VaeSection,
}

fn one() -> usize {
    1
}

fn three() -> usize {
    3
}

fn default_warmup() -> usize {
    DEFAULT_WARMUP_EPOCHS
}

fn config_format() -> String {
    CONFIG_FORMAT.into()
}

impl ExperimentConfig {
    /// Full-scale defaults for one table cell.
    pub fn new(
        total: usize,
        labeled_count: usize,
        kind: GeneratorKind,
        chain_length: usize,
        filter: FilterFlag,
        architecture: Architecture,
        master_seed: u64,
    ) -> Self {
        ExperimentConfig {
            format: CONFIG_FORMAT.into(),
            master_seed,
            replications: 3,
            scenario: ScenarioConfig { total, labeled_count },
            generator: GeneratorConfig {
                kind,
                chain_length,
                chains_per_seed: 1,
            },
            labeler: LabelerSection {
                filter,
                warmup_epochs: DEFAULT_WARMUP_EPOCHS,
            },
            classifier: ClassifierSection {
                architecture,
                ..ClassifierSection::default()
            },
            rbm: RbmSection::default(),
            vae: VaeSection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CONFIG_FORMAT {
            return Err(Error::Config(format!("config format must be {CONFIG_FORMAT:?}")));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.generator.chains_per_seed == 0 {
            return Err(Error::Config("chains_per_seed must be at least 1".into()));
        }
        let s = &self.scenario;
        if s.labeled_count == 0 || s.labeled_count % 10 != 0 || s.labeled_count > s.total {
            return Err(Error::InvalidCounts(format!(
                "labeled count {} must be a positive multiple of 10 not above total {}",
                s.labeled_count, s.total
            )));
        }
        let c = &self.classifier;
        if c.seeds_per_batch == 0 || c.min_batch == 0 || c.max_batch < 4 {
            return Err(Error::Config(
                "classifier seeds_per_batch and min_batch must be positive and max_batch at least 4".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn replication_seed(&self, replication: usize) -> u64 {
        rng::derive_seed(self.master_seed, &[Stream::Tag("replication"), replication.into()])
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub seed: u64,
    pub error: f64,
    pub baseline_error: f64,
    pub keep: Vec<EpochKeep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scenario: ScenarioConfig,
    pub generator: GeneratorKind,
    pub chain_length: usize,
    pub filter: FilterFlag,
    pub architecture: Architecture,
    pub replications: Vec<ReplicationResult>,
    /// NaN (stored as `null`) when no replication completed.
    #[serde(deserialize_with = "nan_if_null")]
    pub mean_error: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub std_error: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub baseline_mean: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub baseline_std: f64,
    pub config_hash: String,
    pub code_version: String,
    /// Set when a replication failed; the listed replications are the ones
    /// that completed.
    pub failure: Option<String>,
}

impl ExperimentResult {
    fn from_replications(cfg: &ExperimentConfig, replications: Vec<ReplicationResult>, failure: Option<String>) -> Self {
        let errors: Vec<f64> = replications.iter().map(|r| r.error).collect();
        let baselines: Vec<f64> = replications.iter().map(|r| r.baseline_error).collect();
        let (mean_error, std_error) = mean_std(&errors);
        let (baseline_mean, baseline_std) = mean_std(&baselines);
        ExperimentResult {
            scenario: cfg.scenario,
            generator: cfg.generator.kind,
            chain_length: cfg.generator.chain_length,
            filter: cfg.labeler.filter,
            architecture: cfg.classifier.architecture.clone(),
            replications,
            mean_error,
            std_error,
            baseline_mean,
            baseline_std,
            config_hash: cfg.hash(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            failure,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("result file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Timestamped `key=value` records, one per line.
pub struct RunLog {
    file: Option<File>,
}

impl RunLog {
    pub fn open(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => Some(
                fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::io(p, e))?,
            ),
            None => None,
        };
        Ok(RunLog { file })
    }

    pub fn record(&mut self, event: &str, fields: &[(&str, String)]) {
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let mut line = format!("ts={ts:.3} event={event}");
        for (k, v) in fields {
            let _ = write!(line, " {k}={}", quote(v));
        }
        log::info!("{line}");
        if let Some(f) = self.file.as_mut() {
            if let Err(e) = writeln!(f, "{line}") {
                log::warn!("could not append to run log: {e}");
            }
        }
    }
}

fn quote(v: &str) -> String {
    if v.is_empty() || v.contains(|c: char| c.is_whitespace() || c == '"' || c == '=') {
        format!("{v:?}")
    } else {
        v.to_string()
    }
}

/// Trains the configured generator on the whole pool of `split`.
pub fn train_generator(cfg: &ExperimentConfig, split: &ScenarioSplit, seed: u64) -> Result<Option<Generator>> {
    let pool = split.pool().without_labels();
    Ok(match cfg.generator.kind {
        GeneratorKind::None => None,
        GeneratorKind::BRbm => Some(Generator::Rbm(train_rbm(&pool, &cfg.rbm.train_config(Regime::Bad, seed))?.model)),
        GeneratorKind::GRbm => Some(Generator::Rbm(train_rbm(&pool, &cfg.rbm.train_config(Regime::Good, seed))?.model)),
        GeneratorKind::Vae => Some(Generator::Vae(train_vae(&pool, &cfg.vae.train_config(seed))?.model)),
    })
}

/// Runs every replication of `cfg`. With `out_dir`, the directory receives
/// the config, per-replication manifests, models and chains, `result.json`
/// (rewritten after each replication, and on failure) and the run log.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Mnist, out_dir: Option<&Path>) -> Result<ExperimentResult> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
    }
    let mut log = RunLog::open(out_dir.map(|d| d.join(LOG_FILE)).as_deref())?;
    log.record(
        "start",
        &[
            ("config_hash", cfg.hash()),
            ("generator", cfg.generator.kind.label().into()),
            ("chain_length", cfg.generator.chain_length.to_string()),
            ("filter", cfg.labeler.filter.as_str().into()),
            ("architecture", cfg.classifier.architecture.name()),
            ("replications", cfg.replications.to_string()),
        ],
    );
    let mut done = Vec::with_capacity(cfg.replications);
    for r in 0..cfg.replications {
        let rep_dir = out_dir.map(|d| d.join(format!("rep-{r}")));
        match run_replication(cfg, data, r, rep_dir.as_deref(), &mut log) {
            Ok(rep) => {
                done.push(rep);
                if let Some(dir) = out_dir {
                    write_result(dir, &ExperimentResult::from_replications(cfg, done.clone(), None))?;
                }
            }
            Err(e) => {
                log.record(
                    "failure",
                    &[("replication", r.to_string()), ("kind", e.kind().into()), ("message", e.to_string())],
                );
                if let Some(dir) = out_dir {
                    let partial = ExperimentResult::from_replications(cfg, done, Some(format!("replication {r}: {e}")));
                    write_result(dir, &partial)?;
                }
                return Err(Error::Replication {
                    replication: r,
                    source: Box::new(e),
                });
            }
        }
    }
    let result = ExperimentResult::from_replications(cfg, done, None);
    log.record(
        "done",
        &[
            ("mean_error", result.mean_error.to_string()),
            ("std_error", result.std_error.to_string()),
            ("baseline_mean", result.baseline_mean.to_string()),
        ],
    );
    Ok(result)
}

fn write_result(dir: &Path, result: &ExperimentResult) -> Result<()> {
    let path = dir.join(RESULT_FILE);
    fs::write(&path, result.to_json()).map_err(|e| Error::io(&path, e))
}

fn run_replication(
    cfg: &ExperimentConfig,
    data: &Mnist,
    r: usize,
    dir: Option<&Path>,
    log: &mut RunLog,
) -> Result<ReplicationResult> {
    let seed = cfg.replication_seed(r);
    let sub = |tag: &'static str| rng::derive_seed(seed, &[Stream::Tag(tag)]);
    let split = make_scenario(&data.train, cfg.scenario.total, cfg.scenario.labeled_count, sub("scenario"))?;
    log.record(
        "split",
        &[("replication", r.to_string()), ("total", split.total.to_string()), ("labeled", split.labeled.len().to_string())],
    );
    let generator = train_generator(cfg, &split, sub("generator"))?;
    let chains = match &generator {
        Some(g) => {
            let labels = split.labeled.labels().ok_or(Error::MissingLabels("labeled split"))?;
            let seeds = (0..split.labeled.len()).map(|i| (i, split.labeled.image(i), labels[i]));
            generate_chains(g, seeds, cfg.generator.chain_length, cfg.generator.chains_per_seed, sub("chains"))?
        }
        None => Vec::new(),
    };
    log.record(
        "generated",
        &[
            ("replication", r.to_string()),
            ("chains", chains.len().to_string()),
            ("samples", chains.iter().map(|c| c.len()).sum::<usize>().to_string()),
        ],
    );
    if let Some(dir) = dir {
        split.manifest().save(&dir.join("manifest.toml"))?;
        match &generator {
            Some(Generator::Rbm(m)) => m.save(&dir.join("generator.rbm"))?,
            Some(Generator::Vae(m)) => m.save(&dir.join("generator.vae"))?,
            None => {}
        }
        for (k, chain) in chains.iter().enumerate() {
            chain.save(&dir.join("chains").join(format!("chain-{k:05}.chn")))?;
        }
    }

    let sched = cfg.classifier.schedule(sub("classifier"));
    let mode = cfg.labeler.mode();
    let baseline = train_classifier(&split.labeled, &[], mode, &sched)?;
    let baseline_error = evaluate(&baseline.classifier, &data.test)?;
    let mut observe = |k: &EpochKeep| {
        log.record(
            "keep",
            &[
                ("replication", r.to_string()),
                ("epoch", k.epoch.to_string()),
                ("kept", k.kept.to_string()),
                ("total", k.total.to_string()),
                ("fraction", format!("{:.4}", k.fraction())),
                ("per_chain", k.per_chain.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")),
            ],
        )
    };
    let augmented = if chains.is_empty() {
        baseline.clone()
    } else {
        train_classifier_observed(&split.labeled, &chains, mode, &sched, &mut observe)?
    };
    let error = evaluate(&augmented.classifier, &data.test)?;
    if let Some(dir) = dir {
        baseline.classifier.save(&dir.join("baseline.mlp"))?;
        augmented.classifier.save(&dir.join("augmented.mlp"))?;
    }
    log.record(
        "replication",
        &[
            ("replication", r.to_string()),
            ("seed", seed.to_string()),
            ("error", error.to_string()),
            ("baseline_error", baseline_error.to_string()),
        ],
    );
    Ok(ReplicationResult {
        replication: r,
        seed,
        error,
        baseline_error,
        // Per-chain counts go to the log only.
        keep: augmented
            .keep
            .into_iter()
            .map(|k| EpochKeep {
                per_chain: Vec::new(),
                ..k
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl TableFormat {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::Config(format!("unknown table format {other:?}"))),
        }
    }
}

type Column = (GeneratorKind, usize, FilterFlag);

fn column_name((kind, length, filter): Column) -> String {
    format!("{}-{}-{}", kind.label(), length, filter.as_str())
}

fn architecture_rank(a: &Architecture) -> (u8, String) {
    match a {
        Architecture::Fc1 => (0, String::new()),
        Architecture::Fc2 => (1, String::new()),
        Architecture::Custom(_) => (2, a.name()),
    }
}

/// Rows are architectures (FC1, FC2, then custom); after `Baseline`, columns
/// run over generator, chain length and `y` before `n`, keeping only the
/// combinations present. Cells hold mean test error; `-` marks gaps. The
/// baseline of a row comes from its first result in column order.
pub fn emit_table(results: &[ExperimentResult], format: TableFormat) -> Result<String> {
    let Some(first) = results.first() else {
        return Err(Error::InconsistentScenario("no results to tabulate".into()));
    };
    if let Some(other) = results.iter().find(|r| r.scenario != first.scenario) {
        return Err(Error::InconsistentScenario(format!(
            "results mix scenarios {}/{} and {}/{}",
            first.scenario.total, first.scenario.labeled_count, other.scenario.total, other.scenario.labeled_count
        )));
    }
    let mut columns: Vec<Column> = results
        .iter()
        .filter(|r| r.generator != GeneratorKind::None)
        .map(|r| (r.generator, r.chain_length, r.filter))
        .collect();
    columns.sort();
    columns.dedup();
    let mut rows: Vec<Architecture> = results.iter().map(|r| r.architecture.clone()).collect();
    rows.sort_by_key(architecture_rank);
    rows.dedup();

    let mut table: Vec<(String, Vec<Option<(f64, f64)>>)> = Vec::new();
    for arch in &rows {
        let mut mine: Vec<&ExperimentResult> = results.iter().filter(|r| &r.architecture == arch).collect();
        mine.sort_by_key(|r| (r.generator, r.chain_length, r.filter));
        let mut cells = vec![None; columns.len() + 1];
        cells[0] = Some((mine[0].baseline_mean, mine[0].baseline_std));
        for r in mine.iter().filter(|r| r.generator != GeneratorKind::None) {
            let c = 1 + columns
                .iter()
                .position(|&col| col == (r.generator, r.chain_length, r.filter))
                .expect("column collected above");
            if cells[c].is_some() {
                return Err(Error::InconsistentScenario(format!(
                    "two results for {} {}",
                    arch.name(),
                    column_name(columns[c - 1])
                )));
            }
            cells[c] = Some((r.mean_error, r.std_error));
        }
        table.push((arch.name(), cells));
    }

    let header: Vec<String> = std::iter::once("Baseline".to_string())
        .chain(columns.iter().map(|&c| column_name(c)))
        .collect();
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            let _ = writeln!(out, "architecture,{}", header.join(","));
            for (name, cells) in &table {
                let values: Vec<String> = cells
                    .iter()
                    .map(|c| c.map_or("-".to_string(), |(m, _)| m.to_string()))
                    .collect();
                let _ = writeln!(out, "{name},{}", values.join(","));
            }
        }
        TableFormat::Markdown => {
            let _ = writeln!(
                out,
                "| {} labeled / {} total | {} |",
                first.scenario.labeled_count,
                first.scenario.total,
                header.join(" | ")
            );
            let _ = writeln!(out, "|{}", "---|".repeat(header.len() + 1));
            for (name, cells) in &table {
                let values: Vec<String> = cells
                    .iter()
                    .map(|c| c.map_or("-".to_string(), |(m, s)| format!("{m:.2} ± {s:.2}")))
                    .collect();
                let _ = writeln!(out, "| {name} | {} |", values.join(" | "));
            }
        }
    }
    Ok(out)
}

/// Directory name used for one table cell under a sweep root.
pub fn cell_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    root.join(format!(
        "{}-{}-{}-{}-{}",
        cfg.classifier.architecture.name(),
        cfg.generator.kind.label(),
        cfg.generator.chain_length,
        cfg.labeler.filter.as_str(),
        cfg.scenario.labeled_count
    ))
}
