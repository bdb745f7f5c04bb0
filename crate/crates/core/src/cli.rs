//! The `kaft` command line: one subcommand per pipeline stage.
//!
//! Stages hand off through files only (`probe` → `score` → `partition` →
//! `build` → `train-toy`), every output gets a `<out>.manifest.json` with
//! the resolved config and input hashes, and all randomness comes from
//! `--seed` fanned out by stage name.
//!
//! Exit codes: 0 success, 1 internal error, 2 user or config error
//! (including a missing prerequisite stage).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curation::{
    build_baseline, export_weighted, greedy_answers, load_weighted, Baseline, CurationConfig, RewardPolicy,
    RewardedSample, WEIGHTED_JSONL,
};
use crate::dataset::{load_dataset, read_jsonl, write_dataset, write_jsonl, Dataset};
use crate::diversify::ProbeConfig;
use crate::error::Error;
use crate::probe::{
    config_fingerprint, evaluate_accuracy, CountingBackend, EndpointConfig, HttpBackend, ModelBackend, ProbeCache,
    ProbeResult, Prober, SimulatorBackend, SimulatorSpec,
};
use crate::scoring::{compute_scores, partition, score_report, ConflictScore, PartitionRecord, PartitionedDataset};
use crate::seed;
use crate::synth::{synthetic_dataset, SynthSpec};
use crate::toytrain::{
    run_experiment_seeds, summarize, train, weighted_loss, ExperimentRow, ExperimentSpec, ToyExample, ToyModel,
    ToyPolicy, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "kaft", version, about = "Conflict-aware fine-tuning data pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Run config (TOML); flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, fanned out to every stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Input dataset (JSONL).
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Output path of the stage.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Sim,
    Http,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Simulator spec (TOML).
    #[arg(long)]
    pub sim_spec: Option<PathBuf>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Query the model on permuted copies of every sample, filling the cache.
    Probe {
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Turn cached probe results into conflict scores.
    Score {
        #[command(flatten)]
        backend: BackendArgs,
        /// Probe cache to read.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Split scored samples into k equal rank subsets.
    Partition {
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Histogram and density table of the scores (CSV).
    Report {
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Write the weighted training file for one policy or baseline.
    Build {
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        partition: Option<PathBuf>,
        /// Probe cache, needed by self_aligning.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Reward policy: kaft, constant, auto_adapt (implies --baseline kaft).
        #[arg(long)]
        policy: Option<String>,
        /// vanilla, no_conflict, self_aligning, kaft or wrong_mix.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        lambda: Option<f64>,
        /// weighted-jsonl-v1 or prompt-completion-v1.
        #[arg(long)]
        format: Option<String>,
    },
    /// Train the softmax toy model on a weighted training file.
    TrainToy {
        #[arg(long)]
        weighted: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Run the synthetic conflict experiment and write its CSV report.
    Experiment {
        /// Experiment spec (TOML); overrides the config's [experiment] table.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Comma-separated policy names.
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
        /// Number of seeds.
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Zero-shot greedy accuracy of the backend on the dataset.
    Eval {
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Generate a synthetic dataset with per-sample knowledge probabilities.
    Synth {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        options: usize,
        #[arg(long)]
        domain: Option<String>,
    },
}

/// Run config file. Every table is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub sim_spec: Option<PathBuf>,
    pub max_in_flight: Option<usize>,
    pub k: usize,
    pub bins: usize,
    pub probe: ProbeConfig,
    pub simulator: Option<SimulatorSpec>,
    pub endpoint: Option<EndpointConfig>,
    pub reward: RewardPolicy,
    pub curation: CurationSection,
    pub train: TrainSection,
    pub experiment: ExperimentSpec,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dataset: None,
            backend: None,
            sim_spec: None,
            max_in_flight: None,
            k: 4,
            bins: 20,
            probe: ProbeConfig::default(),
            simulator: None,
            endpoint: None,
            reward: RewardPolicy::default(),
            curation: CurationSection::default(),
            train: TrainSection::default(),
            experiment: ExperimentSpec::default(),
            paths: Paths::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationSection {
    pub baseline: Baseline,
    pub lambda: f64,
    pub format: String,
}

impl Default for CurationSection {
    fn default() -> Self {
        CurationSection {
            baseline: Baseline::Kaft,
            lambda: 0.0,
            format: WEIGHTED_JSONL.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    /// Hash buckets per feature block of the bag-of-words encoder.
    pub hash_buckets: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 0.5,
            epochs: 5,
            batch_size: 16,
            l2: 0.0,
            hash_buckets: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub cache: Option<PathBuf>,
    pub scores: PathBuf,
    pub partition: PathBuf,
    pub report: PathBuf,
    pub weighted: PathBuf,
    pub model: PathBuf,
    pub experiment: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            cache: None,
            scores: "scores.jsonl".into(),
            partition: "partition.jsonl".into(),
            report: "report.csv".into(),
            weighted: "weighted.jsonl".into(),
            model: "toy-model.json".into(),
            experiment: "experiment.csv".into(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> crate::Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn from_file(path: impl AsRef<Path>) -> crate::Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn user(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    fn missing(what: &str, path: &Path, stage: &str) -> Self {
        CliError::user(format!(
            "missing {what} at {}; run the `{stage}` stage first",
            path.display()
        ))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Diverged { .. } => 1,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

/// Config and flags merged into what a stage actually runs with.
struct Ctx {
    cfg: RunConfig,
    out: Option<PathBuf>,
}

impl Ctx {
    fn stage_seed(&self, stage: &str) -> u64 {
        seed::derive(self.cfg.seed, stage)
    }

    fn out_or(&self, default: &Path) -> PathBuf {
        self.out.clone().unwrap_or_else(|| default.to_path_buf())
    }

    fn dataset_path(&self) -> CliResult<PathBuf> {
        self.cfg
            .dataset
            .clone()
            .ok_or_else(|| CliError::user("no dataset given (use --dataset or `dataset` in the config)"))
    }

    fn dataset(&self) -> CliResult<(PathBuf, Dataset)> {
        let path = self.dataset_path()?;
        if !path.exists() {
            return Err(CliError::user(format!("dataset {} does not exist", path.display())));
        }
        let d = load_dataset(&path)?;
        Ok((path, d))
    }

    fn apply_backend(&mut self, args: &BackendArgs) -> CliResult<()> {
        if let Some(b) = args.backend {
            self.cfg.backend = Some(b);
        }
        if let Some(p) = &args.sim_spec {
            self.cfg.sim_spec = Some(p.clone());
        }
        if let Some(n) = args.max_in_flight {
            self.cfg.max_in_flight = Some(n);
        }
        // resolve the simulator spec file into the config so manifests carry it
        if let Some(p) = self.cfg.sim_spec.clone() {
            if !p.exists() {
                return Err(CliError::user(format!("simulator spec {} does not exist", p.display())));
            }
            self.cfg.simulator = Some(SimulatorSpec::from_file(&p)?);
        }
        if self.cfg.backend.is_none() {
            self.cfg.backend = match (&self.cfg.simulator, &self.cfg.endpoint) {
                (Some(_), _) => Some(BackendKind::Sim),
                (None, Some(_)) => Some(BackendKind::Http),
                (None, None) => {
                    return Err(CliError::user(
                        "no backend configured (use --backend sim --sim-spec FILE, or an [endpoint] table)",
                    ))
                }
            };
        }
        Ok(())
    }

    fn backend(&self, dataset: &Dataset) -> CliResult<Box<dyn ModelBackend>> {
        match self.cfg.backend {
            Some(BackendKind::Sim) => {
                let spec = self
                    .cfg
                    .simulator
                    .clone()
                    .ok_or_else(|| CliError::user("simulator backend needs --sim-spec or a [simulator] table"))?;
                Ok(Box::new(SimulatorBackend::new(spec, dataset)?))
            }
            Some(BackendKind::Http) => {
                let ep = self
                    .cfg
                    .endpoint
                    .clone()
                    .ok_or_else(|| CliError::user("http backend needs an [endpoint] table in the config"))?;
                Ok(Box::new(HttpBackend::new(ep)?))
            }
            None => Err(CliError::user("no backend configured")),
        }
    }

    fn max_in_flight(&self) -> usize {
        self.cfg
            .max_in_flight
            .unwrap_or_else(|| match (&self.cfg.backend, &self.cfg.endpoint) {
                (Some(BackendKind::Http), Some(ep)) => ep.max_in_flight,
                _ => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            })
    }

    fn probe_config(&self) -> ProbeConfig {
        self.cfg.probe.clone()
    }

    fn cache_path(&self, flag: Option<&PathBuf>) -> PathBuf {
        if let Some(p) = flag {
            return p.clone();
        }
        if let Some(p) = &self.cfg.paths.cache {
            return p.clone();
        }
        match (&self.cfg.backend, &self.cfg.endpoint) {
            (Some(BackendKind::Http), Some(ep)) => PathBuf::from(&ep.cache_path),
            _ => PathBuf::from("probe-cache.jsonl"),
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    dataset: Option<String>,
    dataset_sha256: Option<String>,
    /// sha256 of each input file.
    inputs: BTreeMap<String, String>,
    config: &'a RunConfig,
}

fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn write_manifest(
    ctx: &Ctx,
    command: &str,
    out: &Path,
    dataset: Option<(&Path, &Dataset)>,
    inputs: &[&Path],
) -> CliResult<()> {
    let mut hashes = BTreeMap::new();
    for p in inputs {
        hashes.insert(p.display().to_string(), file_sha256(p)?);
    }
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: ctx.cfg.seed,
        dataset: dataset.map(|(p, _)| p.display().to_string()),
        dataset_sha256: dataset.map(|(_, d)| d.content_hash()),
        inputs: hashes,
        config: &ctx.cfg,
    };
    let path = manifest_path(out);
    let text = serde_json::to_string_pretty(&m).map_err(Error::from)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn require(path: &Path, what: &str, stage: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(what, path, stage))
    }
}

fn load_scores(path: &Path) -> CliResult<Vec<ConflictScore>> {
    require(path, "scores", "score")?;
    Ok(read_jsonl(path)?)
}

fn load_partition(path: &Path) -> CliResult<PartitionedDataset> {
    require(path, "partition", "partition")?;
    let records: Vec<PartitionRecord> = read_jsonl(path)?;
    Ok(PartitionedDataset::from_records(records)?)
}

/// Cached results for every dataset sample under the current fingerprint.
fn cached_results(ctx: &Ctx, dataset: &Dataset, cache_path: &Path) -> CliResult<Vec<ProbeResult>> {
    require(cache_path, "probe cache", "probe")?;
    let backend = ctx.backend(dataset)?;
    let fp = config_fingerprint(&ctx.probe_config(), &backend.identity());
    let cache = ProbeCache::open(cache_path)?;
    let mut out = Vec::with_capacity(dataset.len());
    let mut missing = Vec::new();
    for s in &dataset.samples {
        match cache.get(&s.id, &fp) {
            Some(r) => out.push(r.clone()),
            None => missing.push(s.id.as_str()),
        }
    }
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(5).copied().collect();
        return Err(CliError::user(format!(
            "probe cache {} lacks results for {} of {} samples under this config (e.g. {}); run the `probe` stage first",
            cache_path.display(),
            missing.len(),
            dataset.len(),
            shown.join(", ")
        )));
    }
    Ok(out)
}

pub fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::user(format!("config {} does not exist", p.display())));
            }
            RunConfig::from_file(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.common.dataset {
        cfg.dataset = Some(d.clone());
    }
    // the probe seed is derived, never taken from the file
    cfg.probe.seed = seed::derive(cfg.seed, "probe");
    let mut ctx = Ctx {
        cfg,
        out: cli.common.out.clone(),
    };

    match cli.command {
        Command::Probe { backend } => cmd_probe(&mut ctx, &backend),
        Command::Score { backend, cache } => cmd_score(&mut ctx, &backend, cache),
        Command::Partition { scores, k } => cmd_partition(&mut ctx, scores, k),
        Command::Report { scores, bins } => cmd_report(&mut ctx, scores, bins),
        Command::Build {
            backend,
            scores,
            partition,
            cache,
            policy,
            baseline,
            lambda,
            format,
        } => cmd_build(
            &mut ctx,
            &backend,
            BuildArgs {
                scores,
                partition,
                cache,
                policy,
                baseline,
                lambda,
                format,
            },
        ),
        Command::TrainToy {
            weighted,
            epochs,
            learning_rate,
        } => cmd_train_toy(&mut ctx, weighted, epochs, learning_rate),
        Command::Experiment {
            spec,
            policies,
            seeds,
            workers,
        } => cmd_experiment(&mut ctx, spec, policies, seeds, workers),
        Command::Eval { backend } => cmd_eval(&mut ctx, &backend),
        Command::Synth { n, options, domain } => cmd_synth(&mut ctx, n, options, domain),
    }
}

fn cmd_probe(ctx: &mut Ctx, args: &BackendArgs) -> CliResult<()> {
    ctx.apply_backend(args)?;
    let (dpath, dataset) = ctx.dataset()?;
    let backend = ctx.backend(&dataset)?;
    let counting = CountingBackend::new(backend.as_ref());
    let cache_path = ctx.cache_path(ctx.out.as_ref());
    ctx.cfg.paths.cache = Some(cache_path.clone());
    let mut cache = ProbeCache::open(&cache_path)?;
    let prober = Prober::new(&counting, ctx.probe_config()).with_max_in_flight(ctx.max_in_flight());
    let step = (dataset.len() / 20).max(1);
    let summary = prober.run(&dataset, &mut cache, |done, total| {
        if done == total || done % step == 0 {
            eprintln!("probe: {done}/{total} samples");
        }
    })?;
    println!("{} backend calls, {} cache hits", counting.calls(), summary.cache_hits);
    write_manifest(ctx, "probe", &cache_path, Some((&dpath, &dataset)), &[])?;
    if !summary.failures.is_empty() {
        let (first_id, first_msg) = &summary.failures[0];
        return Err(CliError::user(format!(
            "{} samples failed and were not cached: {}\nfirst failure ({first_id}): {first_msg}",
            summary.failures.len(),
            summary.failed_ids().join(", ")
        )));
    }
    Ok(())
}

fn cmd_score(ctx: &mut Ctx, args: &BackendArgs, cache: Option<PathBuf>) -> CliResult<()> {
    ctx.apply_backend(args)?;
    let (dpath, dataset) = ctx.dataset()?;
    let cache_path = ctx.cache_path(cache.as_ref());
    ctx.cfg.paths.cache = Some(cache_path.clone());
    let results = cached_results(ctx, &dataset, &cache_path)?;
    let scores = compute_scores(&results)?;
    let out = ctx.out_or(&ctx.cfg.paths.scores);
    write_jsonl(&out, &scores)?;
    write_manifest(ctx, "score", &out, Some((&dpath, &dataset)), &[&cache_path])?;
    let mean = scores.iter().map(|s| s.score).sum::<f64>() / scores.len().max(1) as f64;
    println!(
        "scored {} samples (mean score {mean:.4}) -> {}",
        scores.len(),
        out.display()
    );
    Ok(())
}

fn cmd_partition(ctx: &mut Ctx, scores: Option<PathBuf>, k: Option<usize>) -> CliResult<()> {
    if let Some(k) = k {
        ctx.cfg.k = k;
    }
    let spath = scores.unwrap_or_else(|| ctx.cfg.paths.scores.clone());
    let scores = load_scores(&spath)?;
    let part = partition(&scores, ctx.cfg.k)?;
    let out = ctx.out_or(&ctx.cfg.paths.partition);
    write_jsonl(&out, &part.records())?;
    write_manifest(ctx, "partition", &out, None, &[&spath])?;
    for (i, n) in part.sizes().iter().enumerate() {
        println!("{:<12} {n}", crate::scoring::subset_label(part.k, i));
    }
    Ok(())
}

fn cmd_report(ctx: &mut Ctx, scores: Option<PathBuf>, bins: Option<usize>) -> CliResult<()> {
    if let Some(b) = bins {
        ctx.cfg.bins = b;
    }
    let spath = scores.unwrap_or_else(|| ctx.cfg.paths.scores.clone());
    let scores = load_scores(&spath)?;
    let report = score_report(&scores, ctx.cfg.bins)?;
    let out = ctx.out_or(&ctx.cfg.paths.report);
    report.write_csv(&out)?;
    write_manifest(ctx, "report", &out, None, &[&spath])?;
    println!(
        "{} scores, {} bins, bandwidth {:.4} -> {}",
        scores.len(),
        report.histogram.len(),
        report.bandwidth,
        out.display()
    );
    Ok(())
}

struct BuildArgs {
    scores: Option<PathBuf>,
    partition: Option<PathBuf>,
    cache: Option<PathBuf>,
    policy: Option<String>,
    baseline: Option<String>,
    lambda: Option<f64>,
    format: Option<String>,
}

fn parse_policy(name: &str) -> CliResult<RewardPolicy> {
    let p = match name.replace('-', "_").as_str() {
        "kaft" => RewardPolicy::kaft(),
        "constant" => RewardPolicy::Constant { value: 1.0 },
        "auto_adapt" => RewardPolicy::AutoAdapt {
            floor: crate::curation::DEFAULT_AUTO_FLOOR,
        },
        "k_subsets" => {
            return Err(CliError::user(
                "k_subsets needs explicit rewards; set [reward] kind = \"k_subsets\" in the config",
            ))
        }
        other => return Err(CliError::user(format!("unknown reward policy {other:?}"))),
    };
    Ok(p)
}

fn cmd_build(ctx: &mut Ctx, bargs: &BackendArgs, a: BuildArgs) -> CliResult<()> {
    if let Some(p) = &a.policy {
        ctx.cfg.reward = parse_policy(p)?;
        ctx.cfg.curation.baseline = Baseline::Kaft;
    }
    if let Some(b) = &a.baseline {
        ctx.cfg.curation.baseline = b.parse()?;
    }
    if let Some(l) = a.lambda {
        ctx.cfg.curation.lambda = l;
    }
    if let Some(f) = &a.format {
        ctx.cfg.curation.format = f.clone();
    }
    ctx.cfg.reward.validate()?;
    let (dpath, dataset) = ctx.dataset()?;
    let spath = a.scores.unwrap_or_else(|| ctx.cfg.paths.scores.clone());
    let ppath = a.partition.unwrap_or_else(|| ctx.cfg.paths.partition.clone());
    let scores = load_scores(&spath)?;
    let part = load_partition(&ppath)?;
    let mut inputs: Vec<PathBuf> = vec![spath, ppath];

    let greedy = if ctx.cfg.curation.baseline == Baseline::SelfAligning {
        ctx.apply_backend(bargs)?;
        let cache_path = ctx.cache_path(a.cache.as_ref());
        ctx.cfg.paths.cache = Some(cache_path.clone());
        let results = cached_results(ctx, &dataset, &cache_path)?;
        inputs.push(cache_path);
        greedy_answers(&results)
    } else {
        Default::default()
    };
    let config = CurationConfig {
        baseline: ctx.cfg.curation.baseline,
        lambda: ctx.cfg.curation.lambda,
        seed: ctx.stage_seed("build"),
    };
    let samples = build_baseline(&dataset, &part, &scores, &greedy, &config, &ctx.cfg.reward)?;
    let out = ctx.out_or(&ctx.cfg.paths.weighted);
    export_weighted(&samples, &out, &ctx.cfg.curation.format)?;
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    write_manifest(ctx, "build", &out, Some((&dpath, &dataset)), &input_refs)?;
    print_build_summary(&samples, part.k);
    println!("{} samples -> {}", samples.len(), out.display());
    Ok(())
}

fn print_build_summary(samples: &[RewardedSample], k: usize) {
    let mut sizes = vec![0usize; k];
    let mut rewards: BTreeMap<String, usize> = BTreeMap::new();
    for s in samples {
        if let Some(n) = sizes.get_mut(s.subset) {
            *n += 1;
        }
        *rewards.entry(format!("{:.4}", s.reward)).or_default() += 1;
    }
    println!("subset sizes:");
    for (i, n) in sizes.iter().enumerate() {
        println!("  {:<12} {n}", crate::scoring::subset_label(k, i));
    }
    println!("rewards:");
    for (r, n) in &rewards {
        println!("  {r:<12} {n}");
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Hashed bag-of-words encoding of a multiple-choice item: one block of
/// `buckets` for the question, then one block per option slot.
pub fn hashed_features(question: &str, options: &[String], buckets: usize, max_options: usize) -> Vec<f64> {
    let mut x = vec![0.0; buckets * (max_options + 1)];
    let mut add = |block: usize, text: &str| {
        for tok in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let h = fnv1a(tok.to_lowercase().as_bytes()) as usize % buckets;
            x[block * buckets + h] += 1.0;
        }
    };
    add(0, question);
    for (j, o) in options.iter().enumerate().take(max_options) {
        add(j + 1, o);
    }
    x
}

#[derive(Serialize)]
struct ToyModelFile<'a> {
    hash_buckets: usize,
    max_options: usize,
    train_loss: f64,
    train_accuracy: f64,
    model: &'a ToyModel,
}

fn cmd_train_toy(
    ctx: &mut Ctx,
    weighted: Option<PathBuf>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
) -> CliResult<()> {
    if let Some(e) = epochs {
        ctx.cfg.train.epochs = e;
    }
    if let Some(lr) = learning_rate {
        ctx.cfg.train.learning_rate = lr;
    }
    let t = ctx.cfg.train.clone();
    if t.hash_buckets == 0 {
        return Err(CliError::user("hash_buckets must be >= 1"));
    }
    let wpath = weighted.unwrap_or_else(|| ctx.cfg.paths.weighted.clone());
    require(&wpath, "weighted training file", "build")?;
    let samples = load_weighted(&wpath)?;
    if samples.is_empty() {
        return Err(CliError::user(format!("{} holds no samples", wpath.display())));
    }
    let max_options = samples.iter().map(|s| s.sample.options.len()).max().unwrap_or(2);
    let data: Vec<ToyExample> = samples
        .iter()
        .map(|s| {
            let x = hashed_features(&s.sample.question, &s.sample.options, t.hash_buckets, max_options);
            ToyExample::new(x, s.sample.answer_index, s.reward)
        })
        .collect();
    let config = TrainConfig {
        learning_rate: t.learning_rate,
        epochs: t.epochs,
        batch_size: t.batch_size,
        seed: ctx.stage_seed("train-toy"),
        l2: t.l2,
    };
    let model0 = ToyModel::zeros(t.hash_buckets * (max_options + 1), max_options);
    let model = train(&model0, &data, &config)?;
    let loss = weighted_loss(&model, &data, t.l2)?;
    let acc = model.accuracy(&data);
    let out = ctx.out_or(&ctx.cfg.paths.model);
    let file = ToyModelFile {
        hash_buckets: t.hash_buckets,
        max_options,
        train_loss: loss,
        train_accuracy: acc,
        model: &model,
    };
    let text = serde_json::to_string(&file).map_err(Error::from)?;
    fs::write(&out, text + "\n").map_err(|e| Error::io(&out, e))?;
    write_manifest(ctx, "train-toy", &out, None, &[&wpath])?;
    println!(
        "trained on {} samples: weighted loss {loss:.4}, train accuracy {acc:.4} -> {}",
        data.len(),
        out.display()
    );
    Ok(())
}

fn cmd_experiment(
    ctx: &mut Ctx,
    spec: Option<PathBuf>,
    policies: Option<Vec<String>>,
    n_seeds: usize,
    workers: Option<usize>,
) -> CliResult<()> {
    if let Some(p) = &spec {
        require(p, "experiment spec", "experiment")?;
        ctx.cfg.experiment = ExperimentSpec::from_file(p)?;
    }
    if let Some(names) = policies {
        ctx.cfg.experiment.policies = names
            .iter()
            .map(|n| n.trim().parse::<ToyPolicy>())
            .collect::<crate::Result<_>>()?;
    }
    if n_seeds == 0 {
        return Err(CliError::user("--seeds must be >= 1"));
    }
    ctx.cfg.experiment.validate()?;
    let seeds: Vec<u64> = (0..n_seeds)
        .map(|i| seed::derive_many(ctx.cfg.seed, &["experiment", &i.to_string()]))
        .collect();
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let rows = run_experiment_seeds(&ctx.cfg.experiment, &seeds, workers)?;
    let out = ctx.out_or(&ctx.cfg.paths.experiment);
    fs::write(&out, ExperimentRow::to_csv(&rows)).map_err(|e| Error::io(&out, e))?;
    let inputs: Vec<&Path> = spec.iter().map(PathBuf::as_path).collect();
    write_manifest(ctx, "experiment", &out, None, &inputs)?;
    println!(
        "{:<14} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "policy", "heldout", "wrong", "m-wrong", "m-right", "right"
    );
    for s in summarize(&rows) {
        println!(
            "{:<14} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            s.policy.name(),
            s.heldout_acc,
            s.slice_acc[0],
            s.slice_acc[1],
            s.slice_acc[2],
            s.slice_acc[3]
        );
    }
    println!("{} rows -> {}", rows.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    accuracy: f64,
    n: usize,
}

fn cmd_eval(ctx: &mut Ctx, args: &BackendArgs) -> CliResult<()> {
    ctx.apply_backend(args)?;
    ctx.cfg.probe.few_shot_k = 0;
    let (dpath, dataset) = ctx.dataset()?;
    let backend = ctx.backend(&dataset)?;
    let acc = evaluate_accuracy(&dataset, backend.as_ref(), &ctx.probe_config(), ctx.max_in_flight())?;
    println!("accuracy {acc:.4} over {} samples", dataset.len());
    if let Some(out) = ctx.out.clone() {
        let text = serde_json::to_string_pretty(&EvalReport {
            accuracy: acc,
            n: dataset.len(),
        })
        .map_err(Error::from)?;
        fs::write(&out, text + "\n").map_err(|e| Error::io(&out, e))?;
        write_manifest(ctx, "eval", &out, Some((&dpath, &dataset)), &[])?;
    }
    Ok(())
}

fn cmd_synth(ctx: &mut Ctx, n: usize, options: usize, domain: Option<String>) -> CliResult<()> {
    let out = ctx.out.clone().ok_or_else(|| CliError::user("synth needs --out"))?;
    let spec = SynthSpec {
        n_samples: n,
        option_count: options,
        domain,
        seed: ctx.stage_seed("synth"),
    };
    let dataset = synthetic_dataset(&spec)?;
    write_dataset(&dataset, &out)?;
    write_manifest(ctx, "synth", &out, Some((&out, &dataset)), &[])?;
    println!("{} samples -> {}", dataset.len(), out.display());
    Ok(())
}
