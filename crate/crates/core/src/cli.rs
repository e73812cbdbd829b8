//! Command-line front end.
//!
//! Every subcommand accepts `--config <json>` whose fields are overridden by
//! flags, writes its artifacts atomically under `--out-dir`, records a run
//! manifest, and prints a JSON summary on stdout. Failures print a JSON error
//! object on stderr and exit 1 (module error) or 2 (usage error).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::baseline_cox::{fit_cox, hazard_ratio, CoxModel, DEFAULT_MAX_ITER, DEFAULT_TOLERANCE};
use crate::cohort::{parse_cohort, split_cohort, write_cohort, Cohort, SchemaConfig};
use crate::comparator::{train_ranker, Comparator, RankerModel, TrainConfig, RANKER_FORMAT};
use crate::error::{Error, Result};
use crate::featurize::Featurization;
use crate::inference::{score_cohort, select_anchors, AnchorStrategy, RiskTable, ScoredCohort, DEFAULT_ANCHORS};
use crate::llm_client::{EndpointConfig, RemoteComparator};
use crate::metrics::{
    bootstrap_ci, c_index_sample, horizon_auc_sample, km_curve_from, paired_difference_analysis,
    stratify_by_median, MetricReport, RiskGroup, SurvivalOutcomes, DEFAULT_DELTA,
};
use crate::output::{render_svg, write_atomic, write_string_atomic, Series};
use crate::pairs::{ControlPool, PairSet};
use crate::pipeline::{self, PipelineConfig, DEFAULT_N_CONTROLS, DEFAULT_TEST_FRACTION};
use crate::synth::{generate_ph_cohort, write_truth, FeatureDistribution, SynthConfig};
use crate::textualize::{OrderPolicy, PromptTemplate};

pub const DEFAULT_BOOTSTRAP: usize = 1000;
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "pairsurv", version, about = "Survival analysis as pairwise ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a cohort into train and test files.
    Split(SplitArgs),
    /// Build comparable or case-control sampled pairs.
    Pairs(PairsArgs),
    /// Fit a pairwise ranker or the Cox baseline.
    Train(TrainArgs),
    /// Score test subjects against training anchors.
    Score(ScoreArgs),
    /// C-index and horizon AUCs with bootstrap intervals.
    Eval(EvalArgs),
    /// Kaplan-Meier curves and hazard ratio for median risk groups.
    Km(KmArgs),
    /// Parameter sweeps and equivalence analyses.
    Ablate(AblateArgs),
    /// Generate a synthetic proportional-hazards cohort.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// JSON run configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// JSON file naming the id, time, event and feature columns.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    delimiter: Option<char>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct PairsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    cohort: Option<PathBuf>,
    /// Controls per event case; 0 keeps every comparable pair.
    #[arg(long)]
    n_controls: Option<usize>,
    #[arg(long, value_enum)]
    control_pool: Option<PoolArg>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    cohort: Option<PathBuf>,
    /// Pair file from `pairs`; sampled on the fly when absent.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, value_enum)]
    model_kind: Option<ModelKind>,
    #[arg(long)]
    n_controls: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Debug, Clone, Args)]
struct ComparatorArgs {
    #[arg(long, value_enum)]
    backend: Option<Backend>,
    /// Ranker or Cox model JSON (builtin backend).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Endpoint configuration JSON (remote backend).
    #[arg(long)]
    endpoint: Option<PathBuf>,
    /// `icu`, `fracture`, or a template file path.
    #[arg(long)]
    template: Option<String>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    comparator: ComparatorArgs,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    anchors: Option<AnchorStrategy>,
    #[arg(long)]
    order_policy: Option<OrderPolicy>,
    /// Also score the non-anchor training subjects.
    #[arg(long)]
    score_train: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    risks: Option<PathBuf>,
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<f64>>,
    #[arg(long)]
    bootstrap: Option<usize>,
}

#[derive(Debug, Args)]
struct KmArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    train_risks: Option<PathBuf>,
    #[arg(long)]
    risks: Option<PathBuf>,
    #[arg(long)]
    cohort: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    comparator: ComparatorArgs,
    #[arg(long, value_enum)]
    param: AblateParam,
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<String>>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    anchors: Option<AnchorStrategy>,
    #[arg(long)]
    order_policy: Option<OrderPolicy>,
    #[arg(long)]
    n_controls: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    beta: Option<Vec<f64>>,
    #[arg(long)]
    baseline_rate: Option<f64>,
    #[arg(long)]
    censor_rate: Option<f64>,
    /// Per-feature `normal` or `bernoulli:<q>`.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Builtin,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ranker,
    Cox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PoolArg {
    All,
    Events,
}

impl From<PoolArg> for ControlPool {
    fn from(p: PoolArg) -> Self {
        match p {
            PoolArg::All => ControlPool::AllSubjects,
            PoolArg::Events => ControlPool::EventsOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblateParam {
    AnchorCount,
    NControls,
    AnchorStrategy,
    OrderPolicy,
}

impl AblateParam {
    fn name(self) -> &'static str {
        match self {
            AblateParam::AnchorCount => "anchor-count",
            AblateParam::NControls => "n-controls",
            AblateParam::AnchorStrategy => "anchor-strategy",
            AblateParam::OrderPolicy => "order-policy",
        }
    }

    fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            AblateParam::AnchorCount => &["1", "5", "10", "25", "50", "100"],
            AblateParam::NControls => &["1", "2", "5", "10", "20", "50"],
            AblateParam::AnchorStrategy => &["random", "event_only"],
            AblateParam::OrderPolicy => &["shuffle", "fix_first"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

/// File-level configuration. Every field is optional; flags override.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub schema: Option<SchemaConfig>,
    pub delimiter: Option<char>,
    pub cohort: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub risks: Option<PathBuf>,
    pub train_risks: Option<PathBuf>,
    pub test_fraction: Option<f64>,
    pub n_controls: Option<usize>,
    pub control_pool: Option<ControlPool>,
    pub model_kind: Option<ModelKind>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub k: Option<usize>,
    pub anchor_strategy: Option<AnchorStrategy>,
    pub order_policy: Option<OrderPolicy>,
    pub horizons: Option<Vec<f64>>,
    pub bootstrap: Option<usize>,
    pub delta: Option<f64>,
    pub backend: Option<Backend>,
    pub endpoint: Option<EndpointConfig>,
    pub template: Option<String>,
    pub synth: Option<SynthConfig>,
    pub ablate_values: Option<Vec<String>>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Argument(format!("run config: {e}")))
    }
}

/// Run the CLI on `argv` (program name first). Returns the exit status.
pub fn run_command<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let obj = json!({ "error": { "kind": "usage", "message": e.to_string().trim_end() } });
            let _ = writeln!(stderr, "{obj}");
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(summary) => {
            let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            0
        }
        Err(e) => {
            let obj = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            let _ = writeln!(stderr, "{obj}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<Value> {
    match command {
        Command::Split(a) => cmd_split(a),
        Command::Pairs(a) => cmd_pairs(a),
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Km(a) => cmd_km(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Resolved shared state for one invocation.
struct Ctx {
    command: &'static str,
    cfg: RunConfig,
    out_dir: PathBuf,
    seed: u64,
    schema: SchemaConfig,
    delimiter: u8,
    outputs: Vec<String>,
}

impl Ctx {
    fn new(command: &'static str, common: &Common) -> Result<Self> {
        let cfg = match &common.config {
            Some(p) => RunConfig::from_json(&std::fs::read_to_string(existing(p)?)?)?,
            None => RunConfig::default(),
        };
        let schema = match &common.schema {
            Some(p) => SchemaConfig::from_json(&std::fs::read_to_string(existing(p)?)?)?,
            None => cfg.schema.clone().unwrap_or_default(),
        };
        let delimiter = common.delimiter.or(cfg.delimiter).unwrap_or(',');
        if !delimiter.is_ascii() {
            return Err(Error::Argument(format!("delimiter must be ASCII, got {delimiter:?}")));
        }
        if let Some(j) = common.jobs.or(cfg.jobs) {
            if j == 0 {
                return Err(Error::Argument("--jobs must be at least 1".into()));
            }
            // a pool built earlier in this process stays in place
            let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
        }
        Ok(Self {
            command,
            out_dir: common.out_dir.clone().or(cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from(".")),
            seed: common.seed.or(cfg.seed).unwrap_or(0),
            schema,
            delimiter: delimiter as u8,
            cfg,
            outputs: Vec::new(),
        })
    }

    fn path(&self, flag: &Option<PathBuf>, from_cfg: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        let p = flag
            .clone()
            .or_else(|| from_cfg.clone())
            .ok_or_else(|| Error::Argument(format!("missing required input: --{what}")))?;
        existing(&p)?;
        Ok(p)
    }

    fn load_cohort(&self, path: &Path) -> Result<Cohort> {
        parse_cohort(BufReader::new(File::open(path)?), &self.schema, self.delimiter)
    }

    fn emit<F>(&mut self, name: &str, fill: F) -> Result<String>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        let path = self.out_dir.join(name);
        write_atomic(&path, fill)?;
        let shown = path.display().to_string();
        self.outputs.push(shown.clone());
        Ok(shown)
    }

    fn emit_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<String> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.emit(name, |w| Ok(w.write_all(text.as_bytes())?))
    }

    fn write_cohort_file(&mut self, name: &str, cohort: &Cohort) -> Result<String> {
        let schema = SchemaConfig { features: Some(cohort.schema().to_vec()), ..self.schema.clone() };
        self.emit(name, |w| write_cohort(cohort, &schema, w))
    }

    /// Record the manifest and attach the output list to `summary`.
    fn finish(mut self, resolved: Value, mut summary: Value) -> Result<Value> {
        let manifest = json!({
            "command": self.command,
            "version": VERSION,
            "seed": self.seed,
            "config": resolved,
            "outputs": self.outputs,
        });
        let path = self.out_dir.join(format!("{}_manifest.json", self.command));
        write_string_atomic(&path, &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
        self.outputs.push(path.display().to_string());
        summary["command"] = json!(self.command);
        summary["outputs"] = json!(self.outputs);
        Ok(summary)
    }
}

fn existing(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Argument(format!("input file not found: {}", path.display())))
    }
}

fn cmd_split(a: SplitArgs) -> Result<Value> {
    let mut ctx = Ctx::new("split", &a.common)?;
    let path = ctx.path(&a.cohort, &ctx.cfg.cohort, "cohort")?;
    let frac = a.test_fraction.or(ctx.cfg.test_fraction).unwrap_or(DEFAULT_TEST_FRACTION);
    let cohort = ctx.load_cohort(&path)?;
    let (train, test) = split_cohort(&cohort, frac, ctx.seed)?;
    ctx.write_cohort_file("train.csv", &train)?;
    ctx.write_cohort_file("test.csv", &test)?;
    let resolved = json!({ "cohort": path, "test_fraction": frac, "seed": ctx.seed });
    let summary = json!({
        "n_train": train.len(), "n_test": test.len(),
        "events_train": train.n_events(), "events_test": test.n_events(),
    });
    ctx.finish(resolved, summary)
}

fn n_controls_opt(raw: Option<usize>) -> Option<usize> {
    match raw {
        Some(0) => None,
        Some(n) => Some(n),
        None => Some(DEFAULT_N_CONTROLS),
    }
}

fn cmd_pairs(a: PairsArgs) -> Result<Value> {
    let mut ctx = Ctx::new("pairs", &a.common)?;
    let path = ctx.path(&a.cohort, &ctx.cfg.cohort, "cohort")?;
    let config = PipelineConfig {
        n_controls: n_controls_opt(a.n_controls.or(ctx.cfg.n_controls)),
        control_pool: a.control_pool.map(Into::into).or(ctx.cfg.control_pool).unwrap_or_default(),
        seed: ctx.seed,
        ..Default::default()
    };
    let cohort = ctx.load_cohort(&path)?;
    let pairs = pipeline::build_pairs(&cohort, &config)?;
    ctx.emit("pairs.csv", |w| pairs.write_csv(w))?;
    let resolved = json!({
        "cohort": path, "n_controls": config.n_controls, "control_pool": config.control_pool, "seed": ctx.seed,
    });
    ctx.finish(resolved, json!({ "n_pairs": pairs.len(), "n_cases": cohort.n_events() }))
}

fn cmd_train(a: TrainArgs) -> Result<Value> {
    let mut ctx = Ctx::new("train", &a.common)?;
    let path = ctx.path(&a.cohort, &ctx.cfg.cohort, "cohort")?;
    let cohort = ctx.load_cohort(&path)?;
    let kind = a.model_kind.or(ctx.cfg.model_kind).unwrap_or(ModelKind::Ranker);
    match kind {
        ModelKind::Cox => {
            let model = fit_cox(&cohort, Featurization::fit(&cohort, true), DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)?;
            ctx.emit("model.json", |w| Ok(w.write_all((model.to_json()? + "\n").as_bytes())?))?;
            let summary = json!({
                "model_kind": "cox",
                "coefficients": model.coefficients,
                "iterations": model.convergence.iterations,
                "gradient_norm": model.convergence.gradient_norm,
            });
            ctx.finish(json!({ "cohort": path, "model_kind": "cox" }), summary)
        }
        ModelKind::Ranker => {
            let defaults = TrainConfig::default();
            let train_config = TrainConfig {
                epochs: a.epochs.or(ctx.cfg.epochs).unwrap_or(defaults.epochs),
                learning_rate: a.learning_rate.or(ctx.cfg.learning_rate).unwrap_or(defaults.learning_rate),
                batch_size: a.batch_size.or(ctx.cfg.batch_size).unwrap_or(defaults.batch_size),
                seed: ctx.seed,
            };
            let pair_path = a.pairs.clone().or(ctx.cfg.pairs.clone());
            let pairs = match &pair_path {
                Some(p) => PairSet::read_csv(BufReader::new(File::open(existing(p)?)?))?,
                None => {
                    let config = PipelineConfig {
                        n_controls: n_controls_opt(a.n_controls.or(ctx.cfg.n_controls)),
                        control_pool: ctx.cfg.control_pool.unwrap_or_default(),
                        seed: ctx.seed,
                        ..Default::default()
                    };
                    pipeline::build_pairs(&cohort, &config)?
                }
            };
            let model = train_ranker(&pairs, &cohort, &train_config)?;
            ctx.emit("model.json", |w| Ok(w.write_all((model.to_json()? + "\n").as_bytes())?))?;
            let final_loss = model.training.as_ref().and_then(|t| t.loss_trace.last().copied());
            let summary = json!({
                "model_kind": "ranker",
                "n_pairs": pairs.len(),
                "weights": model.weights,
                "final_loss": final_loss,
            });
            let resolved = json!({ "cohort": path, "pairs": pair_path, "model_kind": "ranker", "train": train_config });
            ctx.finish(resolved, summary)
        }
    }
}

/// A scoring backend: anchor comparisons, or a Cox linear predictor.
enum Scorer {
    Pairwise(Box<dyn Comparator>),
    Cox(CoxModel),
}

fn load_template(spec: Option<&str>) -> Result<PromptTemplate> {
    match spec.unwrap_or("icu") {
        "icu" | "icu_mortality" => Ok(PromptTemplate::icu_mortality()),
        "fracture" => Ok(PromptTemplate::fracture()),
        path => PromptTemplate::from_file(existing(Path::new(path))?),
    }
}

fn load_scorer(ctx: &Ctx, c: &ComparatorArgs) -> Result<(Scorer, Value)> {
    let backend = c.backend.or(ctx.cfg.backend).unwrap_or(Backend::Builtin);
    match backend {
        Backend::Builtin => {
            let path = ctx.path(&c.model, &ctx.cfg.model, "model")?;
            let text = std::fs::read_to_string(&path)?;
            let raw: Value = serde_json::from_str(&text)?;
            let desc = json!({ "backend": "builtin", "model": path });
            if raw.get("format").and_then(Value::as_str) == Some(RANKER_FORMAT) {
                Ok((Scorer::Pairwise(Box::new(RankerModel::from_json(&text)?)), desc))
            } else if raw.get("coefficients").is_some() {
                Ok((Scorer::Cox(CoxModel::from_json(&text)?), desc))
            } else {
                Err(Error::Argument(format!("{} is neither a ranker nor a Cox model", path.display())))
            }
        }
        Backend::Remote => {
            let endpoint = match &c.endpoint {
                Some(p) => serde_json::from_str::<EndpointConfig>(&std::fs::read_to_string(existing(p)?)?)?,
                None => ctx
                    .cfg
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::Argument("remote backend needs --endpoint".into()))?,
            };
            let template_spec = c.template.clone().or(ctx.cfg.template.clone());
            let template = load_template(template_spec.as_deref())?;
            let desc = json!({
                "backend": "remote",
                "base_url": endpoint.base_url,
                "model_id": endpoint.model_id,
                "template": template_spec.unwrap_or_else(|| "icu".into()),
                "symmetrize": endpoint.symmetrize,
            });
            Ok((Scorer::Pairwise(Box::new(RemoteComparator::new(endpoint, template)?)), desc))
        }
    }
}

fn cmd_score(a: ScoreArgs) -> Result<Value> {
    let mut ctx = Ctx::new("score", &a.common)?;
    let train_path = ctx.path(&a.train, &ctx.cfg.train, "train")?;
    let test_path = ctx.path(&a.test, &ctx.cfg.test, "test")?;
    let (scorer, backend) = load_scorer(&ctx, &a.comparator)?;
    let train = ctx.load_cohort(&train_path)?;
    let test = ctx.load_cohort(&test_path)?;

    match scorer {
        Scorer::Cox(model) => {
            let risks = model.risk_table(&test)?;
            ctx.emit("risks.csv", |w| risks.write_csv(w))?;
            if a.score_train {
                let tr = model.risk_table(&train)?;
                ctx.emit("train_risks.csv", |w| tr.write_csv(w))?;
            }
            let resolved = json!({ "train": train_path, "test": test_path, "comparator": backend });
            ctx.finish(resolved, json!({ "n_scored": risks.len(), "n_failed": 0 }))
        }
        Scorer::Pairwise(model) => {
            let k = a.k.or(ctx.cfg.k).unwrap_or(DEFAULT_ANCHORS);
            let strategy = a.anchors.or(ctx.cfg.anchor_strategy).unwrap_or_default();
            let policy = a.order_policy.or(ctx.cfg.order_policy).unwrap_or_default();
            let anchors = select_anchors(&train, k, strategy, ctx.seed)?;
            let scored = score_cohort(&test, &anchors, model.as_ref(), policy, ctx.seed)?;
            ctx.emit("risks.csv", |w| scored.table.write_csv(w))?;
            ctx.emit_json("anchors.json", &json!({ "strategy": strategy, "requested": k, "ids": anchors.ids() }))?;
            let mut train_scored = ScoredCohort::default();
            if a.score_train {
                let rest = train.filter(|r| !anchors.contains(&r.id));
                train_scored = score_cohort(&rest, &anchors, model.as_ref(), policy, ctx.seed)?;
                ctx.emit("train_risks.csv", |w| train_scored.table.write_csv(w))?;
            }
            let failures: Vec<_> = scored.failures.iter().chain(&train_scored.failures).cloned().collect();
            if !failures.is_empty() {
                ctx.emit_json("failures.json", &failures)?;
            }
            let resolved = json!({
                "train": train_path, "test": test_path, "comparator": backend,
                "k": k, "anchor_strategy": strategy, "order_policy": policy, "seed": ctx.seed,
            });
            let summary = json!({
                "n_scored": scored.table.len(),
                "n_failed": failures.len(),
                "anchors": anchors.k(),
                "anchor_shortfall": anchors.shortfall(),
            });
            let summary = ctx.finish(resolved, summary)?;
            match failures.into_iter().next() {
                None => Ok(summary),
                Some(f) => Err(Error::Scoring { id: f.id, reason: f.reason }),
            }
        }
    }
}

fn read_risks(path: &Path) -> Result<RiskTable> {
    RiskTable::read_csv(BufReader::new(File::open(path)?))
}

/// C-index plus one AUC per horizon, each with a bootstrap interval.
pub fn evaluate(risks: &RiskTable, outcomes: &SurvivalOutcomes, horizons: &[f64], b: usize, seed: u64) -> Result<Vec<MetricReport>> {
    let n = risks.len();
    let mut reports = vec![MetricReport::from_interval(
        "c_index",
        &bootstrap_ci(c_index_sample, risks, outcomes, b, seed)?,
        n,
        None,
    )];
    for &h in horizons {
        let ci = bootstrap_ci(|s| horizon_auc_sample(s, h), risks, outcomes, b, seed)?;
        reports.push(MetricReport::from_interval("auc", &ci, n, Some(h)));
    }
    Ok(reports)
}

fn cmd_eval(a: EvalArgs) -> Result<Value> {
    let mut ctx = Ctx::new("eval", &a.common)?;
    let risk_path = ctx.path(&a.risks, &ctx.cfg.risks, "risks")?;
    let cohort_path = ctx.path(&a.cohort, &ctx.cfg.cohort, "cohort")?;
    let horizons = a.horizons.clone().or(ctx.cfg.horizons.clone()).unwrap_or_default();
    if let Some(h) = horizons.iter().find(|h| !(**h > 0.0)) {
        return Err(Error::Argument(format!("horizons must be positive, got {h}")));
    }
    let b = a.bootstrap.or(ctx.cfg.bootstrap).unwrap_or(DEFAULT_BOOTSTRAP);
    let risks = read_risks(&risk_path)?;
    let outcomes = SurvivalOutcomes::from_cohort(&ctx.load_cohort(&cohort_path)?);
    let reports = evaluate(&risks, &outcomes, &horizons, b, ctx.seed)?;
    ctx.emit_json("metrics.json", &reports)?;
    let resolved = json!({
        "risks": risk_path, "cohort": cohort_path, "horizons": horizons, "bootstrap": b, "seed": ctx.seed,
    });
    ctx.finish(resolved, json!({ "metrics": reports }))
}

fn cmd_km(a: KmArgs) -> Result<Value> {
    let mut ctx = Ctx::new("km", &a.common)?;
    let train_path = ctx.path(&a.train_risks, &ctx.cfg.train_risks, "train-risks")?;
    let risk_path = ctx.path(&a.risks, &ctx.cfg.risks, "risks")?;
    let cohort_path = ctx.path(&a.cohort, &ctx.cfg.cohort, "cohort")?;
    let train_risks = read_risks(&train_path)?;
    let test_risks = read_risks(&risk_path)?;
    let outcomes = SurvivalOutcomes::from_cohort(&ctx.load_cohort(&cohort_path)?);

    let strata = stratify_by_median(&train_risks, &test_risks)?;
    let hr = hazard_ratio(&strata, &outcomes)?;
    let mut curves = Vec::new();
    for group in [RiskGroup::Low, RiskGroup::High] {
        let (mut times, mut events) = (Vec::new(), Vec::new());
        for (id, g) in &strata.assignments {
            if *g == group {
                let (t, e) = outcomes
                    .get(id)
                    .ok_or_else(|| Error::Argument(format!("no outcome for subject {id}")))?;
                times.push(t);
                events.push(e);
            }
        }
        if !times.is_empty() {
            curves.push((group, km_curve_from(&times, &events)?));
        }
    }
    ctx.emit("km.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["group", "time", "survival", "at_risk", "events"])?;
        for (g, c) in &curves {
            c.write_csv(g.as_str(), &mut csv)?;
        }
        csv.flush()?;
        Ok(())
    })?;
    let series: Vec<Series> = curves
        .iter()
        .map(|(g, c)| Series {
            label: format!("{} risk (n={})", g.as_str(), strata.count(*g)),
            points: c.points.iter().map(|p| (p.time, p.survival)).collect(),
            step: true,
        })
        .collect();
    let title = format!("HR {:.2} (95% CI {:.2}-{:.2})", hr.hr, hr.ci_lower, hr.ci_upper);
    let svg = render_svg(&title, "time", "survival", &series);
    ctx.emit("km.svg", |w| Ok(w.write_all(svg.as_bytes())?))?;
    let summary = json!({
        "threshold": strata.threshold,
        "n_high": strata.count(RiskGroup::High),
        "n_low": strata.count(RiskGroup::Low),
        "hazard_ratio": hr,
    });
    ctx.emit_json("km_summary.json", &summary)?;
    let resolved = json!({ "train_risks": train_path, "risks": risk_path, "cohort": cohort_path });
    ctx.finish(resolved, summary)
}

fn parse_values<T: std::str::FromStr>(param: AblateParam, values: &[String]) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    values
        .iter()
        .map(|v| v.trim().parse::<T>().map_err(|e| Error::Argument(format!("{} value {v:?}: {e}", param.name()))))
        .collect()
}

fn cmd_ablate(a: AblateArgs) -> Result<Value> {
    let mut ctx = Ctx::new("ablate", &a.common)?;
    let train_path = ctx.path(&a.train, &ctx.cfg.train, "train")?;
    let test_path = ctx.path(&a.test, &ctx.cfg.test, "test")?;
    let train = ctx.load_cohort(&train_path)?;
    let test = ctx.load_cohort(&test_path)?;
    let outcomes = SurvivalOutcomes::from_cohort(&test);
    let values = a.values.clone().or(ctx.cfg.ablate_values.clone()).unwrap_or_else(|| a.param.default_values());
    if values.is_empty() {
        return Err(Error::Argument("ablation needs at least one value".into()));
    }
    let b = a.bootstrap.or(ctx.cfg.bootstrap).unwrap_or(DEFAULT_BOOTSTRAP);
    let delta = a.delta.or(ctx.cfg.delta).unwrap_or(DEFAULT_DELTA);
    let defaults = TrainConfig::default();
    let base = PipelineConfig {
        n_controls: n_controls_opt(a.n_controls.or(ctx.cfg.n_controls)),
        control_pool: ctx.cfg.control_pool.unwrap_or_default(),
        train: TrainConfig {
            epochs: ctx.cfg.epochs.unwrap_or(defaults.epochs),
            learning_rate: ctx.cfg.learning_rate.unwrap_or(defaults.learning_rate),
            batch_size: ctx.cfg.batch_size.unwrap_or(defaults.batch_size),
            seed: 0,
        },
        k: a.k.or(ctx.cfg.k).unwrap_or(DEFAULT_ANCHORS),
        anchor_strategy: a.anchors.or(ctx.cfg.anchor_strategy).unwrap_or_default(),
        order_policy: a.order_policy.or(ctx.cfg.order_policy).unwrap_or_default(),
        seed: ctx.seed,
    };

    let backend = a.comparator.backend.or(ctx.cfg.backend).unwrap_or(Backend::Builtin);
    let has_model = a.comparator.model.is_some() || ctx.cfg.model.is_some();
    let (fixed, comparator_desc): (Option<Box<dyn Comparator>>, Value) = if backend == Backend::Remote || has_model {
        match load_scorer(&ctx, &a.comparator)? {
            (Scorer::Pairwise(m), d) => (Some(m), d),
            (Scorer::Cox(_), _) => return Err(Error::Argument("ablation needs a pairwise comparator, not a Cox model".into())),
        }
    } else {
        (None, json!({ "backend": "builtin", "model": "trained per configuration" }))
    };
    if fixed.is_some() && a.param == AblateParam::NControls {
        return Err(Error::Argument("n-controls ablation retrains the ranker; omit --model and the remote backend".into()));
    }

    let configs: Vec<PipelineConfig> = match a.param {
        AblateParam::AnchorCount => parse_values::<usize>(a.param, &values)?
            .into_iter()
            .map(|k| PipelineConfig { k, ..base.clone() })
            .collect(),
        AblateParam::NControls => parse_values::<usize>(a.param, &values)?
            .into_iter()
            .map(|n| PipelineConfig { n_controls: n_controls_opt(Some(n)), ..base.clone() })
            .collect(),
        AblateParam::AnchorStrategy => parse_values::<AnchorStrategy>(a.param, &values)?
            .into_iter()
            .map(|s| PipelineConfig { anchor_strategy: s, ..base.clone() })
            .collect(),
        AblateParam::OrderPolicy => parse_values::<OrderPolicy>(a.param, &values)?
            .into_iter()
            .map(|p| PipelineConfig { order_policy: p, ..base.clone() })
            .collect(),
    };
    let equivalence = matches!(a.param, AblateParam::AnchorStrategy | AblateParam::OrderPolicy);
    if equivalence && configs.len() != 2 {
        return Err(Error::Argument(format!("{} ablation compares exactly two values", a.param.name())));
    }

    let shared: Option<RankerModel> = match (&fixed, a.param) {
        (None, AblateParam::NControls) => None,
        (None, _) => Some(pipeline::fit_ranker(&train, &base)?),
        _ => None,
    };
    let mut tables = Vec::with_capacity(configs.len());
    let mut rows = Vec::with_capacity(configs.len());
    for (value, config) in values.iter().zip(&configs) {
        let retrained;
        let model: &dyn Comparator = match (&fixed, &shared) {
            (Some(m), _) => m.as_ref(),
            (None, Some(m)) => m,
            (None, None) => {
                retrained = pipeline::fit_ranker(&train, config)?;
                &retrained
            }
        };
        let anchors = pipeline::anchors(&train, config)?;
        let risks = pipeline::score_test(&test, &anchors, model, config)?;
        let ci = bootstrap_ci(c_index_sample, &risks, &outcomes, b, ctx.seed)?;
        rows.push(json!({
            "param": a.param.name(), "value": value.trim(),
            "c_index": ci.point, "ci_lower": ci.lower, "ci_upper": ci.upper, "n": risks.len(),
        }));
        tables.push(risks);
    }

    ctx.emit("ablation.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["param", "value", "c_index", "ci_lower", "ci_upper", "n"])?;
        for r in &rows {
            csv.write_record(["param", "value", "c_index", "ci_lower", "ci_upper", "n"].map(|k| match &r[k] {
                Value::String(s) => s.clone(),
                v => v.to_string(),
            }))?;
        }
        csv.flush()?;
        Ok(())
    })?;

    let mut summary = json!({ "param": a.param.name(), "rows": rows });
    if equivalence {
        let report = paired_difference_analysis(&tables[0], &tables[1], &outcomes, b, delta, ctx.seed)?;
        ctx.emit("kde.csv", |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["grid", "density"])?;
            for (g, d) in report.grid.iter().zip(&report.density) {
                csv.write_record([g.to_string(), d.to_string()])?;
            }
            csv.flush()?;
            Ok(())
        })?;
        let brief = json!({
            "comparison": format!("{} - {}", values[0].trim(), values[1].trim()),
            "point_difference": report.point_difference,
            "mean_difference": report.mean_difference,
            "ci_lower": report.ci_lower,
            "ci_upper": report.ci_upper,
            "delta": report.delta,
            "equivalent": report.equivalent,
            "bandwidth": report.bandwidth,
        });
        ctx.emit_json("equivalence.json", &brief)?;
        let svg = render_svg(
            &format!("paired C-index difference ({})", a.param.name()),
            "difference",
            "density",
            &[Series { label: brief["comparison"].as_str().unwrap_or_default().into(), points: report.grid.iter().copied().zip(report.density.iter().copied()).collect(), step: false }],
        );
        ctx.emit("kde.svg", |w| Ok(w.write_all(svg.as_bytes())?))?;
        summary["equivalence"] = brief;
    } else {
        let numeric: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| Some((r["value"].as_str()?.parse::<f64>().ok()?, r["c_index"].as_f64()?)))
            .collect();
        let svg = render_svg(
            &format!("C-index by {}", a.param.name()),
            a.param.name(),
            "C-index",
            &[Series { label: "test C-index".into(), points: numeric, step: false }],
        );
        ctx.emit("ablation.svg", |w| Ok(w.write_all(svg.as_bytes())?))?;
    }

    let resolved = json!({
        "train": train_path, "test": test_path, "param": a.param.name(), "values": values,
        "pipeline": base, "bootstrap": b, "delta": delta, "comparator": comparator_desc,
    });
    ctx.finish(resolved, summary)
}

fn parse_feature(raw: &str) -> Result<FeatureDistribution> {
    let raw = raw.trim();
    if raw == "normal" {
        return Ok(FeatureDistribution::Normal);
    }
    raw.strip_prefix("bernoulli:")
        .and_then(|q| q.parse::<f64>().ok())
        .map(|q| FeatureDistribution::Bernoulli { q })
        .ok_or_else(|| Error::Argument(format!("feature distribution {raw:?} is not `normal` or `bernoulli:<q>`")))
}

fn cmd_synth(a: SynthArgs) -> Result<Value> {
    let mut ctx = Ctx::new("synth", &a.common)?;
    let base = ctx
        .cfg
        .synth
        .clone()
        .unwrap_or_else(|| SynthConfig::normal(1000, vec![1.0, -0.5], 0.1, 0.15, 0));
    let beta = a.beta.clone().unwrap_or(base.beta.clone());
    let features = match &a.features {
        Some(f) => f.iter().map(|s| parse_feature(s)).collect::<Result<Vec<_>>>()?,
        None if base.features.len() == beta.len() => base.features.clone(),
        None => vec![FeatureDistribution::Normal; beta.len()],
    };
    let config = SynthConfig {
        n: a.n.unwrap_or(base.n),
        beta,
        baseline_rate: a.baseline_rate.unwrap_or(base.baseline_rate),
        censor_rate: a.censor_rate.unwrap_or(base.censor_rate),
        features,
        seed: a.common.seed.or(ctx.cfg.seed).unwrap_or(base.seed),
    };
    let (cohort, truth) = generate_ph_cohort(&config)?;
    ctx.write_cohort_file("cohort.csv", &cohort)?;
    ctx.emit("truth.csv", |w| write_truth(&truth, w))?;
    let summary = json!({
        "n": cohort.len(),
        "events": cohort.n_events(),
        "event_fraction": cohort.n_events() as f64 / cohort.len() as f64,
    });
    ctx.finish(json!({ "synth": config }), summary)
}
