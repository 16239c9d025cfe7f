//! `sumdistill`: extraction, training, evaluation and reporting from one
//! run configuration. Flags override the config file, which overrides the
//! built-in defaults.

mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};

use sumdistill::config::RunConfig;
use sumdistill::corpus::{SourceFormat, SplitName};
use sumdistill::objectives::Mode;
use sumdistill::trainer::AblationAxis;

#[derive(Debug, Parser)]
#[command(name = "sumdistill", version, about = "Distil a teacher LLM into a factually consistent dialogue summarizer")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// More logging; repeat for debug output.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Query the teacher for positive and negative summaries.
    Extract(ExtractArgs),
    /// Materialize one epoch of training instances and report their counts.
    BuildInstances(BuildArgs),
    /// Train the student and select the best checkpoint.
    Train(TrainArgs),
    /// Score system outputs or checkpoints on a split.
    Evaluate(EvaluateArgs),
    /// Render evaluation reports side by side.
    Report(ReportArgs),
    /// Correlate metric scores with human consistency labels.
    Metaeval(MetaevalArgs),
    /// Train and evaluate once per value of one data axis.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Dialogue JSONL; defaults to the configured path for `--split`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<SourceFormat>,
    #[arg(long, default_value = "train")]
    pub split: SplitName,
    /// Summaries per dialogue; overrides `train.k`.
    #[arg(long)]
    pub k: Option<usize>,
    /// Only the first N dialogues.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Continue an interrupted run instead of starting over.
    #[arg(long)]
    pub resume: bool,
    /// Output JSONL; defaults to `<output_dir>/augmented-<split>.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Data and hyperparameter overrides shared by the training commands.
#[derive(Debug, Args)]
pub struct TrainOverrides {
    /// Augmented corpus; overrides `data.augmented`.
    #[arg(long)]
    pub augmented: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Leave the human reference out of the candidate targets.
    #[arg(long)]
    pub no_human_ref: bool,
    #[arg(long)]
    pub n_dialogues: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.augmented {
            cfg.data.augmented = Some(p.clone());
        }
        if let Some(k) = self.k {
            cfg.train.k = k;
        }
        if self.no_human_ref {
            cfg.train.use_human_reference = false;
        }
        if self.n_dialogues.is_some() {
            cfg.train.n_dialogues = self.n_dialogues;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub data: TrainOverrides,
    /// Which epoch's target draw to materialize.
    #[arg(long, default_value_t = 0)]
    pub epoch: u64,
    /// Output JSONL; defaults to `<output_dir>/instances.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Optimization and objective overrides.
#[derive(Debug, Args)]
pub struct RunOverrides {
    #[command(flatten)]
    pub data: TrainOverrides,
    /// Dev split for checkpoint selection; overrides `data.dev`.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

impl RunOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        self.data.apply(cfg);
        if let Some(p) = &self.dev {
            cfg.data.dev = Some(p.clone());
        }
        if let Some(m) = self.mode {
            cfg.objective.mode = m;
        }
        if let Some(a) = self.alpha {
            cfg.objective.alpha = a;
        }
        if let Some(t) = self.theta {
            cfg.objective.theta = t;
        }
        if let Some(t) = self.tau {
            cfg.objective.tau = t;
        }
        if let Some(s) = self.steps {
            cfg.train.steps = s;
        }
        if let Some(e) = self.eval_every {
            cfg.train.eval_every = e;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunOverrides,
    /// Search the alpha/theta grid instead of a single run.
    #[arg(long)]
    pub grid: bool,
}

/// `NAME=PATH`.
fn parse_named(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got `{s}`")),
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// System-output JSONL as NAME=PATH; repeatable.
    #[arg(long = "system", value_parser = parse_named)]
    pub systems: Vec<(String, PathBuf)>,
    /// Checkpoint directory as NAME=DIR to decode the split with; repeatable.
    #[arg(long = "checkpoint", value_parser = parse_named)]
    pub checkpoints: Vec<(String, PathBuf)>,
    /// Dialogue JSONL; defaults to the configured path for `--split`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
    /// Defaults to `<output_dir>/eval`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation report JSON files.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Reports listed above the evaluated systems; repeatable.
    #[arg(long = "baseline")]
    pub baselines: Vec<PathBuf>,
    /// Output stem; `.txt` and `.tsv` are appended. Defaults to `<output_dir>/report`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetaevalArgs {
    /// Annotated JSONL as NAME=PATH; repeatable.
    #[arg(long = "data", value_parser = parse_named, required = true)]
    pub datasets: Vec<(String, PathBuf)>,
    /// Metric keys to correlate; by default every key present in all records.
    #[arg(long = "metric")]
    pub metrics: Vec<String>,
    /// Drop records annotated with link or coreference errors.
    #[arg(long)]
    pub exclude_link_coref: bool,
    /// Defaults to `<output_dir>/metaeval.tsv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub axis: AblationAxis,
    /// Comma-separated values, e.g. `1,2,3` or `true,false`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    /// Held-out split the rows are evaluated on; overrides `data.test`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunOverrides,
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path).map_err(exit::config)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    match &cli.command {
        Command::Extract(a) => {
            if let Some(k) = a.k {
                cfg.train.k = k;
            }
            if let Some(f) = a.format {
                cfg.data.format = f;
            }
        }
        Command::BuildInstances(a) => a.data.apply(&mut cfg),
        Command::Train(a) => a.run.apply(&mut cfg),
        Command::Ablate(a) => {
            a.run.apply(&mut cfg);
            if let Some(p) = &a.test {
                cfg.data.test = Some(p.clone());
            }
        }
        Command::Evaluate(_) | Command::Report(_) | Command::Metaeval(_) => {}
    }
    cfg.validate().map_err(exit::config)?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Extract(a) => commands::extract(&cfg, &a),
        Command::BuildInstances(a) => commands::build_instances(&cfg, &a),
        Command::Train(a) => commands::train(&cfg, &a),
        Command::Evaluate(a) => {
            if a.systems.is_empty() && a.checkpoints.is_empty() {
                return Err(exit::failure(exit::CONFIG, anyhow!("give at least one --system or --checkpoint")));
            }
            commands::evaluate(&cfg, &a)
        }
        Command::Report(a) => commands::report(&cfg, &a),
        Command::Metaeval(a) => commands::metaeval(&cfg, &a),
        Command::Ablate(a) => commands::ablate(&cfg, &a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_of(&e))
        }
    }
}
