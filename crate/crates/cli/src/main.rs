//! `cdkit` command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cdkit::{ConstraintMode, ContrastConfig, SamplingStrategy};

#[derive(Debug, Parser)]
#[command(name = "cdkit", version, about = "Layer-contrastive decoding toolkit")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, env = "CDKIT_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Where to write results; "-" is standard output.
    #[arg(long, global = true, default_value = "-")]
    pub output: String,

    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode one sequence from a trace or a synthetic sample.
    Decode(DecodeArgs),
    /// Compare decoding methods on a corpus.
    Bench(BenchArgs),
    /// Grid over alpha, beta and the plausibility constraint.
    Sweep(SweepArgs),
    /// Generate a synthetic yes/no corpus.
    GenCorpus(GenCorpusArgs),
    /// Show the kernel breakdown for a single step.
    InspectStep(InspectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Logit,
    Prob,
}

impl From<Mode> for ConstraintMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Logit => ConstraintMode::Logit,
            Mode::Prob => ConstraintMode::Prob,
        }
    }
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    /// Contrast amplification.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Plausibility truncation in [0, 1].
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, value_enum, default_value_t = Mode::Logit)]
    pub mode: Mode,
    /// Disable the plausibility constraint.
    #[arg(long)]
    pub no_apc: bool,
}

impl KernelArgs {
    pub fn config(&self) -> ContrastConfig {
        ContrastConfig {
            alpha: self.alpha,
            beta: self.beta,
            constraint_mode: self.mode.into(),
            apc_enabled: !self.no_apc,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyKind {
    Greedy,
    Ancestral,
    TopK,
    TopP,
    Beam,
}

#[derive(Debug, Args)]
pub struct StrategyArgs {
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyKind>,
    /// Candidates kept by top-k.
    #[arg(long)]
    pub k: Option<usize>,
    /// Cumulative mass kept by top-p.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Beam width.
    #[arg(long)]
    pub beams: Option<usize>,
}

impl StrategyArgs {
    /// Builds the strategy, rejecting parameters the chosen kind does not use.
    pub fn resolve(&self, default: StrategyKind) -> Result<SamplingStrategy, String> {
        let kind = self.strategy.unwrap_or(default);
        let unused = |flag: &str, present: bool| {
            if present {
                Err(format!("--{flag} does not apply to --strategy {}", kind_name(kind)))
            } else {
                Ok(())
            }
        };
        let temperature = self.temperature.unwrap_or(1.0);
        let strategy = match kind {
            StrategyKind::Greedy => {
                unused("k", self.k.is_some())?;
                unused("p", self.p.is_some())?;
                unused("temperature", self.temperature.is_some())?;
                unused("beams", self.beams.is_some())?;
                SamplingStrategy::Greedy
            }
            StrategyKind::Ancestral => {
                unused("k", self.k.is_some())?;
                unused("p", self.p.is_some())?;
                unused("beams", self.beams.is_some())?;
                SamplingStrategy::Ancestral { temperature }
            }
            StrategyKind::TopK => {
                unused("p", self.p.is_some())?;
                unused("beams", self.beams.is_some())?;
                let k = self.k.ok_or("--strategy top-k requires --k")?;
                SamplingStrategy::TopK { k, temperature }
            }
            StrategyKind::TopP => {
                unused("k", self.k.is_some())?;
                unused("beams", self.beams.is_some())?;
                let p = self.p.ok_or("--strategy top-p requires --p")?;
                SamplingStrategy::TopP { p, temperature }
            }
            StrategyKind::Beam => {
                unused("k", self.k.is_some())?;
                unused("p", self.p.is_some())?;
                unused("temperature", self.temperature.is_some())?;
                let beam_width = self.beams.ok_or("--strategy beam requires --beams")?;
                SamplingStrategy::Beam { beam_width }
            }
        };
        strategy.validate().map_err(|e| e.to_string())?;
        Ok(strategy)
    }
}

fn kind_name(kind: StrategyKind) -> &'static str {
    match kind {
        StrategyKind::Greedy => "greedy",
        StrategyKind::Ancestral => "ancestral",
        StrategyKind::TopK => "top-k",
        StrategyKind::TopP => "top-p",
        StrategyKind::Beam => "beam",
    }
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Logit trace to replay.
    #[arg(long, conflicts_with_all = ["synthetic", "sample"])]
    pub trace: Option<PathBuf>,
    /// Corpus file holding synthetic samples.
    #[arg(long, requires = "sample")]
    pub synthetic: Option<PathBuf>,
    /// Sample id within the --synthetic corpus.
    #[arg(long, requires = "synthetic")]
    pub sample: Option<String>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    /// Defaults to the trace length, or 8 for synthetic samples.
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// Token string or id that ends decoding; synthetic samples default to <eos>.
    #[arg(long)]
    pub stop_token: Option<String>,
    /// Also print each step's distribution.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "regular,noise-contrast,layercd")]
    pub methods: Vec<String>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    /// Noise scale of the noise-contrast baseline.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 2)]
    pub max_tokens: usize,
    #[arg(long, default_value = cdkit::provider::EOS_TOKEN)]
    pub stop_token: String,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0")]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub betas: Vec<f64>,
    /// Constraint axis, any of on,off.
    #[arg(long, value_delimiter = ',', default_value = "on")]
    pub apc: Vec<String>,
    #[arg(long, value_enum, default_value_t = Mode::Logit)]
    pub mode: Mode,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 2)]
    pub max_tokens: usize,
    #[arg(long, default_value = cdkit::provider::EOS_TOKEN)]
    pub stop_token: String,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Number of samples.
    #[arg(long)]
    pub n: usize,
    /// Corpus destination; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub filler_tokens: Option<usize>,
    #[arg(long)]
    pub prompt_len: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub truth_deep: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub truth_shallow: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub halluc_deep_mean: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub halluc_shallow_mean: Option<f64>,
    #[arg(long)]
    pub halluc_std: Option<f64>,
    #[arg(long)]
    pub extra_hallucinations: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub background: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub continuation: Option<f64>,
    #[arg(long)]
    pub jitter: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Comma-separated deep logits.
    #[arg(long, allow_hyphen_values = true)]
    pub deep: String,
    /// Comma-separated shallow logits.
    #[arg(long, allow_hyphen_values = true)]
    pub shallow: String,
    #[command(flatten)]
    pub kernel: KernelArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cdkit: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
