use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde_json::json;

use cdkit::eval::{compare_methods, sweep, EvalSettings, Method, MethodResult, SweepSpec};
use cdkit::provider::{
    generate_corpus, load_corpus, load_trace, write_corpus, Corpus, PairedLogitProvider, SyntheticMllmProvider,
    SyntheticModelSpec, EOS_TOKEN,
};
use cdkit::{
    contrastive_logits, contrastive_step, decode, DecodeContext, DecodeOptions, DecodeResult, Error, LogitVector,
    RngState, Vocabulary,
};

use crate::{
    BenchArgs, Cli, Command, DecodeArgs, Format, GenCorpusArgs, InspectArgs, StrategyKind, SweepArgs,
};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_CAPABILITY: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn input(path: &Path, err: Error) -> Self {
        let mut e = Self::from(err);
        if e.code == EXIT_INPUT || e.code == EXIT_USAGE {
            e.code = EXIT_INPUT;
            e.message = format!("{}: {}", path.display(), e.message);
        }
        e
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::Capability(_) => EXIT_CAPABILITY,
            Error::Io(_) | Error::Format { .. } | Error::EmptyTrace | Error::TraceUnderrun { .. } => EXIT_INPUT,
            Error::Dimension { .. } | Error::Validation(_) | Error::EmptySupport | Error::Unsupported(_) => EXIT_USAGE,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

pub fn run(cli: &Cli) -> CliResult<()> {
    let text = match &cli.command {
        Command::Decode(args) => cmd_decode(cli, args)?,
        Command::Bench(args) => cmd_bench(cli, args)?,
        Command::Sweep(args) => cmd_sweep(cli, args)?,
        Command::GenCorpus(args) => cmd_gen_corpus(cli, args)?,
        Command::InspectStep(args) => cmd_inspect_step(cli, args)?,
    };
    emit(&cli.output, &text)
}

fn emit(output: &str, text: &str) -> CliResult<()> {
    let io_err = |e: std::io::Error| CliError {
        code: EXIT_INPUT,
        message: format!("{output}: {e}"),
    };
    if output == "-" {
        let mut out = std::io::stdout().lock();
        out.write_all(text.as_bytes()).map_err(io_err)?;
        out.flush().map_err(io_err)
    } else {
        std::fs::write(output, text).map_err(io_err)
    }
}

fn to_json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("results serialize");
    s.push('\n');
    s
}

fn open_corpus(path: &Path) -> CliResult<Corpus> {
    load_corpus(path).map_err(|e| CliError::input(path, e))
}

fn cmd_decode(cli: &Cli, args: &DecodeArgs) -> CliResult<String> {
    let config = args.kernel.config();
    config.validate()?;
    let strategy = args.strategy.resolve(StrategyKind::Greedy).map_err(CliError::usage)?;

    type Source = (Box<dyn PairedLogitProvider>, Vocabulary, DecodeContext, usize, Option<&'static str>);
    let (mut provider, vocab, context, default_max, default_stop): Source =
        match (&args.trace, &args.synthetic, &args.sample) {
            (Some(path), None, None) => {
                let trace = load_trace(path).map_err(|e| CliError::input(path, e))?;
                if strategy.is_beam() {
                    return Err(CliError {
                        code: EXIT_CAPABILITY,
                        message: "beam search needs arbitrary-prefix queries, but a trace replays one linear token path"
                            .into(),
                    });
                }
                let vocab = trace.vocab().clone();
                let steps = trace.capability().bounded_steps.unwrap_or(1);
                (Box::new(trace), vocab, DecodeContext::default(), steps, None)
            }
            (None, Some(path), Some(id)) => {
                let corpus = open_corpus(path)?;
                let sample = corpus
                    .sample(id)
                    .ok_or_else(|| CliError::usage(format!("no sample {id:?} in {}", path.display())))?;
                let provider = SyntheticMllmProvider::new(sample.sample_spec.clone())?;
                (
                    Box::new(provider),
                    corpus.vocab().clone(),
                    DecodeContext::new(sample.prompt.clone()),
                    8,
                    Some(EOS_TOKEN),
                )
            }
            _ => return Err(CliError::usage("give exactly one of --trace or --synthetic with --sample")),
        };

    let mut opts = DecodeOptions::new(args.max_tokens.unwrap_or(default_max));
    // an empty --stop-token turns the synthetic default off
    let stop = args.stop_token.as_deref().or(default_stop).filter(|s| !s.is_empty());
    if let Some(stop) = stop {
        let id = vocab
            .resolve(stop)
            .ok_or_else(|| CliError::usage(format!("stop token {stop:?} is not in the vocabulary")))?;
        opts = opts.stop_at(id);
    }
    if args.verbose {
        opts = opts.recording();
    }
    let mut rng = RngState::new(cli.seed);
    let result = decode(&mut provider, &context, &config, &strategy, &opts, &mut rng)?;
    Ok(match cli.format {
        Format::Json => to_json(&decode_json(&vocab, &result)),
        Format::Table => decode_table(&vocab, &result),
    })
}

fn token_text(vocab: &Vocabulary, id: cdkit::TokenId) -> String {
    vocab.token(id).map_or_else(|| id.to_string(), str::to_string)
}

fn decode_json(vocab: &Vocabulary, r: &DecodeResult) -> serde_json::Value {
    let mut v = json!({
        "tokens": r.tokens,
        "text": r.tokens.iter().map(|&t| token_text(vocab, t)).collect::<Vec<_>>(),
        "stop_reason": r.stop_reason,
        "score": r.score,
    });
    if let Some(steps) = &r.per_step {
        v["steps"] = steps
            .iter()
            .map(|d| {
                json!({
                    "plausible": d.plausible().members(),
                    "probabilities": d.probabilities(),
                })
            })
            .collect();
    }
    v
}

fn decode_table(vocab: &Vocabulary, r: &DecodeResult) -> String {
    let mut s = String::new();
    let text: Vec<String> = r.tokens.iter().map(|&t| token_text(vocab, t)).collect();
    let ids: Vec<String> = r.tokens.iter().map(|t| t.to_string()).collect();
    writeln!(s, "tokens: {}", text.join(" ")).unwrap();
    writeln!(s, "ids:    {}", ids.join(" ")).unwrap();
    let reason = match r.stop_reason {
        cdkit::StopReason::MaxTokens => "max_tokens",
        cdkit::StopReason::StopToken => "stop_token",
    };
    writeln!(s, "stop:   {reason}").unwrap();
    if let Some(steps) = &r.per_step {
        for (i, (d, tok)) in steps.iter().zip(&r.tokens).enumerate() {
            writeln!(s, "step {i}: chose {} (p={:.5})", token_text(vocab, *tok), d.prob(*tok)).unwrap();
            let mut support: Vec<_> = d.plausible().members();
            support.sort_by(|a, b| d.prob(*b).total_cmp(&d.prob(*a)).then(a.cmp(b)));
            for t in support {
                writeln!(s, "    {:>12} {:.5}", token_text(vocab, t), d.prob(t)).unwrap();
            }
        }
    }
    s
}

fn settings(
    cli: &Cli,
    strategy: cdkit::SamplingStrategy,
    runs: usize,
    jobs: usize,
    max_tokens: usize,
    stop_token: &str,
    vocab: &Vocabulary,
) -> CliResult<EvalSettings> {
    if runs == 0 {
        return Err(CliError::usage("--runs must be >= 1"));
    }
    if jobs == 0 {
        return Err(CliError::usage("--jobs must be >= 1"));
    }
    if max_tokens == 0 {
        return Err(CliError::usage("--max-tokens must be >= 1"));
    }
    let stop_token = (!stop_token.is_empty()).then(|| stop_token.to_string());
    if let Some(stop) = &stop_token {
        if vocab.id(stop).is_none() {
            return Err(CliError::usage(format!("stop token {stop:?} is not in the corpus vocabulary")));
        }
    }
    Ok(EvalSettings {
        strategy,
        runs,
        master_seed: cli.seed,
        max_tokens,
        stop_token,
        jobs,
    })
}

fn results_table(rows: &[MethodResult], label: impl Fn(&MethodResult) -> String) -> String {
    let mut s = String::new();
    let width = rows.iter().map(|r| label(r).len()).max().unwrap_or(6).max(6);
    writeln!(
        s,
        "{:<width$}  {:>15}  {:>15}  {:>15}  {:>15}  {:>10}",
        "method", "accuracy", "precision", "recall", "f1", "unparsable"
    )
    .unwrap();
    for r in rows {
        let unparsable: usize = r.counts.iter().map(|c| c.unparsable).sum();
        writeln!(
            s,
            "{:<width$}  {:>15}  {:>15}  {:>15}  {:>15}  {:>10}",
            label(r),
            r.metrics.accuracy.percent(),
            r.metrics.precision.percent(),
            r.metrics.recall.percent(),
            r.metrics.f1.percent(),
            unparsable
        )
        .unwrap();
    }
    s
}

fn cmd_bench(cli: &Cli, args: &BenchArgs) -> CliResult<String> {
    let config = args.kernel.config();
    config.validate()?;
    let strategy = args.strategy.resolve(StrategyKind::Ancestral).map_err(CliError::usage)?;
    let methods = args
        .methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()?;
    if methods.is_empty() {
        return Err(CliError::usage("--methods must name at least one method"));
    }
    if !(args.sigma > 0.0 && args.sigma.is_finite()) {
        return Err(CliError::usage("--sigma must be > 0"));
    }
    let corpus = open_corpus(&args.corpus)?;
    let settings = settings(cli, strategy, args.runs, args.jobs, args.max_tokens, &args.stop_token, corpus.vocab())?;
    let rows = compare_methods(&corpus.samples, &corpus, &config, &methods, args.sigma, &settings)?;
    Ok(match cli.format {
        Format::Json => to_json(&rows),
        Format::Table => {
            let mut s = format!(
                "# {} samples, {} runs, strategy {}, alpha {} beta {} mode {} apc {}\n",
                corpus.len(),
                settings.runs,
                strategy.label(),
                config.alpha,
                config.beta,
                config.constraint_mode,
                if config.apc_enabled { "on" } else { "off" },
            );
            s.push_str(&results_table(&rows, |r| r.method.clone()));
            s
        }
    })
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> CliResult<String> {
    let strategy = args.strategy.resolve(StrategyKind::Ancestral).map_err(CliError::usage)?;
    let apc = args
        .apc
        .iter()
        .map(|v| match v.as_str() {
            "on" => Ok(true),
            "off" => Ok(false),
            other => Err(CliError::usage(format!("--apc takes on/off, got {other:?}"))),
        })
        .collect::<CliResult<Vec<_>>>()?;
    let spec = SweepSpec {
        alphas: args.alphas.clone(),
        betas: args.betas.clone(),
        apc,
        mode: args.mode.into(),
    };
    spec.validate()?;
    let corpus = open_corpus(&args.corpus)?;
    let settings = settings(cli, strategy, args.runs, args.jobs, args.max_tokens, &args.stop_token, corpus.vocab())?;
    let rows: Vec<MethodResult> = sweep(&corpus.samples, &corpus, &spec, &settings)?
        .into_iter()
        .map(|cell| {
            let config = cdkit::ContrastConfig {
                alpha: cell.alpha,
                beta: cell.beta,
                constraint_mode: spec.mode,
                apc_enabled: cell.apc,
            };
            MethodResult::new("layercd", config, strategy, cell.report)
        })
        .collect();
    Ok(match cli.format {
        Format::Json => to_json(&rows),
        Format::Table => results_table(&rows, |r| {
            format!(
                "a={} b={} apc={}",
                r.config.alpha,
                r.config.beta,
                if r.config.apc_enabled { "on" } else { "off" }
            )
        }),
    })
}

fn cmd_gen_corpus(cli: &Cli, args: &GenCorpusArgs) -> CliResult<String> {
    if args.n == 0 {
        return Err(CliError::usage("--n must be >= 1"));
    }
    let mut spec = SyntheticModelSpec::default();
    macro_rules! override_field {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { spec.$field = v; })*
        };
    }
    override_field!(
        filler_tokens,
        prompt_len,
        truth_deep,
        truth_shallow,
        halluc_deep_mean,
        halluc_shallow_mean,
        halluc_std,
        extra_hallucinations,
        background,
        continuation,
        jitter
    );
    let corpus = generate_corpus(&spec, args.n, cli.seed)?;
    let (yes, no) = corpus.label_counts();
    let summary = format!("generated {} samples ({yes} yes / {no} no) with seed {}\n", corpus.len(), cli.seed);
    let mut buf = Vec::new();
    write_corpus(&corpus, &mut buf)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, &buf).map_err(|e| CliError {
                code: EXIT_INPUT,
                message: format!("{}: {e}", path.display()),
            })?;
            Ok(match cli.format {
                Format::Json => to_json(&json!({
                    "n": corpus.len(), "yes": yes, "no": no, "seed": cli.seed, "path": path,
                })),
                Format::Table => summary,
            })
        }
        None => {
            eprint!("{summary}");
            Ok(String::from_utf8(buf).expect("corpus is UTF-8"))
        }
    }
}

fn parse_csv(flag: &str, s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::usage(format!("--{flag}: {t:?} is not a number")))
        })
        .collect()
}

fn cmd_inspect_step(cli: &Cli, args: &InspectArgs) -> CliResult<String> {
    let config = args.kernel.config();
    let deep = LogitVector::deep(parse_csv("deep", &args.deep)?)?;
    let shallow = LogitVector::shallow(parse_csv("shallow", &args.shallow)?)?;
    if deep.len() != shallow.len() {
        return Err(CliError::usage(format!(
            "--deep has {} values but --shallow has {}",
            deep.len(),
            shallow.len()
        )));
    }
    let contrast = contrastive_logits(&deep, &shallow, config.alpha)?;
    let dist = contrastive_step(&deep, &shallow, &config)?;
    let threshold = dist.plausible().threshold_used();
    Ok(match cli.format {
        Format::Json => {
            let rows: Vec<_> = (0..deep.len())
                .map(|i| {
                    json!({
                        "token": i,
                        "deep": deep.values()[i],
                        "shallow": shallow.values()[i],
                        "contrastive": contrast.values()[i],
                        "plausible": dist.plausible().mask()[i],
                        "probability": dist.probabilities()[i],
                    })
                })
                .collect();
            to_json(&json!({
                "config": config,
                "threshold": threshold.is_finite().then_some(threshold),
                "rows": rows,
            }))
        }
        Format::Table => {
            let mut s = String::new();
            writeln!(
                s,
                "alpha {} beta {} mode {} apc {} threshold {}",
                config.alpha,
                config.beta,
                config.constraint_mode,
                if config.apc_enabled { "on" } else { "off" },
                if threshold.is_finite() { format!("{threshold}") } else { "none".into() }
            )
            .unwrap();
            writeln!(
                s,
                "{:>5}  {:>12}  {:>12}  {:>12}  {:>9}  {:>11}",
                "token", "deep", "shallow", "contrastive", "plausible", "probability"
            )
            .unwrap();
            for i in 0..deep.len() {
                writeln!(
                    s,
                    "{:>5}  {:>12.6}  {:>12.6}  {:>12.6}  {:>9}  {:>11.5}",
                    i,
                    deep.values()[i],
                    shallow.values()[i],
                    contrast.values()[i],
                    if dist.plausible().mask()[i] { "✓" } else { "✗" },
                    dist.probabilities()[i]
                )
                .unwrap();
            }
            s
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(Error::Capability("x".into())).code, EXIT_CAPABILITY);
        assert_eq!(CliError::from(Error::EmptyTrace).code, EXIT_INPUT);
        assert_eq!(CliError::from(Error::Validation("x".into())).code, EXIT_USAGE);
        assert_eq!(
            CliError::input(Path::new("c.jsonl"), Error::Validation("bad".into())).code,
            EXIT_INPUT
        );
    }

    #[test]
    fn csv_parsing() {
        assert_eq!(parse_csv("deep", "2,1,-0.5").unwrap(), vec![2.0, 1.0, -0.5]);
        assert!(parse_csv("deep", "2,,1").is_err());
    }
}
