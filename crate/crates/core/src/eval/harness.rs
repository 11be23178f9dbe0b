use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{decode, DecodeOptions};
use crate::error::{Error, Result};
use crate::eval::metrics::{Confusion, MetricsReport, Prediction};
use crate::kernel::{ConstraintMode, ContrastConfig};
use crate::provider::{
    make_noise_contrast, Corpus, PairedLogitProvider, QaSample, SyntheticMllmProvider, YesNo, EOS_TOKEN,
};
use crate::rng::{derive_seed, RngState};
use crate::sampling::SamplingStrategy;
use crate::vocab::{DecodeContext, TokenId, Vocabulary};

pub type BoxedProvider<'a> = Box<dyn PairedLogitProvider + Send + 'a>;

/// Hands out a fresh provider for each sample.
pub trait ProviderFactory: Sync {
    fn vocab(&self) -> &Vocabulary;

    fn provider(&self, sample: &QaSample) -> Result<BoxedProvider<'_>>;
}

impl ProviderFactory for Corpus {
    fn vocab(&self) -> &Vocabulary {
        Corpus::vocab(self)
    }

    fn provider(&self, sample: &QaSample) -> Result<BoxedProvider<'_>> {
        if sample.sample_spec.vocab_size != self.vocab().len() {
            return Err(Error::validation(format!(
                "sample {} was generated for a vocabulary of {} tokens, corpus has {}",
                sample.id,
                sample.sample_spec.vocab_size,
                self.vocab().len()
            )));
        }
        Ok(Box::new(SyntheticMllmProvider::new(sample.sample_spec.clone())?))
    }
}

/// Replaces each provider's shallow stream by its deep stream plus noise.
pub struct NoiseContrastFactory<'a, F: ?Sized> {
    pub inner: &'a F,
    pub sigma: f64,
    pub seed: u64,
}

impl<F: ProviderFactory + ?Sized> ProviderFactory for NoiseContrastFactory<'_, F> {
    fn vocab(&self) -> &Vocabulary {
        self.inner.vocab()
    }

    fn provider(&self, sample: &QaSample) -> Result<BoxedProvider<'_>> {
        let id_path: Vec<u64> = sample.id.bytes().map(u64::from).collect();
        let seed = derive_seed(self.seed, &id_path);
        Ok(Box::new(make_noise_contrast(self.inner.provider(sample)?, self.sigma, seed)?))
    }
}

/// Everything about a run except the kernel configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub strategy: SamplingStrategy,
    pub runs: usize,
    pub master_seed: u64,
    pub max_tokens: usize,
    pub stop_token: Option<String>,
    pub jobs: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            strategy: SamplingStrategy::Ancestral { temperature: 1.0 },
            runs: 5,
            master_seed: 0,
            max_tokens: 2,
            stop_token: Some(EOS_TOKEN.to_string()),
            jobs: 1,
        }
    }
}

impl EvalSettings {
    pub fn with_strategy(mut self, strategy: SamplingStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if self.runs == 0 {
            return Err(Error::validation("runs must be >= 1"));
        }
        if self.max_tokens == 0 {
            return Err(Error::validation("max_tokens must be >= 1 to produce an answer"));
        }
        Ok(())
    }
}

/// Maps the first generated token onto yes/no.
pub fn parse_answer(vocab: &Vocabulary, tokens: &[TokenId]) -> Prediction {
    tokens
        .first()
        .and_then(|&t| vocab.token(t))
        .and_then(YesNo::parse)
        .map_or(Prediction::Unparsable, Prediction::Answer)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::validation(format!("cannot start worker pool: {e}")))
}

/// Decodes one sample for one run. The seed depends only on
/// `(master_seed, run, sample index)`.
pub fn predict<F: ProviderFactory + ?Sized>(
    factory: &F,
    sample: &QaSample,
    index: usize,
    run: usize,
    config: &ContrastConfig,
    settings: &EvalSettings,
) -> Result<(Vec<TokenId>, Prediction)> {
    let mut provider = factory.provider(sample)?;
    let mut opts = DecodeOptions::new(settings.max_tokens);
    if let Some(stop) = &settings.stop_token {
        let id = factory
            .vocab()
            .id(stop)
            .ok_or_else(|| Error::validation(format!("stop token {stop:?} not in vocabulary")))?;
        opts = opts.stop_at(id);
    }
    let mut rng = RngState::new(settings.master_seed).substream(&[run as u64, index as u64]);
    let ctx = DecodeContext::new(sample.prompt.clone());
    let out = decode(&mut provider, &ctx, config, &settings.strategy, &opts, &mut rng)?;
    let pred = parse_answer(factory.vocab(), &out.tokens);
    Ok((out.tokens, pred))
}

/// Runs every sample `settings.runs` times and aggregates per-run metrics.
pub fn evaluate<F: ProviderFactory + ?Sized>(
    samples: &[QaSample],
    factory: &F,
    config: &ContrastConfig,
    settings: &EvalSettings,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::validation("corpus is empty"));
    }
    config.validate()?;
    settings.validate()?;
    let jobs: Vec<(usize, usize)> = (0..settings.runs)
        .flat_map(|r| (0..samples.len()).map(move |i| (r, i)))
        .collect();
    let predictions: Vec<Prediction> = thread_pool(settings.jobs)?.install(|| {
        jobs.par_iter()
            .map(|&(r, i)| predict(factory, &samples[i], i, r, config, settings).map(|(_, p)| p))
            .collect::<Result<Vec<_>>>()
    })?;
    let counts = predictions
        .chunks(samples.len())
        .map(|run| Confusion::from_pairs(samples.iter().map(|s| s.label).zip(run.iter().copied())))
        .collect();
    Ok(MetricsReport::from_runs(counts))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Deep stream alone: no contrast, no constraint.
    Regular,
    /// Deep vs. shallow stream.
    Layercd,
    /// Deep vs. noise-perturbed deep stream.
    NoiseContrast,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Regular => "regular",
            Method::Layercd => "layercd",
            Method::NoiseContrast => "noise-contrast",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(Method::Regular),
            "layercd" => Ok(Method::Layercd),
            "noise-contrast" | "noise" | "vcd" => Ok(Method::NoiseContrast),
            other => Err(Error::validation(format!(
                "unknown method {other:?} (expected regular, layercd or noise-contrast)"
            ))),
        }
    }
}

/// Serialized shape of one evaluated configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub config: ContrastConfig,
    pub strategy: SamplingStrategy,
    pub runs: usize,
    pub metrics: crate::eval::metrics::Metrics,
    pub counts: Vec<Confusion>,
}

impl MethodResult {
    pub fn new(method: impl Into<String>, config: ContrastConfig, strategy: SamplingStrategy, report: MetricsReport) -> Self {
        Self {
            method: method.into(),
            config,
            strategy,
            runs: report.runs,
            metrics: report.metrics,
            counts: report.counts,
        }
    }
}

/// Evaluates each method on the same samples with the same seeds.
/// `sigma` is the noise scale of the noise-contrast baseline.
pub fn compare_methods<F: ProviderFactory + ?Sized>(
    samples: &[QaSample],
    factory: &F,
    base_config: &ContrastConfig,
    methods: &[Method],
    sigma: f64,
    settings: &EvalSettings,
) -> Result<Vec<MethodResult>> {
    if methods.is_empty() {
        return Err(Error::validation("no methods selected"));
    }
    methods
        .iter()
        .map(|&m| {
            let (config, report) = match m {
                Method::Regular => {
                    let cfg = ContrastConfig::regular();
                    (cfg, evaluate(samples, factory, &cfg, settings)?)
                }
                Method::Layercd => (*base_config, evaluate(samples, factory, base_config, settings)?),
                Method::NoiseContrast => {
                    let noisy = NoiseContrastFactory {
                        inner: factory,
                        sigma,
                        seed: derive_seed(settings.master_seed, &[0x6e6f697365]),
                    };
                    (*base_config, evaluate(samples, &noisy, base_config, settings)?)
                }
            };
            Ok(MethodResult::new(m.name(), config, settings.strategy, report))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Constraint on/off axis; `[true]` for a plain grid.
    pub apc: Vec<bool>,
    pub mode: ConstraintMode,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.betas.is_empty() || self.apc.is_empty() {
            return Err(Error::validation("sweep grids must be non-empty"));
        }
        for &alpha in &self.alphas {
            for &beta in &self.betas {
                ContrastConfig {
                    alpha,
                    beta,
                    constraint_mode: self.mode,
                    apc_enabled: true,
                }
                .validate()?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha: f64,
    pub beta: f64,
    pub apc: bool,
    pub report: MetricsReport,
}

/// One report per `(alpha, beta, apc)` cell, all with the same seeds.
pub fn sweep<F: ProviderFactory + ?Sized>(
    samples: &[QaSample],
    factory: &F,
    spec: &SweepSpec,
    settings: &EvalSettings,
) -> Result<Vec<SweepCell>> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &alpha in &spec.alphas {
        for &beta in &spec.betas {
            for &apc in &spec.apc {
                let config = ContrastConfig {
                    alpha,
                    beta,
                    constraint_mode: spec.mode,
                    apc_enabled: apc,
                };
                let report = evaluate(samples, factory, &config, settings)?;
                cells.push(SweepCell { alpha, beta, apc, report });
            }
        }
    }
    Ok(cells)
}
