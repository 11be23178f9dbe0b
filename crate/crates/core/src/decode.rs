//! Autoregressive loops around the contrastive step.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{contrastive_step, ContrastConfig, StepDistribution};
use crate::provider::PairedLogitProvider;
use crate::rng::RngState;
use crate::sampling::{apply_strategy, SamplingStrategy};
use crate::vocab::{DecodeContext, TokenId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxTokens,
    StopToken,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub tokens: Vec<TokenId>,
    /// One entry per generated token when recording was requested.
    pub per_step: Option<Vec<StepDistribution>>,
    pub stop_reason: StopReason,
    /// Sum of log-probabilities of the emitted tokens under the contrastive
    /// distribution.
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeOptions {
    pub max_tokens: usize,
    pub stop_token: Option<TokenId>,
    pub record_steps: bool,
}

impl DecodeOptions {
    pub fn new(max_tokens: usize) -> Self {
        Self {
            max_tokens,
            stop_token: None,
            record_steps: false,
        }
    }

    pub fn stop_at(mut self, token: TokenId) -> Self {
        self.stop_token = Some(token);
        self
    }

    pub fn recording(mut self) -> Self {
        self.record_steps = true;
        self
    }
}

fn step<P: PairedLogitProvider + ?Sized>(
    provider: &mut P,
    ctx: &DecodeContext,
    config: &ContrastConfig,
) -> Result<StepDistribution> {
    let (deep, shallow) = provider.next_logits(ctx)?;
    contrastive_step(&deep, &shallow, config)
}

fn check_inputs<P: PairedLogitProvider + ?Sized>(
    provider: &P,
    context: &DecodeContext,
    config: &ContrastConfig,
    opts: &DecodeOptions,
) -> Result<()> {
    config.validate()?;
    context.validate(provider.vocab_size())?;
    if let Some(stop) = opts.stop_token {
        if stop.index() >= provider.vocab_size() {
            return Err(Error::validation(format!("stop token {stop} outside vocabulary")));
        }
    }
    Ok(())
}

/// Token-by-token decoding with a per-step strategy.
pub fn decode_sequence<P: PairedLogitProvider + ?Sized>(
    provider: &mut P,
    context: &DecodeContext,
    config: &ContrastConfig,
    strategy: &SamplingStrategy,
    opts: &DecodeOptions,
    rng: &mut RngState,
) -> Result<DecodeResult> {
    strategy.validate()?;
    if strategy.is_beam() {
        return Err(Error::Unsupported("use beam_search for the beam strategy".into()));
    }
    check_inputs(provider, context, config, opts)?;
    let mut ctx = context.clone();
    let mut per_step = opts.record_steps.then(Vec::new);
    let mut score = 0.0;
    let mut stop_reason = StopReason::MaxTokens;
    while ctx.generated.len() < opts.max_tokens {
        let dist = step(provider, &ctx, config)?;
        let token = apply_strategy(&dist, strategy, rng)?;
        score += dist.prob(token).ln();
        ctx.generated.push(token);
        if let Some(steps) = per_step.as_mut() {
            steps.push(dist);
        }
        if opts.stop_token == Some(token) {
            stop_reason = StopReason::StopToken;
            break;
        }
    }
    Ok(DecodeResult {
        tokens: ctx.generated,
        per_step,
        stop_reason,
        score,
    })
}

#[derive(Clone, Debug)]
struct Hypothesis {
    tokens: Vec<TokenId>,
    score: f64,
    finished: bool,
}

/// Higher score first, then the lexicographically smaller sequence.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Max-score beam search over the contrastive distribution.
///
/// A hypothesis is scored by the plain sum of its tokens' log-probabilities.
/// Tokens outside the plausible set have zero probability and are never
/// expanded. Hypotheses ending in the stop token are frozen and keep
/// competing for a slot by total score.
pub fn beam_search<P: PairedLogitProvider + ?Sized>(
    provider: &mut P,
    context: &DecodeContext,
    config: &ContrastConfig,
    beam_width: usize,
    opts: &DecodeOptions,
) -> Result<DecodeResult> {
    if !provider.capability().branching {
        return Err(Error::Capability(
            "beam search needs a branching provider; linear traces cannot answer alternative prefixes".into(),
        ));
    }
    if beam_width == 0 {
        return Err(Error::validation("beam width must be >= 1"));
    }
    check_inputs(provider, context, config, opts)?;

    let mut beams = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        finished: false,
    }];
    for _ in 0..opts.max_tokens {
        if beams.iter().all(|h| h.finished) {
            break;
        }
        let mut pool = Vec::new();
        for hyp in beams {
            if hyp.finished {
                pool.push(hyp);
                continue;
            }
            let dist = step(provider, &context.with_generated(hyp.tokens.clone()), config)?;
            for (i, &p) in dist.probabilities().iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                let token = TokenId::from(i);
                let mut tokens = hyp.tokens.clone();
                tokens.push(token);
                pool.push(Hypothesis {
                    tokens,
                    score: hyp.score + p.ln(),
                    finished: opts.stop_token == Some(token),
                });
            }
        }
        pool.sort_by(rank);
        pool.truncate(beam_width);
        beams = pool;
    }
    let best = beams.into_iter().min_by(rank).expect("beam is never empty");

    let per_step = if opts.record_steps {
        let mut steps = Vec::with_capacity(best.tokens.len());
        for t in 0..best.tokens.len() {
            steps.push(step(provider, &context.with_generated(best.tokens[..t].to_vec()), config)?);
        }
        Some(steps)
    } else {
        None
    };
    let stop_reason = match (opts.stop_token, best.tokens.last()) {
        (Some(stop), Some(&last)) if stop == last => StopReason::StopToken,
        _ => StopReason::MaxTokens,
    };
    Ok(DecodeResult {
        tokens: best.tokens,
        per_step,
        stop_reason,
        score: best.score,
    })
}

/// Routes beam strategies to [`beam_search`] and everything else to
/// [`decode_sequence`].
pub fn decode<P: PairedLogitProvider + ?Sized>(
    provider: &mut P,
    context: &DecodeContext,
    config: &ContrastConfig,
    strategy: &SamplingStrategy,
    opts: &DecodeOptions,
    rng: &mut RngState,
) -> Result<DecodeResult> {
    match *strategy {
        SamplingStrategy::Beam { beam_width } => beam_search(provider, context, config, beam_width, opts),
        _ => decode_sequence(provider, context, config, strategy, opts, rng),
    }
}
