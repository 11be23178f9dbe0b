use cdkit::provider::{
    generate_corpus, make_noise_contrast, ConstantProvider, HallucinationLogit, SampleSpec, SyntheticMllmProvider,
    SyntheticModelSpec, TraceFile, TraceReplayProvider, TraceStep,
};
use cdkit::sampling::strategy_weights;
use cdkit::{
    apply_strategy, beam_search, contrastive_step, decode_sequence, softmax, ConstraintMode, ContrastConfig,
    DecodeContext, DecodeOptions, PairedLogitProvider, RngState, SamplingStrategy, StepDistribution, StopReason,
    TokenId, Vocabulary,
};
use cdkit_testkit::{frequencies, random_logits, rng, total_variation};
use proptest::prelude::*;

fn random_trace(seed: u64, vocab: usize, steps: usize) -> TraceFile {
    let mut r = rng(seed);
    TraceFile {
        vocab: Vocabulary::anonymous(vocab).unwrap(),
        steps: (0..steps)
            .map(|_| TraceStep {
                deep: random_logits(&mut r, vocab, 4.0),
                shallow: random_logits(&mut r, vocab, 4.0),
            })
            .collect(),
    }
}

/// Branching provider over a 4-token vocabulary whose logits vary with the
/// prefix through the jitter stream.
fn small_branching(seed: u64) -> SyntheticMllmProvider {
    SyntheticMllmProvider::new(SampleSpec {
        vocab_size: 4,
        truth: TokenId(0),
        truth_deep: 1.0,
        truth_shallow: 0.5,
        hallucinations: vec![HallucinationLogit {
            token: TokenId(1),
            deep: 0.8,
            shallow: 1.2,
        }],
        background: 0.3,
        eos: TokenId(3),
        continuation: 0.6,
        jitter: 1.0,
        seed,
    })
    .unwrap()
}

/// Exhaustive search over every sequence of `len` tokens, scored by the same
/// sum-of-log-probabilities rule. Ties go to the lexicographically smaller
/// sequence.
fn enumerate_best<P: PairedLogitProvider>(
    provider: &mut P,
    ctx: &DecodeContext,
    cfg: &ContrastConfig,
    len: usize,
) -> (Vec<TokenId>, f64) {
    let v = provider.vocab_size();
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    for code in 0..v.pow(len as u32) {
        let seq: Vec<TokenId> = (0..len)
            .map(|pos| TokenId::from(code / v.pow((len - 1 - pos) as u32) % v))
            .collect();
        let mut score = 0.0;
        for t in 0..len {
            let (d, s) = provider.next_logits(&ctx.with_generated(seq[..t].to_vec())).unwrap();
            score += contrastive_step(&d, &s, cfg).unwrap().prob(seq[t]).ln();
        }
        let better = match &best {
            None => true,
            Some((bs, bsc)) => score > *bsc || (score == *bsc && seq < *bs),
        };
        if better {
            best = Some((seq, score));
        }
    }
    best.unwrap()
}

#[test]
fn beam_at_saturation_matches_enumeration() {
    for seed in 0..20 {
        for len in 1..=3 {
            let mut p = small_branching(seed);
            let cfg = ContrastConfig::default();
            let ctx = DecodeContext::new(vec![TokenId(2)]);
            let (expected, score) = enumerate_best(&mut p, &ctx, &cfg, len);
            let got = beam_search(&mut p, &ctx, &cfg, 4usize.pow(len as u32), &DecodeOptions::new(len)).unwrap();
            assert_eq!(got.tokens, expected, "seed {seed} len {len}");
            assert!((got.score - score).abs() < 1e-12);
        }
    }
}

#[test]
fn beam_saturation_five_tokens_length_four() {
    let spec = SampleSpec {
        vocab_size: 5,
        truth: TokenId(2),
        truth_deep: 1.0,
        truth_shallow: 0.0,
        hallucinations: vec![HallucinationLogit {
            token: TokenId(4),
            deep: 0.9,
            shallow: 1.5,
        }],
        background: 0.2,
        eos: TokenId(0),
        continuation: 0.5,
        jitter: 0.8,
        seed: 99,
    };
    let mut p = SyntheticMllmProvider::new(spec).unwrap();
    let cfg = ContrastConfig {
        alpha: 0.5,
        beta: 0.0,
        constraint_mode: ConstraintMode::Prob,
        apc_enabled: true,
    };
    let ctx = DecodeContext::default();
    let (expected, _) = enumerate_best(&mut p, &ctx, &cfg, 4);
    let got = beam_search(&mut p, &ctx, &cfg, 625, &DecodeOptions::new(4)).unwrap();
    assert_eq!(got.tokens, expected);
}

#[test]
fn width_one_beam_is_greedy() {
    for seed in 0..30 {
        let mut p = small_branching(seed);
        let ctx = DecodeContext::default();
        let cfg = ContrastConfig::default();
        let opts = DecodeOptions::new(5).stop_at(TokenId(3));
        let beam = beam_search(&mut p, &ctx, &cfg, 1, &opts).unwrap();
        let greedy =
            decode_sequence(&mut p, &ctx, &cfg, &SamplingStrategy::Greedy, &opts, &mut RngState::new(0)).unwrap();
        assert_eq!(beam.tokens, greedy.tokens, "seed {seed}");
        assert_eq!(beam.stop_reason, greedy.stop_reason);
    }
}

#[test]
fn beam_golden_sequence() {
    // Pinned from a verified run: synthetic sample 0 of seed 7, width 3.
    let corpus = generate_corpus(&SyntheticModelSpec::default(), 1, 7).unwrap();
    let sample = &corpus.samples[0];
    let mut p = SyntheticMllmProvider::new(sample.sample_spec.clone()).unwrap();
    let eos = corpus.vocab().id("<eos>").unwrap();
    let out = beam_search(
        &mut p,
        &DecodeContext::new(sample.prompt.clone()),
        &ContrastConfig::default(),
        3,
        &DecodeOptions::new(4).stop_at(eos),
    )
    .unwrap();
    let text: Vec<&str> = out.tokens.iter().map(|&t| corpus.vocab().token(t).unwrap()).collect();
    assert_eq!(sample.label.as_str(), GOLDEN_LABEL);
    assert_eq!(text, GOLDEN_BEAM);
    assert_eq!(out.stop_reason, StopReason::StopToken);
}

const GOLDEN_LABEL: &str = "yes";
const GOLDEN_BEAM: [&str; 2] = ["yes", "<eos>"];

#[test]
fn zero_alpha_decodes_like_the_deep_stream() {
    for seed in 0..25 {
        let trace = random_trace(seed, 6, 5);
        let cfg = ContrastConfig::regular();
        let mut p = TraceReplayProvider::new(trace.clone());
        let out = decode_sequence(
            &mut p,
            &DecodeContext::default(),
            &cfg,
            &SamplingStrategy::Greedy,
            &DecodeOptions::new(5),
            &mut RngState::new(seed),
        )
        .unwrap();
        let expected: Vec<TokenId> = trace
            .steps
            .iter()
            .map(|s| {
                let p = softmax(&s.deep).unwrap();
                let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
                TokenId::from(best)
            })
            .collect();
        assert_eq!(out.tokens, expected);
    }
}

#[test]
fn constant_provider_contrast_example() {
    let mut p = ConstantProvider::new(vec![0.0, 5.0, 0.0], vec![0.0, 0.0, 5.0]).unwrap();
    let cfg = ContrastConfig {
        alpha: 1.0,
        beta: 0.0,
        constraint_mode: ConstraintMode::Prob,
        apc_enabled: true,
    };
    let out = decode_sequence(
        &mut p,
        &DecodeContext::default(),
        &cfg,
        &SamplingStrategy::Greedy,
        &DecodeOptions::new(3).recording(),
        &mut RngState::new(1),
    )
    .unwrap();
    assert_eq!(out.tokens, vec![TokenId(1); 3]);
    // contrastive logits [0, 10, -5]
    let expected = softmax(&[0.0, 10.0, -5.0]).unwrap();
    for step in out.per_step.unwrap() {
        for (a, b) in step.probabilities().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn seeded_decodes_repeat_exactly() {
    let corpus = generate_corpus(&SyntheticModelSpec::default(), 4, 3).unwrap();
    for s in &corpus.samples {
        let run = || {
            let mut p = SyntheticMllmProvider::new(s.sample_spec.clone()).unwrap();
            decode_sequence(
                &mut p,
                &DecodeContext::new(s.prompt.clone()),
                &ContrastConfig::default(),
                &SamplingStrategy::TopP { p: 0.9, temperature: 1.5 },
                &DecodeOptions::new(6).recording(),
                &mut RngState::new(77),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }
}

#[test]
fn noise_contrast_with_vanishing_sigma_is_regular_greedy() {
    let corpus = generate_corpus(&SyntheticModelSpec::default(), 40, 8).unwrap();
    let cfg = ContrastConfig::default();
    for s in &corpus.samples {
        let ctx = DecodeContext::new(s.prompt.clone());
        let opts = DecodeOptions::new(3);
        let base = SyntheticMllmProvider::new(s.sample_spec.clone()).unwrap();
        let mut noisy = make_noise_contrast(base.clone(), 1e-9, 5).unwrap();
        let mut plain = base;
        let a = decode_sequence(&mut noisy, &ctx, &cfg, &SamplingStrategy::Greedy, &opts, &mut RngState::new(0)).unwrap();
        let b = decode_sequence(
            &mut plain,
            &ctx,
            &ContrastConfig { alpha: 0.0, ..cfg },
            &SamplingStrategy::Greedy,
            &opts,
            &mut RngState::new(0),
        )
        .unwrap();
        assert_eq!(a.tokens, b.tokens);
    }
}

fn empirical(dist: &StepDistribution, strategy: SamplingStrategy, draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngState::new(seed);
    let mut counts = vec![0usize; dist.len()];
    for _ in 0..draws {
        counts[apply_strategy(dist, &strategy, &mut rng).unwrap().index()] += 1;
    }
    frequencies(&counts)
}

#[test]
fn top_k_draw_frequencies() {
    let dist = StepDistribution::unconstrained(vec![0.5, 0.3, 0.2]).unwrap();
    let f = empirical(&dist, SamplingStrategy::TopK { k: 2, temperature: 1.0 }, 100_000, 4);
    assert!((f[0] - 0.625).abs() <= 0.01);
    assert!((f[1] - 0.375).abs() <= 0.01);
    assert_eq!(f[2], 0.0);
}

#[test]
fn ancestral_draw_frequencies() {
    let p = vec![0.05, 0.15, 0.0, 0.4, 0.25, 0.15];
    let dist = StepDistribution::unconstrained(p.clone()).unwrap();
    let f = empirical(&dist, SamplingStrategy::Ancestral { temperature: 1.0 }, 100_000, 9);
    assert!(total_variation(&f, &p) <= 0.01);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn degenerate_strategies_draw_identically(raw in prop::collection::vec(0.0f64..1.0, 2..10), seed in any::<u64>()) {
        prop_assume!(raw.iter().any(|&x| x > 0.0));
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let Ok(dist) = StepDistribution::unconstrained(probs.clone()) else { return Ok(()); };
        let support = probs.iter().filter(|&&p| p > 0.0).count();
        let draws = |s: SamplingStrategy| {
            let mut rng = RngState::new(seed);
            (0..32).map(|_| apply_strategy(&dist, &s, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        let base = draws(SamplingStrategy::Ancestral { temperature: 1.0 });
        prop_assert_eq!(&draws(SamplingStrategy::TopK { k: support, temperature: 1.0 }), &base);
        prop_assert_eq!(&draws(SamplingStrategy::TopP { p: 1.0, temperature: 1.0 }), &base);
        prop_assert_eq!(strategy_weights(&probs, &SamplingStrategy::Ancestral { temperature: 1.0 }).unwrap(), probs);
    }

    #[test]
    fn decode_length_bound(seed in 0u64..500, max_tokens in 0usize..6) {
        let mut p = small_branching(seed);
        let out = decode_sequence(
            &mut p,
            &DecodeContext::default(),
            &ContrastConfig::default(),
            &SamplingStrategy::Ancestral { temperature: 1.3 },
            &DecodeOptions::new(max_tokens).stop_at(TokenId(3)),
            &mut RngState::new(seed),
        ).unwrap();
        prop_assert!(out.tokens.len() <= max_tokens);
        if let Some(pos) = out.tokens.iter().position(|&t| t == TokenId(3)) {
            prop_assert_eq!(pos, out.tokens.len() - 1);
            prop_assert_eq!(out.stop_reason, StopReason::StopToken);
        }
    }
}
