//! A toy multimodal model with a known hallucination bias, and the yes/no
//! probing corpus built from it.
//!
//! At the answer slot (the first generated position) the deep stream puts
//! `truth_deep` on the ground-truth answer and draws each hallucination
//! token's logit from `Normal(halluc_deep_mean, halluc_std)`; the shallow
//! stream does the same with `truth_shallow` and `halluc_shallow_mean`, so it
//! suppresses the correct answer and favours the hallucinations. Every other
//! token sits at `background`. After the answer slot both streams favour the
//! end-of-sequence token at `continuation`. Per-step jitter
//! `Normal(0, jitter)` is added to every logit, seeded by the sample seed and
//! the full prefix.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::LogitVector;
use crate::provider::noise::prefix_seed;
use crate::provider::{PairedLogitProvider, ProviderCapability};
use crate::rng::RngState;
use crate::vocab::{DecodeContext, TokenId, Vocabulary};

pub const CORPUS_FORMAT: &str = "cdkit-corpus";
pub const EOS_TOKEN: &str = "<eos>";
/// Tokens that can appear in the answer slot. Only `yes` and `no` parse.
pub const ANSWER_SLOT_TOKENS: [&str; 4] = ["yes", "no", "maybe", "unsure"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    Yes,
    No,
}

impl YesNo {
    pub fn as_str(self) -> &'static str {
        match self {
            YesNo::Yes => "yes",
            YesNo::No => "no",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            YesNo::Yes => YesNo::No,
            YesNo::No => YesNo::Yes,
        }
    }

    /// Case-insensitive match on `yes` / `no`.
    pub fn parse(token: &str) -> Option<Self> {
        if token.eq_ignore_ascii_case("yes") {
            Some(YesNo::Yes)
        } else if token.eq_ignore_ascii_case("no") {
            Some(YesNo::No)
        } else {
            None
        }
    }
}

/// Corpus-level generation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticModelSpec {
    pub filler_tokens: usize,
    pub prompt_len: usize,
    pub truth_deep: f64,
    pub truth_shallow: f64,
    pub halluc_deep_mean: f64,
    pub halluc_shallow_mean: f64,
    pub halluc_std: f64,
    /// Answer-slot distractors (`maybe`, `unsure`) added to the hallucination
    /// set on top of the opposite answer.
    pub extra_hallucinations: usize,
    pub background: f64,
    pub continuation: f64,
    pub jitter: f64,
}

impl Default for SyntheticModelSpec {
    fn default() -> Self {
        Self {
            filler_tokens: 36,
            prompt_len: 4,
            truth_deep: 3.0,
            truth_shallow: 0.5,
            halluc_deep_mean: 2.5,
            halluc_shallow_mean: 3.5,
            halluc_std: 0.5,
            extra_hallucinations: 0,
            background: 0.0,
            continuation: 4.0,
            jitter: 0.1,
        }
    }
}

impl SyntheticModelSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.truth_deep,
            self.truth_shallow,
            self.halluc_deep_mean,
            self.halluc_shallow_mean,
            self.background,
            self.continuation,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("synthetic model parameters must be finite"));
        }
        if !(self.halluc_std > 0.0 && self.halluc_std.is_finite()) || !(self.jitter > 0.0 && self.jitter.is_finite()) {
            return Err(Error::validation("halluc_std and jitter must be > 0"));
        }
        if self.filler_tokens == 0 {
            return Err(Error::validation("need at least one filler token"));
        }
        if self.extra_hallucinations > ANSWER_SLOT_TOKENS.len() - 2 {
            return Err(Error::validation(format!(
                "extra_hallucinations must be <= {}",
                ANSWER_SLOT_TOKENS.len() - 2
            )));
        }
        Ok(())
    }

    /// Answer-slot tokens, `<eos>`, then `w00..`.
    pub fn vocabulary(&self) -> Vocabulary {
        let tokens = ANSWER_SLOT_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(std::iter::once(EOS_TOKEN.to_string()))
            .chain((0..self.filler_tokens).map(|i| format!("w{i:02}")));
        Vocabulary::new(tokens).expect("synthetic vocabulary is valid")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HallucinationLogit {
    pub token: TokenId,
    pub deep: f64,
    pub shallow: f64,
}

/// Fully resolved parameters for one sample's provider.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub vocab_size: usize,
    pub truth: TokenId,
    pub truth_deep: f64,
    pub truth_shallow: f64,
    pub hallucinations: Vec<HallucinationLogit>,
    pub background: f64,
    pub eos: TokenId,
    pub continuation: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl SampleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::validation("sample vocabulary too small"));
        }
        if self.hallucinations.is_empty() {
            return Err(Error::validation("hallucination set is empty"));
        }
        let ids = std::iter::once(self.truth)
            .chain(std::iter::once(self.eos))
            .chain(self.hallucinations.iter().map(|h| h.token));
        for id in ids {
            if id.index() >= self.vocab_size {
                return Err(Error::validation(format!("token {id} outside vocabulary")));
            }
        }
        if self.hallucinations.iter().any(|h| h.token == self.truth) {
            return Err(Error::validation("ground-truth token is in the hallucination set"));
        }
        if !(self.jitter > 0.0 && self.jitter.is_finite()) {
            return Err(Error::validation("jitter must be > 0"));
        }
        Ok(())
    }
}

/// Branching provider for one synthetic sample.
#[derive(Clone, Debug)]
pub struct SyntheticMllmProvider {
    spec: SampleSpec,
    jitter: Normal<f64>,
}

impl SyntheticMllmProvider {
    pub fn new(spec: SampleSpec) -> Result<Self> {
        spec.validate()?;
        let jitter = Normal::new(0.0, spec.jitter).map_err(|e| Error::validation(e.to_string()))?;
        Ok(Self { spec, jitter })
    }

    pub fn spec(&self) -> &SampleSpec {
        &self.spec
    }
}

impl PairedLogitProvider for SyntheticMllmProvider {
    fn capability(&self) -> ProviderCapability {
        ProviderCapability {
            branching: true,
            bounded_steps: None,
        }
    }

    fn vocab_size(&self) -> usize {
        self.spec.vocab_size
    }

    fn next_logits(&mut self, prefix: &DecodeContext) -> Result<(LogitVector, LogitVector)> {
        let s = &self.spec;
        prefix.validate(s.vocab_size)?;
        let mut deep = vec![s.background; s.vocab_size];
        let mut shallow = deep.clone();
        if prefix.generated.is_empty() {
            deep[s.truth.index()] = s.truth_deep;
            shallow[s.truth.index()] = s.truth_shallow;
            for h in &s.hallucinations {
                deep[h.token.index()] = h.deep;
                shallow[h.token.index()] = h.shallow;
            }
        } else {
            deep[s.eos.index()] = s.continuation;
            shallow[s.eos.index()] = s.continuation;
        }
        let mut rng = RngState::new(prefix_seed(s.seed, prefix));
        for v in deep.iter_mut().chain(shallow.iter_mut()) {
            *v += self.jitter.sample(rng.inner());
        }
        Ok((LogitVector::deep(deep)?, LogitVector::shallow(shallow)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaSample {
    pub id: String,
    pub prompt: Vec<TokenId>,
    pub label: YesNo,
    pub sample_spec: SampleSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub n: usize,
    pub vocab: Vocabulary,
    pub spec: SyntheticModelSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub samples: Vec<QaSample>,
}

impl Corpus {
    pub fn vocab(&self) -> &Vocabulary {
        &self.header.vocab
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, id: &str) -> Option<&QaSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn label_counts(&self) -> (usize, usize) {
        let yes = self.samples.iter().filter(|s| s.label == YesNo::Yes).count();
        (yes, self.samples.len() - yes)
    }
}

/// Draws `n` balanced yes/no samples. Sample `i` depends only on
/// `(seed, i)`, except for its label which comes from a shuffled balanced
/// assignment.
pub fn generate_corpus(template: &SyntheticModelSpec, n: usize, seed: u64) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::validation("corpus size must be >= 1"));
    }
    template.validate()?;
    let vocab = template.vocabulary();
    let root = RngState::new(seed);

    let mut labels: Vec<YesNo> = (0..n).map(|i| if i % 2 == 0 { YesNo::Yes } else { YesNo::No }).collect();
    let mut shuffle = root.substream(&[u64::MAX]);
    for i in (1..n).rev() {
        let j = (shuffle.next_u64() % (i as u64 + 1)) as usize;
        labels.swap(i, j);
    }

    let halluc = Normal::new(0.0, template.halluc_std).map_err(|e| Error::validation(e.to_string()))?;
    let id_of = |s: &str| vocab.id(s).expect("answer token in vocabulary");
    let eos = id_of(EOS_TOKEN);
    let filler_start = ANSWER_SLOT_TOKENS.len() + 1;

    let samples = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut rng = root.substream(&[i as u64]);
            let prompt = (0..template.prompt_len)
                .map(|_| TokenId::from(filler_start + (rng.next_u64() % template.filler_tokens as u64) as usize))
                .collect();
            let h_tokens = std::iter::once(id_of(label.opposite().as_str()))
                .chain(ANSWER_SLOT_TOKENS[2..2 + template.extra_hallucinations].iter().map(|s| id_of(s)));
            let hallucinations = h_tokens
                .map(|token| HallucinationLogit {
                    token,
                    deep: template.halluc_deep_mean + halluc.sample(rng.inner()),
                    shallow: template.halluc_shallow_mean + halluc.sample(rng.inner()),
                })
                .collect();
            QaSample {
                id: format!("s{i:04}"),
                prompt,
                label,
                sample_spec: SampleSpec {
                    vocab_size: vocab.len(),
                    truth: id_of(label.as_str()),
                    truth_deep: template.truth_deep,
                    truth_shallow: template.truth_shallow,
                    hallucinations,
                    background: template.background,
                    eos,
                    continuation: template.continuation,
                    jitter: template.jitter,
                    seed: rng.next_u64(),
                },
            }
        })
        .collect();

    Ok(Corpus {
        header: CorpusHeader {
            format: CORPUS_FORMAT.into(),
            version: 1,
            seed,
            n,
            vocab,
            spec: template.clone(),
        },
        samples,
    })
}

pub fn write_corpus(corpus: &Corpus, mut out: impl Write) -> Result<()> {
    let to_io = |e: serde_json::Error| Error::Io(e.into());
    serde_json::to_writer(&mut out, &corpus.header).map_err(to_io)?;
    out.write_all(b"\n")?;
    for s in &corpus.samples {
        serde_json::to_writer(&mut out, s).map_err(to_io)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    parse_corpus(BufReader::new(file))
}

pub fn parse_corpus(reader: impl BufRead) -> Result<Corpus> {
    let mut header: Option<CorpusHeader> = None;
    let mut samples: Vec<QaSample> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match &header {
            None => {
                let h: CorpusHeader = serde_json::from_str(&line)
                    .map_err(|e| Error::format(lineno, format!("bad corpus header: {e}")))?;
                if h.format != CORPUS_FORMAT || h.version != 1 {
                    return Err(Error::format(
                        lineno,
                        format!("unsupported corpus format {:?} version {}", h.format, h.version),
                    ));
                }
                header = Some(h);
            }
            Some(h) => {
                let s: QaSample = serde_json::from_str(&line)
                    .map_err(|e| Error::format(lineno, format!("malformed sample: {e}")))?;
                if s.sample_spec.vocab_size != h.vocab.len() {
                    return Err(Error::format(
                        lineno,
                        format!(
                            "sample vocab_size {} does not match corpus vocabulary of {}",
                            s.sample_spec.vocab_size,
                            h.vocab.len()
                        ),
                    ));
                }
                s.sample_spec.validate().map_err(|e| Error::format(lineno, e.to_string()))?;
                if let Some(t) = s.prompt.iter().find(|t| !h.vocab.contains(**t)) {
                    return Err(Error::format(lineno, format!("prompt token {t} outside vocabulary")));
                }
                if !seen.insert(s.id.clone()) {
                    return Err(Error::format(lineno, format!("duplicate sample id {:?}", s.id)));
                }
                samples.push(s);
            }
        }
    }
    let header = header.ok_or_else(|| Error::format(1, "corpus is empty"))?;
    if samples.is_empty() {
        return Err(Error::format(1, "corpus has no samples"));
    }
    Ok(Corpus { header, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_sized() {
        let c = generate_corpus(&SyntheticModelSpec::default(), 100, 5).unwrap();
        assert_eq!(c.len(), 100);
        assert_eq!(c.label_counts(), (50, 50));
        let c = generate_corpus(&SyntheticModelSpec::default(), 7, 5).unwrap();
        let (y, n) = c.label_counts();
        assert!(y.abs_diff(n) <= 1);
        assert!(generate_corpus(&SyntheticModelSpec::default(), 0, 5).is_err());
    }

    #[test]
    fn byte_identical_for_same_seed() {
        let spec = SyntheticModelSpec::default();
        let write = |seed| {
            let mut buf = Vec::new();
            write_corpus(&generate_corpus(&spec, 50, seed).unwrap(), &mut buf).unwrap();
            buf
        };
        assert_eq!(write(3), write(3));
        assert_ne!(write(3), write(4));
    }

    #[test]
    fn corpus_file_roundtrip() {
        let c = generate_corpus(&SyntheticModelSpec::default(), 20, 1).unwrap();
        let mut buf = Vec::new();
        write_corpus(&c, &mut buf).unwrap();
        assert_eq!(parse_corpus(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn answer_slot_bias_for_yes_sample() {
        let c = generate_corpus(&SyntheticModelSpec::default(), 10, 42).unwrap();
        let sample = c.samples.iter().find(|s| s.label == YesNo::Yes).unwrap();
        let mut p = SyntheticMllmProvider::new(sample.sample_spec.clone()).unwrap();
        let (deep, shallow) = p.next_logits(&DecodeContext::new(sample.prompt.clone())).unwrap();
        let g = c.vocab().id("yes").unwrap().index();
        assert!(deep.values()[g] >= shallow.values()[g]);
        let h = &sample.sample_spec.hallucinations;
        let mean = |f: &dyn Fn(usize) -> f64| h.iter().map(|x| f(x.token.index())).sum::<f64>() / h.len() as f64;
        assert!(mean(&|i| shallow.values()[i]) > mean(&|i| deep.values()[i]));
    }

    #[test]
    fn deterministic_per_prefix() {
        let c = generate_corpus(&SyntheticModelSpec::default(), 2, 9).unwrap();
        let mut p = SyntheticMllmProvider::new(c.samples[0].sample_spec.clone()).unwrap();
        let ctx = DecodeContext::new(c.samples[0].prompt.clone());
        assert_eq!(p.next_logits(&ctx).unwrap(), p.next_logits(&ctx).unwrap());
        let after = ctx.with_generated(vec![TokenId(0)]);
        let (deep, _) = p.next_logits(&after).unwrap();
        assert_eq!(deep.argmax(), c.vocab().id(EOS_TOKEN).unwrap());
    }

    #[test]
    fn invalid_sample_specs() {
        let c = generate_corpus(&SyntheticModelSpec::default(), 1, 0).unwrap();
        let mut s = c.samples[0].sample_spec.clone();
        s.hallucinations[0].token = s.truth;
        assert!(SyntheticMllmProvider::new(s).is_err());
        let mut s = c.samples[0].sample_spec.clone();
        s.hallucinations.clear();
        assert!(SyntheticMllmProvider::new(s).is_err());
    }

    #[test]
    fn parse_rejects_duplicate_ids() {
        let c = generate_corpus(&SyntheticModelSpec::default(), 2, 0).unwrap();
        let mut dup = c.clone();
        dup.samples[1].id = dup.samples[0].id.clone();
        let mut buf = Vec::new();
        write_corpus(&dup, &mut buf).unwrap();
        assert!(matches!(parse_corpus(buf.as_slice()), Err(Error::Format { line: 3, .. })));
    }
}
