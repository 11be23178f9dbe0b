//! Sources of paired (deep, shallow) logit streams.

mod noise;
mod synthetic;
mod trace;

pub use noise::{make_noise_contrast, NoiseContrastProvider};
pub use synthetic::{
    generate_corpus, load_corpus, parse_corpus, write_corpus, Corpus, CorpusHeader, HallucinationLogit, QaSample,
    SampleSpec, SyntheticMllmProvider, SyntheticModelSpec, YesNo, ANSWER_SLOT_TOKENS, EOS_TOKEN,
};
pub use trace::{load_trace, parse_trace, write_trace, TraceFile, TraceReplayProvider, TraceStep};

use crate::error::{Error, Result};
use crate::kernel::LogitVector;
use crate::vocab::DecodeContext;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProviderCapability {
    /// Answers arbitrary prefixes, not just the next one in a fixed path.
    pub branching: bool,
    pub bounded_steps: Option<usize>,
}

/// Stand-in for the model run twice, once per feature depth.
pub trait PairedLogitProvider {
    fn capability(&self) -> ProviderCapability;

    fn vocab_size(&self) -> usize;

    /// Deep and shallow logits for the token following `prefix`.
    fn next_logits(&mut self, prefix: &DecodeContext) -> Result<(LogitVector, LogitVector)>;
}

impl<P: PairedLogitProvider + ?Sized> PairedLogitProvider for Box<P> {
    fn capability(&self) -> ProviderCapability {
        (**self).capability()
    }

    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_logits(&mut self, prefix: &DecodeContext) -> Result<(LogitVector, LogitVector)> {
        (**self).next_logits(prefix)
    }
}

/// Returns the same pair for every prefix.
#[derive(Clone, Debug)]
pub struct ConstantProvider {
    deep: LogitVector,
    shallow: LogitVector,
}

impl ConstantProvider {
    pub fn new(deep: Vec<f64>, shallow: Vec<f64>) -> Result<Self> {
        if deep.len() != shallow.len() {
            return Err(Error::Dimension {
                expected: deep.len(),
                actual: shallow.len(),
            });
        }
        Ok(Self {
            deep: LogitVector::deep(deep)?,
            shallow: LogitVector::shallow(shallow)?,
        })
    }
}

impl PairedLogitProvider for ConstantProvider {
    fn capability(&self) -> ProviderCapability {
        ProviderCapability {
            branching: true,
            bounded_steps: None,
        }
    }

    fn vocab_size(&self) -> usize {
        self.deep.len()
    }

    fn next_logits(&mut self, prefix: &DecodeContext) -> Result<(LogitVector, LogitVector)> {
        prefix.validate(self.vocab_size())?;
        Ok((self.deep.clone(), self.shallow.clone()))
    }
}
