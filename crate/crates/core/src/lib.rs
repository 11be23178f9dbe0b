//! Contrastive decoding between a deep and a shallow logit stream.
//!
//! The [`kernel`] combines one step's stream pair into a constrained
//! next-token distribution, [`sampling`] and [`decode`] turn it into tokens,
//! [`provider`] supplies stream pairs (trace replay, a synthetic model, a
//! noise-contrast baseline), and [`eval`] runs the yes/no probing benchmark.

pub mod decode;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod provider;
pub mod rng;
pub mod sampling;
pub mod vocab;

pub use decode::{beam_search, decode, decode_sequence, DecodeOptions, DecodeResult, StopReason};
pub use error::{Error, Result};
pub use kernel::{
    contrastive_logits, contrastive_step, plausible_set, softmax, ConstraintMode, ContrastConfig, LogitVector,
    PlausibleSet, StepDistribution, Stream,
};
pub use provider::{PairedLogitProvider, ProviderCapability};
pub use rng::RngState;
pub use sampling::{apply_strategy, SamplingStrategy};
pub use vocab::{DecodeContext, TokenId, Vocabulary};
