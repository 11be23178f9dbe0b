//! Yes/no probing benchmark over synthetic or replayed streams.

mod harness;
mod metrics;
mod mme;

pub use harness::{
    compare_methods, evaluate, parse_answer, predict, sweep, BoxedProvider, EvalSettings, Method, MethodResult,
    NoiseContrastFactory, ProviderFactory, SweepCell, SweepSpec,
};
pub use metrics::{f1, Confusion, MeanStd, Metrics, MetricsReport, Prediction};
pub use mme::{mme_style_score, DefaultMmeScorer, MmeAnswer, MmeScorer};
