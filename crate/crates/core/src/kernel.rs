//! The contrastive decoding kernel.
//!
//! One decode step takes a pair of logit vectors over the same vocabulary: the
//! *deep* stream (model conditioned on late-layer visual features) and the
//! *shallow* stream (model conditioned on early-layer features). The kernel
//!
//! 1. amplifies their difference: `(1 + alpha) * deep - alpha * shallow`,
//! 2. restricts the candidates to tokens the deep stream finds plausible,
//!    i.e. within a `beta`-scaled band of its maximum,
//! 3. normalizes the surviving contrastive logits with a stable softmax.
//!
//! `alpha = 0` with the constraint disabled reduces to ordinary decoding of the
//! deep stream. Values of `alpha` above 1 are accepted; they sharpen the
//! contrast well past the usual operating range and can push probability mass
//! onto tokens the deep stream barely supports when the constraint is off.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Which stream a logit vector came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Deep,
    Shallow,
    /// Output of [`contrastive_logits`].
    Contrastive,
}

/// Raw scores for one decode step. Entries are always finite.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
    stream: Stream,
}

impl LogitVector {
    pub fn new(values: Vec<f64>, stream: Stream) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::validation(format!(
                "{stream:?} logit at index {i} is not finite ({v})"
            )));
        }
        if values.is_empty() {
            return Err(Error::validation("logit vector is empty"));
        }
        Ok(Self { values, stream })
    }

    pub fn deep(values: Vec<f64>) -> Result<Self> {
        Self::new(values, Stream::Deep)
    }

    pub fn shallow(values: Vec<f64>) -> Result<Self> {
        Self::new(values, Stream::Shallow)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn stream(&self) -> Stream {
        self.stream
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> TokenId {
        TokenId::from(argmax(&self.values))
    }

    pub fn max(&self) -> f64 {
        self.values[argmax(&self.values)]
    }
}

/// How the plausibility threshold is applied to the deep stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// `deep[i] >= beta * max(deep)` on raw logits.
    #[default]
    Logit,
    /// `p[i] >= beta * max(p)`, evaluated in log space as
    /// `deep[i] >= max(deep) + ln(beta)`.
    Prob,
}

impl std::str::FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit" => Ok(ConstraintMode::Logit),
            "prob" => Ok(ConstraintMode::Prob),
            other => Err(Error::validation(format!(
                "unknown constraint mode {other:?} (expected logit or prob)"
            ))),
        }
    }
}

impl std::fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConstraintMode::Logit => "logit",
            ConstraintMode::Prob => "prob",
        })
    }
}

/// Hyperparameters of the contrastive step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    /// Contrast amplification, `>= 0`.
    pub alpha: f64,
    /// Truncation aggressiveness in `[0, 1]`; larger keeps fewer tokens.
    pub beta: f64,
    #[serde(rename = "mode")]
    pub constraint_mode: ConstraintMode,
    #[serde(rename = "apc")]
    pub apc_enabled: bool,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            constraint_mode: ConstraintMode::Logit,
            apc_enabled: true,
        }
    }
}

impl ContrastConfig {
    /// Plain decoding of the deep stream: no contrast, no constraint.
    pub fn regular() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            constraint_mode: ConstraintMode::Prob,
            apc_enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_beta(self.beta)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(Error::validation(format!("alpha must be finite and >= 0, got {alpha}")))
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::validation(format!("beta must lie in [0, 1], got {beta}")))
    }
}

/// Tokens the deep stream considers plausible at this step.
#[derive(Clone, Debug, PartialEq)]
pub struct PlausibleSet {
    mask: Vec<bool>,
    threshold: f64,
}

impl PlausibleSet {
    /// Every token of a vocabulary of size `n`.
    pub fn full(n: usize) -> Self {
        Self {
            mask: vec![true; n],
            threshold: f64::NEG_INFINITY,
        }
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.mask.get(id.index()).copied().unwrap_or(false)
    }

    pub fn members(&self) -> Vec<TokenId> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| TokenId::from(i))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Logit-space threshold that was applied; `-inf` when nothing was cut.
    pub fn threshold_used(&self) -> f64 {
        self.threshold
    }
}

/// Normalized next-token distribution. Zero outside the plausible set.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDistribution {
    probabilities: Vec<f64>,
    plausible: PlausibleSet,
}

impl StepDistribution {
    /// Wraps an already-normalized distribution. Probabilities must be zero
    /// outside `plausible` and sum to one.
    pub fn new(probabilities: Vec<f64>, plausible: PlausibleSet) -> Result<Self> {
        if probabilities.len() != plausible.mask.len() {
            return Err(Error::Dimension {
                expected: plausible.mask.len(),
                actual: probabilities.len(),
            });
        }
        let mut total = 0.0;
        for (i, &p) in probabilities.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!("probability {p} at index {i} outside [0, 1]")));
            }
            if p > 0.0 && !plausible.mask[i] {
                return Err(Error::validation(format!(
                    "token {i} has mass {p} but is outside the plausible set"
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self {
            probabilities,
            plausible,
        })
    }

    /// Distribution over the whole vocabulary with no plausibility mask.
    pub fn unconstrained(probabilities: Vec<f64>) -> Result<Self> {
        let n = probabilities.len();
        Self::new(probabilities, PlausibleSet::full(n))
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn plausible(&self) -> &PlausibleSet {
        &self.plausible
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probabilities.get(id.index()).copied().unwrap_or(0.0)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Stable softmax. `-inf` entries receive exactly zero mass.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::validation("softmax input must be finite or -inf"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    let mut out: Vec<f64> = logits
        .iter()
        .map(|&v| if v == f64::NEG_INFINITY { 0.0 } else { (v - max).exp() })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// `(1 + alpha) * deep - alpha * shallow`, elementwise.
pub fn contrastive_logits(deep: &LogitVector, shallow: &LogitVector, alpha: f64) -> Result<LogitVector> {
    if deep.len() != shallow.len() {
        return Err(Error::Dimension {
            expected: deep.len(),
            actual: shallow.len(),
        });
    }
    check_alpha(alpha)?;
    if alpha == 0.0 {
        // Exactly the deep stream, signed zeros included.
        return Ok(LogitVector {
            values: deep.values.clone(),
            stream: Stream::Contrastive,
        });
    }
    // d + alpha * (d - s) is the same quantity and cancels exactly when d == s.
    let values = deep
        .values
        .iter()
        .zip(&shallow.values)
        .map(|(&d, &s)| d + alpha * (d - s))
        .collect();
    LogitVector::new(values, Stream::Contrastive)
}

/// Tokens whose deep score clears the `beta` threshold; the deep argmax is
/// always included.
pub fn plausible_set(deep: &LogitVector, beta: f64, mode: ConstraintMode) -> Result<PlausibleSet> {
    check_beta(beta)?;
    let top = argmax(&deep.values);
    let max = deep.values[top];
    let threshold = match mode {
        ConstraintMode::Logit => beta * max,
        // ln(0) = -inf keeps the full vocabulary.
        ConstraintMode::Prob => max + beta.ln(),
    };
    let mut mask: Vec<bool> = deep.values.iter().map(|&v| v >= threshold).collect();
    // With max(deep) <= 0 the logit-mode threshold can exceed the max itself.
    mask[top] = true;
    Ok(PlausibleSet { mask, threshold })
}

/// Full contrastive step: contrast, constrain, normalize.
pub fn contrastive_step(
    deep: &LogitVector,
    shallow: &LogitVector,
    config: &ContrastConfig,
) -> Result<StepDistribution> {
    config.validate()?;
    let contrast = contrastive_logits(deep, shallow, config.alpha)?;
    let plausible = if config.apc_enabled {
        plausible_set(deep, config.beta, config.constraint_mode)?
    } else {
        PlausibleSet::full(deep.len())
    };
    let masked: Vec<f64> = contrast
        .values
        .iter()
        .zip(&plausible.mask)
        .map(|(&z, &keep)| if keep { z } else { f64::NEG_INFINITY })
        .collect();
    let probabilities = softmax(&masked)?;
    Ok(StepDistribution {
        probabilities,
        plausible,
    })
}
