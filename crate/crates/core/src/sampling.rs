//! Decoding strategies applied on top of a [`StepDistribution`].
//!
//! Order of operations for the stochastic strategies: temperature rescales the
//! log-probabilities of the contrastive distribution, the truncation (top-k or
//! top-p) selects a support, and one uniform draw is inverted against the
//! cumulative weights in vocabulary order. All stochastic strategies consume
//! exactly one `f64` per draw, so two strategies that end with the same weight
//! vector produce the same token for the same generator state.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::StepDistribution;
use crate::rng::RngState;
use crate::vocab::TokenId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingStrategy {
    Greedy,
    Ancestral { temperature: f64 },
    TopK { k: usize, temperature: f64 },
    TopP { p: f64, temperature: f64 },
    Beam { beam_width: usize },
}

impl SamplingStrategy {
    pub fn validate(&self) -> Result<()> {
        let temp_ok = |t: f64| {
            if t.is_finite() && t > 0.0 {
                Ok(())
            } else {
                Err(Error::validation(format!("temperature must be > 0, got {t}")))
            }
        };
        match *self {
            SamplingStrategy::Greedy => Ok(()),
            SamplingStrategy::Ancestral { temperature } => temp_ok(temperature),
            SamplingStrategy::TopK { k, temperature } => {
                if k == 0 {
                    return Err(Error::validation("top-k needs k >= 1"));
                }
                temp_ok(temperature)
            }
            SamplingStrategy::TopP { p, temperature } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::validation(format!("top-p needs p in (0, 1], got {p}")));
                }
                temp_ok(temperature)
            }
            SamplingStrategy::Beam { beam_width } => {
                if beam_width == 0 {
                    Err(Error::validation("beam width must be >= 1"))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn is_beam(&self) -> bool {
        matches!(self, SamplingStrategy::Beam { .. })
    }

    /// Short human-readable label, e.g. `top-k(50, T=0.7)`.
    pub fn label(&self) -> String {
        match *self {
            SamplingStrategy::Greedy => "greedy".into(),
            SamplingStrategy::Ancestral { temperature } => format!("ancestral(T={temperature})"),
            SamplingStrategy::TopK { k, temperature } => format!("top-k({k}, T={temperature})"),
            SamplingStrategy::TopP { p, temperature } => format!("top-p({p}, T={temperature})"),
            SamplingStrategy::Beam { beam_width } => format!("beam({beam_width})"),
        }
    }
}

/// Picks the next token from `dist` according to `strategy`.
pub fn apply_strategy(dist: &StepDistribution, strategy: &SamplingStrategy, rng: &mut RngState) -> Result<TokenId> {
    strategy.validate()?;
    let probs = dist.probabilities();
    match *strategy {
        SamplingStrategy::Greedy => greedy(probs),
        SamplingStrategy::Beam { .. } => Err(Error::Unsupported(
            "beam search is not a per-step strategy; use beam_search".into(),
        )),
        _ => {
            let weights = strategy_weights(probs, strategy)?;
            draw(&weights, rng)
        }
    }
}

/// Unnormalized sampling weights after temperature and truncation.
/// Zero entries can never be drawn.
pub fn strategy_weights(probs: &[f64], strategy: &SamplingStrategy) -> Result<Vec<f64>> {
    let (temperature, keep) = match *strategy {
        SamplingStrategy::Ancestral { temperature } => (temperature, Keep::All),
        SamplingStrategy::TopK { k, temperature } => (temperature, Keep::TopK(k)),
        SamplingStrategy::TopP { p, temperature } => (temperature, Keep::TopP(p)),
        SamplingStrategy::Greedy | SamplingStrategy::Beam { .. } => {
            return Err(Error::Unsupported(format!(
                "{} has no sampling weights",
                strategy.label()
            )))
        }
    };
    let mut weights = with_temperature(probs, temperature)?;
    match keep {
        Keep::All => {}
        Keep::TopK(k) => {
            let order = support_by_weight(&weights);
            for &i in order.iter().skip(k) {
                weights[i] = 0.0;
            }
        }
        Keep::TopP(p) if p >= 1.0 => {}
        Keep::TopP(p) => {
            let total: f64 = weights.iter().sum();
            let order = support_by_weight(&weights);
            let mut cumulative = 0.0;
            let mut cut = order.len();
            for (rank, &i) in order.iter().enumerate() {
                cumulative += weights[i] / total;
                if cumulative >= p {
                    cut = rank + 1;
                    break;
                }
            }
            for &i in &order[cut..] {
                weights[i] = 0.0;
            }
        }
    }
    Ok(weights)
}

enum Keep {
    All,
    TopK(usize),
    TopP(f64),
}

fn greedy(probs: &[f64]) -> Result<TokenId> {
    let mut best: Option<usize> = None;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 && best.is_none_or(|b| p > probs[b]) {
            best = Some(i);
        }
    }
    best.map(TokenId::from).ok_or(Error::EmptySupport)
}

/// `p^(1/T)` computed in log space, scaled so the largest weight is 1.
/// `T == 1` returns the probabilities untouched.
fn with_temperature(probs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !probs.iter().any(|&p| p > 0.0) {
        return Err(Error::EmptySupport);
    }
    if temperature == 1.0 {
        return Ok(probs.to_vec());
    }
    let scaled: Vec<f64> = probs
        .iter()
        .map(|&p| if p > 0.0 { p.ln() / temperature } else { f64::NEG_INFINITY })
        .collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(scaled
        .iter()
        .map(|&s| if s == f64::NEG_INFINITY { 0.0 } else { (s - max).exp() })
        .collect())
}

/// Indices with positive weight, heaviest first, lower index first on ties.
fn support_by_weight(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| weights[b].partial_cmp(&weights[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order
}

/// Inverse-CDF draw over unnormalized weights using one uniform variate.
pub fn draw(weights: &[f64], rng: &mut RngState) -> Result<TokenId> {
    let total: f64 = weights.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::EmptySupport);
    }
    let target = rng.next_f64() * total;
    let mut cumulative = 0.0;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        cumulative += w;
        last = Some(i);
        if target < cumulative {
            return Ok(TokenId::from(i));
        }
    }
    // Rounding can leave target == cumulative at the very end.
    last.map(TokenId::from).ok_or(Error::EmptySupport)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64]) -> StepDistribution {
        StepDistribution::unconstrained(p.to_vec()).unwrap()
    }

    fn normalized(w: &[f64]) -> Vec<f64> {
        let t: f64 = w.iter().sum();
        w.iter().map(|x| x / t).collect()
    }

    #[test]
    fn greedy_picks_argmax_lowest_index_on_ties() {
        let mut rng = RngState::new(0);
        assert_eq!(
            apply_strategy(&dist(&[0.1, 0.7, 0.2]), &SamplingStrategy::Greedy, &mut rng).unwrap(),
            TokenId(1)
        );
        assert_eq!(
            apply_strategy(&dist(&[0.4, 0.2, 0.4]), &SamplingStrategy::Greedy, &mut rng).unwrap(),
            TokenId(0)
        );
    }

    #[test]
    fn top_k_renormalizes() {
        let w = strategy_weights(&[0.5, 0.3, 0.2], &SamplingStrategy::TopK { k: 2, temperature: 1.0 }).unwrap();
        let n = normalized(&w);
        assert!((n[0] - 0.625).abs() < 1e-12);
        assert!((n[1] - 0.375).abs() < 1e-12);
        assert_eq!(n[2], 0.0);
    }

    #[test]
    fn top_p_smallest_prefix() {
        let w = strategy_weights(&[0.5, 0.3, 0.2], &SamplingStrategy::TopP { p: 0.79, temperature: 1.0 }).unwrap();
        let n = normalized(&w);
        assert!((n[0] - 0.625).abs() < 1e-12);
        assert!((n[1] - 0.375).abs() < 1e-12);
        assert_eq!(n[2], 0.0);
        // 0.5 alone already covers p = 0.5
        let w = strategy_weights(&[0.5, 0.3, 0.2], &SamplingStrategy::TopP { p: 0.5, temperature: 1.0 }).unwrap();
        assert_eq!(w, vec![0.5, 0.0, 0.0]);
    }

    #[test]
    fn temperature_reshapes() {
        // T = 0.5 squares the probabilities before renormalizing.
        let w = strategy_weights(&[0.25, 0.75], &SamplingStrategy::Ancestral { temperature: 0.5 }).unwrap();
        let n = normalized(&w);
        assert!((n[0] - 0.1).abs() < 1e-12);
        assert!((n[1] - 0.9).abs() < 1e-12);
        let w = strategy_weights(&[0.25, 0.75, 0.0], &SamplingStrategy::Ancestral { temperature: 1.0 }).unwrap();
        assert_eq!(w, vec![0.25, 0.75, 0.0]);
    }

    #[test]
    fn degenerate_strategies_match_ancestral() {
        let p = [0.05, 0.0, 0.6, 0.35];
        let anc = SamplingStrategy::Ancestral { temperature: 1.0 };
        let base = strategy_weights(&p, &anc).unwrap();
        assert_eq!(strategy_weights(&p, &SamplingStrategy::TopK { k: 3, temperature: 1.0 }).unwrap(), base);
        assert_eq!(strategy_weights(&p, &SamplingStrategy::TopK { k: 50, temperature: 1.0 }).unwrap(), base);
        assert_eq!(strategy_weights(&p, &SamplingStrategy::TopP { p: 1.0, temperature: 1.0 }).unwrap(), base);
    }

    #[test]
    fn beam_is_rejected_and_params_validated() {
        let mut rng = RngState::new(0);
        let d = dist(&[0.5, 0.5]);
        assert!(matches!(
            apply_strategy(&d, &SamplingStrategy::Beam { beam_width: 3 }, &mut rng),
            Err(Error::Unsupported(_))
        ));
        for bad in [
            SamplingStrategy::TopK { k: 0, temperature: 1.0 },
            SamplingStrategy::TopP { p: 0.0, temperature: 1.0 },
            SamplingStrategy::TopP { p: 1.5, temperature: 1.0 },
            SamplingStrategy::Ancestral { temperature: 0.0 },
            SamplingStrategy::Beam { beam_width: 0 },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn draw_never_picks_zero_weight() {
        let mut rng = RngState::new(3);
        for _ in 0..2000 {
            let t = draw(&[0.0, 1.0, 0.0, 2.0], &mut rng).unwrap();
            assert!(t == TokenId(1) || t == TokenId(3));
        }
        assert!(matches!(draw(&[0.0, 0.0], &mut rng), Err(Error::EmptySupport)));
    }
}
