//! Independent reference implementations used by the cdkit test suites.
//!
//! Nothing here calls into cdkit: the oracles evaluate the contrastive step
//! straight from its defining formulas, in double-double arithmetic, so they
//! can check the library's `f64` kernel to well below `1e-9`.

#![allow(clippy::should_implement_trait)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    Dd { hi: s, lo: e }
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd {
        hi: p,
        lo: a.mul_add(b, -p),
    }
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.hi, o.hi);
        let t = two_sum(self.lo, o.lo);
        let s = quick_two_sum(s.hi, s.lo + t.hi);
        quick_two_sum(s.hi, s.lo + t.lo)
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul_f64(self, b: f64) -> Dd {
        let p = two_prod(self.hi, b);
        quick_two_sum(p.hi, p.lo + self.lo * b)
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul_f64(q1));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul_f64(q2));
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2).add(Dd::from(q3))
    }

    /// `exp(hi + lo)`, accurate to about one ulp of `exp(hi)` and with the
    /// first-order correction for `lo`.
    pub fn exp(self) -> Dd {
        let e = self.hi.exp();
        Dd::from(e).add(Dd::from(e * self.lo))
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn ge(self, o: Dd) -> bool {
        self.hi > o.hi || (self.hi == o.hi && self.lo >= o.lo)
    }
}

/// Which plausibility rule the oracle applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMode {
    /// raw deep logit >= beta * max deep logit
    Logit,
    /// deep softmax probability >= beta * max deep probability
    Prob,
}

/// Index of the first maximal entry.
pub fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Plausible-set membership by set comprehension over the defining predicate,
/// plus the forced deep argmax.
pub fn oracle_plausible(deep: &[f64], beta: f64, mode: OracleMode) -> Vec<bool> {
    let top = first_argmax(deep);
    let max = deep[top];
    (0..deep.len())
        .map(|i| {
            i == top
                || match mode {
                    OracleMode::Logit => deep[i] >= beta * max,
                    // p_i / p_max = exp(d_i - max)
                    OracleMode::Prob => (deep[i] - max).exp() >= beta,
                }
        })
        .collect()
}

/// Dense double-double evaluation of the full contrastive step:
/// softmax over `(1 + alpha) * deep - alpha * shallow`, restricted to the
/// plausible set (`None` means no restriction).
pub fn oracle_step(deep: &[f64], shallow: &[f64], alpha: f64, plausible: Option<&[bool]>) -> Vec<f64> {
    assert_eq!(deep.len(), shallow.len());
    let scale = two_sum(1.0, alpha);
    let z: Vec<Option<Dd>> = (0..deep.len())
        .map(|i| {
            if plausible.is_some_and(|m| !m[i]) {
                return None;
            }
            Some(scale.mul_f64(deep[i]).sub(two_prod(alpha, shallow[i])))
        })
        .collect();
    let max = z
        .iter()
        .flatten()
        .map(|d| d.to_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let m = Dd::from(max);
    let e: Vec<Dd> = z
        .iter()
        .map(|zi| zi.map_or(Dd::ZERO, |zi| zi.sub(m).exp()))
        .collect();
    let total = e.iter().fold(Dd::ZERO, |acc, x| acc.add(*x));
    e.iter().map(|x| x.div(total).to_f64()).collect()
}

/// Softmax of a single vector, double-double.
pub fn oracle_softmax(logits: &[f64]) -> Vec<f64> {
    oracle_step(logits, logits, 0.0, None)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Logits uniform in `[-scale, scale]`.
pub fn random_logits(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..=scale)).collect()
}

/// Total-variation distance between two distributions on the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Normalizes counts to frequencies.
pub fn frequencies(counts: &[usize]) -> Vec<f64> {
    let n: usize = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / n as f64).collect()
}
