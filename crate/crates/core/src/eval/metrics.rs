//! Yes/no confusion counts and their aggregation across runs. `yes` is the
//! positive class.

use serde::{Deserialize, Serialize};

use crate::provider::YesNo;

/// What a decoded answer was mapped to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prediction {
    Answer(YesNo),
    Unparsable,
}

/// Counts for one run. Unparsable answers are scored as wrong; the ones on
/// positive samples also count against recall.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub unparsable: usize,
    /// Subset of `unparsable` whose label was `yes`.
    pub unparsable_yes: usize,
}

impl Confusion {
    pub fn record(&mut self, label: YesNo, prediction: Prediction) {
        match (label, prediction) {
            (YesNo::Yes, Prediction::Answer(YesNo::Yes)) => self.tp += 1,
            (YesNo::No, Prediction::Answer(YesNo::Yes)) => self.fp += 1,
            (YesNo::No, Prediction::Answer(YesNo::No)) => self.tn += 1,
            (YesNo::Yes, Prediction::Answer(YesNo::No)) => self.fn_ += 1,
            (label, Prediction::Unparsable) => {
                self.unparsable += 1;
                if label == YesNo::Yes {
                    self.unparsable_yes += 1;
                }
            }
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (YesNo, Prediction)>) -> Self {
        let mut c = Self::default();
        for (label, pred) in pairs {
            c.record(label, pred);
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_ + self.unparsable
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_ + self.unparsable_yes)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    let den = precision + recall;
    if den > 0.0 {
        2.0 * precision * recall / den
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }

    /// Percentages with two decimals, e.g. `85.77 ± 0.25`.
    pub fn percent(&self) -> String {
        format!("{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub runs: usize,
    pub metrics: Metrics,
    pub counts: Vec<Confusion>,
}

impl MetricsReport {
    pub fn from_runs(counts: Vec<Confusion>) -> Self {
        let col = |f: fn(&Confusion) -> f64| MeanStd::of(&counts.iter().map(f).collect::<Vec<_>>());
        let metrics = Metrics {
            accuracy: col(Confusion::accuracy),
            precision: col(Confusion::precision),
            recall: col(Confusion::recall),
            f1: col(Confusion::f1),
        };
        Self {
            runs: counts.len(),
            metrics,
            counts,
        }
    }

    pub fn unparsable(&self) -> usize {
        self.counts.iter().map(|c| c.unparsable).sum()
    }
}
