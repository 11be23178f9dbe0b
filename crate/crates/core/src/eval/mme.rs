//! Per-subset scoring for paired-question image benchmarks.
//!
//! Each image carries exactly two yes/no questions. The scoring rule is
//! pluggable; [`DefaultMmeScorer`] adds question-level accuracy and the
//! fraction of images with both questions right, each scaled to 100.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmeAnswer {
    pub subset: String,
    pub image_id: String,
    pub correct: bool,
}

pub trait MmeScorer {
    /// Scores one subset given per-image `[first, second]` correctness.
    fn score(&self, images: &[[bool; 2]]) -> f64;
}

/// `100 * accuracy + 100 * accuracy_plus`, in `[0, 200]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct DefaultMmeScorer;

impl MmeScorer for DefaultMmeScorer {
    fn score(&self, images: &[[bool; 2]]) -> f64 {
        if images.is_empty() {
            return 0.0;
        }
        let questions = 2 * images.len();
        let correct: usize = images.iter().map(|q| q.iter().filter(|&&c| c).count()).sum();
        let both = images.iter().filter(|q| q[0] && q[1]).count();
        100.0 * correct as f64 / questions as f64 + 100.0 * both as f64 / images.len() as f64
    }
}

/// Groups answers by subset and image, then scores each subset.
pub fn mme_style_score(answers: &[MmeAnswer], scorer: &dyn MmeScorer) -> Result<BTreeMap<String, f64>> {
    let mut grouped: BTreeMap<&str, BTreeMap<&str, Vec<bool>>> = BTreeMap::new();
    for a in answers {
        grouped
            .entry(a.subset.as_str())
            .or_default()
            .entry(a.image_id.as_str())
            .or_default()
            .push(a.correct);
    }
    grouped
        .into_iter()
        .map(|(subset, images)| {
            let pairs = images
                .into_iter()
                .map(|(image, qs)| match qs.as_slice() {
                    &[a, b] => Ok([a, b]),
                    _ => Err(Error::validation(format!(
                        "image {image:?} in subset {subset:?} has {} questions, expected 2",
                        qs.len()
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((subset.to_string(), scorer.score(&pairs)))
        })
        .collect()
}
