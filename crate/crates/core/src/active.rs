//! Pieces shared by the pixel and boundary query loops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where query answers come from: a person behind the session service, or
/// groundtruth in oracle mode.
pub trait LabelSource {
    /// One class index per requested sample id.
    fn labels(&mut self, samples: &[usize]) -> Result<Vec<usize>>;
}

/// Answers from a dense per-sample label vector.
#[derive(Debug, Clone)]
pub struct GroundTruthOracle {
    labels: Vec<usize>,
}

impl GroundTruthOracle {
    pub fn new(labels: Vec<usize>) -> Self {
        GroundTruthOracle { labels }
    }
}

impl LabelSource for GroundTruthOracle {
    fn labels(&mut self, samples: &[usize]) -> Result<Vec<usize>> {
        samples
            .iter()
            .map(|&s| {
                self.labels
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::LabelSource(format!("no groundtruth for sample {s}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStatus {
    /// Pixel sessions only: collecting the initial labeled pool.
    AwaitingBrush,
    AwaitingLabels,
    Training,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryItem {
    /// Sample id: voxel index for pixels, boundary id for boundaries.
    pub sample: usize,
    /// Position in the affinity graph.
    pub node: usize,
    pub score: f64,
    /// Classifier and propagation predictions when the batch was issued.
    pub classifier: usize,
    pub propagation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBatch {
    pub number: usize,
    pub items: Vec<QueryItem>,
}

impl QueryBatch {
    pub fn samples(&self) -> Vec<usize> {
        self.items.iter().map(|q| q.sample).collect()
    }

    /// Reorders `(sample, class)` answers to batch order, requiring exact
    /// coverage.
    pub fn match_answers(&self, answers: &[(usize, usize)], k: usize) -> Result<Vec<usize>> {
        if answers.len() != self.items.len() {
            return Err(Error::InvalidArgument(format!(
                "batch {} has {} queries, got {} labels",
                self.number,
                self.items.len(),
                answers.len()
            )));
        }
        self.items
            .iter()
            .map(|q| {
                let hits: Vec<usize> =
                    answers.iter().filter(|(s, _)| *s == q.sample).map(|&(_, c)| c).collect();
                match hits.as_slice() {
                    [c] if *c < k => Ok(*c),
                    [c] => Err(Error::InvalidArgument(format!("class {c} outside {k} classes"))),
                    [] => Err(Error::InvalidArgument(format!("missing label for sample {}", q.sample))),
                    _ => Err(Error::InvalidArgument(format!("sample {} labeled twice", q.sample))),
                }
            })
            .collect()
    }
}

/// Per-batch query error of both predictors, measured on the answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch: usize,
    pub size: usize,
    pub classifier_errors: usize,
    pub propagation_errors: usize,
    /// Labeled samples after ingesting this batch.
    pub labeled: usize,
}

impl BatchRecord {
    pub fn from_answers(batch: &QueryBatch, answers: &[usize], labeled: usize) -> Self {
        let classifier_errors = batch.items.iter().zip(answers).filter(|(q, &a)| q.classifier != a).count();
        let propagation_errors = batch.items.iter().zip(answers).filter(|(q, &a)| q.propagation != a).count();
        BatchRecord { batch: batch.number, size: answers.len(), classifier_errors, propagation_errors, labeled }
    }
}

/// The `batch` highest-scoring unlabeled nodes, ties to the lower index,
/// returned in descending score order.
pub fn top_unlabeled(scores: &[f64], labeled: &[bool], batch: usize) -> Result<Vec<usize>> {
    let mut free: Vec<usize> = (0..scores.len()).filter(|&i| !labeled[i]).collect();
    if free.len() < batch {
        return Err(Error::PoolExhausted { needed: batch, available: free.len() });
    }
    free.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    free.truncate(batch);
    Ok(free)
}

/// Deterministic per-iteration seed.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
