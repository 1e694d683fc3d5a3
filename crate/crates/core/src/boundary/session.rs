use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::init::init_boundary_subset;
use crate::active::{mix_seed, top_unlabeled, BatchRecord, LabelSource, LoopStatus, QueryBatch, QueryItem};
use crate::error::{Error, Result};
use crate::features::{build_affinity_graph, AffinityGraph, FeatureBank};
use crate::forest::{self, EnsembleModel, ForestConfig};
use crate::labelprop::{normalized_smoother, propagate, LabelDistributionMatrix, Smoother, SolveStatus, SolverConfig};

const CHECKPOINT_VERSION: u32 = 1;

/// Class index of a true boundary; false boundaries are 0.
pub const TRUE_BOUNDARY: usize = 1;

/// Disagreement between the classifier's and label propagation's
/// probabilities of a true boundary.
pub fn sp_disagreement(q: f64, h: f64) -> f64 {
    (q - h) * (q - h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundaryLoopConfig {
    pub batch_size: usize,
    /// Share of boundaries in the k-means initial set.
    pub init_fraction: f64,
    /// Share of boundaries labeled when the loop gives up.
    pub budget_fraction: f64,
    /// Consecutive error-free batches (both predictors) that end the loop.
    pub zero_window: usize,
    pub density: f64,
    pub similarity_floor: f64,
    pub tree_count: usize,
    /// Depth limit for the trees; unlimited grows them to purity.
    pub max_depth: Option<usize>,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for BoundaryLoopConfig {
    fn default() -> Self {
        BoundaryLoopConfig {
            batch_size: 10,
            init_fraction: 0.035,
            budget_fraction: 0.15,
            zero_window: 5,
            density: 0.005,
            similarity_floor: 0.0,
            tree_count: forest::BOUNDARY_TREES,
            max_depth: None,
            solver: SolverConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ZeroErrorWindow,
    Budget,
    /// No unlabeled boundary left to query.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BoundaryCheckpoint {
    v: u32,
    cfg: BoundaryLoopConfig,
    n: usize,
    status: LoopStatus,
    initial: Vec<usize>,
    initial_answered: bool,
    labeled: Vec<(usize, usize)>,
    pending: Option<QueryBatch>,
    history: Vec<BatchRecord>,
    stop: Option<StopReason>,
    solve: Option<(SolveStatus, usize)>,
}

/// Active training of the true/false boundary classifier. Batch 0 asks for
/// the k-means initial set (its items carry no predictions); later batches
/// are disagreement queries.
#[derive(Debug, Clone)]
pub struct BoundarySession {
    cfg: BoundaryLoopConfig,
    features: Arc<FeatureBank>,
    graph: AffinityGraph,
    smoother: Smoother,
    status: LoopStatus,
    initial: Vec<usize>,
    initial_answered: bool,
    labeled: Vec<(usize, usize)>,
    pending: Option<QueryBatch>,
    history: Vec<BatchRecord>,
    model: Option<EnsembleModel>,
    propagation: Option<LabelDistributionMatrix>,
    stop: Option<StopReason>,
    solve: Option<(SolveStatus, usize)>,
}

impl BoundarySession {
    /// Builds the boundary affinity graph, runs the k-means initialisation
    /// and issues batch 0.
    pub fn new(features: Arc<FeatureBank>, cfg: BoundaryLoopConfig) -> Result<Self> {
        let initial = init_boundary_subset(&features, cfg.init_fraction, cfg.seed)?;
        Self::with_initial(features, initial, cfg)
    }

    /// Like [`BoundarySession::new`] with a caller-chosen initial set.
    pub fn with_initial(features: Arc<FeatureBank>, mut initial: Vec<usize>, cfg: BoundaryLoopConfig) -> Result<Self> {
        initial.sort_unstable();
        initial.dedup();
        if initial.is_empty() || initial.iter().any(|&b| b >= features.n()) {
            return Err(Error::InvalidArgument("initial set must be non-empty and within range".into()));
        }
        let mut session = Self::bare(features, cfg)?;
        session.initial = initial;
        let items = session
            .initial
            .iter()
            .map(|&b| QueryItem { sample: b, node: b, score: 0.0, classifier: 0, propagation: 0 })
            .collect();
        session.pending = Some(QueryBatch { number: 0, items });
        session.status = LoopStatus::AwaitingLabels;
        Ok(session)
    }

    fn bare(features: Arc<FeatureBank>, cfg: BoundaryLoopConfig) -> Result<Self> {
        if cfg.batch_size == 0 || cfg.zero_window == 0 {
            return Err(Error::InvalidArgument("batch size and zero-error window must be positive".into()));
        }
        if !(cfg.budget_fraction > 0.0 && cfg.budget_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!("budget fraction {} outside (0, 1]", cfg.budget_fraction)));
        }
        cfg.solver.validate()?;
        let graph = build_affinity_graph(&features, cfg.density, cfg.similarity_floor)?;
        let smoother = normalized_smoother(&graph, cfg.solver.epsilon)?;
        Ok(BoundarySession {
            cfg,
            features,
            graph,
            smoother,
            status: LoopStatus::AwaitingLabels,
            initial: Vec::new(),
            initial_answered: false,
            labeled: Vec::new(),
            pending: None,
            history: Vec::new(),
            model: None,
            propagation: None,
            stop: None,
            solve: None,
        })
    }

    pub fn config(&self) -> &BoundaryLoopConfig {
        &self.cfg
    }

    pub fn status(&self) -> LoopStatus {
        self.status
    }

    pub fn boundary_count(&self) -> usize {
        self.features.n()
    }

    pub fn graph(&self) -> &AffinityGraph {
        &self.graph
    }

    pub fn initial_selection(&self) -> &[usize] {
        &self.initial
    }

    /// `(boundary, class)` pairs answered so far.
    pub fn labeled(&self) -> &[(usize, usize)] {
        &self.labeled
    }

    pub fn pending(&self) -> Option<&QueryBatch> {
        self.pending.as_ref()
    }

    /// Query batches only; the initial set is not recorded here.
    pub fn history(&self) -> &[BatchRecord] {
        &self.history
    }

    pub fn model(&self) -> Option<&EnsembleModel> {
        self.model.as_ref()
    }

    pub fn propagation(&self) -> Option<&LabelDistributionMatrix> {
        self.propagation.as_ref()
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn last_solve(&self) -> Option<(SolveStatus, usize)> {
        self.solve
    }

    /// Total labels at which the loop stops.
    pub fn budget(&self) -> usize {
        (self.cfg.budget_fraction * self.features.n() as f64).round() as usize
    }

    pub fn budget_remaining(&self) -> usize {
        self.budget().saturating_sub(self.labeled.len())
    }

    /// Current error-free streak of both predictors, in batches.
    pub fn zero_error_streak(&self) -> usize {
        self.history
            .iter()
            .rev()
            .take_while(|r| r.classifier_errors == 0 && r.propagation_errors == 0)
            .count()
    }

    /// Classifier probability of a true boundary for every boundary.
    pub fn predict_true(&self) -> Option<Vec<f64>> {
        let model = self.model.as_ref()?;
        Some(
            (0..self.features.n())
                .into_par_iter()
                .map(|b| model.predict_row(self.features.row(b))[TRUE_BOUNDARY])
                .collect(),
        )
    }

    /// Ingests `(boundary, class)` answers for the pending batch.
    pub fn submit_labels(&mut self, batch: usize, answers: &[(usize, usize)]) -> Result<Option<BatchRecord>> {
        let pending = match (&self.pending, self.status) {
            (Some(p), LoopStatus::AwaitingLabels) => p,
            _ => return Err(Error::InvalidArgument("no batch is awaiting labels".into())),
        };
        if pending.number != batch {
            return Err(Error::InvalidArgument(format!(
                "batch {batch} is not the pending batch {}",
                pending.number
            )));
        }
        let classes = pending.match_answers(answers, 2)?;
        let samples = pending.samples();
        let record = if self.initial_answered {
            let r = BatchRecord::from_answers(pending, &classes, self.labeled.len() + classes.len());
            self.history.push(r.clone());
            Some(r)
        } else {
            self.initial_answered = true;
            None
        };
        self.labeled.extend(samples.into_iter().zip(classes));
        self.status = LoopStatus::Training;
        self.refresh()?;
        Ok(record)
    }

    pub fn answer_pending(&mut self, source: &mut dyn LabelSource) -> Result<Option<BatchRecord>> {
        let pending = self.pending.as_ref().ok_or_else(|| Error::InvalidArgument("no pending batch".into()))?;
        let samples = pending.samples();
        let number = pending.number;
        let classes = source.labels(&samples)?;
        if classes.len() != samples.len() {
            return Err(Error::LabelSource(format!("{} answers for {} queries", classes.len(), samples.len())));
        }
        let answers: Vec<(usize, usize)> = samples.into_iter().zip(classes).collect();
        self.submit_labels(number, &answers)
    }

    fn refresh(&mut self) -> Result<()> {
        let ids: Vec<usize> = self.labeled.iter().map(|l| l.0).collect();
        let classes: Vec<usize> = self.labeled.iter().map(|l| l.1).collect();
        let forest_cfg = ForestConfig {
            max_depth: self.cfg.max_depth,
            ..ForestConfig::new(self.cfg.tree_count, mix_seed(self.cfg.seed, self.history.len() as u64))
        };
        let model = forest::train(&self.features.select(&ids), &classes, 2, &forest_cfg)?;

        let init = if self.cfg.solver.warm_start { self.propagation.as_ref() } else { None };
        let solved = propagate(&self.smoother, &self.labeled, 2, init, &self.cfg.solver)?;
        if solved.status == SolveStatus::MaxIterations {
            log::info!("boundary propagation hit the iteration cap (residual {:.2e})", solved.residual);
        }
        self.solve = Some((solved.status, solved.iterations));
        let h = solved.labels;

        self.pending = None;
        let budget = self.budget();
        self.stop = if self.history.len() >= self.cfg.zero_window && self.zero_error_streak() >= self.cfg.zero_window {
            Some(StopReason::ZeroErrorWindow)
        } else if self.labeled.len() >= budget {
            Some(StopReason::Budget)
        } else {
            None
        };
        if self.stop.is_none() {
            let n = self.features.n();
            let mut known = vec![false; n];
            for &(b, _) in &self.labeled {
                known[b] = true;
            }
            let q: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|b| if known[b] { 0.0 } else { model.predict_row(self.features.row(b))[TRUE_BOUNDARY] })
                .collect();
            let scores: Vec<f64> = (0..n)
                .map(|b| if known[b] { f64::NEG_INFINITY } else { sp_disagreement(q[b], h.row(b)[TRUE_BOUNDARY]) })
                .collect();
            let size = self.cfg.batch_size.min(budget - self.labeled.len());
            match top_unlabeled(&scores, &known, size) {
                Ok(picked) => {
                    let items = picked
                        .into_iter()
                        .map(|b| QueryItem {
                            sample: b,
                            node: b,
                            score: scores[b],
                            classifier: (q[b] > 0.5) as usize,
                            propagation: (h.row(b)[TRUE_BOUNDARY] > 0.5) as usize,
                        })
                        .collect();
                    self.pending = Some(QueryBatch { number: self.history.len() + 1, items });
                }
                Err(Error::PoolExhausted { .. }) => self.stop = Some(StopReason::Exhausted),
                Err(e) => return Err(e),
            }
        }
        self.status = if self.stop.is_some() { LoopStatus::Done } else { LoopStatus::AwaitingLabels };
        self.model = Some(model);
        self.propagation = Some(h);
        Ok(())
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let state = BoundaryCheckpoint {
            v: CHECKPOINT_VERSION,
            cfg: self.cfg,
            n: self.features.n(),
            status: self.status,
            initial: self.initial.clone(),
            initial_answered: self.initial_answered,
            labeled: self.labeled.clone(),
            pending: self.pending.clone(),
            history: self.history.clone(),
            stop: self.stop,
            solve: self.solve,
        };
        if let Some(h) = &self.propagation {
            crate::io::save_f64(&dir.join("propagation.f64"), h.data())?;
        }
        if let Some(model) = &self.model {
            model.save(&dir.join("model.bin"))?;
        }
        crate::io::write_json(&dir.join("session.json"), &state)
    }

    pub fn load_checkpoint(dir: &Path, features: Arc<FeatureBank>) -> Result<Self> {
        let state: BoundaryCheckpoint = crate::io::read_json(&dir.join("session.json"))?;
        if state.v != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported checkpoint version {}", state.v)));
        }
        if state.n != features.n() {
            return Err(Error::DimensionMismatch(format!(
                "checkpoint has {} boundaries, features have {}",
                state.n,
                features.n()
            )));
        }
        let mut s = Self::bare(features, state.cfg)?;
        s.status = state.status;
        s.initial = state.initial;
        s.initial_answered = state.initial_answered;
        s.labeled = state.labeled;
        s.pending = state.pending;
        s.history = state.history;
        s.stop = state.stop;
        s.solve = state.solve;
        if s.initial_answered {
            let n = s.features.n();
            let data = crate::io::load_f64(&dir.join("propagation.f64"))?;
            let mut known = vec![None; n];
            for &(b, c) in &s.labeled {
                known[b] = Some(c);
            }
            s.propagation = Some(LabelDistributionMatrix::from_parts(n, 2, data, known)?);
            s.model = Some(EnsembleModel::load(&dir.join("model.bin"))?);
        }
        if s.status == LoopStatus::Training {
            s.refresh()?;
        }
        Ok(s)
    }
}

/// Runs the boundary loop against `source` until it stops.
pub fn run_boundary_loop(
    features: Arc<FeatureBank>,
    source: &mut dyn LabelSource,
    cfg: BoundaryLoopConfig,
) -> Result<BoundarySession> {
    let mut session = BoundarySession::new(features, cfg)?;
    while session.status() == LoopStatus::AwaitingLabels {
        session.answer_pending(source)?;
    }
    Ok(session)
}
