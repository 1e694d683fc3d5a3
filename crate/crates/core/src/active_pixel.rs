//! Membrane-biased active learning for pixel classification.

use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{mix_seed, top_unlabeled, BatchRecord, LabelSource, LoopStatus, QueryBatch, QueryItem};
use crate::error::{Error, Result};
use crate::features::{build_affinity_graph, AffinityGraph, FeatureBank};
use crate::forest::{self, EnsembleModel, ForestConfig};
use crate::grid::{ClassLabel, CLASS_COUNT, MEMBRANE};
use crate::labelprop::{argmax, normalized_smoother, propagate, LabelDistributionMatrix, Smoother, SolveStatus, SolverConfig};

const CHECKPOINT_VERSION: u32 = 1;

/// Margin of a class-probability vector relative to class `m`: only the
/// argmax entry is kept, holding `p[m]` when the argmax is `m` and
/// `p[a] - p[m]` otherwise.
pub fn margin_wrt_membrane(p: &[f64], m: usize) -> Vec<f64> {
    let a = argmax(p);
    let mut out = vec![0.0; p.len()];
    out[a] = if a == m { p[m] } else { p[a] - p[m] };
    out
}

/// Squared distance between two margin vectors.
pub fn pixel_disagreement(g: &[f64], p: &[f64]) -> f64 {
    g.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Greedy initial training subset. Every membrane sample of the pool is
/// kept; samples of each other class are added in descending order of their
/// summed affinity to the membrane samples until the next one would push
/// that class's volume (sum of degrees) past the membrane volume.
///
/// `pool` holds `(graph node, class)`; returns selected nodes in ascending
/// order.
pub fn select_initial_subset(graph: &AffinityGraph, pool: &[(usize, usize)], m: usize) -> Result<Vec<usize>> {
    let membrane: Vec<usize> = pool.iter().filter(|p| p.1 == m).map(|p| p.0).collect();
    if membrane.is_empty() {
        return Err(Error::NoMembraneSamples);
    }
    let degrees = graph.degrees();
    let vol_m: f64 = membrane.iter().map(|&i| degrees[i]).sum();
    let mut is_membrane = vec![false; graph.n()];
    for &i in &membrane {
        is_membrane[i] = true;
    }
    let mut selected = membrane.clone();
    let mut classes: Vec<usize> = pool.iter().map(|p| p.1).filter(|&c| c != m).collect();
    classes.sort_unstable();
    classes.dedup();
    for o in classes {
        let mut candidates: Vec<(usize, f64)> = pool
            .iter()
            .filter(|p| p.1 == o)
            .map(|&(i, _)| (i, graph.neighbors(i).filter(|&(j, _)| is_membrane[j]).map(|(_, w)| w).sum()))
            .collect();
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut vol_o = 0.0;
        for (i, _) in candidates {
            if vol_o + degrees[i] > vol_m {
                break;
            }
            vol_o += degrees[i];
            selected.push(i);
        }
    }
    selected.sort_unstable();
    selected.dedup();
    Ok(selected)
}

/// `per_class` random samples of every class present in `labels`.
pub fn oracle_pool(labels: &[ClassLabel], per_class: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = Vec::new();
    for class in ClassLabel::ALL {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let take = per_class.min(members.len());
        let mut picked: Vec<usize> =
            sample_indices(&mut rng, members.len(), take).into_iter().map(|j| members[j]).collect();
        picked.sort_unstable();
        pool.extend(picked.into_iter().map(|i| (i, class.index())));
    }
    pool
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PixelLoopConfig {
    pub batch_size: usize,
    /// Number of query batches.
    pub budget: usize,
    /// Random voxels in the affinity graph (the labeled pool is added).
    pub subsample_size: usize,
    pub density: f64,
    pub similarity_floor: f64,
    pub tree_count: usize,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for PixelLoopConfig {
    fn default() -> Self {
        PixelLoopConfig {
            batch_size: 10,
            budget: 800,
            subsample_size: 2000,
            density: 0.005,
            similarity_floor: 0.0,
            tree_count: forest::PIXEL_TREES,
            solver: SolverConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrushReport {
    pub accepted: usize,
    /// Positions in the submitted list that were refused.
    pub rejected: Vec<usize>,
    pub pool_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PixelCheckpoint {
    v: u32,
    cfg: PixelLoopConfig,
    status: LoopStatus,
    pool: Vec<(usize, usize)>,
    subsample: Vec<usize>,
    initial: Vec<usize>,
    queried: Vec<(usize, usize)>,
    pending: Option<QueryBatch>,
    history: Vec<BatchRecord>,
    solve: Option<(SolveStatus, usize)>,
}

/// State of one pixel labeling session.
#[derive(Debug, Clone)]
pub struct PixelSession {
    cfg: PixelLoopConfig,
    features: Arc<FeatureBank>,
    status: LoopStatus,
    pool: Vec<(usize, usize)>,
    /// Graph node to voxel, ascending.
    subsample: Vec<usize>,
    graph: Option<AffinityGraph>,
    smoother: Option<Smoother>,
    /// Voxels chosen by the greedy initial selection.
    initial: Vec<usize>,
    queried: Vec<(usize, usize)>,
    propagation: Option<LabelDistributionMatrix>,
    model: Option<EnsembleModel>,
    pending: Option<QueryBatch>,
    history: Vec<BatchRecord>,
    solve: Option<(SolveStatus, usize)>,
}

impl PixelSession {
    pub fn new(features: Arc<FeatureBank>, cfg: PixelLoopConfig) -> Result<Self> {
        if cfg.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        cfg.solver.validate()?;
        Ok(PixelSession {
            cfg,
            features,
            status: LoopStatus::AwaitingBrush,
            pool: Vec::new(),
            subsample: Vec::new(),
            graph: None,
            smoother: None,
            initial: Vec::new(),
            queried: Vec::new(),
            propagation: None,
            model: None,
            pending: None,
            history: Vec::new(),
            solve: None,
        })
    }

    pub fn config(&self) -> &PixelLoopConfig {
        &self.cfg
    }

    pub fn status(&self) -> LoopStatus {
        self.status
    }

    pub fn pool(&self) -> &[(usize, usize)] {
        &self.pool
    }

    pub fn subsample(&self) -> &[usize] {
        &self.subsample
    }

    pub fn graph(&self) -> Option<&AffinityGraph> {
        self.graph.as_ref()
    }

    pub fn initial_selection(&self) -> &[usize] {
        &self.initial
    }

    pub fn queried(&self) -> &[(usize, usize)] {
        &self.queried
    }

    pub fn pending(&self) -> Option<&QueryBatch> {
        self.pending.as_ref()
    }

    pub fn history(&self) -> &[BatchRecord] {
        &self.history
    }

    pub fn model(&self) -> Option<&EnsembleModel> {
        self.model.as_ref()
    }

    pub fn propagation(&self) -> Option<&LabelDistributionMatrix> {
        self.propagation.as_ref()
    }

    pub fn last_solve(&self) -> Option<(SolveStatus, usize)> {
        self.solve
    }

    pub fn batches_done(&self) -> usize {
        self.history.len()
    }

    pub fn budget_remaining(&self) -> usize {
        self.cfg.budget.saturating_sub(self.history.len())
    }

    /// Voxels and classes the classifier is trained on: the greedy
    /// selection plus every answered query.
    pub fn training_set(&self) -> Vec<(usize, usize)> {
        let class_of = |v: usize| self.pool.iter().find(|p| p.0 == v).map(|p| p.1).expect("selected from pool");
        let mut out: Vec<(usize, usize)> = self.initial.iter().map(|&v| (v, class_of(v))).collect();
        out.extend_from_slice(&self.queried);
        out
    }

    /// Labels known to label propagation: the whole pool plus queries.
    pub fn known_set(&self) -> Vec<(usize, usize)> {
        let mut out = self.pool.clone();
        out.extend_from_slice(&self.queried);
        out
    }

    /// Adds `(voxel, class)` strokes to the initial pool. Strokes outside
    /// the volume or with an unknown class are refused individually; a
    /// repeated voxel takes the newest class.
    pub fn add_brush(&mut self, strokes: &[(usize, usize)]) -> Result<BrushReport> {
        if self.status != LoopStatus::AwaitingBrush {
            return Err(Error::InvalidArgument("brushing is closed once the loop has started".into()));
        }
        let n = self.features.n();
        let mut rejected = Vec::new();
        for (pos, &(voxel, class)) in strokes.iter().enumerate() {
            if voxel >= n || class >= CLASS_COUNT {
                rejected.push(pos);
                continue;
            }
            match self.pool.iter_mut().find(|p| p.0 == voxel) {
                Some(entry) => entry.1 = class,
                None => self.pool.push((voxel, class)),
            }
        }
        Ok(BrushReport { accepted: strokes.len() - rejected.len(), rejected, pool_size: self.pool.len() })
    }

    /// Closes brushing: builds the affinity graph, selects the initial
    /// subset, trains, propagates and issues the first batch.
    pub fn start(&mut self) -> Result<()> {
        if self.status != LoopStatus::AwaitingBrush {
            return Err(Error::InvalidArgument("session already started".into()));
        }
        if !self.pool.iter().any(|p| p.1 == MEMBRANE) {
            return Err(Error::NoMembraneSamples);
        }
        let n = self.features.n();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed, 0x5eb5));
        let mut subsample: Vec<usize> = sample_indices(&mut rng, n, self.cfg.subsample_size.min(n)).into_vec();
        subsample.extend(self.pool.iter().map(|p| p.0));
        subsample.sort_unstable();
        subsample.dedup();
        self.subsample = subsample;
        self.build_graph()?;
        let graph = self.graph.as_ref().expect("graph built");
        let pool_nodes: Vec<(usize, usize)> = self.pool.iter().map(|&(v, c)| (self.node_of(v), c)).collect();
        self.initial =
            select_initial_subset(graph, &pool_nodes, MEMBRANE)?.into_iter().map(|i| self.subsample[i]).collect();
        self.status = LoopStatus::Training;
        self.refresh()
    }

    fn build_graph(&mut self) -> Result<()> {
        let bank = self.features.select(&self.subsample);
        let graph = build_affinity_graph(&bank, self.cfg.density, self.cfg.similarity_floor)?;
        self.smoother = Some(normalized_smoother(&graph, self.cfg.solver.epsilon)?);
        self.graph = Some(graph);
        Ok(())
    }

    fn node_of(&self, voxel: usize) -> usize {
        self.subsample.binary_search(&voxel).expect("voxel in subsample")
    }

    /// Retrains both predictors and issues the next batch (or finishes).
    fn refresh(&mut self) -> Result<()> {
        let training = self.training_set();
        let voxels: Vec<usize> = training.iter().map(|t| t.0).collect();
        let labels: Vec<usize> = training.iter().map(|t| t.1).collect();
        let forest_cfg = ForestConfig::new(self.cfg.tree_count, mix_seed(self.cfg.seed, self.history.len() as u64));
        let model = forest::train(&self.features.select(&voxels), &labels, CLASS_COUNT, &forest_cfg)?;

        let known: Vec<(usize, usize)> = self.known_set().iter().map(|&(v, c)| (self.node_of(v), c)).collect();
        let init = if self.cfg.solver.warm_start { self.propagation.as_ref() } else { None };
        let smoother = self.smoother.as_ref().expect("graph built");
        let solved = propagate(smoother, &known, CLASS_COUNT, init, &self.cfg.solver)?;
        if solved.status == SolveStatus::MaxIterations {
            log::info!("pixel propagation hit the iteration cap (residual {:.2e})", solved.residual);
        }
        self.solve = Some((solved.status, solved.iterations));
        let f = solved.labels;

        self.pending = None;
        if self.history.len() >= self.cfg.budget {
            self.status = LoopStatus::Done;
        } else {
            let mut labeled = vec![false; self.subsample.len()];
            for &(node, _) in &known {
                labeled[node] = true;
            }
            let rows: Vec<(f64, usize)> = (0..self.subsample.len())
                .into_par_iter()
                .map(|node| {
                    if labeled[node] {
                        return (f64::NEG_INFINITY, 0);
                    }
                    let p = model.predict_row(self.features.row(self.subsample[node]));
                    let g = f.row(node);
                    let delta =
                        pixel_disagreement(&margin_wrt_membrane(g, MEMBRANE), &margin_wrt_membrane(&p, MEMBRANE));
                    (delta, argmax(&p))
                })
                .collect();
            let scores: Vec<f64> = rows.iter().map(|r| r.0).collect();
            match top_unlabeled(&scores, &labeled, self.cfg.batch_size) {
                Ok(nodes) => {
                    let items = nodes
                        .into_iter()
                        .map(|node| QueryItem {
                            sample: self.subsample[node],
                            node,
                            score: scores[node],
                            classifier: rows[node].1,
                            propagation: argmax(f.row(node)),
                        })
                        .collect();
                    self.pending = Some(QueryBatch { number: self.history.len(), items });
                    self.status = LoopStatus::AwaitingLabels;
                }
                Err(Error::PoolExhausted { .. }) => {
                    log::info!("pixel subsample exhausted after {} batches", self.history.len());
                    self.status = LoopStatus::Done;
                }
                Err(e) => return Err(e),
            }
        }
        self.model = Some(model);
        self.propagation = Some(f);
        Ok(())
    }

    /// Ingests answers `(voxel, class)` for the pending batch `batch`.
    pub fn submit_labels(&mut self, batch: usize, answers: &[(usize, usize)]) -> Result<BatchRecord> {
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
        let classes = pending.match_answers(answers, CLASS_COUNT)?;
        let samples = pending.samples();
        let record = BatchRecord::from_answers(pending, &classes, self.training_set().len() + classes.len());
        self.queried.extend(samples.into_iter().zip(classes));
        self.history.push(record.clone());
        self.status = LoopStatus::Training;
        self.refresh()?;
        Ok(record)
    }

    /// Answers the pending batch from `source`.
    pub fn answer_pending(&mut self, source: &mut dyn LabelSource) -> Result<BatchRecord> {
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

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let state = PixelCheckpoint {
            v: CHECKPOINT_VERSION,
            cfg: self.cfg,
            status: self.status,
            pool: self.pool.clone(),
            subsample: self.subsample.clone(),
            initial: self.initial.clone(),
            queried: self.queried.clone(),
            pending: self.pending.clone(),
            history: self.history.clone(),
            solve: self.solve,
        };
        if let Some(f) = &self.propagation {
            crate::io::save_f64(&dir.join("propagation.f64"), f.data())?;
        }
        if let Some(model) = &self.model {
            model.save(&dir.join("model.bin"))?;
        }
        // written last so a torn checkpoint is never picked up as complete
        crate::io::write_json(&dir.join("session.json"), &state)
    }

    pub fn load_checkpoint(dir: &Path, features: Arc<FeatureBank>) -> Result<Self> {
        let state: PixelCheckpoint = crate::io::read_json(&dir.join("session.json"))?;
        if state.v != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported checkpoint version {}", state.v)));
        }
        let mut session = PixelSession::new(features, state.cfg)?;
        session.status = state.status;
        session.pool = state.pool;
        session.subsample = state.subsample;
        session.initial = state.initial;
        session.queried = state.queried;
        session.pending = state.pending;
        session.history = state.history;
        session.solve = state.solve;
        if session.status == LoopStatus::AwaitingBrush {
            return Ok(session);
        }
        if session.subsample.iter().any(|&v| v >= session.features.n()) {
            return Err(Error::DimensionMismatch("checkpoint does not match the feature bank".into()));
        }
        session.build_graph()?;
        let n = session.subsample.len();
        let data = crate::io::load_f64(&dir.join("propagation.f64"))?;
        let mut known = vec![None; n];
        for (v, c) in session.known_set() {
            known[session.node_of(v)] = Some(c);
        }
        session.propagation = Some(LabelDistributionMatrix::from_parts(n, CLASS_COUNT, data, known)?);
        session.model = Some(EnsembleModel::load(&dir.join("model.bin"))?);
        if session.status == LoopStatus::Training {
            // interrupted mid-iteration: redo it
            session.refresh()?;
        }
        Ok(session)
    }
}

/// Runs a whole session against `source` and returns it finished.
pub fn run_pixel_loop(
    features: Arc<FeatureBank>,
    pool: &[(usize, usize)],
    source: &mut dyn LabelSource,
    cfg: PixelLoopConfig,
) -> Result<PixelSession> {
    let mut session = PixelSession::new(features, cfg)?;
    let report = session.add_brush(pool)?;
    if !report.rejected.is_empty() {
        return Err(Error::InvalidArgument(format!("{} pool entries are invalid", report.rejected.len())));
    }
    session.start()?;
    while session.status() == LoopStatus::AwaitingLabels {
        session.answer_pending(source)?;
    }
    Ok(session)
}
