//! Context-aware agglomeration: cytoplasm fragments are merged in order of
//! the boundary classifier's confidence, boundaries touching mitochondria
//! are held back, and mitochondria are absorbed into the region that
//! encloses them afterwards.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::boundary::{feature_vector, MergeableStats, RegionAdjacencyGraph, TRUE_BOUNDARY};
use crate::error::{Error, Result};
use crate::forest::EnsembleModel;
use crate::grid::SegmentationMap;

pub const DEFAULT_INCLUSION_THRESHOLD: f64 = 0.5;

/// Probability that a boundary is a true boundary, from its features.
pub trait BoundaryScorer {
    fn score(&self, features: &[f64]) -> f64;
}

impl BoundaryScorer for EnsembleModel {
    fn score(&self, features: &[f64]) -> f64 {
        self.predict_row(features)[TRUE_BOUNDARY]
    }
}

impl<F: Fn(&[f64]) -> f64> BoundaryScorer for F {
    fn score(&self, features: &[f64]) -> f64 {
        self(features)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgglomerationConfig {
    pub merge_threshold: f64,
    pub inclusion_threshold: f64,
}

impl AgglomerationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("merge", self.merge_threshold), ("inclusion", self.inclusion_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} threshold {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

impl Default for AgglomerationConfig {
    fn default() -> Self {
        AgglomerationConfig { merge_threshold: 0.3, inclusion_threshold: DEFAULT_INCLUSION_THRESHOLD }
    }
}

#[derive(Debug, Clone)]
struct LiveRegion {
    size: usize,
    stats: MergeableStats,
    mito: bool,
    /// neighbor region -> boundary id
    adjacent: BTreeMap<u32, usize>,
}

#[derive(Debug, Clone)]
pub struct LiveBoundary {
    pub a: u32,
    pub b: u32,
    pub contact: usize,
    pub voxels: Vec<usize>,
    pub stats: MergeableStats,
    version: u64,
}

#[derive(PartialEq)]
struct Entry {
    score: f64,
    boundary: usize,
    version: u64,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on (score, boundary id)
    fn cmp(&self, other: &Self) -> Ordering {
        other.score.total_cmp(&self.score).then(other.boundary.cmp(&self.boundary))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub boundary: usize,
    pub score: f64,
    pub kept: u32,
    pub absorbed: u32,
}

/// Stepwise agglomeration over a region adjacency graph. Region ids are
/// those of the input over-segmentation; a merged region keeps the lower id.
pub struct Agglomerator<'a> {
    scorer: &'a dyn BoundaryScorer,
    seg: Vec<u32>,
    dims: crate::grid::Dims,
    parent: Vec<u32>,
    regions: Vec<Option<LiveRegion>>,
    boundaries: Vec<Option<LiveBoundary>>,
    heap: BinaryHeap<Entry>,
    history: Vec<MergeRecord>,
}

impl<'a> Agglomerator<'a> {
    pub fn new(rag: &RegionAdjacencyGraph, seg: &SegmentationMap, scorer: &'a dyn BoundaryScorer) -> Result<Self> {
        if seg.dims() != rag.dims() || seg.region_count() != rag.region_count() {
            return Err(Error::DimensionMismatch("segmentation does not match the region graph".into()));
        }
        let mut regions: Vec<Option<LiveRegion>> = rag
            .regions()
            .iter()
            .map(|r| Some(LiveRegion { size: r.size, stats: r.stats.clone(), mito: r.mito, adjacent: BTreeMap::new() }))
            .collect();
        let boundaries: Vec<Option<LiveBoundary>> = rag
            .boundaries()
            .iter()
            .enumerate()
            .map(|(id, b)| {
                regions[b.a as usize].as_mut().expect("live").adjacent.insert(b.b, id);
                regions[b.b as usize].as_mut().expect("live").adjacent.insert(b.a, id);
                Some(LiveBoundary {
                    a: b.a,
                    b: b.b,
                    contact: b.contact,
                    voxels: b.voxels.clone(),
                    stats: b.stats.clone(),
                    version: 0,
                })
            })
            .collect();
        let mut agg = Agglomerator {
            scorer,
            seg: seg.ids().to_vec(),
            dims: seg.dims(),
            parent: (0..rag.region_count() as u32).collect(),
            regions,
            boundaries,
            heap: BinaryHeap::new(),
            history: Vec::new(),
        };
        for id in 0..agg.boundaries.len() {
            agg.enqueue(id);
        }
        Ok(agg)
    }

    fn region(&self, r: u32) -> &LiveRegion {
        self.regions[r as usize].as_ref().expect("live region")
    }

    /// Features of a live boundary under the current merge state.
    pub fn features(&self, id: usize) -> Option<Vec<f64>> {
        let b = self.boundaries.get(id)?.as_ref()?;
        let (ra, rb) = (self.region(b.a), self.region(b.b));
        Some(feature_vector(&b.stats, b.contact, (b.a, ra.size, &ra.stats), (b.b, rb.size, &rb.stats)))
    }

    fn enqueue(&mut self, id: usize) {
        let features = self.features(id).expect("live boundary");
        let score = self.scorer.score(&features);
        let b = self.boundaries[id].as_mut().expect("live boundary");
        b.version += 1;
        self.heap.push(Entry { score, boundary: id, version: b.version });
    }

    /// Current region id of an original region.
    pub fn find(&self, mut r: u32) -> u32 {
        while self.parent[r as usize] != r {
            r = self.parent[r as usize];
        }
        r
    }

    pub fn history(&self) -> &[MergeRecord] {
        &self.history
    }

    pub fn region_stats(&self, r: u32) -> Option<&MergeableStats> {
        self.regions.get(r as usize)?.as_ref().map(|l| &l.stats)
    }

    pub fn region_size(&self, r: u32) -> Option<usize> {
        self.regions.get(r as usize)?.as_ref().map(|l| l.size)
    }

    pub fn live_regions(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.regions.len() as u32).filter(|&r| self.regions[r as usize].is_some())
    }

    pub fn live_boundaries(&self) -> impl Iterator<Item = (usize, &LiveBoundary)> {
        self.boundaries.iter().enumerate().filter_map(|(i, b)| b.as_ref().map(|b| (i, b)))
    }

    pub fn is_mito(&self, r: u32) -> bool {
        self.region(self.find(r)).mito
    }

    /// Performs the next merge scoring below `theta`, if any. Entries that
    /// touch a mitochondria region are dropped (they are decided by
    /// absorption instead); the first entry at or above `theta` stays
    /// queued so a later call with a larger threshold continues from here.
    pub fn step(&mut self, theta: f64) -> Option<MergeRecord> {
        while let Some(top) = self.heap.peek() {
            let live = self.boundaries[top.boundary].as_ref().is_some_and(|b| b.version == top.version);
            if !live {
                self.heap.pop();
                continue;
            }
            if top.score >= theta {
                return None;
            }
            let entry = self.heap.pop().expect("peeked");
            let b = self.boundaries[entry.boundary].as_ref().expect("live");
            let (a, c) = (b.a, b.b);
            if self.region(a).mito || self.region(c).mito {
                continue;
            }
            self.merge(entry.boundary, a, c);
            let record = MergeRecord { boundary: entry.boundary, score: entry.score, kept: a, absorbed: c };
            self.history.push(record);
            return Some(record);
        }
        None
    }

    /// Merges until the lowest remaining score reaches `theta`; returns the
    /// number of merges.
    pub fn run_to(&mut self, theta: f64) -> usize {
        let mut merges = 0;
        while self.step(theta).is_some() {
            merges += 1;
        }
        merges
    }

    fn merge(&mut self, via: usize, keep: u32, gone: u32) {
        self.boundaries[via] = None;
        let absorbed = self.regions[gone as usize].take().expect("live region");
        {
            let k = self.regions[keep as usize].as_mut().expect("live region");
            k.size += absorbed.size;
            k.stats.merge(&absorbed.stats);
            k.adjacent.remove(&gone);
        }
        self.parent[gone as usize] = keep;
        for (&nbr, &bid) in &absorbed.adjacent {
            if nbr == keep {
                continue;
            }
            self.regions[nbr as usize].as_mut().expect("live region").adjacent.remove(&gone);
            let existing = self.region(keep).adjacent.get(&nbr).copied();
            match existing {
                Some(kb) => {
                    // keep..nbr and gone..nbr become one boundary
                    let moved = self.boundaries[bid].take().expect("live boundary");
                    let target = self.boundaries[kb].as_mut().expect("live boundary");
                    target.contact += moved.contact;
                    target.voxels.extend(moved.voxels);
                    target.stats.merge(&moved.stats);
                }
                None => {
                    let b = self.boundaries[bid].as_mut().expect("live boundary");
                    (b.a, b.b) = (keep.min(nbr), keep.max(nbr));
                    self.regions[keep as usize].as_mut().expect("live region").adjacent.insert(nbr, bid);
                    self.regions[nbr as usize].as_mut().expect("live region").adjacent.insert(keep, bid);
                }
            }
        }
        let touched: Vec<usize> = self.region(keep).adjacent.values().copied().collect();
        for id in touched {
            self.enqueue(id);
        }
    }

    /// Original region -> current region, without mitochondria absorption.
    pub fn region_labels(&self) -> Vec<u32> {
        (0..self.parent.len() as u32).map(|r| self.find(r)).collect()
    }

    /// Current region -> final region after absorbing each mitochondria
    /// region into the non-mitochondria neighbor holding the largest share
    /// (at least `inclusion`) of its boundary contact. Decisions are all
    /// taken against the current state.
    pub fn absorption_targets(&self, inclusion: f64) -> Vec<u32> {
        let mut target: Vec<u32> = (0..self.regions.len() as u32).collect();
        for r in self.live_regions() {
            let region = self.region(r);
            if !region.mito {
                continue;
            }
            let total: usize =
                region.adjacent.values().map(|&b| self.boundaries[b].as_ref().expect("live").contact).sum();
            if total == 0 {
                continue;
            }
            let mut best: Option<(usize, u32)> = None;
            for (&nbr, &b) in &region.adjacent {
                if self.region(nbr).mito {
                    continue;
                }
                let share = self.boundaries[b].as_ref().expect("live").contact;
                if best.is_none_or(|(s, _)| share > s) {
                    best = Some((share, nbr));
                }
            }
            if let Some((share, nbr)) = best {
                if share as f64 / total as f64 >= inclusion {
                    target[r as usize] = nbr;
                }
            }
        }
        target
    }

    fn relabel(&self, final_of: impl Fn(u32) -> u32) -> SegmentationMap {
        let labels = self.region_labels();
        let raw: Vec<u64> = self.seg.iter().map(|&r| final_of(labels[r as usize]) as u64).collect();
        SegmentationMap::from_arbitrary_ids(self.dims, &raw).expect("dims unchanged")
    }

    /// Segmentation after the merges so far.
    pub fn segmentation(&self) -> SegmentationMap {
        self.relabel(|r| r)
    }

    /// Segmentation after the merges so far plus mitochondria absorption.
    pub fn segmentation_with_absorption(&self, inclusion: f64) -> SegmentationMap {
        let target = self.absorption_targets(inclusion);
        self.relabel(|r| target[r as usize])
    }
}

/// Phase one alone: merges cytoplasm fragments below `theta`.
pub fn agglomerate_cytoplasm(
    rag: &RegionAdjacencyGraph,
    seg: &SegmentationMap,
    scorer: &dyn BoundaryScorer,
    theta: f64,
) -> Result<SegmentationMap> {
    let mut agg = Agglomerator::new(rag, seg, scorer)?;
    agg.run_to(theta);
    Ok(agg.segmentation())
}

/// Both phases.
pub fn agglomerate(
    rag: &RegionAdjacencyGraph,
    seg: &SegmentationMap,
    scorer: &dyn BoundaryScorer,
    cfg: &AgglomerationConfig,
) -> Result<SegmentationMap> {
    cfg.validate()?;
    let mut agg = Agglomerator::new(rag, seg, scorer)?;
    agg.run_to(cfg.merge_threshold);
    Ok(agg.segmentation_with_absorption(cfg.inclusion_threshold))
}

/// One segmentation per threshold from a single agglomeration run, so each
/// result coarsens the previous one. Thresholds must be ascending.
pub fn sweep_thresholds(
    rag: &RegionAdjacencyGraph,
    seg: &SegmentationMap,
    scorer: &dyn BoundaryScorer,
    thetas: &[f64],
    inclusion: f64,
) -> Result<Vec<(f64, SegmentationMap)>> {
    if thetas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("thresholds must be ascending".into()));
    }
    let mut agg = Agglomerator::new(rag, seg, scorer)?;
    let mut out = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        agg.run_to(theta);
        out.push((theta, agg.segmentation_with_absorption(inclusion)));
    }
    Ok(out)
}
