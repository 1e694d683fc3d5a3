//! Seeded watershed over-segmentation of the membrane channel.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dims, ProbabilityField, SegmentationMap, MEMBRANE};

pub const DEFAULT_SEED_THRESHOLD: f64 = 0.01;
pub const DEFAULT_MIN_SEED_SIZE: usize = 3;

/// Which low-membrane components become seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedRule {
    /// Components larger than `min_size` voxels.
    LargerThan,
    /// Every component, including single voxels.
    KeepAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WatershedConfig {
    pub threshold: f64,
    pub min_size: usize,
    pub rule: SeedRule,
}

impl Default for WatershedConfig {
    fn default() -> Self {
        WatershedConfig { threshold: DEFAULT_SEED_THRESHOLD, min_size: DEFAULT_MIN_SEED_SIZE, rule: SeedRule::LargerThan }
    }
}

/// Seeds from the membrane channel, then the flood.
pub fn watershed(field: &ProbabilityField, cfg: &WatershedConfig) -> Result<(SeedMask, SegmentationMap)> {
    let seeds = extract_seeds(field, MEMBRANE, cfg.threshold, cfg.min_size, cfg.rule)?;
    let seg = seeded_watershed(field, MEMBRANE, &seeds)?;
    Ok((seeds, seg))
}

/// Per-voxel seed id: 0 for none, `1..=seed_count` otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedMask {
    dims: Dims,
    ids: Vec<u32>,
    seed_count: usize,
}

impl SeedMask {
    /// Wraps explicit ids; every id in `1..=max` must occur.
    pub fn from_ids(dims: Dims, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!("{} seed ids for {} voxels", ids.len(), dims.len())));
        }
        let count = ids.iter().copied().max().unwrap_or(0) as usize;
        let mut seen = vec![false; count + 1];
        for &id in &ids {
            seen[id as usize] = true;
        }
        if let Some(gap) = (1..=count).find(|&s| !seen[s]) {
            return Err(Error::InvalidArgument(format!("seed id {gap} is unused")));
        }
        Ok(SeedMask { dims, ids, seed_count: count })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn seed_count(&self) -> usize {
        self.seed_count
    }
}

/// Face-connected components of `{p^m < threshold}`, filtered by `rule`,
/// numbered in scan order.
pub fn extract_seeds(
    field: &ProbabilityField,
    m: usize,
    threshold: f64,
    min_size: usize,
    rule: SeedRule,
) -> Result<SeedMask> {
    let dims = field.dims();
    let low: Vec<bool> = (0..dims.len()).map(|i| field.channel(i, m) < threshold).collect();
    let mut ids = vec![0u32; dims.len()];
    let mut visited = vec![false; dims.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..dims.len() {
        if !low[start] || visited[start] {
            continue;
        }
        let mut component = vec![start];
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            for nb in dims.face_neighbors(v) {
                if low[nb] && !visited[nb] {
                    visited[nb] = true;
                    component.push(nb);
                    queue.push_back(nb);
                }
            }
        }
        if rule == SeedRule::KeepAll || component.len() > min_size {
            next += 1;
            for v in component {
                ids[v] = next;
            }
        }
    }
    if next == 0 {
        return Err(Error::NoSeeds { threshold });
    }
    Ok(SeedMask { dims, ids, seed_count: next as usize })
}

#[derive(PartialEq)]
struct Entry {
    level: f64,
    order: u64,
    voxel: usize,
    label: u32,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on (level, insertion order)
    fn cmp(&self, other: &Self) -> Ordering {
        other.level.total_cmp(&self.level).then(other.order.cmp(&self.order))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Voxel assignment order and flood level, useful for checking the flood.
#[derive(Debug, Clone, PartialEq)]
pub struct FloodTrace {
    pub order: Vec<(usize, f64)>,
}

/// Priority flood from the seeds over the membrane channel. The flood level
/// of a voxel is the larger of its own `p^m` and the level it was reached
/// from; equal levels are served first-in first-out. Region `s - 1` grows
/// from seed `s`.
pub fn seeded_watershed(field: &ProbabilityField, m: usize, seeds: &SeedMask) -> Result<SegmentationMap> {
    Ok(seeded_watershed_traced(field, m, seeds)?.0)
}

pub fn seeded_watershed_traced(
    field: &ProbabilityField,
    m: usize,
    seeds: &SeedMask,
) -> Result<(SegmentationMap, FloodTrace)> {
    let dims = field.dims();
    if seeds.dims() != dims {
        return Err(Error::DimensionMismatch(format!("seeds {:?} vs field {:?}", seeds.dims(), dims)));
    }
    if seeds.seed_count() == 0 {
        return Err(Error::NoSeeds { threshold: f64::NAN });
    }
    let mut labels: Vec<u32> = seeds.ids().to_vec();
    let mut heap = BinaryHeap::new();
    let mut order = 0u64;
    let mut trace = Vec::with_capacity(dims.len());
    for v in 0..dims.len() {
        if labels[v] == 0 {
            continue;
        }
        let level = field.channel(v, m);
        trace.push((v, level));
        for nb in dims.face_neighbors(v) {
            if labels[nb] == 0 {
                heap.push(Entry { level: field.channel(nb, m).max(level), order, voxel: nb, label: labels[v] });
                order += 1;
            }
        }
    }
    while let Some(Entry { level, voxel, label, .. }) = heap.pop() {
        if labels[voxel] != 0 {
            continue;
        }
        labels[voxel] = label;
        trace.push((voxel, level));
        for nb in dims.face_neighbors(voxel) {
            if labels[nb] == 0 {
                heap.push(Entry { level: field.channel(nb, m).max(level), order, voxel: nb, label });
                order += 1;
            }
        }
    }
    if labels.contains(&0) {
        // only possible if the grid had no path from any seed
        return Err(Error::InvalidArgument("voxels unreachable from every seed".into()));
    }
    let ids = labels.into_iter().map(|l| l - 1).collect();
    Ok((SegmentationMap::new(dims, ids)?, FloodTrace { order: trace }))
}
