use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::MergeableStats;
use crate::error::{Error, Result};
use crate::grid::{ClassLabel, Dims, ProbabilityField, SegmentationMap};
use crate::labelprop::argmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub size: usize,
    pub stats: MergeableStats,
    /// Mitochondria channel is the argmax of the mean prediction.
    pub mito: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    /// Region ids with `a < b`.
    pub a: u32,
    pub b: u32,
    /// Voxels first claimed by this boundary; disjoint across boundaries.
    pub voxels: Vec<usize>,
    /// Number of face-adjacent voxel pairs between the two regions.
    pub contact: usize,
    pub stats: MergeableStats,
}

impl Boundary {
    pub fn other(&self, region: u32) -> u32 {
        if region == self.a {
            self.b
        } else {
            self.a
        }
    }
}

/// Superpixels of a segmentation and the boundaries between face-adjacent
/// pairs, with prediction statistics for both.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionAdjacencyGraph {
    dims: Dims,
    k: usize,
    regions: Vec<Region>,
    boundaries: Vec<Boundary>,
    #[serde(skip)]
    index: HashMap<(u32, u32), usize>,
    #[serde(skip)]
    incident: Vec<Vec<usize>>,
}

fn mito_tag(stats: &MergeableStats) -> bool {
    stats.count() > 0 && argmax(&stats.means()) == ClassLabel::Mitochondria.index()
}

impl RegionAdjacencyGraph {
    pub fn build(seg: &SegmentationMap, field: &ProbabilityField) -> Result<Self> {
        let dims = seg.dims();
        if dims != field.dims() {
            return Err(Error::DimensionMismatch(format!("segmentation {:?} vs field {:?}", dims, field.dims())));
        }
        let k = field.k();
        let ids = seg.ids();
        let mut regions: Vec<Region> =
            (0..seg.region_count()).map(|_| Region { size: 0, stats: MergeableStats::new(k), mito: false }).collect();
        for (v, &r) in ids.iter().enumerate() {
            let region = &mut regions[r as usize];
            region.size += 1;
            region.stats.push(field.row(v));
        }
        for r in &mut regions {
            r.mito = mito_tag(&r.stats);
        }

        let mut index = HashMap::new();
        let mut boundaries: Vec<Boundary> = Vec::new();
        let mut claimed = vec![false; dims.len()];
        for v in 0..dims.len() {
            for nb in dims.forward_neighbors(v) {
                let (ra, rb) = (ids[v], ids[nb]);
                if ra == rb {
                    continue;
                }
                let key = (ra.min(rb), ra.max(rb));
                let id = *index.entry(key).or_insert_with(|| {
                    boundaries.push(Boundary {
                        a: key.0,
                        b: key.1,
                        voxels: Vec::new(),
                        contact: 0,
                        stats: MergeableStats::new(k),
                    });
                    boundaries.len() - 1
                });
                let b = &mut boundaries[id];
                b.contact += 1;
                for voxel in [v, nb] {
                    if !claimed[voxel] {
                        claimed[voxel] = true;
                        b.voxels.push(voxel);
                        b.stats.push(field.row(voxel));
                    }
                }
            }
        }
        let mut rag = RegionAdjacencyGraph { dims, k, regions, boundaries, index, incident: Vec::new() };
        rag.rebuild_incidence();
        Ok(rag)
    }

    fn rebuild_incidence(&mut self) {
        self.incident = vec![Vec::new(); self.regions.len()];
        self.index.clear();
        for (id, b) in self.boundaries.iter().enumerate() {
            self.incident[b.a as usize].push(id);
            self.incident[b.b as usize].push(id);
            self.index.insert((b.a, b.b), id);
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn boundary_count(&self) -> usize {
        self.boundaries.len()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn boundaries(&self) -> &[Boundary] {
        &self.boundaries
    }

    pub fn region(&self, id: usize) -> &Region {
        &self.regions[id]
    }

    pub fn boundary(&self, id: usize) -> &Boundary {
        &self.boundaries[id]
    }

    pub fn boundary_between(&self, a: u32, b: u32) -> Option<usize> {
        self.index.get(&(a.min(b), a.max(b))).copied()
    }

    /// Boundary ids touching `region`, ascending.
    pub fn incident(&self, region: usize) -> &[usize] {
        &self.incident[region]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut rag: RegionAdjacencyGraph = crate::io::read_json(path)?;
        let n = rag.regions.len() as u32;
        if rag.boundaries.iter().any(|b| b.a >= b.b || b.b >= n) {
            return Err(Error::InvalidArgument(format!("{} has malformed boundaries", path.display())));
        }
        rag.rebuild_incidence();
        Ok(rag)
    }
}

/// Groundtruth verdict per boundary: TRUE separates different bodies or
/// mitochondria from cytoplasm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTruth {
    pub labels: Vec<bool>,
    /// Majority groundtruth body per region.
    pub region_body: Vec<u32>,
    pub region_mito: Vec<bool>,
    /// Regions whose majority body was a tie (resolved to the lower id).
    pub tied_regions: Vec<usize>,
}

impl BoundaryTruth {
    /// 1 for TRUE, 0 for FALSE.
    pub fn classes(&self) -> Vec<usize> {
        self.labels.iter().map(|&t| t as usize).collect()
    }
}

/// A region counts as mitochondria when most of its voxels carry a
/// mitochondria or mitochondria-border label.
pub fn derive_boundary_truth(
    rag: &RegionAdjacencyGraph,
    seg: &SegmentationMap,
    groundtruth: &SegmentationMap,
    labels: &[ClassLabel],
) -> Result<BoundaryTruth> {
    if seg.dims() != rag.dims() || groundtruth.dims() != rag.dims() || labels.len() != rag.dims().len() {
        return Err(Error::DimensionMismatch("groundtruth does not match the region graph".into()));
    }
    if seg.region_count() != rag.region_count() {
        return Err(Error::DimensionMismatch("segmentation does not match the region graph".into()));
    }
    let mut overlap: Vec<HashMap<u32, usize>> = vec![HashMap::new(); rag.region_count()];
    let mut mito_votes = vec![0usize; rag.region_count()];
    for (v, (&r, &body)) in seg.ids().iter().zip(groundtruth.ids()).enumerate() {
        *overlap[r as usize].entry(body).or_insert(0) += 1;
        mito_votes[r as usize] += labels[v].is_mitochondrial() as usize;
    }
    let mut region_body = Vec::with_capacity(overlap.len());
    let mut tied_regions = Vec::new();
    for (r, counts) in overlap.iter().enumerate() {
        let best = counts.values().copied().max().unwrap_or(0);
        let winners: Vec<u32> = counts.iter().filter(|(_, &c)| c == best).map(|(&b, _)| b).collect();
        if winners.len() > 1 {
            tied_regions.push(r);
        }
        region_body.push(winners.into_iter().min().unwrap_or(0));
    }
    let region_mito: Vec<bool> =
        mito_votes.iter().zip(rag.regions()).map(|(&m, region)| 2 * m > region.size).collect();
    let truth = rag
        .boundaries()
        .iter()
        .map(|b| {
            let (a, c) = (b.a as usize, b.b as usize);
            region_body[a] != region_body[c] || region_mito[a] || region_mito[c]
        })
        .collect();
    Ok(BoundaryTruth { labels: truth, region_body, region_mito, tied_regions })
}
