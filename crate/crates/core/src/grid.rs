//! Voxel grids shared by every pipeline stage.
//!
//! All grids are stored x-fastest: `index = x + nx * (y + ny * z)`. A 2D image
//! is a volume with `z == 1`, and every neighborhood is face-connected (4 in 2D,
//! 6 in 3D).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of pixel classes.
pub const CLASS_COUNT: usize = 4;

/// Index of the membrane class, the class the pixel loop is biased toward.
pub const MEMBRANE: usize = ClassLabel::Membrane as usize;

/// Pixel class taxonomy. The discriminant is the column index in every
/// probability vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum ClassLabel {
    Cytoplasm = 0,
    Membrane = 1,
    Mitochondria = 2,
    MitochondriaBorder = 3,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; CLASS_COUNT] = [
        ClassLabel::Cytoplasm,
        ClassLabel::Membrane,
        ClassLabel::Mitochondria,
        ClassLabel::MitochondriaBorder,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Cytoplasm => "cytoplasm",
            ClassLabel::Membrane => "membrane",
            ClassLabel::Mitochondria => "mitochondria",
            ClassLabel::MitochondriaBorder => "mitochondria_border",
        }
    }

    /// Mitochondria interior or border.
    pub fn is_mitochondrial(self) -> bool {
        matches!(self, ClassLabel::Mitochondria | ClassLabel::MitochondriaBorder)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Dims {
    pub fn new(x: usize, y: usize, z: usize) -> Result<Self> {
        if x == 0 || y == 0 || z == 0 {
            return Err(Error::InvalidArgument(format!(
                "dims must be >= 1 on every axis, got ({x},{y},{z})"
            )));
        }
        Ok(Dims { x, y, z })
    }

    pub fn planar(x: usize, y: usize) -> Result<Self> {
        Self::new(x, y, 1)
    }

    pub fn len(&self) -> usize {
        self.x * self.y * self.z
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_planar(&self) -> bool {
        self.z == 1
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.x, self.y, self.z]
    }

    /// Axes with extent greater than one; filters run only along these.
    pub fn active_axes(&self) -> Vec<usize> {
        (0..3).filter(|&a| self.as_array()[a] > 1).collect()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.x * (y + self.y * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.x;
        let rest = index / self.x;
        (x, rest % self.y, rest / self.y)
    }

    pub fn contains(&self, x: i64, y: i64, z: i64) -> bool {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < self.x
            && (y as usize) < self.y
            && (z as usize) < self.z
    }

    /// Face neighbors of `index` (4 in 2D, 6 in 3D), in a fixed order.
    pub fn face_neighbors(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y, z) = self.coords(index);
        let candidates = [
            (x > 0).then(|| index - 1),
            (x + 1 < self.x).then(|| index + 1),
            (y > 0).then(|| index - self.x),
            (y + 1 < self.y).then(|| index + self.x),
            (z > 0).then(|| index - self.x * self.y),
            (z + 1 < self.z).then(|| index + self.x * self.y),
        ];
        candidates.into_iter().flatten()
    }

    /// Forward face neighbors only (+x, +y, +z), so each adjacent pair is
    /// visited once when scanning all voxels.
    pub fn forward_neighbors(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y, z) = self.coords(index);
        let candidates = [
            (x + 1 < self.x).then(|| index + 1),
            (y + 1 < self.y).then(|| index + self.x),
            (z + 1 < self.z).then(|| index + self.x * self.y),
        ];
        candidates.into_iter().flatten()
    }
}

/// Grayscale 8-bit voxel grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterVolume {
    dims: Dims,
    voxels: Vec<u8>,
    pub anisotropic: bool,
}

impl RasterVolume {
    pub fn new(dims: Dims, voxels: Vec<u8>) -> Result<Self> {
        if voxels.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} voxels for dims {:?}",
                voxels.len(),
                dims
            )));
        }
        Ok(RasterVolume { dims, voxels, anisotropic: false })
    }

    pub fn filled(dims: Dims, value: u8) -> Self {
        RasterVolume { dims, voxels: vec![value; dims.len()], anisotropic: false }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.voxels[self.dims.index(x, y, z)]
    }

    /// One z-plane as a row-major byte buffer.
    pub fn plane(&self, z: usize) -> &[u8] {
        let n = self.dims.x * self.dims.y;
        &self.voxels[z * n..(z + 1) * n]
    }

    /// Cube of side `2 * radius + 1` on every active axis around `center`,
    /// replicating edge voxels where the window leaves the volume. Singleton
    /// axes stay singleton.
    pub fn crop_patch(&self, center: (usize, usize, usize), radius: usize) -> Result<RasterVolume> {
        let d = self.dims;
        if center.0 >= d.x || center.1 >= d.y || center.2 >= d.z {
            return Err(Error::InvalidArgument(format!(
                "patch center {:?} outside volume {:?}",
                center, d
            )));
        }
        let side = 2 * radius + 1;
        let extent = |n: usize| if n > 1 { side } else { 1 };
        let out = Dims { x: extent(d.x), y: extent(d.y), z: extent(d.z) };
        let clamp = |c: usize, off: usize, n: usize, span: usize| -> usize {
            if span == 1 {
                return c;
            }
            let v = c as i64 + off as i64 - radius as i64;
            v.clamp(0, n as i64 - 1) as usize
        };
        let mut voxels = Vec::with_capacity(out.len());
        for oz in 0..out.z {
            let z = clamp(center.2, oz, d.z, out.z);
            for oy in 0..out.y {
                let y = clamp(center.1, oy, d.y, out.y);
                for ox in 0..out.x {
                    let x = clamp(center.0, ox, d.x, out.x);
                    voxels.push(self.get(x, y, z));
                }
            }
        }
        Ok(RasterVolume { dims: out, voxels, anisotropic: self.anisotropic })
    }
}

/// Partition of a grid into regions with contiguous ids `0..region_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    dims: Dims,
    ids: Vec<u32>,
    region_count: usize,
}

impl SegmentationMap {
    /// Validates that `ids` covers exactly `0..region_count`.
    pub fn new(dims: Dims, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} region ids for dims {:?}",
                ids.len(),
                dims
            )));
        }
        let max = ids.iter().copied().max().map_or(0, |m| m as usize + 1);
        let mut seen = vec![false; max];
        for &id in &ids {
            seen[id as usize] = true;
        }
        if let Some(gap) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("region id {gap} is unused")));
        }
        Ok(SegmentationMap { dims, ids, region_count: max })
    }

    /// Renumbers arbitrary ids to `0..count` in order of first appearance.
    pub fn from_arbitrary_ids(dims: Dims, raw: &[u64]) -> Result<Self> {
        if raw.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} region ids for dims {:?}",
                raw.len(),
                dims
            )));
        }
        let mut map = std::collections::HashMap::new();
        let ids = raw
            .iter()
            .map(|r| {
                let next = map.len() as u32;
                *map.entry(*r).or_insert(next)
            })
            .collect();
        Ok(SegmentationMap { dims, ids, region_count: map.len() })
    }

    pub fn single_region(dims: Dims) -> Self {
        SegmentationMap { dims, ids: vec![0; dims.len()], region_count: 1 }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.region_count];
        for &id in &self.ids {
            sizes[id as usize] += 1;
        }
        sizes
    }
}

/// Per-voxel class-confidence vectors on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityField {
    dims: Dims,
    k: usize,
    data: Vec<f64>,
}

impl ProbabilityField {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(dims: Dims, k: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 || data.len() != dims.len() * k {
            return Err(Error::DimensionMismatch(format!(
                "{} probabilities for {} voxels x {} classes",
                data.len(),
                dims.len(),
                k
            )));
        }
        for (i, row) in data.chunks(k).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > Self::SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "voxel {i} is not a probability vector: {row:?}"
                )));
            }
        }
        Ok(ProbabilityField { dims, k, data })
    }

    /// Field where every voxel's membrane confidence is given and the rest
    /// of the mass goes to cytoplasm.
    pub fn from_membrane(dims: Dims, membrane: &[f64]) -> Result<Self> {
        let mut data = vec![0.0; dims.len() * CLASS_COUNT];
        for (row, &pm) in data.chunks_mut(CLASS_COUNT).zip(membrane) {
            row[MEMBRANE] = pm;
            row[ClassLabel::Cytoplasm.index()] = 1.0 - pm;
        }
        Self::new(dims, CLASS_COUNT, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, voxel: usize) -> &[f64] {
        &self.data[voxel * self.k..(voxel + 1) * self.k]
    }

    pub fn channel(&self, voxel: usize, class: usize) -> f64 {
        self.data[voxel * self.k + class]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}
