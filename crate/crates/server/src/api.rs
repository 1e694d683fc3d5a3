//! JSON payloads. Every request and response carries `v`.

use std::path::PathBuf;

use activeseg::active::{BatchRecord, LoopStatus};
use activeseg::active_pixel::PixelLoopConfig;
use activeseg::boundary::{BoundaryLoopConfig, StopReason};
use serde::{Deserialize, Serialize};

pub const API_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pixel,
    Boundary,
}

/// Who answers the queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Interactive,
    /// The service answers from the manifest's groundtruth.
    Oracle,
}

fn default_scales() -> Vec<f64> {
    activeseg::features::DEFAULT_SCALES.to_vec()
}

fn default_pool() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelSetup {
    #[serde(default)]
    pub config: PixelLoopConfig,
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
    /// Oracle mode only: groundtruth samples per class in the initial pool.
    #[serde(default = "default_pool")]
    pub pool_per_class: usize,
}

impl Default for PixelSetup {
    fn default() -> Self {
        PixelSetup { config: PixelLoopConfig::default(), scales: default_scales(), pool_per_class: default_pool() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySetup {
    /// Header of the pixel probability field.
    pub probabilities: PathBuf,
    /// Header of the over-segmentation whose boundaries are queried.
    pub oversegmentation: PathBuf,
    #[serde(default)]
    pub config: BoundaryLoopConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub v: u32,
    pub manifest: PathBuf,
    pub phase: Phase,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel: Option<PixelSetup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundarySetup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub v: u32,
    pub id: String,
    pub phase: Phase,
    pub mode: Mode,
    pub status: LoopStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueryItem {
    Pixel {
        sample: usize,
        coords: [usize; 3],
        /// Base64 PNG of the plane around the sample.
        patch: String,
        /// Sample position inside the patch (x, y).
        crosshair: [usize; 2],
        options: Vec<String>,
    },
    Boundary {
        boundary: usize,
        regions: [u32; 2],
        contact: usize,
        /// Base64 RGB PNG with both regions tinted and the boundary marked.
        overlay: String,
        options: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Queries {
    pub v: u32,
    pub id: String,
    pub status: LoopStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    pub items: Vec<QueryItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub sample: usize,
    /// Class index for pixels, 0 (false) or 1 (true) for boundaries.
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostLabels {
    pub v: u32,
    pub batch: usize,
    pub labels: Vec<Answer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stroke {
    pub voxel: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostBrush {
    pub v: u32,
    #[serde(default)]
    pub strokes: Vec<Stroke>,
    /// Closes brushing and starts the loop.
    #[serde(default)]
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrushResult {
    pub v: u32,
    pub accepted: usize,
    pub rejected: Vec<usize>,
    pub pool_size: usize,
    pub status: LoopStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub v: u32,
    pub id: String,
    pub phase: Phase,
    pub mode: Mode,
    pub status: LoopStatus,
    /// Query batches answered.
    pub iteration: usize,
    pub labeled: usize,
    pub budget_remaining: usize,
    /// Per-batch query errors of both predictors, oldest first.
    pub history: Vec<BatchRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_error_streak: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    pub stopping_criterion_met: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub v: u32,
    pub error: String,
    pub message: String,
}
