//! Superpixel boundaries: region adjacency graph, mergeable prediction
//! statistics, boundary features and the active training loop for the
//! true/false boundary classifier.

mod features;
mod init;
mod rag;
mod session;
mod stats;

pub use features::{boundary_feature_bank, boundary_feature_dim, boundary_feature_names, boundary_features, feature_vector};
pub use init::{init_boundary_subset, kmeans};
pub use rag::{derive_boundary_truth, Boundary, BoundaryTruth, Region, RegionAdjacencyGraph};
pub use session::{
    run_boundary_loop, sp_disagreement, BoundaryLoopConfig, BoundarySession, StopReason, TRUE_BOUNDARY,
};
pub use stats::{ChannelStats, MergeableStats, HISTOGRAM_BINS, QUANTILES};
