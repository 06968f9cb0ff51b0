//! Pose-invariant identity features, rigid alignment and error metrics.

mod frames;
mod metrics;
mod pairs;
mod procrustes;

pub use frames::{local_frames, local_laplacian, local_laplacian_backward, local_laplacian_of, LocalFrameField};
pub use metrics::{
    cumulative_error_curve, identity_separability, mean_vertex_error, per_vertex_errors_mm, CumulativeCurve,
};
pub use pairs::{build_pair_set, intra_part_distances, PairSet};
pub use procrustes::{procrustes_align, rigid_fit, RigidAlignment};

use crate::error::Result;
use crate::mesh::Mesh;

/// Mean vertex error (mm) after rigidly aligning `prediction` onto `truth`.
pub fn procrustes_error(prediction: &Mesh, truth: &Mesh) -> Result<f64> {
    let aligned = procrustes_align(prediction, truth)?.aligned;
    mean_vertex_error(&aligned, truth)
}
