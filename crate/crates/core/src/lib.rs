//! Identity transfer between human meshes that share one connectivity.
//!
//! A target mesh is encoded into an identity code; a decoder conditioned on
//! a source-pose mesh predicts per-vertex offsets that give the source the
//! target's identity. Training mixes a reconstruction loss on the few fully
//! labelled triplets with pose-invariant Laplacian and rigidity losses.

pub mod container;
pub mod datagen;
pub mod error;
pub mod geomfeat;
pub mod inference;
pub mod mesh;
pub mod multires;
pub mod network;
pub mod objectives;
pub mod shapes;
pub mod sparse;

pub use error::{Error, Result};
pub use mesh::{Mesh, SegmentationMap, Topology, Vec3};
