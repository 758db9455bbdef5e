//! Template-based diffeomorphic mesh extraction.
//!
//! A fixed-connectivity template mesh is deformed by integrating a stack of
//! five stationary flow fields with explicit Euler steps. The flow lattices are
//! fitted per case by gradient descent on Chamfer and edge losses with deep
//! supervision of every intermediate stage. The crate also carries the
//! evaluation stack (Dice, ASSD, HD99, self-intersections) and rigid and
//! non-rigid ICP for aligning meshes to voxel segmentations.
//!
//! All geometry is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiations.

pub mod error;
pub mod fitter;
pub mod flowfield;
pub mod geometry;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod registration;
pub mod scalar;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::{Aabb, Scalar, Vec3};

/// Organ / class id. Background is 0.
pub type Label = u8;

pub type Point = Vec3<f64>;
pub type Point32 = Vec3<f32>;
pub type Mesh = mesh::TriMesh<f64>;
pub type Mesh32 = mesh::TriMesh<f32>;
pub type Samples = mesh::SurfaceSamples<f64>;
pub type Grid = volume::VoxelGrid<f64>;
pub type Grid32 = volume::VoxelGrid<f32>;
pub type Field = flowfield::FlowField<f64>;
pub type Field32 = flowfield::FlowField<f32>;
pub type Stack = flowfield::FlowStack<f64>;
pub type Stack32 = flowfield::FlowStack<f32>;
