//! Voxel grids, MVF files, marching cubes, voxelization, template
//! construction, smoothing and the voxel cross-entropy.

mod cross_entropy;
mod grid;
pub mod marching_cubes;
mod mvf;
mod smooth;
mod template;
mod voxelize;

pub use cross_entropy::cross_entropy;
pub use grid::{GridKind, Lattice, VoxelData, VoxelGrid};
pub use marching_cubes::{marching_cubes, marching_cubes_with, Interior};
pub use mvf::{decode_mvf, encode_mvf, read_mvf, write_mvf};
pub use smooth::{laplacian_smooth, laplacian_smooth_with, Smoothing};
pub use template::{build_template, build_template_with, TemplateOptions};
pub use voxelize::voxelize;
