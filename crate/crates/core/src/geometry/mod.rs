//! Spatial indices and exact triangle primitives shared by the losses,
//! metrics and registration code.

mod bvh;
mod kdtree;
mod triangle;

pub use bvh::{Bvh, Closest};
pub use kdtree::KdTree;
pub use triangle::{closest_point_on_triangle, point_triangle_distance_squared, triangles_intersect};
