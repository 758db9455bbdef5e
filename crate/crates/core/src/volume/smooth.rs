//! Laplacian smoothing with the HC correction that pulls points back toward
//! their previous and original positions to counter shrinkage.

use crate::mesh::{vertex_neighbors, TriMesh};
use crate::scalar::{Scalar, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Smoothing {
    /// HC-Laplacian: `alpha` weights the original position in the reference
    /// point, `beta` the vertex's own correction against its neighbors'.
    Hc { alpha: f64, beta: f64 },
    /// Plain umbrella operator `p <- p + lambda * (mean(N(p)) - p)`.
    Uniform { lambda: f64 },
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::Hc {
            alpha: 0.0,
            beta: 0.5,
        }
    }
}

/// HC-Laplacian smoothing with the default weights. Connectivity is untouched;
/// `steps == 0` returns the input unchanged. Isolated vertices stay put.
pub fn laplacian_smooth<T: Scalar>(mesh: &TriMesh<T>, steps: usize) -> TriMesh<T> {
    laplacian_smooth_with(mesh, steps, Smoothing::default())
}

pub fn laplacian_smooth_with<T: Scalar>(mesh: &TriMesh<T>, steps: usize, method: Smoothing) -> TriMesh<T> {
    if steps == 0 {
        return mesh.clone();
    }
    let nb = vertex_neighbors(mesh);
    let orig = &mesh.vertices;
    let mean = |pts: &[Vec3<T>], i: usize| -> Vec3<T> {
        let s: Vec3<T> = nb[i].iter().map(|&j| pts[j]).sum();
        s / T::from_usize_lossy(nb[i].len())
    };
    let mut p = orig.clone();
    for _ in 0..steps {
        let q = p.clone();
        match method {
            Smoothing::Uniform { lambda } => {
                let l = T::lit(lambda);
                for i in 0..p.len() {
                    if !nb[i].is_empty() {
                        p[i] = q[i] + (mean(&q, i) - q[i]) * l;
                    }
                }
            }
            Smoothing::Hc { alpha, beta } => {
                let (a, b) = (T::lit(alpha), T::lit(beta));
                let one = T::one();
                let mut d = vec![Vec3::zero(); p.len()];
                for i in 0..p.len() {
                    if nb[i].is_empty() {
                        continue;
                    }
                    p[i] = mean(&q, i);
                    d[i] = p[i] - (orig[i] * a + q[i] * (one - a));
                }
                for i in 0..p.len() {
                    if nb[i].is_empty() {
                        continue;
                    }
                    p[i] = p[i] - (d[i] * b + mean(&d, i) * (one - b));
                }
            }
        }
    }
    mesh.with_vertices(p)
}
