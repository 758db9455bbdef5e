//! Mesh to label volume by ray parity.
//!
//! For every lattice row along +x the crossings with each organ surface are
//! collected and a node is inside when an odd number of crossings lie beyond
//! it. The 2D point-in-triangle tests run on exact orientation predicates and
//! rays that graze a vertex or edge are resolved by symbolic perturbation of
//! the ray origin by `(eps, eps^2)` in the (y, z) plane; shared edges are
//! always evaluated in canonical vertex order, so exactly one of the two
//! incident triangles claims a grazing ray.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::mesh::topology::is_closed;
use crate::mesh::TriMesh;
use crate::scalar::Scalar;
use crate::volume::{VoxelData, VoxelGrid};
use crate::Label;

/// Sign of the perturbed orientation of `p` against the directed edge
/// `(ia, a) -> (ib, b)` in the (y, z) plane.
fn edge_sign(ia: usize, a: [f64; 2], ib: usize, b: [f64; 2], p: [f64; 2]) -> (i8, f64) {
    let (lo, hi, flip) = if ia < ib { (a, b, false) } else { (b, a, true) };
    let det = robust::orient2d(
        robust::Coord { x: lo[0], y: lo[1] },
        robust::Coord { x: hi[0], y: hi[1] },
        robust::Coord { x: p[0], y: p[1] },
    );
    let mut s = if det > 0.0 {
        1
    } else if det < 0.0 {
        -1
    } else {
        let dv = hi[1] - lo[1];
        let du = hi[0] - lo[0];
        if dv != 0.0 {
            if dv > 0.0 {
                -1
            } else {
                1
            }
        } else if du > 0.0 {
            1
        } else if du < 0.0 {
            -1
        } else {
            0
        }
    };
    let mut d = det;
    if flip {
        s = -s;
        d = -d;
    }
    (s, d)
}

/// Labels every node of `reference`'s lattice with the smallest organ id
/// whose closed surface contains it.
pub fn voxelize<T: Scalar>(mesh: &TriMesh<T>, reference: &VoxelGrid<T>) -> Result<VoxelGrid<T>> {
    let lat = reference.lattice;
    let [nx, ny, nz] = lat.dims;
    let organs = mesh.organs();
    for &o in &organs {
        let faces: Vec<[usize; 3]> = mesh.faces_of_organ(o).iter().map(|&f| mesh.faces[f]).collect();
        if !is_closed(faces.iter()) {
            return Err(Error::OpenSurface(o));
        }
    }

    let oy = lat.origin[1].as_f64();
    let oz = lat.origin[2].as_f64();
    let sy = lat.spacing[1].as_f64();
    let sz = lat.spacing[2].as_f64();
    let ox = lat.origin[0].as_f64();
    let sx = lat.spacing[0].as_f64();
    let verts: Vec<[f64; 3]> = mesh.vertices.iter().map(|v| v.to_f64()).collect();

    let mut labels: Vec<Label> = vec![0; lat.len()];
    for &organ in &organs {
        let mut rows: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
        for f in mesh.faces_of_organ(organ) {
            let tri = mesh.faces[f];
            let p3 = tri.map(|i| verts[i]);
            let ymin = p3.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
            let ymax = p3.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
            let zmin = p3.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
            let zmax = p3.iter().map(|p| p[2]).fold(f64::NEG_INFINITY, f64::max);
            let j0 = ((ymin - oy) / sy).ceil().max(0.0);
            let j1 = ((ymax - oy) / sy).floor().min(ny as f64 - 1.0);
            let k0 = ((zmin - oz) / sz).ceil().max(0.0);
            let k1 = ((zmax - oz) / sz).floor().min(nz as f64 - 1.0);
            if j0 > j1 || k0 > k1 {
                continue;
            }
            let p2 = p3.map(|p| [p[1], p[2]]);
            for k in k0 as usize..=k1 as usize {
                for j in j0 as usize..=j1 as usize {
                    let q = [lat.world(0, j, k)[1].as_f64(), lat.world(0, j, k)[2].as_f64()];
                    let (s0, w2) = edge_sign(tri[0], p2[0], tri[1], p2[1], q);
                    let (s1, w0) = edge_sign(tri[1], p2[1], tri[2], p2[2], q);
                    let (s2, w1) = edge_sign(tri[2], p2[2], tri[0], p2[0], q);
                    if s0 == 0 || s0 != s1 || s1 != s2 {
                        continue;
                    }
                    let wsum = w0 + w1 + w2;
                    let x = if wsum != 0.0 {
                        (w0 * p3[0][0] + w1 * p3[1][0] + w2 * p3[2][0]) / wsum
                    } else {
                        (p3[0][0] + p3[1][0] + p3[2][0]) / 3.0
                    };
                    rows.entry((j, k)).or_default().push(x);
                }
            }
        }
        for ((j, k), mut xs) in rows {
            xs.sort_by(|a, b| a.total_cmp(b));
            let mut beyond = 0usize;
            for i in (0..nx).rev() {
                let xc = ox + i as f64 * sx;
                while beyond < xs.len() && xs[xs.len() - 1 - beyond] > xc {
                    beyond += 1;
                }
                if beyond % 2 == 1 {
                    let idx = lat.index(i, j, k);
                    if labels[idx] == 0 {
                        labels[idx] = organ;
                    }
                }
            }
        }
    }
    let max_organ = organs.iter().copied().max().unwrap_or(0) as usize;
    let classes = match reference.data {
        VoxelData::Labels { classes, .. } => classes.max(max_organ + 1),
        _ => max_organ + 1,
    };
    VoxelGrid::labels(lat, classes, labels)
}
