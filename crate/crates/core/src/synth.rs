//! Synthetic shapes and volumes: polyhedra, icospheres, ellipsoids,
//! star-shaped blobs and analytic signed-distance grids.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::TriMesh;
use crate::scalar::{Scalar, Vec3};
use crate::volume::{Lattice, VoxelGrid};
use crate::Label;

fn v<T: Scalar>(x: f64, y: f64, z: f64) -> Vec3<T> {
    Vec3::from_f64([x, y, z])
}

/// Unit right-corner tetrahedron, outward oriented.
pub fn tetrahedron<T: Scalar>() -> TriMesh<T> {
    TriMesh::single_organ(
        vec![v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0), v(0.0, 0.0, 1.0)],
        vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        1,
    )
    .expect("valid tetrahedron")
}

/// Axis-aligned unit cube `[0,1]^3` as 12 outward-oriented triangles.
pub fn unit_cube<T: Scalar>() -> TriMesh<T> {
    box_mesh(Vec3::zero(), Vec3::splat(T::one()))
}

/// Axis-aligned box between `lo` and `hi`, 12 outward-oriented triangles.
pub fn box_mesh<T: Scalar>(lo: Vec3<T>, hi: Vec3<T>) -> TriMesh<T> {
    let c = |i: usize| {
        Vec3::new(
            if i & 1 != 0 { hi[0] } else { lo[0] },
            if i & 2 != 0 { hi[1] } else { lo[1] },
            if i & 4 != 0 { hi[2] } else { lo[2] },
        )
    };
    let verts = (0..8).map(c).collect();
    let quads = [
        [0, 2, 3, 1], // z-
        [4, 5, 7, 6], // z+
        [0, 1, 5, 4], // y-
        [2, 6, 7, 3], // y+
        [0, 4, 6, 2], // x-
        [1, 3, 7, 5], // x+
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    TriMesh::single_organ(verts, faces, 1).expect("valid box")
}

/// Regular icosahedron with circumradius `r`, centered at the origin.
pub fn icosahedron<T: Scalar>(r: f64) -> TriMesh<T> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let s = r / (1.0 + t * t).sqrt();
    let verts = raw.iter().map(|p| v(p[0] * s, p[1] * s, p[2] * s)).collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    TriMesh::single_organ(verts, faces, 1).expect("valid icosahedron")
}

/// Icosahedron subdivided `levels` times with vertices projected to radius `r`.
pub fn icosphere<T: Scalar>(r: f64, levels: usize) -> TriMesh<T> {
    let base = icosahedron::<f64>(1.0);
    let mut verts: Vec<[f64; 3]> = base.vertices.iter().map(|p| p.0).collect();
    let mut faces = base.faces;
    for _ in 0..levels {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| -> usize {
            let key = if a < b { (a, b) } else { (b, a) };
            *mid.entry(key).or_insert_with(|| {
                let p = [
                    (verts[a][0] + verts[b][0]) / 2.0,
                    (verts[a][1] + verts[b][1]) / 2.0,
                    (verts[a][2] + verts[b][2]) / 2.0,
                ];
                let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                verts.push([p[0] / n, p[1] / n, p[2] / n]);
                verts.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let verts = verts.iter().map(|p| v(p[0] * r, p[1] * r, p[2] * r)).collect();
    TriMesh::single_organ(verts, faces, 1).expect("valid icosphere")
}

/// UV sphere: `rings` latitude rings of `segments` vertices plus two poles.
pub fn uv_sphere<T: Scalar>(r: f64, rings: usize, segments: usize) -> TriMesh<T> {
    assert!(rings >= 1 && segments >= 3);
    let mut verts = vec![v(0.0, 0.0, r)];
    for i in 0..rings {
        let th = std::f64::consts::PI * (i + 1) as f64 / (rings + 1) as f64;
        for j in 0..segments {
            let ph = 2.0 * std::f64::consts::PI * j as f64 / segments as f64;
            verts.push(v(r * th.sin() * ph.cos(), r * th.sin() * ph.sin(), r * th.cos()));
        }
    }
    verts.push(v(0.0, 0.0, -r));
    let south = verts.len() - 1;
    let at = |i: usize, j: usize| 1 + i * segments + (j % segments);
    let mut faces = Vec::new();
    for j in 0..segments {
        faces.push([0, at(0, j), at(0, j + 1)]);
    }
    for i in 0..rings - 1 {
        for j in 0..segments {
            faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    for j in 0..segments {
        faces.push([south, at(rings - 1, j + 1), at(rings - 1, j)]);
    }
    TriMesh::single_organ(verts, faces, 1).expect("valid uv sphere")
}

/// Icosphere mapped onto an axis-aligned ellipsoid.
pub fn ellipsoid<T: Scalar>(center: [f64; 3], semi_axes: [f64; 3], levels: usize) -> TriMesh<T> {
    icosphere::<f64>(1.0, levels)
        .map_vertices(|p| {
            Vec3::new(
                center[0] + p[0] * semi_axes[0],
                center[1] + p[1] * semi_axes[1],
                center[2] + p[2] * semi_axes[2],
            )
        })
        .cast()
}

/// Smooth star-shaped radial perturbation `r(d) = r0 (1 + sum a_k sin(w_k . d + phi_k))`.
#[derive(Clone, Debug)]
pub struct StarBlob {
    pub center: [f64; 3],
    pub radius: f64,
    pub waves: Vec<([f64; 3], f64, f64)>,
}

impl StarBlob {
    /// A random smooth blob with a few low-frequency lobes; relative radius
    /// variation stays below `amplitude` in total.
    pub fn random(seed: u64, center: [f64; 3], radius: f64, amplitude: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 3;
        let waves = (0..n)
            .map(|_| {
                let mut d = [rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5];
                let l = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-9);
                let freq = 1.0 + 1.5 * rng.gen::<f64>();
                d.iter_mut().for_each(|c| *c *= freq / l);
                (d, amplitude / n as f64, rng.gen::<f64>() * std::f64::consts::TAU)
            })
            .collect();
        StarBlob { center, radius, waves }
    }

    pub fn radius_along(&self, dir: [f64; 3]) -> f64 {
        let s: f64 = self
            .waves
            .iter()
            .map(|(w, a, ph)| a * (w[0] * dir[0] + w[1] * dir[1] + w[2] * dir[2] + ph).sin())
            .sum();
        self.radius * (1.0 + s)
    }

    pub fn mesh<T: Scalar>(&self, levels: usize) -> TriMesh<T> {
        icosphere::<f64>(1.0, levels)
            .map_vertices(|p| {
                let r = self.radius_along(p.0);
                Vec3::new(
                    self.center[0] + p[0] * r,
                    self.center[1] + p[1] * r,
                    self.center[2] + p[2] * r,
                )
            })
            .cast()
    }

    /// Inside test for a world point.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if n == 0.0 {
            return true;
        }
        n <= self.radius_along([d[0] / n, d[1] / n, d[2] / n])
    }
}

/// Scalar grid sampled from `f(world point)`.
pub fn scalar_grid<T: Scalar>(lattice: Lattice<T>, f: impl Fn([f64; 3]) -> f64) -> VoxelGrid<T> {
    let n = lattice.len();
    let data = (0..n)
        .map(|i| {
            let p = lattice.world_of_index(i).to_f64();
            T::lit(f(p))
        })
        .collect();
    VoxelGrid::scalar(lattice, data).expect("consistent scalar grid")
}

/// Sphere signed distance (negative inside).
pub fn sphere_sdf<T: Scalar>(lattice: Lattice<T>, center: [f64; 3], r: f64) -> VoxelGrid<T> {
    scalar_grid(lattice, |p| {
        ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2) + (p[2] - center[2]).powi(2)).sqrt() - r
    })
}

/// Label grid from `(organ, inside-test)` pairs; earlier entries win overlaps.
pub fn label_grid<T: Scalar>(
    lattice: Lattice<T>,
    classes: usize,
    shapes: &[(Label, &dyn Fn([f64; 3]) -> bool)],
) -> VoxelGrid<T> {
    let n = lattice.len();
    let data = (0..n)
        .map(|i| {
            let p = lattice.world_of_index(i).to_f64();
            shapes
                .iter()
                .find(|(_, inside)| inside(p))
                .map(|(o, _)| *o)
                .unwrap_or(0)
        })
        .collect();
    VoxelGrid::labels(lattice, classes, data).expect("consistent label grid")
}

/// Inside test for an axis-aligned ellipsoid.
pub fn in_ellipsoid(center: [f64; 3], semi: [f64; 3]) -> impl Fn([f64; 3]) -> bool {
    move |p| {
        (0..3)
            .map(|i| ((p[i] - center[i]) / semi[i]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}
