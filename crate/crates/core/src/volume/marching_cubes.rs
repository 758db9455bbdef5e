//! Marching cubes over a node-centered grid.
//!
//! The 256-case triangulation table is generated once from the cube's face
//! structure instead of being transcribed. On every cube face the contour
//! segments are fixed by the face's corner signs alone, with ambiguous faces
//! always cutting off each inside corner separately. Neighboring cubes
//! therefore agree on every shared face. Each contour loop is triangulated
//! without diagonals that join two points on a common cube face, so every
//! interior mesh edge belongs to one cube and the output is a closed,
//! consistently oriented 2-manifold. Loops that admit no such triangulation
//! are fanned around their centroid.
//!
//! The grid is virtually padded with one layer of outside nodes, so surfaces
//! touching the border are capped on the boundary nodes.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::scalar::{Scalar, Vec3};
use crate::volume::VoxelGrid;

/// Which side of the iso value counts as the enclosed region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Interior {
    /// `value > iso` is inside (occupancy, probabilities, binary masks).
    #[default]
    Above,
    /// `value < iso` is inside (signed distance fields).
    Below,
}

const CORNER_OFFSETS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// (corner a, corner b, axis) with `b = a + unit(axis)`.
const EDGES: [(usize, usize, usize); 12] = [
    (0, 1, 0),
    (2, 3, 0),
    (4, 5, 0),
    (6, 7, 0),
    (0, 2, 1),
    (1, 3, 1),
    (4, 6, 1),
    (5, 7, 1),
    (0, 4, 2),
    (1, 5, 2),
    (2, 6, 2),
    (3, 7, 2),
];

/// Face corner cycles with outward normals.
const FACES: [([usize; 4], [i8; 3]); 6] = [
    ([0, 2, 6, 4], [-1, 0, 0]),
    ([1, 3, 7, 5], [1, 0, 0]),
    ([0, 1, 5, 4], [0, -1, 0]),
    ([2, 3, 7, 6], [0, 1, 0]),
    ([0, 1, 3, 2], [0, 0, -1]),
    ([4, 5, 7, 6], [0, 0, 1]),
];

/// Triangle corner reference: an edge crossing or the centroid of a loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Edge(u8),
    Center(u8),
}

#[derive(Clone, Debug, Default)]
struct Case {
    loops: Vec<Vec<u8>>,
    tris: Vec<[Slot; 3]>,
}

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|&(x, y, _)| (x == a && y == b) || (x == b && y == a))
        .expect("adjacent corners")
}

fn corner_pos(c: usize) -> [f64; 3] {
    CORNER_OFFSETS[c].map(|v| v as f64)
}

fn edge_mid(e: usize) -> [f64; 3] {
    let (a, b, _) = EDGES[e];
    let (pa, pb) = (corner_pos(a), corner_pos(b));
    [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0, (pa[2] + pb[2]) / 2.0]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn edge_faces(e: usize) -> [usize; 2] {
    let (a, b, _) = EDGES[e];
    let mut out = [usize::MAX; 2];
    let mut n = 0;
    for (fi, (cyc, _)) in FACES.iter().enumerate() {
        if cyc.contains(&a) && cyc.contains(&b) {
            out[n] = fi;
            n += 1;
        }
    }
    out
}

fn share_face(e1: usize, e2: usize) -> bool {
    let (f1, f2) = (edge_faces(e1), edge_faces(e2));
    f1.iter().any(|f| f2.contains(f))
}

/// Ear clipping that never introduces a diagonal between two crossings on a
/// common cube face.
fn triangulate(poly: &[u8]) -> Option<Vec<[u8; 3]>> {
    let n = poly.len();
    if n == 3 {
        return Some(vec![[poly[0], poly[1], poly[2]]]);
    }
    for i in 0..n {
        let prev = poly[(i + n - 1) % n];
        let next = poly[(i + 1) % n];
        if share_face(prev as usize, next as usize) {
            continue;
        }
        let rest: Vec<u8> = (0..n).filter(|&k| k != i).map(|k| poly[k]).collect();
        if let Some(mut tris) = triangulate(&rest) {
            tris.push([prev, poly[i], next]);
            return Some(tris);
        }
    }
    None
}

fn build_case(mask: u8) -> Case {
    let inside = |c: usize| mask & (1 << c) != 0;
    // directed contour segments, edge -> edge
    let mut next = [u8::MAX; 12];
    for (cyc, nrm) in FACES {
        let n = nrm.map(|v| v as f64);
        let crossings: Vec<usize> = (0..4)
            .filter(|&k| inside(cyc[k]) != inside(cyc[(k + 1) % 4]))
            .collect();
        let mut segs: Vec<(usize, usize, usize)> = Vec::new();
        match crossings.len() {
            0 => {}
            2 => {
                let e1 = edge_between(cyc[crossings[0]], cyc[(crossings[0] + 1) % 4]);
                let e2 = edge_between(cyc[crossings[1]], cyc[(crossings[1] + 1) % 4]);
                let cin = *cyc.iter().find(|&&c| inside(c)).expect("inside corner");
                segs.push((e1, e2, cin));
            }
            4 => {
                for k in 0..4 {
                    if inside(cyc[k]) {
                        let e1 = edge_between(cyc[(k + 3) % 4], cyc[k]);
                        let e2 = edge_between(cyc[k], cyc[(k + 1) % 4]);
                        segs.push((e1, e2, cyc[k]));
                    }
                }
            }
            _ => unreachable!("a face cycle has an even number of sign changes"),
        }
        for (e1, e2, cin) in segs {
            let (p, q) = (edge_mid(e1), edge_mid(e2));
            let left = dot(cross(n, sub(q, p)), sub(corner_pos(cin), p));
            let (from, to) = if left > 0.0 { (e1, e2) } else { (e2, e1) };
            debug_assert_eq!(next[from], u8::MAX);
            next[from] = to as u8;
        }
    }

    let mut case = Case::default();
    let mut seen = [false; 12];
    for start in 0..12 {
        if next[start] == u8::MAX || seen[start] {
            continue;
        }
        let mut lp = Vec::new();
        let mut e = start;
        while !seen[e] {
            seen[e] = true;
            lp.push(e as u8);
            e = next[e] as usize;
        }
        case.loops.push(lp);
    }

    for (li, lp) in case.loops.iter().enumerate() {
        // loop direction leaves the interior on the left seen from outside,
        // so triangles are emitted reversed to face outward
        match triangulate(lp) {
            Some(tris) => {
                for [a, b, c] in tris {
                    case.tris.push([Slot::Edge(a), Slot::Edge(c), Slot::Edge(b)]);
                }
            }
            None => {
                let m = lp.len();
                for k in 0..m {
                    case.tris.push([
                        Slot::Center(li as u8),
                        Slot::Edge(lp[(k + 1) % m]),
                        Slot::Edge(lp[k]),
                    ]);
                }
            }
        }
    }
    case
}

fn table() -> &'static [Case] {
    static TABLE: OnceLock<Vec<Case>> = OnceLock::new();
    TABLE.get_or_init(|| (0..=255u8).map(build_case).collect())
}

/// Extracts the iso-surface of a scalar grid (or a label grid, treated as its
/// raw ids) in world coordinates. All faces and vertices carry organ id 1.
pub fn marching_cubes<T: Scalar>(grid: &VoxelGrid<T>, iso: T) -> Result<TriMesh<T>> {
    marching_cubes_with(grid, iso, Interior::Above)
}

pub fn marching_cubes_with<T: Scalar>(
    grid: &VoxelGrid<T>,
    iso: T,
    interior: Interior,
) -> Result<TriMesh<T>> {
    let lat = grid.lattice;
    let [nx, ny, nz] = lat.dims;
    if lat.dims.iter().any(|&d| d < 2) {
        return Err(Error::DegenerateGrid(lat.dims));
    }
    let values: Vec<T> = match (grid.scalar_values(), grid.label_values()) {
        (Some(v), _) => v.to_vec(),
        (None, Some(l)) => l.iter().map(|&x| T::lit(x as f64)).collect(),
        _ => return Err(Error::InvalidGrid("marching cubes needs a scalar or label grid".into())),
    };
    let is_in = |v: T| match interior {
        Interior::Above => v > iso,
        Interior::Below => v < iso,
    };

    // an actual crossing on some real grid edge
    let mut crosses = false;
    'scan: for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let a = is_in(values[lat.index(i, j, k)]);
                if (i + 1 < nx && is_in(values[lat.index(i + 1, j, k)]) != a)
                    || (j + 1 < ny && is_in(values[lat.index(i, j + 1, k)]) != a)
                    || (k + 1 < nz && is_in(values[lat.index(i, j, k + 1)]) != a)
                {
                    crosses = true;
                    break 'scan;
                }
            }
        }
    }
    if !crosses {
        return Err(Error::EmptySurface);
    }

    // padded node coordinates run over 0..=n+1, real node i maps to i+1
    let (px, py, pz) = (nx + 2, ny + 2, nz + 2);
    let pidx = |i: usize, j: usize, k: usize| i + px * (j + py * k);
    let real = |i: usize, j: usize, k: usize| {
        i >= 1 && j >= 1 && k >= 1 && i <= nx && j <= ny && k <= nz
    };
    let value_at = |i: usize, j: usize, k: usize| -> Option<T> {
        if real(i, j, k) {
            Some(values[lat.index(i - 1, j - 1, k - 1)])
        } else {
            None
        }
    };
    let inside_at = |i: usize, j: usize, k: usize| value_at(i, j, k).is_some_and(is_in);
    let world = |i: usize, j: usize, k: usize| -> Vec3<T> {
        // only ever called on real nodes
        lat.world(i - 1, j - 1, k - 1)
    };

    let mut edge_vertex: Vec<u32> = vec![u32::MAX; px * py * pz * 3];
    let mut vertices: Vec<Vec3<T>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let tab = table();

    for k in 0..pz - 1 {
        for j in 0..py - 1 {
            for i in 0..px - 1 {
                let mut mask = 0u8;
                for (c, off) in CORNER_OFFSETS.iter().enumerate() {
                    if inside_at(i + off[0], j + off[1], k + off[2]) {
                        mask |= 1 << c;
                    }
                }
                if mask == 0 || mask == 255 {
                    continue;
                }
                let case = &tab[mask as usize];
                let mut local = [usize::MAX; 12];
                let mut vertex_of = |e: usize, vertices: &mut Vec<Vec3<T>>| -> usize {
                    if local[e] != usize::MAX {
                        return local[e];
                    }
                    let (ca, cb, axis) = EDGES[e];
                    let oa = CORNER_OFFSETS[ca];
                    let ob = CORNER_OFFSETS[cb];
                    let (ai, aj, ak) = (i + oa[0], j + oa[1], k + oa[2]);
                    let (bi, bj, bk) = (i + ob[0], j + ob[1], k + ob[2]);
                    let key = pidx(ai, aj, ak) * 3 + axis;
                    let id = if edge_vertex[key] != u32::MAX {
                        edge_vertex[key] as usize
                    } else {
                        let p = match (value_at(ai, aj, ak), value_at(bi, bj, bk)) {
                            (Some(va), Some(vb)) => {
                                let (pa, pb) = (world(ai, aj, ak), world(bi, bj, bk));
                                let t = (iso - va) / (vb - va);
                                pa + (pb - pa) * t
                            }
                            (Some(_), None) => world(ai, aj, ak),
                            (None, Some(_)) => world(bi, bj, bk),
                            (None, None) => unreachable!("padding edges never cross"),
                        };
                        vertices.push(p);
                        let id = vertices.len() - 1;
                        edge_vertex[key] = id as u32;
                        id
                    };
                    local[e] = id;
                    id
                };
                let mut centers: Vec<Option<usize>> = vec![None; case.loops.len()];
                for tri in &case.tris {
                    let mut ids = [0usize; 3];
                    for (s, slot) in tri.iter().enumerate() {
                        ids[s] = match *slot {
                            Slot::Edge(e) => vertex_of(e as usize, &mut vertices),
                            Slot::Center(l) => {
                                let l = l as usize;
                                if let Some(c) = centers[l] {
                                    c
                                } else {
                                    let members: Vec<usize> = case.loops[l]
                                        .iter()
                                        .map(|&e| vertex_of(e as usize, &mut vertices))
                                        .collect();
                                    let sum: Vec3<T> = members.iter().map(|&m| vertices[m]).sum();
                                    vertices.push(sum / T::from_usize_lossy(members.len()));
                                    centers[l] = Some(vertices.len() - 1);
                                    vertices.len() - 1
                                }
                            }
                        };
                    }
                    faces.push(ids);
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptySurface);
    }
    let nv = vertices.len();
    let nf = faces.len();
    Ok(TriMesh {
        vertices,
        faces,
        organ_of_vertex: vec![1; nv],
        organ_of_face: vec![1; nf],
    })
}
