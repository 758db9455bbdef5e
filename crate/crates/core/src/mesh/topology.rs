use std::collections::HashMap;

use crate::mesh::TriMesh;
use crate::scalar::Scalar;
use crate::Label;

/// A face-connected piece of a mesh, by index into the parent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub organ: Label,
    /// Face indices, ascending.
    pub faces: Vec<usize>,
    /// Vertex indices, ascending.
    pub vertices: Vec<usize>,
}

impl Component {
    pub fn to_mesh<T: Scalar>(&self, mesh: &TriMesh<T>) -> TriMesh<T> {
        mesh.submesh(&self.faces).0
    }
}

#[inline]
fn sorted(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Unique undirected edges as `(i, j)` with `i < j`, lexicographically sorted.
pub fn edge_set<T>(mesh: &TriMesh<T>) -> Vec<(usize, usize)> {
    edge_set_of_faces(mesh.faces.iter())
}

pub(crate) fn edge_set_of_faces<'a>(faces: impl Iterator<Item = &'a [usize; 3]>) -> Vec<(usize, usize)> {
    let mut e: Vec<(usize, usize)> = faces
        .flat_map(|f| [sorted(f[0], f[1]), sorted(f[1], f[2]), sorted(f[2], f[0])])
        .collect();
    e.sort_unstable();
    e.dedup();
    e
}

/// Number of faces incident to every undirected edge.
pub(crate) fn edge_face_counts<'a>(
    faces: impl Iterator<Item = &'a [usize; 3]>,
) -> HashMap<(usize, usize), usize> {
    let mut m = HashMap::new();
    for f in faces {
        for k in 0..3 {
            *m.entry(sorted(f[k], f[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    m
}

/// Edges with exactly one incident face.
pub fn boundary_edges<T>(mesh: &TriMesh<T>) -> Vec<(usize, usize)> {
    let mut b: Vec<_> = edge_face_counts(mesh.faces.iter())
        .into_iter()
        .filter(|&(_, c)| c == 1)
        .map(|(e, _)| e)
        .collect();
    b.sort_unstable();
    b
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Partitions faces by shared-edge adjacency. Components are ordered by their
/// smallest vertex index.
pub fn connected_components<T>(mesh: &TriMesh<T>) -> Vec<Component> {
    let nf = mesh.faces.len();
    let mut dsu = Dsu((0..nf).collect());
    let mut first_face: HashMap<(usize, usize), usize> = HashMap::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            let e = sorted(f[k], f[(k + 1) % 3]);
            match first_face.get(&e) {
                Some(&g) => dsu.union(fi, g),
                None => {
                    first_face.insert(e, fi);
                }
            }
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for fi in 0..nf {
        let r = dsu.find(fi);
        groups.entry(r).or_default().push(fi);
    }
    let mut comps: Vec<Component> = groups
        .into_values()
        .map(|faces| {
            let mut vertices: Vec<usize> = faces.iter().flat_map(|&f| mesh.faces[f]).collect();
            vertices.sort_unstable();
            vertices.dedup();
            Component {
                organ: mesh.organ_of_face[faces[0]],
                faces,
                vertices,
            }
        })
        .collect();
    comps.sort_by_key(|c| c.vertices[0]);
    comps
}

/// `V - E + F` for every connected component, in component order.
pub fn euler_characteristic<T>(mesh: &TriMesh<T>) -> Vec<i64> {
    connected_components(mesh)
        .iter()
        .map(|c| component_euler(mesh, c))
        .collect()
}

pub(crate) fn component_euler<T>(mesh: &TriMesh<T>, c: &Component) -> i64 {
    let e = edge_set_of_faces(c.faces.iter().map(|&f| &mesh.faces[f])).len();
    c.vertices.len() as i64 - e as i64 + c.faces.len() as i64
}

/// Whether every edge of the given faces has exactly two incident faces.
pub(crate) fn is_closed<'a>(faces: impl Iterator<Item = &'a [usize; 3]>) -> bool {
    edge_face_counts(faces).values().all(|&c| c == 2)
}

/// Sorted 1-ring neighbor lists.
pub fn vertex_neighbors<T>(mesh: &TriMesh<T>) -> Vec<Vec<usize>> {
    let mut nb = vec![Vec::new(); mesh.vertices.len()];
    for (i, j) in edge_set(mesh) {
        nb[i].push(j);
        nb[j].push(i);
    }
    for n in &mut nb {
        n.sort_unstable();
    }
    nb
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Vec3;
    use crate::synth;

    fn tri() -> TriMesh<f64> {
        TriMesh::single_organ(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
            1,
        )
        .unwrap()
    }

    #[test]
    fn edges_of_simple_shapes() {
        assert_eq!(edge_set(&tri()), vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(edge_set(&synth::tetrahedron::<f64>()).len(), 6);
        let two = TriMesh::single_organ(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [1, 3, 2]],
            1,
        )
        .unwrap();
        assert_eq!(edge_set(&two).len(), 5);
        assert_eq!(connected_components(&two).len(), 1);
    }

    #[test]
    fn euler_of_polyhedra() {
        assert_eq!(euler_characteristic(&synth::tetrahedron::<f64>()), vec![2]);
        assert_eq!(euler_characteristic(&synth::icosahedron::<f64>(1.0)), vec![2]);
        let t = synth::tetrahedron::<f64>();
        let t2 = t.map_vertices(|v| v + Vec3::new(5.0, 0.0, 0.0));
        let both = TriMesh::merge(&[t, t2]);
        assert_eq!(euler_characteristic(&both), vec![2, 2]);
    }

    #[test]
    fn components_counts() {
        assert_eq!(connected_components(&synth::icosphere::<f64>(1.0, 2)).len(), 1);
        let a = tri();
        let b = tri().map_vertices(|v| v + Vec3::new(3.0, 0.0, 0.0));
        let m = TriMesh::merge(&[a, b]);
        let cc = connected_components(&m);
        assert_eq!(cc.len(), 2);
        assert_eq!(cc[0].vertices, vec![0, 1, 2]);
        assert_eq!(cc[1].vertices, vec![3, 4, 5]);
    }

    #[test]
    fn kidneys_share_a_label() {
        // liver, two kidneys sharing one id, spleen, pancreas
        let parts: Vec<TriMesh<f64>> = [(1u8, 0.0), (2, 10.0), (2, 20.0), (3, 30.0), (4, 40.0)]
            .iter()
            .map(|&(o, dx)| {
                synth::icosphere::<f64>(2.0, 1)
                    .map_vertices(|v| v + Vec3::new(dx, 0.0, 0.0))
                    .relabel(o)
            })
            .collect();
        let m = TriMesh::merge(&parts);
        assert_eq!(connected_components(&m).len(), 5);
        assert_eq!(m.organs().len(), 4);
    }

    #[test]
    fn boundary_of_open_triangle() {
        assert_eq!(boundary_edges(&tri()).len(), 3);
        assert!(boundary_edges(&synth::icosphere::<f64>(1.0, 1)).is_empty());
    }
}
