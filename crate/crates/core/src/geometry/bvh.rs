use crate::geometry::triangle::closest_point_on_triangle;
use crate::mesh::TriMesh;
use crate::scalar::{Aabb, Scalar, Vec3};

const LEAF: usize = 4;

#[derive(Clone, Debug)]
struct Node<T> {
    bbox: Aabb<T>,
    /// Leaf when `count > 0`: triangles `first..first + count` of `order`.
    /// Otherwise `first` is the left child; the right child follows its subtree.
    first: usize,
    count: usize,
    right: usize,
}

/// Closest surface point found by [`Bvh::closest`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Closest<T> {
    /// Caller's face id.
    pub face: usize,
    pub point: Vec3<T>,
    pub distance_squared: T,
}

/// Bounding-volume hierarchy over a set of triangles with exact closest-point
/// and box-overlap pair queries.
#[derive(Clone, Debug)]
pub struct Bvh<T> {
    tris: Vec<[Vec3<T>; 3]>,
    ids: Vec<usize>,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Bvh<T> {
    /// Over every face of `mesh`; ids are face indices.
    pub fn from_mesh(mesh: &TriMesh<T>) -> Self {
        let ids: Vec<usize> = (0..mesh.num_faces()).collect();
        Self::from_faces(mesh, &ids)
    }

    /// Over the listed faces of `mesh`; ids are the listed face indices.
    pub fn from_faces(mesh: &TriMesh<T>, faces: &[usize]) -> Self {
        let tris = faces.iter().map(|&f| mesh.triangle(f)).collect();
        Self::new(tris, faces.to_vec())
    }

    pub fn new(tris: Vec<[Vec3<T>; 3]>, ids: Vec<usize>) -> Self {
        assert_eq!(tris.len(), ids.len());
        let mut b = Bvh {
            order: (0..tris.len()).collect(),
            tris,
            ids,
            nodes: Vec::new(),
        };
        if !b.tris.is_empty() {
            let centroids: Vec<Vec3<T>> = b
                .tris
                .iter()
                .map(|t| (t[0] + t[1] + t[2]) / T::lit(3.0))
                .collect();
            b.build(0, b.tris.len(), &centroids);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.tris.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    fn tri_box(&self, i: usize) -> Aabb<T> {
        Aabb::from_points(self.tris[i].iter())
    }

    fn build(&mut self, start: usize, end: usize, centroids: &[Vec3<T>]) -> usize {
        let mut bbox = Aabb::empty();
        let mut cbox = Aabb::empty();
        for &i in &self.order[start..end] {
            bbox = bbox.union(&self.tri_box(i));
            cbox.grow(centroids[i]);
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            bbox,
            first: start,
            count: end - start,
            right: 0,
        });
        let ext = cbox.max - cbox.min;
        let axis = if ext[0] >= ext[1] && ext[0] >= ext[2] {
            0
        } else if ext[1] >= ext[2] {
            1
        } else {
            2
        };
        if end - start <= LEAF || ext[axis] == T::zero() {
            return id;
        }
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis]
                .partial_cmp(&centroids[b][axis])
                .expect("finite")
                .then(a.cmp(&b))
        });
        let left = self.build(start, mid, centroids);
        let right = self.build(mid, end, centroids);
        self.nodes[id].first = left;
        self.nodes[id].count = 0;
        self.nodes[id].right = right;
        id
    }

    /// Exact closest point on the triangle set. Ties go to the smallest id.
    pub fn closest(&self, q: Vec3<T>) -> Option<Closest<T>> {
        if self.tris.is_empty() {
            return None;
        }
        let mut best = Closest {
            face: usize::MAX,
            point: q,
            distance_squared: T::infinity(),
        };
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bbox.distance_squared(q) > best.distance_squared {
                continue;
            }
            if node.count > 0 {
                for &i in &self.order[node.first..node.first + node.count] {
                    let t = &self.tris[i];
                    let p = closest_point_on_triangle(q, t[0], t[1], t[2]);
                    let d = (p - q).norm_squared();
                    let id = self.ids[i];
                    if d < best.distance_squared || (d == best.distance_squared && id < best.face) {
                        best = Closest {
                            face: id,
                            point: p,
                            distance_squared: d,
                        };
                    }
                }
            } else {
                let (l, r) = (node.first, node.right);
                let dl = self.nodes[l].bbox.distance_squared(q);
                let dr = self.nodes[r].bbox.distance_squared(q);
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        Some(best)
    }

    /// Id pairs `(a, b)` with `a < b` whose triangle boxes overlap (closed
    /// boxes), sorted.
    pub fn self_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if !self.tris.is_empty() {
            self.pairs_rec(self, 0, 0, true, &mut out);
        }
        for p in &mut out {
            if p.0 > p.1 {
                *p = (p.1, p.0);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Id pairs `(a in self, b in other)` whose triangle boxes overlap, sorted.
    pub fn pairs_with(&self, other: &Bvh<T>) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if !self.tris.is_empty() && !other.tris.is_empty() {
            self.pairs_rec(other, 0, 0, false, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn pairs_rec(&self, other: &Bvh<T>, a: usize, b: usize, same: bool, out: &mut Vec<(usize, usize)>) {
        let na = &self.nodes[a];
        let nb = &other.nodes[b];
        if !na.bbox.overlaps(&nb.bbox) {
            return;
        }
        match (na.count > 0, nb.count > 0) {
            (true, true) => {
                for &i in &self.order[na.first..na.first + na.count] {
                    let bi = self.tri_box(i);
                    for &j in &other.order[nb.first..nb.first + nb.count] {
                        if same && a == b && j <= i {
                            continue;
                        }
                        if bi.overlaps(&other.tri_box(j)) {
                            out.push((self.ids[i], other.ids[j]));
                        }
                    }
                }
            }
            (false, true) => {
                self.pairs_rec(other, na.first, b, same, out);
                self.pairs_rec(other, na.right, b, same, out);
            }
            (true, false) => {
                self.pairs_rec(other, a, nb.first, same, out);
                self.pairs_rec(other, a, nb.right, same, out);
            }
            (false, false) => {
                if same && a == b {
                    let (l, r) = (na.first, na.right);
                    self.pairs_rec(other, l, l, true, out);
                    self.pairs_rec(other, r, r, true, out);
                    self.pairs_rec(other, l, r, true, out);
                } else {
                    self.pairs_rec(other, na.first, nb.first, same, out);
                    self.pairs_rec(other, na.first, nb.right, same, out);
                    self.pairs_rec(other, na.right, nb.first, same, out);
                    self.pairs_rec(other, na.right, nb.right, same, out);
                }
            }
        }
    }
}
