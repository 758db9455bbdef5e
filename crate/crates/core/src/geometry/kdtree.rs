use rayon::prelude::*;

use crate::scalar::{Scalar, Vec3};

const LEAF: usize = 8;

#[derive(Clone, Debug)]
enum Node<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

/// Exact nearest-neighbor index over a fixed point set. Among equidistant
/// points the lowest index wins.
#[derive(Clone, Debug)]
pub struct KdTree<T> {
    points: Vec<Vec3<T>>,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> KdTree<T> {
    pub fn new(points: &[Vec3<T>]) -> Self {
        let mut t = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            t.build(0, points.len());
        }
        t
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3<T>] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF {
            return id;
        }
        let mut lo = Vec3::splat(T::infinity());
        let mut hi = Vec3::splat(T::neg_infinity());
        for &i in &self.order[start..end] {
            lo = lo.min(self.points[i]);
            hi = hi.max(self.points[i]);
        }
        let ext = hi - lo;
        let axis = if ext[0] >= ext[1] && ext[0] >= ext[2] {
            0
        } else if ext[1] >= ext[2] {
            1
        } else {
            2
        };
        if ext[axis] == T::zero() {
            return id;
        }
        let mid = (start + end) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].partial_cmp(&pts[b][axis]).expect("finite").then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Index and squared distance of the nearest point, `None` when empty.
    pub fn nearest(&self, q: Vec3<T>) -> Option<(usize, T)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, T::infinity());
        self.search(0, q, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: Vec3<T>, best: &mut (usize, T)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = (self.points[i] - q).norm_squared();
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }

    /// Nearest neighbor of every query, computed in parallel.
    pub fn nearest_all(&self, queries: &[Vec3<T>]) -> Vec<(usize, T)> {
        queries
            .par_iter()
            .map(|&q| self.nearest(q).expect("non-empty tree"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(pts: &[Vec3<f64>], q: Vec3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in pts.iter().enumerate() {
            let d = (*p - q).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn empty_and_single() {
        let t = KdTree::<f64>::new(&[]);
        assert!(t.nearest(Vec3::zero()).is_none());
        let t = KdTree::new(&[Vec3::new(1.0, 2.0, 3.0)]);
        assert_eq!(t.nearest(Vec3::zero()), Some((0, 14.0)));
    }

    #[test]
    fn ties_pick_lowest_index() {
        // many duplicates on a lattice, queried at equidistant midpoints
        let mut pts = Vec::new();
        for _ in 0..3 {
            for i in 0..6 {
                for j in 0..6 {
                    pts.push(Vec3::new(i as f64, j as f64, 0.0));
                }
            }
        }
        let t = KdTree::new(&pts);
        for i in 0..5 {
            for j in 0..5 {
                let q = Vec3::new(i as f64 + 0.5, j as f64 + 0.5, 0.0);
                assert_eq!(t.nearest(q).unwrap(), brute(&pts, q));
            }
        }
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            raw in proptest::collection::vec((-10i32..10, -10i32..10, -10i32..10), 1..200),
            qs in proptest::collection::vec((-12.0f64..12.0, -12.0f64..12.0, -12.0f64..12.0), 1..20),
        ) {
            // integer coordinates make ties frequent
            let pts: Vec<Vec3<f64>> = raw.iter().map(|&(x, y, z)| Vec3::new(x as f64, y as f64, z as f64)).collect();
            let t = KdTree::new(&pts);
            for (x, y, z) in qs {
                let q = Vec3::new(x.round(), y.round(), z.round());
                prop_assert_eq!(t.nearest(q).unwrap(), brute(&pts, q));
                let q = Vec3::new(x, y, z);
                prop_assert_eq!(t.nearest(q).unwrap(), brute(&pts, q));
            }
        }
    }
}
