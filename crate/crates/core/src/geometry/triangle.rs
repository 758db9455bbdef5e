use robust::{orient2d, orient3d, Coord, Coord3D};

use crate::scalar::{Scalar, Vec3};

fn closest_on_segment<T: Scalar>(p: Vec3<T>, a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    let ab = b - a;
    let l = ab.norm_squared();
    if l == T::zero() {
        return a;
    }
    let t = ((p - a).dot(ab) / l).max(T::zero()).min(T::one());
    a + ab * t
}

/// Closest point of the closed triangle `abc` to `p` (Voronoi region walk).
pub fn closest_point_on_triangle<T: Scalar>(p: Vec3<T>, a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> Vec3<T> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= T::zero() && d2 <= T::zero() {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= T::zero() && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= T::zero() && d1 >= T::zero() && d3 <= T::zero() {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= T::zero() && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= T::zero() && d2 >= T::zero() && d6 <= T::zero() {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= T::zero() && (d4 - d3) >= T::zero() && (d5 - d6) >= T::zero() {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = va + vb + vc;
    let q = if denom > T::zero() {
        let v = vb / denom;
        let w = vc / denom;
        a + ab * v + ac * w
    } else {
        Vec3::splat(T::nan())
    };
    if q.is_finite() {
        return q;
    }
    // degenerate triangle: nearest of the three edges
    [(a, b), (b, c), (c, a)]
        .iter()
        .map(|&(u, v)| closest_on_segment(p, u, v))
        .fold(a, |best, x| {
            if (x - p).norm_squared() < (best - p).norm_squared() {
                x
            } else {
                best
            }
        })
}

pub fn point_triangle_distance_squared<T: Scalar>(p: Vec3<T>, tri: &[Vec3<T>; 3]) -> T {
    (closest_point_on_triangle(p, tri[0], tri[1], tri[2]) - p).norm_squared()
}

fn c3(p: [f64; 3]) -> Coord3D<f64> {
    Coord3D {
        x: p[0],
        y: p[1],
        z: p[2],
    }
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

fn o3(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> i8 {
    sign(orient3d(c3(a), c3(b), c3(c), c3(d)))
}

fn o2(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> i8 {
    sign(orient2d(
        Coord { x: a[0], y: a[1] },
        Coord { x: b[0], y: b[1] },
        Coord { x: c[0], y: c[1] },
    ))
}

fn on_segment_2d(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    (0..2).all(|i| p[i] >= a[i].min(b[i]) && p[i] <= a[i].max(b[i]))
}

fn segments_intersect_2d(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = o2(q1, q2, p1);
    let d2 = o2(q1, q2, p2);
    let d3 = o2(p1, p2, q1);
    let d4 = o2(p1, p2, q2);
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    (d1 == 0 && on_segment_2d(q1, q2, p1))
        || (d2 == 0 && on_segment_2d(q1, q2, p2))
        || (d3 == 0 && on_segment_2d(p1, p2, q1))
        || (d4 == 0 && on_segment_2d(p1, p2, q2))
}

fn point_in_triangle_2d(t: [[f64; 2]; 3], p: [f64; 2]) -> bool {
    let s = [o2(t[0], t[1], p), o2(t[1], t[2], p), o2(t[2], t[0], p)];
    (s.iter().all(|&x| x >= 0) || s.iter().all(|&x| x <= 0)) && o2(t[0], t[1], t[2]) != 0
}

/// Closed segment against closed triangle, exact.
fn segment_hits_triangle(p: [f64; 3], q: [f64; 3], t: &[[f64; 3]; 3]) -> bool {
    let sp = o3(t[0], t[1], t[2], p);
    let sq = o3(t[0], t[1], t[2], q);
    if sp * sq > 0 {
        return false;
    }
    if sp == 0 && sq == 0 {
        // coplanar (or degenerate triangle): drop the dominant normal axis
        let u = [t[1][0] - t[0][0], t[1][1] - t[0][1], t[1][2] - t[0][2]];
        let v = [t[2][0] - t[0][0], t[2][1] - t[0][1], t[2][2] - t[0][2]];
        let n = [
            (u[1] * v[2] - u[2] * v[1]).abs(),
            (u[2] * v[0] - u[0] * v[2]).abs(),
            (u[0] * v[1] - u[1] * v[0]).abs(),
        ];
        if n == [0.0; 3] {
            return false;
        }
        let drop = if n[0] >= n[1] && n[0] >= n[2] {
            0
        } else if n[1] >= n[2] {
            1
        } else {
            2
        };
        let (i, j) = match drop {
            0 => (1, 2),
            1 => (2, 0),
            _ => (0, 1),
        };
        let pr = |x: [f64; 3]| [x[i], x[j]];
        let t2 = [pr(t[0]), pr(t[1]), pr(t[2])];
        let (p2, q2) = (pr(p), pr(q));
        if o2(t2[0], t2[1], t2[2]) == 0 {
            return false;
        }
        return point_in_triangle_2d(t2, p2)
            || point_in_triangle_2d(t2, q2)
            || (0..3).any(|k| segments_intersect_2d(p2, q2, t2[k], t2[(k + 1) % 3]));
    }
    let s = [o3(p, q, t[0], t[1]), o3(p, q, t[1], t[2]), o3(p, q, t[2], t[0])];
    s.iter().all(|&x| x >= 0) || s.iter().all(|&x| x <= 0)
}

/// Exact test whether two closed triangles share at least one point.
///
/// Two closed triangles meet iff an edge of one meets the other; touching and
/// coplanar overlap count as intersection.
pub fn triangles_intersect<T: Scalar>(a: &[Vec3<T>; 3], b: &[Vec3<T>; 3]) -> bool {
    let a = a.map(|v| v.to_f64());
    let b = b.map(|v| v.to_f64());
    (0..3).any(|k| segment_hits_triangle(a[k], a[(k + 1) % 3], &b))
        || (0..3).any(|k| segment_hits_triangle(b[k], b[(k + 1) % 3], &a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3<f64> {
        Vec3::new(x, y, z)
    }

    /// Independent oracle: plane projection if it lands inside, else the best
    /// of the three clamped edge projections.
    fn oracle_dist2(p: Vec3<f64>, t: &[Vec3<f64>; 3]) -> f64 {
        let n = (t[1] - t[0]).cross(t[2] - t[0]);
        let mut best = f64::INFINITY;
        let nn = n.norm_squared();
        if nn > 0.0 {
            let proj = p - n * ((p - t[0]).dot(n) / nn);
            let inside = (0..3).all(|k| {
                let e = t[(k + 1) % 3] - t[k];
                e.cross(proj - t[k]).dot(n) >= 0.0
            });
            if inside {
                best = (p - proj).norm_squared();
            }
        }
        for k in 0..3 {
            let q = closest_on_segment(p, t[k], t[(k + 1) % 3]);
            best = best.min((p - q).norm_squared());
        }
        best
    }

    #[test]
    fn regions() {
        let t = [v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0)];
        assert_eq!(point_triangle_distance_squared(v(0.2, 0.2, 3.0), &t), 9.0);
        assert_eq!(point_triangle_distance_squared(v(-1.0, -1.0, 0.0), &t), 2.0);
        assert_eq!(closest_point_on_triangle(v(0.5, -2.0, 0.0), t[0], t[1], t[2]), v(0.5, 0.0, 0.0));
        assert_eq!(closest_point_on_triangle(v(1.0, 1.0, 0.0), t[0], t[1], t[2]), v(0.5, 0.5, 0.0));
    }

    #[test]
    fn degenerate_triangle_is_a_segment() {
        let t = [v(0.0, 0.0, 0.0), v(2.0, 0.0, 0.0), v(1.0, 0.0, 0.0)];
        assert_eq!(point_triangle_distance_squared(v(1.5, 3.0, 0.0), &t), 9.0);
    }

    #[test]
    fn crossing_and_separated() {
        let a = [v(0.0, 0.0, 0.0), v(2.0, 0.0, 0.0), v(0.0, 2.0, 0.0)];
        let b = [v(0.5, 0.5, -1.0), v(0.5, 0.5, 1.0), v(1.5, 0.2, 0.0)];
        assert!(triangles_intersect(&a, &b));
        let c = b.map(|p| p + v(0.0, 0.0, 1.5));
        assert!(!triangles_intersect(&a, &c));
    }

    #[test]
    fn touching_and_coplanar() {
        let a = [v(0.0, 0.0, 0.0), v(2.0, 0.0, 0.0), v(0.0, 2.0, 0.0)];
        // vertex touching the interior
        let b = [v(0.5, 0.5, 0.0), v(0.5, 0.5, 1.0), v(1.0, 0.5, 1.0)];
        assert!(triangles_intersect(&a, &b));
        // coplanar overlap
        let c = [v(0.5, 0.5, 0.0), v(3.0, 0.5, 0.0), v(0.5, 3.0, 0.0)];
        assert!(triangles_intersect(&a, &c));
        // coplanar, contained
        let d = [v(0.2, 0.2, 0.0), v(0.4, 0.2, 0.0), v(0.2, 0.4, 0.0)];
        assert!(triangles_intersect(&a, &d));
        assert!(triangles_intersect(&d, &a));
        // coplanar disjoint
        let e = d.map(|p| p + v(5.0, 0.0, 0.0));
        assert!(!triangles_intersect(&a, &e));
    }

    #[test]
    fn f32_inputs() {
        let a = [Vec3::<f32>::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)];
        let b = [Vec3::new(0.5, 0.5, -1.0), Vec3::new(0.5, 0.5, 1.0), Vec3::new(1.5, 0.2, 0.0)];
        assert!(triangles_intersect(&a, &b));
    }

    fn pt() -> impl Strategy<Value = Vec3<f64>> {
        (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0).prop_map(|(x, y, z)| v(x, y, z))
    }

    proptest! {
        #[test]
        fn distance_matches_oracle(p in pt(), a in pt(), b in pt(), c in pt()) {
            let t = [a, b, c];
            let d = point_triangle_distance_squared(p, &t);
            let o = oracle_dist2(p, &t);
            prop_assert!((d - o).abs() <= 1e-9 * (1.0 + o), "{} vs {}", d, o);
        }

        #[test]
        fn intersection_symmetric_and_translation_invariant(a in pt(), b in pt(), c in pt(), d in pt(), e in pt(), f in pt()) {
            let s = [a, b, c];
            let t = [d, e, f];
            let r = triangles_intersect(&s, &t);
            prop_assert_eq!(r, triangles_intersect(&t, &s));
            prop_assert_eq!(r, triangles_intersect(&[b, c, a], &[f, d, e]));
            // integer shifts keep coordinates exact at this magnitude
            let sh = v(4.0, -8.0, 2.0);
            prop_assert_eq!(r, triangles_intersect(&s.map(|p| p + sh), &t.map(|p| p + sh)));
        }

        #[test]
        fn separated_by_plane_means_disjoint(a in pt(), b in pt(), c in pt(), d in pt(), e in pt(), f in pt()) {
            let s = [a, b, c].map(|p| v(p[0], p[1], p[2].abs() + 0.01));
            let t = [d, e, f].map(|p| v(p[0], p[1], -p[2].abs() - 0.01));
            prop_assert!(!triangles_intersect(&s, &t));
        }
    }
}
