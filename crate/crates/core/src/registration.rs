//! Rigid ICP and optimal-step non-rigid ICP that keep vertex order and
//! connectivity, plus alignment of meshes to label volumes.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3, Vector4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Bvh, KdTree};
use crate::mesh::{connected_components, edge_set, sample_surface_organ, SurfaceSamples, TriMesh};
use crate::scalar::{Scalar, Vec3};
use crate::volume::{marching_cubes, VoxelGrid};
use crate::Label;

/// `p -> rotation * p + translation`, in mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Rotation by `angle` radians about `axis` followed by `translation`.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64, translation: [f64; 3]) -> Self {
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::from(axis)), angle);
        Self::from_matrix(r.matrix(), translation)
    }

    fn from_matrix(m: &Matrix3<f64>, translation: [f64; 3]) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for (r, row) in rotation.iter_mut().enumerate() {
            for (c, x) in row.iter_mut().enumerate() {
                *x = m[(r, c)];
            }
        }
        RigidTransform { rotation, translation }
    }

    fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.rotation[r][c])
    }

    pub fn apply_f64(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    pub fn apply<T: Scalar>(&self, p: Vec3<T>) -> Vec3<T> {
        Vec3::from_f64(self.apply_f64(p.to_f64()))
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &RigidTransform) -> RigidTransform {
        let r = self.matrix() * first.matrix();
        let t = self.apply_f64(first.translation);
        Self::from_matrix(&r, t)
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.matrix().transpose();
        let t = -(rt * Vector3::from(self.translation));
        Self::from_matrix(&rt, [t[0], t[1], t[2]])
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        let m = self.matrix();
        ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
    }

    /// Largest deviation of `R^T R` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.matrix();
        (m.transpose() * m - Matrix3::identity()).abs().max()
    }

    pub fn determinant(&self) -> f64 {
        self.matrix().determinant()
    }
}

/// Least-squares rigid motion mapping `src[i]` onto `dst[i]` (SVD with
/// reflection fix).
pub fn kabsch(src: &[[f64; 3]], dst: &[[f64; 3]]) -> RigidTransform {
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (Vector3::from(*s) - cs) * (Vector3::from(*d) - cd).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("u");
    let vt = svd.v_t.expect("v_t");
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if d == 0.0 { 1.0 } else { d }));
    let r = v * fix * u.transpose();
    let t = cd - r * cs;
    RigidTransform::from_matrix(&r, [t[0], t[1], t[2]])
}

fn check_nondegenerate<T: Scalar>(v: &[Vec3<T>]) -> Result<()> {
    if v.len() < 3 {
        return Err(Error::DegenerateSource);
    }
    let p: Vec<Vector3<f64>> = v.iter().map(|x| Vector3::from(x.to_f64())).collect();
    let a = p[0];
    let b = *p
        .iter()
        .max_by(|x, y| (*x - a).norm_squared().total_cmp(&(*y - a).norm_squared()))
        .expect("non-empty");
    let ab = b - a;
    let l2 = ab.norm_squared();
    if l2 == 0.0 {
        return Err(Error::DegenerateSource);
    }
    if p.iter().any(|c| ab.cross(&(c - a)).norm_squared() > 1e-18 * l2 * l2) {
        Ok(())
    } else {
        Err(Error::DegenerateSource)
    }
}

#[derive(Clone, Debug)]
pub struct IcpResult<T> {
    pub transform: RigidTransform,
    pub aligned: TriMesh<T>,
    /// RMS distance of the final correspondences.
    pub rms: f64,
    pub iterations: usize,
}

/// One linearized point-to-plane update of `tf`. `None` when a normal is
/// missing or the 6x6 system is singular.
fn point_to_plane_step(
    tf: &RigidTransform,
    matched: &[([f64; 3], Option<[f64; 3]>)],
    dst: &[[f64; 3]],
) -> Option<RigidTransform> {
    let r = tf.matrix();
    let mut a = nalgebra::Matrix6::<f64>::zeros();
    let mut b = nalgebra::Vector6::<f64>::zeros();
    for ((s, n), d) in matched.iter().zip(dst) {
        let p = Vector3::from(tf.apply_f64(*s));
        let n = r * Vector3::from((*n)?);
        let c = p.cross(&n);
        let row = nalgebra::Vector6::new(c[0], c[1], c[2], n[0], n[1], n[2]);
        let res = (p - Vector3::from(*d)).dot(&n);
        a += row * row.transpose();
        b -= row * res;
    }
    let x = a.cholesky()?.solve(&b);
    let w = Vector3::new(x[0], x[1], x[2]);
    let rot = Rotation3::new(w);
    let step = RigidTransform::from_matrix(rot.matrix(), [x[3], x[4], x[5]]);
    Some(step.compose(tf))
}

/// Rigid ICP. Each target point is matched to the nearest transformed source
/// vertex and the motion is re-solved in closed form until the RMS changes by
/// less than `tol`; a second pass then matches to the closest point of the
/// source surface (skipped when the source has no faces). Each pass runs at
/// most `max_iters` rounds.
pub fn icp_rigid<T: Scalar>(
    source: &TriMesh<T>,
    target: &SurfaceSamples<T>,
    max_iters: usize,
    tol: f64,
) -> Result<IcpResult<T>> {
    check_nondegenerate(&source.vertices)?;
    if target.is_empty() {
        return Err(Error::EmptySet);
    }
    let src64 = source.cast::<f64>();
    let dst: Vec<[f64; 3]> = target.points.iter().map(|v| v.to_f64()).collect();
    // queries run in the source frame, so the indices are built once
    let tree = KdTree::new(&src64.vertices);
    let bvh = (src64.num_faces() > 0).then(|| Bvh::from_mesh(&src64));
    let mut tf = RigidTransform::identity();
    let mut rms = f64::INFINITY;
    let mut iterations = 0;
    for surface in [false, true] {
        if surface && bvh.is_none() {
            break;
        }
        let mut prev = f64::INFINITY;
        for _ in 0..max_iters {
            iterations += 1;
            let inv = tf.inverse();
            // (source point, source-frame unit normal of the matched face)
            let matched: Vec<([f64; 3], Option<[f64; 3]>)> = dst
                .par_iter()
                .map(|d| {
                    let q = Vec3(inv.apply_f64(*d));
                    match (&bvh, surface) {
                        (Some(b), true) => {
                            let c = b.closest(q).expect("non-empty");
                            let n = src64.face_normal_raw(c.face);
                            let len = n.norm();
                            (c.point.0, (len > 0.0).then(|| (n * (1.0 / len)).0))
                        }
                        _ => (src64.vertices[tree.nearest(q).expect("non-empty").0].0, None),
                    }
                })
                .collect();
            let pts: Vec<[f64; 3]> = matched.iter().map(|m| m.0).collect();
            tf = if surface {
                point_to_plane_step(&tf, &matched, &dst).unwrap_or_else(|| kabsch(&pts, &dst))
            } else {
                kabsch(&pts, &dst)
            };
            rms = (pts
                .iter()
                .zip(&dst)
                .map(|(s, d)| {
                    let m = tf.apply_f64(*s);
                    (0..3).map(|k| (m[k] - d[k]).powi(2)).sum::<f64>()
                })
                .sum::<f64>()
                / dst.len() as f64)
                .sqrt();
            if (prev - rms).abs() < tol {
                break;
            }
            prev = rms;
        }
    }
    let aligned = source.map_vertices(|v| tf.apply(v));
    Ok(IcpResult {
        transform: tf,
        aligned,
        rms,
        iterations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NricpParams {
    /// Strictly decreasing stiffness weights.
    pub stiffness: Vec<f64>,
    pub inner_iters: usize,
    /// Matches farther than this (mm) are dropped for the round.
    pub distance_cap: f64,
    /// Matches whose normals differ by this angle or more are dropped.
    pub normal_angle_deg: f64,
    /// Weight of the translational part in the stiffness term.
    pub gamma: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
}

impl Default for NricpParams {
    fn default() -> Self {
        NricpParams {
            stiffness: vec![8.0, 4.0, 2.0, 1.0],
            inner_iters: 10,
            distance_cap: 10.0,
            normal_angle_deg: 60.0,
            gamma: 1.0,
            cg_tol: 1e-8,
            cg_max_iters: 5000,
        }
    }
}

impl NricpParams {
    pub fn validate(&self) -> Result<()> {
        if self.stiffness.is_empty()
            || self.stiffness.iter().any(|&a| !(a > 0.0))
            || self.stiffness.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::Config("stiffness schedule must be positive and strictly decreasing".into()));
        }
        if !(self.distance_cap > 0.0) || !(self.gamma > 0.0) || !(self.cg_tol > 0.0) {
            return Err(Error::Config("distance cap, gamma and cg tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Normal equations of the optimal-step energy for one stiffness and one set
/// of matches, applied matrix-free.
struct System<'a> {
    d: &'a [Vector4<f64>],
    nbrs: &'a [Vec<usize>],
    w: Vec<f64>,
    alpha2: f64,
    g2: Vector4<f64>,
}

impl System<'_> {
    fn apply(&self, x: &[Vector4<f64>]) -> Vec<Vector4<f64>> {
        (0..x.len())
            .into_par_iter()
            .map(|i| {
                let mut s = Vector4::zeros();
                for &j in &self.nbrs[i] {
                    s += x[i] - x[j];
                }
                self.g2.component_mul(&s) * self.alpha2 + self.d[i] * (self.w[i] * self.d[i].dot(&x[i]))
            })
            .collect()
    }
}

fn dot(a: &[Vector4<f64>], b: &[Vector4<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// Two-level preconditioner: per-vertex 4x4 block inverse plus an exact solve
/// on the per-component constant transforms (the stiffness null space).
struct Precond {
    blocks: Vec<Matrix4<f64>>,
    comp_of: Vec<usize>,
    coarse: Vec<Matrix4<f64>>,
}

impl Precond {
    fn new(sys: &System<'_>, comp_of: &[usize], ncomp: usize) -> Result<Self> {
        let n = sys.d.len();
        let mut blocks = Vec::with_capacity(n);
        for i in 0..n {
            let b = Matrix4::from_diagonal(&(sys.g2 * (sys.alpha2 * sys.nbrs[i].len() as f64)))
                + sys.d[i] * sys.d[i].transpose() * sys.w[i];
            blocks.push(b.try_inverse().unwrap_or_else(Matrix4::zeros));
        }
        let mut data = vec![Matrix4::zeros(); ncomp];
        for i in 0..n {
            data[comp_of[i]] += sys.d[i] * sys.d[i].transpose() * sys.w[i];
        }
        let mut coarse = Vec::with_capacity(ncomp);
        for (k, m) in data.into_iter().enumerate() {
            let e = m.symmetric_eigen().eigenvalues;
            let (lo, hi) = (e.min(), e.max());
            if !(hi > 0.0) || lo <= 1e-12 * hi {
                return Err(Error::SingularSystem(format!(
                    "component {k} has too few or coplanar correspondences"
                )));
            }
            coarse.push(m.try_inverse().expect("checked"));
        }
        Ok(Precond {
            blocks,
            comp_of: comp_of.to_vec(),
            coarse,
        })
    }

    fn apply(&self, r: &[Vector4<f64>]) -> Vec<Vector4<f64>> {
        let mut sums = vec![Vector4::zeros(); self.coarse.len()];
        for (i, x) in r.iter().enumerate() {
            sums[self.comp_of[i]] += x;
        }
        let corr: Vec<Vector4<f64>> = sums.iter().zip(&self.coarse).map(|(s, m)| m * s).collect();
        r.iter()
            .enumerate()
            .map(|(i, x)| self.blocks[i] * x + corr[self.comp_of[i]])
            .collect()
    }
}

fn pcg(sys: &System<'_>, pre: &Precond, b: &[Vector4<f64>], x: &mut [Vector4<f64>], tol: f64, max_iters: usize) -> Result<()> {
    let bn = dot(b, b).sqrt();
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = Vector4::zeros());
        return Ok(());
    }
    let ax = sys.apply(x);
    let mut r: Vec<Vector4<f64>> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z = pre.apply(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iters {
        if dot(&r, &r).sqrt() <= tol * bn {
            return Ok(());
        }
        let ap = sys.apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SingularSystem("normal equations not positive definite".into()));
        }
        let a = rz / pap;
        for i in 0..x.len() {
            x[i] += p[i] * a;
            r[i] -= ap[i] * a;
        }
        z = pre.apply(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + p[i] * beta;
        }
    }
    if dot(&r, &r).sqrt() <= tol * bn * 1e3 {
        Ok(())
    } else {
        Err(Error::SingularSystem("conjugate gradient did not converge".into()))
    }
}

/// Optimal-step non-rigid ICP. Each vertex carries an affine transform; the
/// stiffness term penalizes differences between transforms of adjacent
/// vertices and is relaxed over the schedule. Returns the deformed source with
/// unchanged connectivity.
pub fn nricp<T: Scalar>(source: &TriMesh<T>, target: &SurfaceSamples<T>, params: &NricpParams) -> Result<TriMesh<T>> {
    params.validate()?;
    if target.len() < 4 {
        return Err(Error::SingularSystem(format!("{} target points", target.len())));
    }
    let n = source.num_vertices();
    if n == 0 {
        return Err(Error::EmptyMesh);
    }
    // normalize to unit RMS radius around the source centroid
    let src: Vec<Vector3<f64>> = source.vertices.iter().map(|v| Vector3::from(v.to_f64())).collect();
    let center = src.iter().fold(Vector3::zeros(), |a, p| a + p) / n as f64;
    let scale = (src.iter().map(|p| (p - center).norm_squared()).sum::<f64>() / n as f64)
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let d: Vec<Vector4<f64>> = src
        .iter()
        .map(|p| {
            let q = (p - center) / scale;
            Vector4::new(q[0], q[1], q[2], 1.0)
        })
        .collect();
    let tgt: Vec<Vec3<f64>> = target
        .points
        .iter()
        .map(|p| {
            let q = (Vector3::from(p.to_f64()) - center) / scale;
            Vec3::new(q[0], q[1], q[2])
        })
        .collect();
    let tnorm: Vec<Vec3<f64>> = target.normals.iter().map(|v| Vec3(v.to_f64())).collect();
    let tree = KdTree::new(&tgt);

    let mut nbrs = vec![Vec::new(); n];
    for (i, j) in edge_set(source) {
        nbrs[i].push(j);
        nbrs[j].push(i);
    }
    let comps = connected_components(source);
    let mut comp_of = vec![usize::MAX; n];
    for (k, c) in comps.iter().enumerate() {
        for &v in &c.vertices {
            comp_of[v] = k;
        }
    }
    if comp_of.contains(&usize::MAX) {
        return Err(Error::SingularSystem("source has vertices outside any face".into()));
    }
    let cap2 = (params.distance_cap / scale).powi(2);
    let cos_max = params.normal_angle_deg.to_radians().cos();
    let g = params.gamma;
    let g2 = Vector4::new(1.0, 1.0, 1.0, g * g);

    // X[c][i]: column c of vertex i's 4x3 transform
    let mut x: [Vec<Vector4<f64>>; 3] = std::array::from_fn(|c| {
        let mut e = Vector4::zeros();
        e[c] = 1.0;
        vec![e; n]
    });
    let positions = |x: &[Vec<Vector4<f64>>; 3]| -> Vec<Vec3<f64>> {
        (0..n)
            .map(|i| Vec3::new(d[i].dot(&x[0][i]), d[i].dot(&x[1][i]), d[i].dot(&x[2][i])))
            .collect()
    };

    for &alpha in &params.stiffness {
        for _ in 0..params.inner_iters {
            let cur = positions(&x);
            let cur_mesh = TriMesh {
                vertices: cur.clone(),
                faces: source.faces.clone(),
                organ_of_vertex: source.organ_of_vertex.clone(),
                organ_of_face: source.organ_of_face.clone(),
            };
            let vn = cur_mesh.vertex_normals();
            let nn = tree.nearest_all(&cur);
            let mut w = vec![0.0; n];
            let mut u = vec![Vec3::zero(); n];
            for i in 0..n {
                let (j, d2) = nn[i];
                let mut ok = d2 <= cap2;
                if ok && !tnorm.is_empty() {
                    let a = vn[i];
                    let b = tnorm[j];
                    let (la, lb) = (a.norm(), b.norm());
                    if la > 0.0 && lb > 0.0 {
                        ok = a.dot(b) / (la * lb) > cos_max;
                    }
                }
                if ok {
                    w[i] = 1.0;
                    u[i] = tgt[j];
                }
            }
            let sys = System {
                d: &d,
                nbrs: &nbrs,
                w,
                alpha2: alpha * alpha,
                g2,
            };
            let pre = Precond::new(&sys, &comp_of, comps.len())?;
            let prev = x.clone();
            let results: Vec<Result<()>> = x
                .par_iter_mut()
                .enumerate()
                .map(|(c, xc)| {
                    let b: Vec<Vector4<f64>> = (0..n).map(|i| d[i] * (sys.w[i] * u[i][c])).collect();
                    pcg(&sys, &pre, &b, xc, params.cg_tol, params.cg_max_iters)
                })
                .collect();
            for r in results {
                r?;
            }
            let change = (0..3)
                .map(|c| {
                    x[c].iter()
                        .zip(&prev[c])
                        .map(|(a, b)| (a - b).norm_squared())
                        .sum::<f64>()
                })
                .sum::<f64>()
                .sqrt();
            if change < 1e-9 * (n as f64).sqrt() {
                break;
            }
        }
    }
    let out = positions(&x);
    Ok(source.with_vertices(
        out.iter()
            .map(|p| {
                let q = Vector3::new(p[0], p[1], p[2]) * scale + center;
                Vec3::from_f64([q[0], q[1], q[2]])
            })
            .collect(),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignMode {
    Rigid,
    /// Rigid ICP followed by non-rigid ICP.
    Nonrigid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignOptions {
    pub mode: AlignMode,
    /// Points sampled per organ on the voxel surface.
    pub n_samples: usize,
    pub seed: u64,
    pub icp_max_iters: usize,
    pub icp_tol: f64,
    pub nricp: NricpParams,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            mode: AlignMode::Rigid,
            n_samples: 5000,
            seed: 0,
            icp_max_iters: 50,
            icp_tol: 1e-6,
            nricp: NricpParams::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AlignResult<T> {
    pub mesh: TriMesh<T>,
    /// Rigid transform found per organ.
    pub transforms: Vec<(Label, RigidTransform)>,
}

/// Surface of class `organ` of a label volume: marching cubes at 0.5 on its mask.
pub fn voxel_surface<T: Scalar>(seg: &VoxelGrid<T>, organ: Label) -> Result<TriMesh<T>> {
    let mask = seg.class_mask(organ)?;
    if !mask.scalar_values().is_some_and(|v| v.iter().any(|&x| x > T::zero())) {
        return Err(Error::EmptyOrgan(organ));
    }
    marching_cubes(&mask, T::lit(0.5)).map(|m| m.relabel(organ))
}

/// Registers each organ of `pred` independently to the voxel surface of the
/// same class in `seg` and writes the result back in the original vertex order.
pub fn align_to_voxels<T: Scalar>(pred: &TriMesh<T>, seg: &VoxelGrid<T>, opts: &AlignOptions) -> Result<AlignResult<T>> {
    let organs = pred.organs();
    let per: Vec<Result<(Label, RigidTransform, TriMesh<T>, Vec<usize>)>> = organs
        .par_iter()
        .map(|&o| {
            let surf = voxel_surface(seg, o)?;
            let target = sample_surface_organ(&surf, o, opts.n_samples, opts.seed)?;
            let (sub, map) = pred.organ_submesh(o);
            let icp = icp_rigid(&sub, &target, opts.icp_max_iters, opts.icp_tol)?;
            let out = match opts.mode {
                AlignMode::Rigid => icp.aligned,
                AlignMode::Nonrigid => nricp(&icp.aligned, &target, &opts.nricp)?,
            };
            Ok((o, icp.transform, out, map))
        })
        .collect();
    let mut mesh = pred.clone();
    let mut transforms = Vec::new();
    for r in per {
        let (o, tf, sub, map) = r?;
        for (local, &global) in map.iter().enumerate() {
            mesh.vertices[global] = sub.vertices[local];
        }
        transforms.push((o, tf));
    }
    Ok(AlignResult { mesh, transforms })
}
