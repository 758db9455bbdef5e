//! Evaluation metrics: Dice, surface distances (ASSD, HD99), self-intersecting
//! faces and cross-organ intersections.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{triangles_intersect, Bvh};
use crate::mesh::{connected_components, sample_surface, TriMesh};
use crate::scalar::{Scalar, Vec3};
use crate::volume::{marching_cubes, voxelize, VoxelGrid};
use crate::Label;

/// `2|A and B| / (|A| + |B|)` for voxels of class `class`; 1 when both are empty.
pub fn dice<T: Scalar>(a: &VoxelGrid<T>, b: &VoxelGrid<T>, class: Label) -> Result<f64> {
    if a.lattice.dims != b.lattice.dims {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.lattice.dims, b.lattice.dims)));
    }
    let (Some(la), Some(lb)) = (a.label_values(), b.label_values()) else {
        return Err(Error::InvalidGrid("dice needs label grids".into()));
    };
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in la.iter().zip(lb) {
        let (p, q) = (x == class, y == class);
        na += p as usize;
        nb += q as usize;
        both += (p && q) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

fn sample_points<T: Scalar>(m: &TriMesh<T>, n: usize, seed: u64) -> Result<Vec<Vec3<T>>> {
    Ok(sample_surface(m, n, seed)?
        .into_values()
        .flat_map(|s| s.points)
        .collect())
}

/// Distance from each point to the closest point of `mesh`.
pub fn point_to_surface<T: Scalar>(points: &[Vec3<T>], mesh: &TriMesh<T>) -> Vec<f64> {
    let bvh = Bvh::from_mesh(mesh);
    points
        .par_iter()
        .map(|&p| bvh.closest(p).expect("non-empty mesh").distance_squared.as_f64().sqrt())
        .collect()
}

/// Sampled distances `a -> b` followed by `b -> a`, `n_samples` points per
/// organ on each side.
pub fn surface_distances<T: Scalar>(a: &TriMesh<T>, b: &TriMesh<T>, n_samples: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.num_faces() == 0 || b.num_faces() == 0 {
        return Err(Error::EmptyMesh);
    }
    let pa = sample_points(a, n_samples, seed)?;
    let pb = sample_points(b, n_samples, seed)?;
    Ok((point_to_surface(&pa, b), point_to_surface(&pb, a)))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Average symmetric surface distance: mean of the two directed mean distances.
pub fn assd<T: Scalar>(a: &TriMesh<T>, b: &TriMesh<T>, n_samples: usize, seed: u64) -> Result<f64> {
    let (ab, ba) = surface_distances(a, b, n_samples, seed)?;
    Ok(0.5 * (mean(&ab) + mean(&ba)))
}

/// Nearest-rank percentile `q` in (0, 100] of unsorted values.
pub fn nearest_rank(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let rank = ((q / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

/// 99th percentile (nearest rank) of the pooled bidirectional distances.
pub fn hd99<T: Scalar>(a: &TriMesh<T>, b: &TriMesh<T>, n_samples: usize, seed: u64) -> Result<f64> {
    let (mut ab, ba) = surface_distances(a, b, n_samples, seed)?;
    ab.extend(ba);
    Ok(nearest_rank(&ab, 99.0))
}

fn shares_vertex(f: &[usize; 3], g: &[usize; 3]) -> bool {
    f.iter().any(|i| g.contains(i))
}

/// Face ids that intersect another face of their own connected component.
/// Pairs sharing a vertex are skipped.
pub fn self_intersecting_faces<T: Scalar>(mesh: &TriMesh<T>) -> Vec<usize> {
    let mut hit = BTreeSet::new();
    for comp in connected_components(mesh) {
        let bvh = Bvh::from_faces(mesh, &comp.faces);
        let pairs: Vec<(usize, usize)> = bvh
            .self_pairs()
            .into_iter()
            .filter(|&(f, g)| !shares_vertex(&mesh.faces[f], &mesh.faces[g]))
            .collect();
        let found: Vec<(usize, usize)> = pairs
            .into_par_iter()
            .filter(|&(f, g)| triangles_intersect(&mesh.triangle(f), &mesh.triangle(g)))
            .collect();
        for (f, g) in found {
            hit.insert(f);
            hit.insert(g);
        }
    }
    hit.into_iter().collect()
}

/// Percentage of faces intersecting a non-adjacent face of the same component.
pub fn sif<T: Scalar>(mesh: &TriMesh<T>) -> f64 {
    if mesh.num_faces() == 0 {
        return 0.0;
    }
    100.0 * self_intersecting_faces(mesh).len() as f64 / mesh.num_faces() as f64
}

/// Number of intersecting face pairs between different organs.
pub fn inter_mesh_intersections<T: Scalar>(mesh: &TriMesh<T>) -> usize {
    let organs = mesh.organs();
    let bvhs: Vec<Bvh<T>> = organs
        .iter()
        .map(|&o| Bvh::from_faces(mesh, &mesh.faces_of_organ(o)))
        .collect();
    let mut count = 0;
    for i in 0..bvhs.len() {
        for j in i + 1..bvhs.len() {
            count += bvhs[i]
                .pairs_with(&bvhs[j])
                .into_par_iter()
                .filter(|&(f, g)| triangles_intersect(&mesh.triangle(f), &mesh.triangle(g)))
                .count();
        }
    }
    count
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrganMetrics {
    pub organ: Label,
    /// `None` when no reference label grid is available.
    pub dice: Option<f64>,
    pub assd: f64,
    pub hd99: f64,
    pub sif: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub organs: Vec<OrganMetrics>,
    /// Means over organs; `organ` is 0.
    pub macro_mean: OrganMetrics,
}

/// Reference for [`evaluate`].
pub enum Reference<'a, T> {
    Labels(&'a VoxelGrid<T>),
    Mesh(&'a TriMesh<T>),
}

/// Per-organ metrics of `pred` against a label volume (reference surfaces from
/// marching cubes at 0.5, Dice after voxelizing `pred` on the same lattice) or
/// a reference mesh (no Dice).
pub fn evaluate<T: Scalar>(pred: &TriMesh<T>, reference: Reference<'_, T>, n_samples: usize, seed: u64) -> Result<MetricReport> {
    let organs = pred.organs();
    let vox = match reference {
        Reference::Labels(g) => Some(voxelize(pred, g)?),
        Reference::Mesh(_) => None,
    };
    let mut rows = Vec::new();
    for &o in &organs {
        let (p, _) = pred.organ_submesh(o);
        let (gt_mesh, d) = match reference {
            Reference::Labels(g) => {
                let m = marching_cubes(&g.class_mask(o)?, T::lit(0.5)).map_err(|e| match e {
                    Error::EmptySurface => Error::EmptyOrgan(o),
                    e => e,
                })?;
                (m, Some(dice(vox.as_ref().expect("voxelized"), g, o)?))
            }
            Reference::Mesh(m) => {
                let (s, _) = m.organ_submesh(o);
                if s.num_faces() == 0 {
                    return Err(Error::OrganMismatch(format!("reference has no organ {o}")));
                }
                (s, None)
            }
        };
        let (mut ab, ba) = surface_distances(&p, &gt_mesh, n_samples, seed)?;
        let assd = 0.5 * (mean(&ab) + mean(&ba));
        ab.extend(ba);
        rows.push(OrganMetrics {
            organ: o,
            dice: d,
            assd,
            hd99: nearest_rank(&ab, 99.0),
            sif: sif(&p),
        });
    }
    let n = rows.len().max(1) as f64;
    let macro_mean = OrganMetrics {
        organ: 0,
        dice: if rows.iter().all(|r| r.dice.is_some()) && !rows.is_empty() {
            Some(rows.iter().map(|r| r.dice.unwrap_or(0.0)).sum::<f64>() / n)
        } else {
            None
        },
        assd: rows.iter().map(|r| r.assd).sum::<f64>() / n,
        hd99: rows.iter().map(|r| r.hd99).sum::<f64>() / n,
        sif: rows.iter().map(|r| r.sif).sum::<f64>() / n,
    };
    Ok(MetricReport {
        organs: rows,
        macro_mean,
    })
}

fn fmt_dice(d: Option<f64>) -> String {
    d.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl MetricReport {
    /// `organ,dice,assd,hd99,sif` rows plus a `macro` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("organ,dice,assd,hd99,sif\n");
        for r in &self.organs {
            let _ = writeln!(s, "{},{},{:.6},{:.6},{:.6}", r.organ, fmt_dice(r.dice), r.assd, r.hd99, r.sif);
        }
        let m = &self.macro_mean;
        let _ = writeln!(s, "macro,{},{:.6},{:.6},{:.6}", fmt_dice(m.dice), m.assd, m.hd99, m.sif);
        s
    }

    pub fn pretty(&self) -> String {
        let mut s = format!("{:>6} {:>9} {:>10} {:>10} {:>8}\n", "organ", "dice", "assd[mm]", "hd99[mm]", "sif[%]");
        let mut row = |name: String, r: &OrganMetrics| {
            let _ = writeln!(
                s,
                "{:>6} {:>9} {:>10.4} {:>10.4} {:>8.3}",
                name,
                r.dice.map_or_else(|| "NA".to_string(), |d| format!("{d:.4}")),
                r.assd,
                r.hd99,
                r.sif
            );
        };
        for r in &self.organs {
            row(r.organ.to_string(), r);
        }
        row("macro".into(), &self.macro_mean);
        s
    }
}
