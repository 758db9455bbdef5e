//! Chamfer and edge losses with analytic gradients, and the stage-summed
//! objective used for fitting.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flowfield::STAGES;
use crate::geometry::KdTree;
use crate::mesh::{edge_set, sample_surface, SurfaceSamples, TriMesh};
use crate::scalar::{Scalar, Vec3};
use crate::Label;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_edge: f64,
    pub stage_weights: [f64; STAGES],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_edge: 10.0,
            stage_weights: [1.0; STAGES],
        }
    }
}

impl LossWeights {
    /// Loss on the final stage only.
    pub fn final_only(lambda_edge: f64) -> Self {
        let mut stage_weights = [0.0; STAGES];
        stage_weights[STAGES - 1] = 1.0;
        LossWeights {
            lambda_edge,
            stage_weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_edge >= 0.0) || self.stage_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Symmetric mean squared nearest-neighbor distance between two point sets and
/// its gradient with respect to the `pred` points. `gt_tree` may be passed to
/// reuse an index over `gt`.
pub fn chamfer_points<T: Scalar>(
    pred: &[Vec3<T>],
    gt: &[Vec3<T>],
    gt_tree: Option<&KdTree<T>>,
) -> Result<(T, Vec<Vec3<T>>)> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptySet);
    }
    let owned;
    let gt_tree = match gt_tree {
        Some(t) => t,
        None => {
            owned = KdTree::new(gt);
            &owned
        }
    };
    let pred_tree = KdTree::new(pred);
    let np = T::from_usize_lossy(pred.len());
    let ng = T::from_usize_lossy(gt.len());
    let two = T::lit(2.0);

    let to_gt = gt_tree.nearest_all(pred);
    let to_pred = pred_tree.nearest_all(gt);

    let mut grad: Vec<Vec3<T>> = pred
        .iter()
        .zip(&to_gt)
        .map(|(&v, &(j, _))| (v - gt[j]) * (two / np))
        .collect();
    for (u, &(i, _)) in gt.iter().zip(&to_pred) {
        grad[i] += (pred[i] - *u) * (two / ng);
    }
    let t_pred: T = to_gt.iter().map(|&(_, d)| d).sum::<T>() / np;
    let t_gt: T = to_pred.iter().map(|&(_, d)| d).sum::<T>() / ng;
    Ok((t_gt + t_pred, grad))
}

/// Chamfer loss between sampled surfaces; gradient with respect to `pred.points`.
pub fn chamfer<T: Scalar>(pred: &SurfaceSamples<T>, gt: &SurfaceSamples<T>) -> Result<(T, Vec<Vec3<T>>)> {
    chamfer_points(&pred.points, &gt.points, None)
}

/// Mean squared edge length over the unique edges and its vertex gradient.
pub fn edge_loss<T: Scalar>(mesh: &TriMesh<T>) -> Result<(T, Vec<Vec3<T>>)> {
    let edges = edge_set(mesh);
    if edges.is_empty() {
        return Err(Error::NoEdges);
    }
    let ne = T::from_usize_lossy(edges.len());
    let mut grad = vec![Vec3::zero(); mesh.num_vertices()];
    let mut sum = T::zero();
    let c = T::lit(2.0) / ne;
    for &(i, j) in &edges {
        let d = mesh.vertices[i] - mesh.vertices[j];
        sum = sum + d.norm_squared();
        grad[i] += d * c;
        grad[j] -= d * c;
    }
    Ok((sum / ne, grad))
}

/// Ground-truth sample sets per organ with their nearest-neighbor indices.
#[derive(Clone, Debug)]
pub struct Target<T> {
    pub organs: BTreeMap<Label, (SurfaceSamples<T>, KdTree<T>)>,
}

impl<T: Scalar> Target<T> {
    pub fn new(samples: BTreeMap<Label, SurfaceSamples<T>>) -> Result<Self> {
        let mut organs = BTreeMap::new();
        for (o, s) in samples {
            if s.is_empty() {
                return Err(Error::EmptySet);
            }
            let t = KdTree::new(&s.points);
            organs.insert(o, (s, t));
        }
        Ok(Target { organs })
    }

    pub fn organ_ids(&self) -> Vec<Label> {
        self.organs.keys().copied().collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageLoss {
    /// Chamfer summed over organs.
    pub chamfer: f64,
    pub edge: f64,
    /// `stage_weight * (chamfer + lambda * edge)`.
    pub weighted: f64,
}

#[derive(Clone, Debug)]
pub struct MeshLoss<T> {
    pub value: T,
    pub stages: Vec<StageLoss>,
    /// `dL / d(vertex)` per stage mesh; `None` for stages with weight 0.
    pub grads: Vec<Option<Vec<Vec3<T>>>>,
}

/// Seed used to sample stage `stage` for a loss evaluation keyed by `seed`.
pub fn stage_seed(seed: u64, stage: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((stage as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Draws the per-stage sampling plans used by [`total_mesh_loss`].
pub fn draw_plans<T: Scalar>(
    meshes: &[TriMesh<T>],
    n_samples: usize,
    seed: u64,
    weights: &LossWeights,
) -> Result<Vec<Option<BTreeMap<Label, SurfaceSamples<T>>>>> {
    meshes
        .iter()
        .enumerate()
        .map(|(s, m)| {
            if weights.stage_weights[s] == 0.0 {
                Ok(None)
            } else {
                sample_surface(m, n_samples, stage_seed(seed, s)).map(Some)
            }
        })
        .collect()
}

/// Deep-supervision objective with fixed sampling plans: the plan points are
/// replayed on each stage mesh so the loss is a smooth function of vertices.
pub fn mesh_loss_with_plans<T: Scalar>(
    meshes: &[TriMesh<T>],
    plans: &[Option<BTreeMap<Label, SurfaceSamples<T>>>],
    target: &Target<T>,
    weights: &LossWeights,
) -> Result<MeshLoss<T>> {
    if meshes.len() != STAGES || plans.len() != STAGES {
        return Err(Error::Config(format!("expected {STAGES} stage meshes")));
    }
    let organs = meshes[0].organs();
    if organs != target.organ_ids() {
        return Err(Error::OrganMismatch(format!(
            "mesh has {organs:?}, target has {:?}",
            target.organ_ids()
        )));
    }
    let lambda = T::lit(weights.lambda_edge);
    let per_stage: Vec<Result<(StageLoss, T, Option<Vec<Vec3<T>>>)>> = (0..STAGES)
        .into_par_iter()
        .map(|s| {
            let w = weights.stage_weights[s];
            let Some(plan) = &plans[s] else {
                return Ok((StageLoss::default(), T::zero(), None));
            };
            let mesh = &meshes[s];
            let wt = T::lit(w);
            let mut grad = vec![Vec3::zero(); mesh.num_vertices()];
            let mut ch = T::zero();
            for (organ, (gt, tree)) in &target.organs {
                let smp = plan
                    .get(organ)
                    .ok_or_else(|| Error::OrganMismatch(format!("no samples for organ {organ}")))?;
                let pts = smp.replay(mesh);
                let (v, g) = chamfer_points(&pts, &gt.points, Some(tree))?;
                ch = ch + v;
                let g: Vec<Vec3<T>> = g.into_iter().map(|x| x * wt).collect();
                smp.scatter_to_vertices(mesh, &g, &mut grad);
            }
            let (e, ge) = edge_loss(mesh)?;
            for (a, b) in grad.iter_mut().zip(ge) {
                *a += b * (wt * lambda);
            }
            let total = wt * (ch + lambda * e);
            let sl = StageLoss {
                chamfer: ch.as_f64(),
                edge: e.as_f64(),
                weighted: total.as_f64(),
            };
            Ok((sl, total, Some(grad)))
        })
        .collect();
    let mut value = T::zero();
    let mut stages = Vec::with_capacity(STAGES);
    let mut grads = Vec::with_capacity(STAGES);
    for r in per_stage {
        let (sl, t, g) = r?;
        value = value + t;
        stages.push(sl);
        grads.push(g);
    }
    Ok(MeshLoss { value, stages, grads })
}

/// `sum_s w_s * (sum_organs Chamfer + lambda * Edge)` over the five stage
/// meshes, with `n_samples` predicted points per organ drawn per stage from
/// `seed`.
pub fn total_mesh_loss<T: Scalar>(
    intermediates: &[TriMesh<T>],
    gt: &BTreeMap<Label, SurfaceSamples<T>>,
    weights: &LossWeights,
    n_samples: usize,
    seed: u64,
) -> Result<MeshLoss<T>> {
    let target = Target::new(gt.clone())?;
    let plans = draw_plans(intermediates, n_samples, seed, weights)?;
    mesh_loss_with_plans(intermediates, &plans, &target, weights)
}
