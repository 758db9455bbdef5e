//! Per-case fitting of a flow stack by Adam on the lattice vectors.
//!
//! Every iteration integrates the template through all five stages, draws a
//! fresh sampling plan on each stage mesh, evaluates the deep-supervision
//! objective against fixed target samples and pulls the vertex gradients back
//! through the Euler steps onto the lattices.

use std::fmt::Write as _;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flowfield::{integrate_trajectory, FlowStack, STAGES};
use crate::losses::{draw_plans, mesh_loss_with_plans, LossWeights, Target};
use crate::mesh::{boundary_edges, sample_surface, TriMesh};
use crate::metrics;
use crate::registration::voxel_surface;
use crate::scalar::{Scalar, Vec3};
use crate::synth;
use crate::volume::{Lattice, VoxelGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub max_iters: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Iteration at which each stage becomes trainable. `None` means
    /// `i * max_iters / 10`.
    pub unfreeze: Option<[usize; STAGES]>,
    pub seed: u64,
    /// Predicted points per organ and stage.
    pub n_samples: usize,
    /// Target points per organ, drawn once.
    pub target_samples: usize,
    /// Stop once the best loss improved by less than `conv_tol` (relative)
    /// over the last `conv_window` iterations.
    pub conv_tol: f64,
    pub conv_window: usize,
    /// Iterations without a new best loss before the learning rate halves.
    pub plateau_patience: usize,
    /// Per-lattice gradient norm cap.
    pub clip_norm: f64,
    /// Redraw the prediction sampling plan every iteration.
    pub resample: bool,
    /// Node counts per axis of stages 0..4; stage 4 uses the image lattice.
    pub resolutions: [usize; STAGES - 1],
    /// Image lattice. Taken from the label volume when the target is one.
    pub image: Option<Lattice<f64>>,
    /// Invoke the checkpoint hook every this many iterations (0 = never).
    pub checkpoint_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 500,
            lr: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            unfreeze: None,
            seed: 0,
            n_samples: 5000,
            target_samples: 5000,
            conv_tol: 1e-5,
            conv_window: 20,
            plateau_patience: 50,
            clip_norm: 10.0,
            resample: true,
            resolutions: [8, 16, 32, 64],
            image: None,
            checkpoint_every: 0,
        }
    }
}

fn parse_num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

fn parse_list<V: std::str::FromStr, const N: usize>(key: &str, v: &str) -> Result<[V; N]> {
    let items: Vec<V> = v
        .split(',')
        .map(|x| parse_num(key, x))
        .collect::<Result<_>>()?;
    let n = items.len();
    items
        .try_into()
        .map_err(|_| Error::Config(format!("{key} needs {N} comma-separated values, got {n}")))
}

/// Splits `key=value` lines. Blank lines and `#` comments are skipped;
/// repeated keys are rejected.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
        let k = k.trim().to_string();
        if out.iter().any(|(x, _)| *x == k) {
            return Err(Error::Config(format!("duplicate key {k}")));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

impl FitConfig {
    pub fn unfreeze_schedule(&self) -> [usize; STAGES] {
        self.unfreeze
            .unwrap_or_else(|| std::array::from_fn(|i| i * self.max_iters / 10))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0 && self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return bad("adam betas must lie in (0,1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        if self.unfreeze_schedule().windows(2).any(|w| w[0] > w[1]) {
            return bad("unfreeze schedule must be non-decreasing");
        }
        if self.n_samples == 0 || self.target_samples == 0 {
            return bad("sample counts must be > 0");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be > 0");
        }
        if self.conv_window == 0 || self.plateau_patience == 0 {
            return bad("conv_window and plateau_patience must be > 0");
        }
        if self.resolutions.iter().any(|&r| r < 2) {
            return bad("stage resolutions must be >= 2");
        }
        Ok(())
    }

    /// Applies one `key=value` setting. Returns `Ok(false)` for keys this
    /// config does not know.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "max_iters" => self.max_iters = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam_eps = parse_num(key, v)?,
            "unfreeze" => self.unfreeze = Some(parse_list(key, v)?),
            "seed" => self.seed = parse_num(key, v)?,
            "n_samples" => self.n_samples = parse_num(key, v)?,
            "target_samples" => self.target_samples = parse_num(key, v)?,
            "conv_tol" => self.conv_tol = parse_num(key, v)?,
            "conv_window" => self.conv_window = parse_num(key, v)?,
            "plateau_patience" => self.plateau_patience = parse_num(key, v)?,
            "clip_norm" => self.clip_norm = parse_num(key, v)?,
            "resample" => self.resample = parse_num(key, v)?,
            "resolutions" => self.resolutions = parse_list(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "image_dims" | "image_spacing" | "image_origin" => {
                // unset parts stay zero / NaN until all three keys are given
                let mut l = self.image.unwrap_or(Lattice {
                    dims: [0; 3],
                    spacing: Vec3::splat(f64::NAN),
                    origin: Vec3::splat(f64::NAN),
                });
                match key {
                    "image_dims" => l.dims = parse_list(key, v)?,
                    "image_spacing" => l.spacing = Vec3(parse_list(key, v)?),
                    _ => l.origin = Vec3(parse_list(key, v)?),
                }
                self.image = Some(l);
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Image lattice given by the `image_*` keys, checked for completeness.
    pub fn image_lattice(&self) -> Result<Lattice<f64>> {
        let l = self
            .image
            .ok_or_else(|| Error::Config("missing image_dims, image_spacing and image_origin".into()))?;
        let missing: Vec<&str> = [
            (l.dims.contains(&0), "image_dims"),
            (l.spacing.0.iter().any(|x| x.is_nan()), "image_spacing"),
            (l.origin.0.iter().any(|x| x.is_nan()), "image_origin"),
        ]
        .into_iter()
        .filter_map(|(m, k)| m.then_some(k))
        .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("missing {}", missing.join(", "))));
        }
        Lattice::new(l.dims, l.spacing, l.origin).map_err(|e| Error::Config(e.to_string()))
    }
}

/// `lambda_edge` and `stage_weights` keys for [`LossWeights`].
pub fn set_loss_weight(w: &mut LossWeights, key: &str, v: &str) -> Result<bool> {
    match key {
        "lambda_edge" => w.lambda_edge = parse_num(key, v)?,
        "stage_weights" => w.stage_weights = parse_list(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Surface to fit: a closed multi-organ mesh or a label volume.
#[derive(Clone, Debug)]
pub enum FitTarget<T> {
    Mesh(TriMesh<T>),
    Labels(VoxelGrid<T>),
}

impl<T: Scalar> FitTarget<T> {
    /// Target surface as a mesh; label volumes go through marching cubes at
    /// 0.5 per class.
    pub fn surface(&self) -> Result<TriMesh<T>> {
        match self {
            FitTarget::Mesh(m) => {
                for o in m.organs() {
                    if !boundary_edges(&m.organ_submesh(o).0).is_empty() {
                        return Err(Error::OpenSurface(o));
                    }
                }
                Ok(m.clone())
            }
            FitTarget::Labels(g) => {
                let parts = g
                    .present_classes()?
                    .into_iter()
                    .map(|o| voxel_surface(g, o))
                    .collect::<Result<Vec<_>>>()?;
                Ok(TriMesh::merge(&parts))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    /// Highest trainable stage.
    pub stage: usize,
    /// Final-stage Chamfer summed over organs.
    pub chamfer: f64,
    /// Final-stage edge loss.
    pub edge: f64,
    pub total: f64,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("iteration,stage,chamfer,edge,total\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.iteration, r.stage, r.chamfer, r.edge, r.total);
    }
    s
}

#[derive(Clone, Debug)]
pub struct FitResult<T> {
    /// Best-loss iterate.
    pub stack: FlowStack<T>,
    pub fitted: TriMesh<T>,
    pub trace: Vec<TraceRow>,
    pub best_iteration: usize,
    pub best_loss: f64,
    pub converged: bool,
    /// Iteration at which the loss or its gradient stopped being finite.
    pub non_finite: Option<usize>,
}

impl<T> FitResult<T> {
    /// `Err(NonFiniteLoss)` if the run was aborted.
    pub fn check(&self) -> Result<()> {
        match self.non_finite {
            Some(i) => Err(Error::NonFiniteLoss(i)),
            None => Ok(()),
        }
    }
}

struct Adam<T> {
    m: Vec<Vec3<T>>,
    v: Vec<Vec3<T>>,
    t: i32,
}

static GRADIENT_CHECK: OnceLock<f64> = OnceLock::new();

/// Max normwise relative error between analytic and central-difference
/// lattice gradients on a 20-vertex sphere. Computed once per process.
pub fn gradient_check() -> f64 {
    *GRADIENT_CHECK.get_or_init(|| gradient_check_on(&synth::uv_sphere::<f64>(1.0, 3, 6), 7))
}

/// Gradient check of the full objective on `mesh` (single organ 1) with a
/// random smooth stack drawn from `seed`.
pub fn gradient_check_on(mesh: &TriMesh<f64>, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = mesh.bounds();
    let pad = Vec3::splat(0.5 * b.diagonal().max(1.0));
    let lat = Lattice::spanning([4; 3], b.min - pad, b.max + pad).expect("valid lattice");
    let organs = mesh.organs();
    let mut stack = FlowStack::zeros(&organs, &[lat; STAGES]);
    let scale = 0.05 * b.diagonal().max(1.0);
    for f in stack.fields_mut() {
        for v in f.values.iter_mut() {
            *v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale;
        }
    }
    let c = b.center();
    let tgt_mesh = mesh.map_vertices(|p| c + (p - c).component_mul(Vec3::new(1.2, 0.9, 0.8)));
    let target = Target::new(sample_surface(&tgt_mesh, 64, seed).expect("target samples")).expect("target");
    let weights = LossWeights::default();
    let meshes = integrate_trajectory(&stack, mesh, 0..STAGES)
        .expect("stack matches mesh")
        .stage_meshes(mesh);
    let plans = draw_plans(&meshes, 48, seed, &weights).expect("plans");
    let loss = |st: &FlowStack<f64>| -> f64 {
        let tr = integrate_trajectory(st, mesh, 0..STAGES).expect("stack matches mesh");
        mesh_loss_with_plans(&tr.stage_meshes(mesh), &plans, &target, &weights)
            .expect("loss")
            .value
    };
    let tr = integrate_trajectory(&stack, mesh, 0..STAGES).expect("stack matches mesh");
    let ml = mesh_loss_with_plans(&tr.stage_meshes(mesh), &plans, &target, &weights).expect("loss");
    let mut grad = stack.zeros_like();
    tr.backward(&stack, &mesh.organ_of_vertex, &ml.grads, &[false; STAGES], &mut grad);
    let eps = 1e-6;
    let (mut diff, mut an_max, mut fd_max) = (0.0f64, 0.0f64, 0.0f64);
    let nf = stack.fields().len();
    for fi in 0..nf {
        for node in 0..lat.len() {
            for a in 0..3 {
                let mut p = stack.clone();
                p.fields_mut()[fi].values[node].0[a] += eps;
                let mut q = stack.clone();
                q.fields_mut()[fi].values[node].0[a] -= eps;
                let fd = (loss(&p) - loss(&q)) / (2.0 * eps);
                let an = grad.fields()[fi].values[node][a];
                diff = diff.max((an - fd).abs());
                an_max = an_max.max(an.abs());
                fd_max = fd_max.max(fd.abs());
            }
        }
    }
    let den = an_max.max(fd_max);
    if den == 0.0 {
        0.0
    } else {
        diff / den
    }
}

fn iteration_seed(seed: u64, it: usize) -> u64 {
    seed ^ (it as u64 + 1).wrapping_mul(0xA24B_AED4_963E_E407)
}

/// Fits a zero-initialized flow stack deforming `template` onto `target`.
pub fn fit<T: Scalar>(
    template: &TriMesh<T>,
    target: &FitTarget<T>,
    cfg: &FitConfig,
    weights: &LossWeights,
) -> Result<FitResult<T>> {
    fit_with_checkpoints(template, target, cfg, weights, |_, _| Ok(()))
}

/// [`fit`] calling `checkpoint(iteration, stack)` every
/// `cfg.checkpoint_every` iterations with the current iterate.
pub fn fit_with_checkpoints<T: Scalar>(
    template: &TriMesh<T>,
    target: &FitTarget<T>,
    cfg: &FitConfig,
    weights: &LossWeights,
    mut checkpoint: impl FnMut(usize, &FlowStack<T>) -> Result<()>,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    weights.validate()?;
    template.validate()?;
    let err = gradient_check();
    if !(err < 1e-3) {
        return Err(Error::GradientCheck(err));
    }
    let image: Lattice<T> = match target {
        FitTarget::Labels(g) => g.lattice,
        FitTarget::Mesh(_) => cfg.image_lattice()?.cast(),
    };
    let surface = target.surface()?;
    let organs = template.organs();
    if surface.organs() != organs {
        return Err(Error::OrganMismatch(format!(
            "template has {organs:?}, target has {:?}",
            surface.organs()
        )));
    }
    let tgt = Target::new(sample_surface(&surface, cfg.target_samples, cfg.seed)?)?;
    let lattices = FlowStack::default_lattices(&image, cfg.resolutions)?;
    let mut stack = FlowStack::zeros(&organs, &lattices);
    let schedule = cfg.unfreeze_schedule();
    let field_stage = stack.field_stages();
    let mut adam: Vec<Adam<T>> = stack
        .fields()
        .iter()
        .map(|f| Adam {
            m: vec![Vec3::zero(); f.values.len()],
            v: vec![Vec3::zero(); f.values.len()],
            t: 0,
        })
        .collect();
    let (b1, b2) = (T::lit(cfg.adam_beta1), T::lit(cfg.adam_beta2));
    let eps = T::lit(cfg.adam_eps);
    let mut lr = cfg.lr;

    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut best: Option<(f64, usize, FlowStack<T>, TriMesh<T>)> = None;
    let mut since_best = 0;
    let mut best_hist: Vec<f64> = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    let mut non_finite = None;
    let mut fixed_plans = None;

    for it in 0..cfg.max_iters {
        let frozen: [bool; STAGES] = std::array::from_fn(|s| it < schedule[s]);
        let stage = (0..STAGES).rev().find(|&s| !frozen[s]).unwrap_or(0);
        let tr = integrate_trajectory(&stack, template, 0..STAGES)?;
        let meshes = tr.stage_meshes(template);
        let finite = meshes
            .iter()
            .all(|m| (0..m.num_faces()).all(|f| m.face_area(f).is_finite()));
        if !finite {
            non_finite = Some(it);
            break;
        }
        let plans = match (&fixed_plans, cfg.resample) {
            (Some(p), false) => Vec::clone(p),
            _ => {
                let p = draw_plans(&meshes, cfg.n_samples, iteration_seed(cfg.seed, it), weights)?;
                if !cfg.resample {
                    fixed_plans = Some(p.clone());
                }
                p
            }
        };
        let fitted = meshes[STAGES - 1].clone();
        let ml = mesh_loss_with_plans(&meshes, &plans, &tgt, weights)?;
        let value = ml.value.as_f64();
        let grads_ok = ml
            .grads
            .iter()
            .flatten()
            .all(|g| g.iter().all(|v| v.is_finite()));
        if !value.is_finite() || !grads_ok {
            non_finite = Some(it);
            break;
        }
        let fin = ml.stages[STAGES - 1];
        trace.push(TraceRow {
            iteration: it,
            stage,
            chamfer: fin.chamfer,
            edge: fin.edge,
            total: value,
        });
        if best.as_ref().is_none_or(|b| value < b.0) {
            best = Some((value, it, stack.clone(), fitted.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.plateau_patience {
                lr *= 0.5;
                since_best = 0;
            }
        }
        let best_now = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        best_hist.push(best_now);
        // relative improvement of the best loss over the window, once every
        // stage is trainable
        if it >= schedule[STAGES - 1] + cfg.conv_window {
            let prev = best_hist[it - cfg.conv_window];
            if prev - best_now <= cfg.conv_tol * prev.abs() {
                converged = true;
                break;
            }
        }

        let mut grad = stack.zeros_like();
        tr.backward(&stack, &template.organ_of_vertex, &ml.grads, &frozen, &mut grad);
        let lr_t = T::lit(lr);
        let mut bad = false;
        for (fi, (f, g)) in stack.fields_mut().into_iter().zip(grad.fields()).enumerate() {
            if frozen[field_stage[fi]] {
                continue;
            }
            let norm = g.values.iter().map(|v| v.norm_squared()).sum::<T>().sqrt();
            if !norm.is_finite() {
                bad = true;
                break;
            }
            let clip = T::lit(cfg.clip_norm);
            let scale = if norm > clip { clip / norm } else { T::one() };
            let st = &mut adam[fi];
            st.t += 1;
            let c1 = T::one() - b1.powi(st.t);
            let c2 = T::one() - b2.powi(st.t);
            for ((x, gv), (m, v)) in f
                .values
                .iter_mut()
                .zip(&g.values)
                .zip(st.m.iter_mut().zip(st.v.iter_mut()))
            {
                let gv = *gv * scale;
                for a in 0..3 {
                    m.0[a] = b1 * m.0[a] + (T::one() - b1) * gv.0[a];
                    v.0[a] = b2 * v.0[a] + (T::one() - b2) * gv.0[a] * gv.0[a];
                    let mh = m.0[a] / c1;
                    let vh = v.0[a] / c2;
                    x.0[a] = x.0[a] - lr_t * mh / (vh.sqrt() + eps);
                }
            }
        }
        if bad {
            non_finite = Some(it);
            break;
        }
        if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
            checkpoint(it + 1, &stack)?;
        }
    }
    let (best_loss, best_iteration, stack, fitted) = match best {
        Some(b) => b,
        None => {
            // aborted before any finite evaluation: the zero stack
            let z = FlowStack::zeros(&organs, &lattices);
            (f64::INFINITY, 0, z, template.clone())
        }
    };
    Ok(FitResult {
        stack,
        fitted,
        trace,
        best_iteration,
        best_loss,
        converged,
        non_finite,
    })
}

/// One arm of a deep-supervision ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationArm {
    pub deep_supervision: bool,
    pub assd: Vec<f64>,
    pub sif: Vec<f64>,
    pub median_assd: f64,
    pub median_sif: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    /// `[with, without]` deep supervision.
    pub arms: [AblationArm; 2],
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("deep_supervision,cases,median_assd,median_sif\n");
        for a in &self.arms {
            let _ = writeln!(s, "{},{},{},{}", a.deep_supervision, a.assd.len(), a.median_assd, a.median_sif);
        }
        s
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Fits every case with uniform stage weights and with final-stage-only
/// weights, and reports ASSD (against the target surface) and SIF per arm.
pub fn ablate_dms<T: Scalar>(
    cases: &[(TriMesh<T>, FitTarget<T>)],
    cfg: &FitConfig,
    lambda_edge: f64,
) -> Result<AblationReport> {
    if cases.is_empty() {
        return Err(Error::Config("ablation needs at least one case".into()));
    }
    let arm = |dms: bool| -> Result<AblationArm> {
        let weights = if dms {
            LossWeights {
                lambda_edge,
                stage_weights: [1.0; STAGES],
            }
        } else {
            LossWeights::final_only(lambda_edge)
        };
        let mut assd = Vec::new();
        let mut sif = Vec::new();
        for (k, (tpl, tgt)) in cases.iter().enumerate() {
            let r = fit(tpl, tgt, cfg, &weights)?;
            r.check()?;
            let surface = tgt.surface()?;
            assd.push(metrics::assd(&r.fitted, &surface, cfg.target_samples, cfg.seed ^ k as u64)?);
            sif.push(metrics::sif(&r.fitted));
        }
        Ok(AblationArm {
            deep_supervision: dms,
            median_assd: median(&assd),
            median_sif: median(&sif),
            assd,
            sif,
        })
    };
    Ok(AblationReport {
        arms: [arm(true)?, arm(false)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::chamfer;

    fn small_cfg(iters: usize) -> FitConfig {
        FitConfig {
            max_iters: iters,
            lr: 0.2,
            n_samples: 800,
            target_samples: 800,
            resolutions: [4, 6, 8, 12],
            image: Some(Lattice::unit([24, 24, 24])),
            ..Default::default()
        }
    }

    fn sphere(r: f64) -> TriMesh<f64> {
        synth::icosphere::<f64>(r, 2).map_vertices(|p| p + Vec3::splat(12.0))
    }

    #[test]
    fn gradient_gate_passes() {
        let e = gradient_check();
        assert!(e < 1e-3, "{e}");
        assert_eq!(synth::uv_sphere::<f64>(1.0, 3, 6).num_vertices(), 20);
    }

    #[test]
    fn parses_config_text() {
        let kv = parse_key_values("# c\nmax_iters = 40\nlr=0.5\n\nunfreeze=0,1,2,3,4\nimage_dims=8,8,8\nfoo=1\n").unwrap();
        let mut cfg = FitConfig::default();
        let mut unknown = Vec::new();
        for (k, v) in &kv {
            if !cfg.set(k, v).unwrap() {
                unknown.push(k.clone());
            }
        }
        assert_eq!(unknown, vec!["foo".to_string()]);
        assert_eq!(cfg.max_iters, 40);
        assert_eq!(cfg.lr, 0.5);
        assert_eq!(cfg.unfreeze_schedule(), [0, 1, 2, 3, 4]);
        let e = cfg.image_lattice().unwrap_err().to_string();
        assert!(e.contains("image_spacing") && e.contains("image_origin"), "{e}");
        cfg.set("image_spacing", "1,1,2").unwrap();
        cfg.set("image_origin", "0,0,-1").unwrap();
        assert_eq!(cfg.image_lattice().unwrap().dims, [8, 8, 8]);
        assert!(parse_key_values("a=1\na=2").is_err());
        assert!(parse_key_values("novalue").is_err());
        assert!(cfg.set("unfreeze", "0,1").is_err());
        assert!(cfg.set("lr", "fast").is_err());
        let mut w = LossWeights::default();
        assert!(set_loss_weight(&mut w, "stage_weights", "0,0,0,0,1").unwrap());
        assert_eq!(w, LossWeights::final_only(10.0));
    }

    #[test]
    fn default_schedule_and_validation() {
        assert_eq!(FitConfig::default().unfreeze_schedule(), [0, 50, 100, 150, 200]);
        let bad = [
            FitConfig { lr: 0.0, ..Default::default() },
            FitConfig { adam_beta1: 1.0, ..Default::default() },
            FitConfig { unfreeze: Some([0, 5, 3, 6, 7]), ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn first_iterate_is_the_template() {
        let t = sphere(6.0);
        let r = fit(&t, &FitTarget::Mesh(sphere(7.0)), &small_cfg(1), &LossWeights::default()).unwrap();
        assert_eq!(r.fitted, t);
        assert!(r.stack.fields().iter().all(|f| f.is_zero()));
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.trace[0].iteration, 0);
    }

    #[test]
    fn self_target_stays_below_sampling_floor() {
        let t = sphere(6.0);
        let cfg = small_cfg(50);
        // with the edge term on, shrinking lowers the loss; zero flow is only
        // optimal for Chamfer alone
        let w = LossWeights {
            lambda_edge: 0.0,
            ..Default::default()
        };
        let r = fit(&t, &FitTarget::Mesh(t.clone()), &cfg, &w).unwrap();
        let a = sample_surface(&t, cfg.n_samples, 101).unwrap().remove(&1).unwrap();
        let b = sample_surface(&t, cfg.target_samples, 202).unwrap().remove(&1).unwrap();
        let floor = chamfer(&a, &b).unwrap().0;
        let best = r.trace[r.best_iteration].chamfer;
        assert!(best <= floor, "{best} vs {floor}");
        assert_eq!(r.fitted.faces, t.faces);
    }

    #[test]
    fn fit_reduces_loss_deterministically() {
        let t = synth::icosphere::<f64>(6.0, 3).map_vertices(|p| p + Vec3::splat(12.0));
        let tgt = synth::ellipsoid::<f64>([12.0; 3], [8.0, 6.0, 4.5], 3);
        let cfg = FitConfig {
            unfreeze: Some([0, 5, 10, 15, 20]),
            ..small_cfg(40)
        };
        let w = LossWeights {
            lambda_edge: 1.0,
            ..Default::default()
        };
        let a = fit(&t, &FitTarget::Mesh(tgt.clone()), &cfg, &w).unwrap();
        let b = fit(&t, &FitTarget::Mesh(tgt), &cfg, &w).unwrap();
        assert_eq!(a.stack, b.stack);
        assert_eq!(a.trace, b.trace);
        assert!(a.trace[a.best_iteration].chamfer < 0.5 * a.trace[0].chamfer);
        let min = a.trace.iter().map(|r| r.total).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_loss, min);
        assert_eq!(a.trace.len(), 40);
        assert!(a.trace.iter().enumerate().all(|(i, r)| r.iteration == i));
        assert_eq!(a.trace[7].stage, 1);
        assert_eq!(a.trace[39].stage, 4);
    }

    #[test]
    fn checkpoints_fire_on_schedule() {
        let t = sphere(5.0);
        let cfg = FitConfig {
            checkpoint_every: 4,
            ..small_cfg(10)
        };
        let mut seen = Vec::new();
        fit_with_checkpoints(&t, &FitTarget::Mesh(sphere(6.0)), &cfg, &LossWeights::default(), |i, _| {
            seen.push(i);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![4, 8]);
    }

    #[test]
    fn rejects_bad_targets() {
        let t = sphere(5.0);
        let two = TriMesh::merge(&[sphere(3.0), sphere(6.0).relabel(2)]);
        let r = fit(&t, &FitTarget::Mesh(two), &small_cfg(2), &LossWeights::default());
        assert!(matches!(r, Err(Error::OrganMismatch(_))));
        let mut open = sphere(5.0);
        open.faces.pop();
        open.organ_of_face.pop();
        let r = fit(&t, &FitTarget::Mesh(open), &small_cfg(2), &LossWeights::default());
        assert!(matches!(r, Err(Error::OpenSurface(1))));
        let no_image = FitConfig { image: None, ..small_cfg(2) };
        let r = fit(&t, &FitTarget::Mesh(sphere(6.0)), &no_image, &LossWeights::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn label_target_uses_its_lattice() {
        let lat = Lattice::<f64>::unit([24, 24, 24]);
        let inside = synth::in_ellipsoid([12.0; 3], [7.0, 6.0, 5.0]);
        let g = synth::label_grid(lat, 2, &[(1, &inside)]);
        let cfg = FitConfig { image: None, ..small_cfg(15) };
        let r = fit(&sphere(5.0), &FitTarget::Labels(g), &cfg, &LossWeights::default()).unwrap();
        assert!(r.best_loss < r.trace[0].total);
        assert_eq!(r.stack.stages[STAGES - 1].fields()[0].1.lattice, lat);
    }

    #[test]
    fn divergence_is_flagged() {
        let t = sphere(5.0).cast::<f32>();
        let cfg = FitConfig { lr: 1e30, ..small_cfg(20) };
        let r = fit(&t, &FitTarget::Mesh(sphere(6.0).cast::<f32>()), &cfg, &LossWeights::default()).unwrap();
        let at = r.non_finite.expect("diverged");
        assert!(matches!(r.check(), Err(Error::NonFiniteLoss(i)) if i == at));
        assert!(r.best_loss.is_finite());
        assert_eq!(r.trace.len(), at);
    }

    #[test]
    fn ablation_report_shape() {
        let t = sphere(5.0);
        let cases = vec![(t.clone(), FitTarget::Mesh(t.clone()))];
        let rep = ablate_dms(&cases, &small_cfg(1), 10.0).unwrap();
        assert_eq!(rep.arms.len(), 2);
        assert!(rep.arms.iter().all(|a| a.assd.len() == 1));
        // nothing is trained in one iteration, so both arms return the template
        assert_eq!(rep.arms[0].assd, rep.arms[1].assd);
        assert_eq!(rep.arms[0].sif, rep.arms[1].sif);
        assert_eq!(rep.to_csv().lines().count(), 3);
        assert!(ablate_dms::<f64>(&[], &small_cfg(1), 10.0).is_err());
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    }
}
