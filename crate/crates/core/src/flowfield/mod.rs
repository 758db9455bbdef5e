//! Stationary flow fields on node-centered lattices and the staged Euler
//! integrator that deforms a template.

mod integrate;
mod manifest;

pub use integrate::{integrate, integrate_trajectory, Trajectory};
pub use manifest::{read_stack, write_stack, MANIFEST_NAME};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::{Scalar, Vec3};
use crate::volume::Lattice;
use crate::Label;

/// Number of stationary stages in a stack.
pub const STAGES: usize = 5;

/// A lattice of velocity vectors (mm per unit time). Queries outside the
/// lattice clamp to the boundary cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField<T> {
    pub lattice: Lattice<T>,
    pub values: Vec<Vec3<T>>,
}

/// Trilinear stencil of one query: 8 node indices, their weights and the
/// derivatives of the weights with respect to the query position.
#[derive(Clone, Copy, Debug)]
pub struct Stencil<T> {
    pub nodes: [usize; 8],
    pub weights: [T; 8],
    pub dweights: [Vec3<T>; 8],
}

impl<T: Scalar> FlowField<T> {
    pub fn zeros(lattice: Lattice<T>) -> Self {
        Self::constant(lattice, Vec3::zero())
    }

    pub fn constant(lattice: Lattice<T>, v: Vec3<T>) -> Self {
        FlowField {
            values: vec![v; lattice.len()],
            lattice,
        }
    }

    /// Field with `f(world position)` at every node.
    pub fn from_fn(lattice: Lattice<T>, f: impl Fn(Vec3<T>) -> Vec3<T>) -> Self {
        FlowField {
            values: (0..lattice.len()).map(|i| f(lattice.world_of_index(i))).collect(),
            lattice,
        }
    }

    pub fn new(lattice: Lattice<T>, values: Vec<Vec3<T>>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::InvalidGrid(format!(
                "flow field has {} vectors, lattice needs {}",
                values.len(),
                lattice.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("flow field has non-finite values".into()));
        }
        Ok(FlowField { lattice, values })
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == Vec3::zero())
    }

    pub fn stencil(&self, p: Vec3<T>) -> Stencil<T> {
        let u = self.lattice.to_lattice(p);
        let mut base = [0usize; 3];
        let mut t = [T::zero(); 3];
        let mut step = [0usize; 3];
        // d t / d p per axis; zero where the query is clamped
        let mut dt = [T::zero(); 3];
        for a in 0..3 {
            let n = self.lattice.dims[a];
            if n < 2 {
                continue;
            }
            let hi = T::from_usize_lossy(n - 1);
            let (c, inside) = if u[a] < T::zero() {
                (T::zero(), false)
            } else if u[a] > hi {
                (hi, false)
            } else {
                (u[a], true)
            };
            let i0 = c.floor().to_usize().expect("index").min(n - 2);
            base[a] = i0;
            t[a] = c - T::from_usize_lossy(i0);
            step[a] = 1;
            if inside {
                dt[a] = T::one() / self.lattice.spacing[a];
            }
        }
        let one = T::one();
        let mut nodes = [0usize; 8];
        let mut weights = [T::zero(); 8];
        let mut dweights = [Vec3::zero(); 8];
        for c in 0..8 {
            let bits = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let mut f = [T::zero(); 3];
            let mut df = [T::zero(); 3];
            for a in 0..3 {
                if bits[a] == 1 {
                    f[a] = t[a];
                    df[a] = dt[a];
                } else {
                    f[a] = one - t[a];
                    df[a] = -dt[a];
                }
            }
            nodes[c] = self.lattice.index(
                base[0] + bits[0] * step[0],
                base[1] + bits[1] * step[1],
                base[2] + bits[2] * step[2],
            );
            weights[c] = f[0] * f[1] * f[2];
            dweights[c] = Vec3::new(df[0] * f[1] * f[2], f[0] * df[1] * f[2], f[0] * f[1] * df[2]);
        }
        Stencil {
            nodes,
            weights,
            dweights,
        }
    }

    /// Trilinear interpolation at `p`.
    pub fn sample(&self, p: Vec3<T>) -> Vec3<T> {
        let s = self.stencil(p);
        let mut v = Vec3::zero();
        for c in 0..8 {
            v += self.values[s.nodes[c]] * s.weights[c];
        }
        v
    }

    /// Value and spatial Jacobian `J[r][c] = d v_r / d p_c`.
    pub fn sample_with_jacobian(&self, p: Vec3<T>) -> (Vec3<T>, [[T; 3]; 3]) {
        let s = self.stencil(p);
        let mut v = Vec3::zero();
        let mut j = [[T::zero(); 3]; 3];
        for c in 0..8 {
            let x = self.values[s.nodes[c]];
            v += x * s.weights[c];
            for r in 0..3 {
                for k in 0..3 {
                    j[r][k] = j[r][k] + x[r] * s.dweights[c][k];
                }
            }
        }
        (v, j)
    }

    /// Minimum over nodes of `det(I + h * grad Phi)`, with the gradient taken by
    /// central differences (one-sided on the lattice boundary).
    pub fn min_jacobian_det(&self, schedule: Schedule) -> T {
        let h = T::lit(schedule.h);
        let [nx, ny, nz] = self.lattice.dims;
        let mut best = T::infinity();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = [i, j, k];
                    let mut m = [[T::zero(); 3]; 3];
                    for a in 0..3 {
                        let n = self.lattice.dims[a];
                        if n < 2 {
                            continue;
                        }
                        let (lo, hi) = (idx[a].saturating_sub(1), (idx[a] + 1).min(n - 1));
                        let mut pl = idx;
                        let mut ph = idx;
                        pl[a] = lo;
                        ph[a] = hi;
                        let vl = self.values[self.lattice.index(pl[0], pl[1], pl[2])];
                        let vh = self.values[self.lattice.index(ph[0], ph[1], ph[2])];
                        let d = (vh - vl) / (self.lattice.spacing[a] * T::from_usize_lossy(hi - lo));
                        for r in 0..3 {
                            m[r][a] = d[r] * h;
                        }
                    }
                    for r in 0..3 {
                        m[r][r] = m[r][r] + T::one();
                    }
                    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
                    best = best.min(det);
                }
            }
        }
        best
    }

    pub fn cast<U: Scalar>(&self) -> FlowField<U> {
        FlowField {
            lattice: self.lattice.cast(),
            values: self.values.iter().map(|v| v.cast()).collect(),
        }
    }
}

/// Trilinear interpolation of `field` at `p` with boundary clamping.
pub fn sample_flow<T: Scalar>(field: &FlowField<T>, p: Vec3<T>) -> Vec3<T> {
    field.sample(p)
}

/// Euler schedule shared by every stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub steps_per_stage: usize,
    pub h: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            steps_per_stage: 5,
            h: 0.2,
        }
    }
}

/// One stationary stage: a field per organ, or one field for all organs.
#[derive(Clone, Debug, PartialEq)]
pub enum Stage<T> {
    PerOrgan(BTreeMap<Label, FlowField<T>>),
    Shared(FlowField<T>),
}

impl<T: Scalar> Stage<T> {
    pub fn field(&self, organ: Label) -> Option<&FlowField<T>> {
        match self {
            Stage::PerOrgan(m) => m.get(&organ),
            Stage::Shared(f) => Some(f),
        }
    }

    pub fn fields(&self) -> Vec<(Option<Label>, &FlowField<T>)> {
        match self {
            Stage::PerOrgan(m) => m.iter().map(|(&o, f)| (Some(o), f)).collect(),
            Stage::Shared(f) => vec![(None, f)],
        }
    }

    pub fn fields_mut(&mut self) -> Vec<&mut FlowField<T>> {
        match self {
            Stage::PerOrgan(m) => m.values_mut().collect(),
            Stage::Shared(f) => vec![f],
        }
    }

    fn map(&self, f: impl Fn(&FlowField<T>) -> FlowField<T>) -> Stage<T> {
        match self {
            Stage::PerOrgan(m) => Stage::PerOrgan(m.iter().map(|(&o, x)| (o, f(x))).collect()),
            Stage::Shared(x) => Stage::Shared(f(x)),
        }
    }
}

/// Five stages: per-organ fields at stages 0 to 3 and a shared field at stage 4.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowStack<T> {
    pub stages: Vec<Stage<T>>,
    pub schedule: Schedule,
}

impl<T: Scalar> FlowStack<T> {
    /// All-zero stack with the given per-stage lattices.
    pub fn zeros(organs: &[Label], lattices: &[Lattice<T>; STAGES]) -> Self {
        let mut stages = Vec::with_capacity(STAGES);
        for (s, lat) in lattices.iter().enumerate() {
            if s + 1 < STAGES {
                stages.push(Stage::PerOrgan(
                    organs.iter().map(|&o| (o, FlowField::zeros(*lat))).collect(),
                ));
            } else {
                stages.push(Stage::Shared(FlowField::zeros(*lat)));
            }
        }
        FlowStack {
            stages,
            schedule: Schedule::default(),
        }
    }

    /// Lattices of `resolutions[s]^3` nodes per stage spanning the image
    /// extent; the last stage uses the image lattice itself.
    pub fn default_lattices(image: &Lattice<T>, resolutions: [usize; STAGES - 1]) -> Result<[Lattice<T>; STAGES]> {
        let lo = image.origin;
        let hi = image.far_corner();
        let mk = |r: usize| Lattice::spanning([r; 3], lo, hi);
        Ok([mk(resolutions[0])?, mk(resolutions[1])?, mk(resolutions[2])?, mk(resolutions[3])?, *image])
    }

    /// Checks stage count, schedule and that every stage covers `organs`.
    pub fn validate(&self, organs: &[Label]) -> Result<()> {
        if self.stages.len() != STAGES {
            return Err(Error::InvalidGrid(format!("stack has {} stages", self.stages.len())));
        }
        if self.schedule.steps_per_stage == 0 || !(self.schedule.h > 0.0) {
            return Err(Error::Config("schedule needs steps > 0 and h > 0".into()));
        }
        if !matches!(self.stages[STAGES - 1], Stage::Shared(_)) {
            return Err(Error::InvalidGrid("last stage must be shared".into()));
        }
        for (s, st) in self.stages.iter().enumerate() {
            match st {
                Stage::PerOrgan(m) => {
                    let have: Vec<Label> = m.keys().copied().collect();
                    if have != organs {
                        return Err(Error::OrganMismatch(format!(
                            "stage {s} has organs {have:?}, mesh has {organs:?}"
                        )));
                    }
                }
                Stage::Shared(_) if s + 1 < STAGES => {
                    return Err(Error::InvalidGrid(format!("stage {s} must be per organ")));
                }
                Stage::Shared(_) => {}
            }
        }
        Ok(())
    }

    /// Same layout with every vector zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        FlowStack {
            stages: self
                .stages
                .iter()
                .map(|s| s.map(|f| FlowField::zeros(f.lattice)))
                .collect(),
            schedule: self.schedule,
        }
    }

    /// Every field in a fixed order: stage, then organ.
    pub fn fields(&self) -> Vec<&FlowField<T>> {
        self.stages
            .iter()
            .flat_map(|s| s.fields().into_iter().map(|(_, f)| f))
            .collect()
    }

    pub fn fields_mut(&mut self) -> Vec<&mut FlowField<T>> {
        self.stages.iter_mut().flat_map(|s| s.fields_mut()).collect()
    }

    /// Stage index of every entry of [`FlowStack::fields`].
    pub fn field_stages(&self) -> Vec<usize> {
        self.stages
            .iter()
            .enumerate()
            .flat_map(|(i, s)| std::iter::repeat_n(i, s.fields().len()))
            .collect()
    }

    pub fn min_jacobian_det(&self) -> T {
        self.fields()
            .iter()
            .map(|f| f.min_jacobian_det(self.schedule))
            .fold(T::infinity(), |a, b| a.min(b))
    }

    pub fn cast<U: Scalar>(&self) -> FlowStack<U> {
        FlowStack {
            stages: self
                .stages
                .iter()
                .map(|s| match s {
                    Stage::PerOrgan(m) => Stage::PerOrgan(m.iter().map(|(&o, f)| (o, f.cast())).collect()),
                    Stage::Shared(f) => Stage::Shared(f.cast()),
                })
                .collect(),
            schedule: self.schedule,
        }
    }
}
