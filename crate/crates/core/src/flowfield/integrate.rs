use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flowfield::{FlowField, FlowStack, Stage, Stencil, STAGES};
use crate::mesh::TriMesh;
use crate::scalar::{Scalar, Vec3};
use crate::Label;

/// Every intermediate vertex state of an integration run, kept for the
/// reverse pass. `states[0]` is the input and `states[n]` the positions after
/// `n` Euler steps.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub stages: Range<usize>,
    pub steps_per_stage: usize,
    pub states: Vec<Vec<Vec3<T>>>,
}

fn field_of<'a, T: Scalar>(stage: &'a Stage<T>, organ: Label) -> &'a FlowField<T> {
    stage.field(organ).expect("validated organ set")
}

fn check_vertices<T: Scalar>(stack: &FlowStack<T>, mesh: &TriMesh<T>) -> Result<()> {
    stack.validate(&mesh.organs())?;
    for st in &stack.stages {
        if let Some(&o) = mesh.organ_of_vertex.iter().find(|&&o| st.field(o).is_none()) {
            return Err(Error::OrganMismatch(format!("no field for vertex organ {o}")));
        }
    }
    Ok(())
}

/// Runs stages `stages` of `stack` on `mesh` and records every step.
pub fn integrate_trajectory<T: Scalar>(
    stack: &FlowStack<T>,
    mesh: &TriMesh<T>,
    stages: Range<usize>,
) -> Result<Trajectory<T>> {
    check_vertices(stack, mesh)?;
    if stages.end > STAGES {
        return Err(Error::Config(format!("stage range {stages:?} out of bounds")));
    }
    let h = T::lit(stack.schedule.h);
    let steps = stack.schedule.steps_per_stage;
    let mut states = Vec::with_capacity(stages.len() * steps + 1);
    states.push(mesh.vertices.clone());
    for s in stages.clone() {
        let stage = &stack.stages[s];
        for _ in 0..steps {
            let prev = states.last().expect("non-empty");
            let next: Vec<Vec3<T>> = prev
                .par_iter()
                .zip(mesh.organ_of_vertex.par_iter())
                .map(|(&x, &o)| x + field_of(stage, o).sample(x) * h)
                .collect();
            states.push(next);
        }
    }
    Ok(Trajectory {
        stages,
        steps_per_stage: steps,
        states,
    })
}

/// Deforms `template` through all five stages. Returns the final mesh and the
/// mesh after every stage (the last equals the final mesh).
pub fn integrate<T: Scalar>(stack: &FlowStack<T>, template: &TriMesh<T>) -> Result<(TriMesh<T>, Vec<TriMesh<T>>)> {
    let tr = integrate_trajectory(stack, template, 0..STAGES)?;
    let inter = tr.stage_meshes(template);
    Ok((inter[STAGES - 1].clone(), inter))
}

impl<T: Scalar> Trajectory<T> {
    /// Vertex positions at the end of stage `s` (absolute stage index).
    pub fn after_stage(&self, s: usize) -> &[Vec3<T>] {
        &self.states[(s + 1 - self.stages.start) * self.steps_per_stage]
    }

    pub fn last(&self) -> &[Vec3<T>] {
        self.states.last().expect("non-empty")
    }

    /// One mesh per integrated stage.
    pub fn stage_meshes(&self, template: &TriMesh<T>) -> Vec<TriMesh<T>> {
        self.stages
            .clone()
            .map(|s| template.with_vertices(self.after_stage(s).to_vec()))
            .collect()
    }

    /// Reverse pass. `stage_grads[s]` is `dL/d(positions after stage s)` (or
    /// `None` when stage `s` carries no loss). Lattice gradients are added into
    /// `grad`, which must have the layout of `stack`; stages with
    /// `frozen[s] == true` are skipped. Returns `dL/d(input positions)`.
    pub fn backward(
        &self,
        stack: &FlowStack<T>,
        organ_of_vertex: &[Label],
        stage_grads: &[Option<Vec<Vec3<T>>>],
        frozen: &[bool; STAGES],
        grad: &mut FlowStack<T>,
    ) -> Vec<Vec3<T>> {
        let h = T::lit(stack.schedule.h);
        let steps = self.steps_per_stage;
        let nv = organ_of_vertex.len();
        let mut g = vec![Vec3::zero(); nv];
        let total = self.states.len() - 1;
        for n in (1..=total).rev() {
            if n % steps == 0 {
                let s = self.stages.start + n / steps - 1;
                if let Some(Some(sg)) = stage_grads.get(s) {
                    for (a, b) in g.iter_mut().zip(sg) {
                        *a += *b;
                    }
                }
            }
            let s = self.stages.start + (n - 1) / steps;
            let stage = &stack.stages[s];
            let x = &self.states[n - 1];
            let stencils: Vec<Stencil<T>> = x
                .par_iter()
                .zip(organ_of_vertex.par_iter())
                .map(|(&p, &o)| field_of(stage, o).stencil(p))
                .collect();
            if !frozen[s] {
                let gstage = &mut grad.stages[s];
                for (v, st) in stencils.iter().enumerate() {
                    let gv = g[v] * h;
                    let field = match gstage {
                        Stage::PerOrgan(m) => m.get_mut(&organ_of_vertex[v]).expect("validated"),
                        Stage::Shared(f) => f,
                    };
                    for c in 0..8 {
                        field.values[st.nodes[c]] += gv * st.weights[c];
                    }
                }
            }
            g = g
                .par_iter()
                .zip(stencils.par_iter())
                .zip(organ_of_vertex.par_iter())
                .map(|((&gv, st), &o)| {
                    let f = field_of(stage, o);
                    let mut jt = Vec3::zero();
                    for c in 0..8 {
                        jt += st.dweights[c] * f.values[st.nodes[c]].dot(gv);
                    }
                    gv + jt * h
                })
                .collect();
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowfield::Schedule;
    use crate::synth;
    use crate::volume::Lattice;

    fn lattice() -> Lattice<f64> {
        Lattice::new([6, 6, 6], Vec3::splat(1.0), Vec3::splat(-2.5)).unwrap()
    }

    fn two_organ_mesh() -> TriMesh<f64> {
        let a = synth::icosphere::<f64>(1.0, 1).relabel(1);
        let b = synth::icosphere::<f64>(0.7, 1)
            .map_vertices(|v| v + Vec3::new(0.5, 0.2, 0.0))
            .relabel(2);
        TriMesh::merge(&[a, b])
    }

    #[test]
    fn zero_stack_is_identity() {
        let m = two_organ_mesh();
        let st = FlowStack::zeros(&[1, 2], &[lattice(); STAGES]);
        let (fin, inter) = integrate(&st, &m).unwrap();
        assert_eq!(fin, m);
        assert_eq!(inter.len(), 5);
        assert!(inter.iter().all(|x| *x == m));
    }

    #[test]
    fn constant_field_moves_by_v() {
        let m = two_organ_mesh();
        let v = Vec3::new(0.37, -1.3, 0.05);
        let mut st = FlowStack::zeros(&[1, 2], &[lattice(); STAGES]);
        st.stages[4] = Stage::Shared(FlowField::constant(lattice(), v));
        let (fin, _) = integrate(&st, &m).unwrap();
        for (a, b) in fin.vertices.iter().zip(&m.vertices) {
            assert!((*a - *b - v).max_abs() <= 1e-12);
        }
        assert_eq!(fin.faces, m.faces);
    }

    #[test]
    fn linear_field_euler_recurrence() {
        let l = Lattice::new([9, 9, 9], Vec3::splat(1.0), Vec3::splat(-4.0)).unwrap();
        let m = synth::icosphere::<f64>(0.5, 1);
        let mut st = FlowStack::zeros(&[1], &[l; STAGES]);
        if let Stage::PerOrgan(map) = &mut st.stages[0] {
            map.insert(1, FlowField::from_fn(l, |p| p));
        }
        let tr = integrate_trajectory(&st, &m, 0..1).unwrap();
        for (a, b) in tr.last().iter().zip(&m.vertices) {
            assert!((*a - *b * 1.2f64.powi(5)).max_abs() < 1e-12);
        }
        assert!((1.2f64.powi(5) - 2.48832).abs() < 1e-12);
    }

    #[test]
    fn stages_compose() {
        let m = two_organ_mesh();
        let mut st = FlowStack::zeros(&[1, 2], &[lattice(); STAGES]);
        for (k, f) in st.fields_mut().into_iter().enumerate() {
            for (i, v) in f.values.iter_mut().enumerate() {
                let t = (i * 7 + k * 13) as f64;
                *v = Vec3::new((t * 0.37).sin(), (t * 0.11).cos(), (t * 0.05).sin()) * 0.3;
            }
        }
        let (fin, inter) = integrate(&st, &m).unwrap();
        let rest = integrate_trajectory(&st, &inter[0], 1..STAGES).unwrap();
        assert_eq!(rest.last(), &fin.vertices[..]);
        assert_eq!(rest.after_stage(2), &inter[2].vertices[..]);
    }

    #[test]
    fn organ_mismatch() {
        let m = two_organ_mesh();
        let st = FlowStack::zeros(&[1], &[lattice(); STAGES]);
        assert!(matches!(integrate(&st, &m), Err(Error::OrganMismatch(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        // L = sum_s <c_s, x_s> for fixed random weights c_s
        let m = two_organ_mesh();
        let mut st = FlowStack::zeros(&[1, 2], &[lattice(); STAGES]);
        st.schedule = Schedule::default();
        for (k, f) in st.fields_mut().into_iter().enumerate() {
            for (i, v) in f.values.iter_mut().enumerate() {
                let t = (i * 5 + k * 17) as f64;
                *v = Vec3::new((t * 0.31).sin(), (t * 0.17).cos(), (t * 0.07).sin()) * 0.2;
            }
        }
        let nv = m.num_vertices();
        let c: Vec<Vec<Vec3<f64>>> = (0..STAGES)
            .map(|s| {
                (0..nv)
                    .map(|i| {
                        let t = (i * 3 + s * 11) as f64;
                        Vec3::new(t.sin(), t.cos(), (0.5 * t).sin())
                    })
                    .collect()
            })
            .collect();
        let loss = |st: &FlowStack<f64>| -> f64 {
            let tr = integrate_trajectory(st, &m, 0..STAGES).unwrap();
            (0..STAGES)
                .map(|s| tr.after_stage(s).iter().zip(&c[s]).map(|(x, w)| x.dot(*w)).sum::<f64>())
                .sum()
        };
        let tr = integrate_trajectory(&st, &m, 0..STAGES).unwrap();
        let mut grad = st.zeros_like();
        let sg: Vec<Option<Vec<Vec3<f64>>>> = c.iter().cloned().map(Some).collect();
        tr.backward(&st, &m.organ_of_vertex, &sg, &[false; STAGES], &mut grad);
        let eps = 1e-6;
        let mut worst = 0.0f64;
        let nf = st.fields().len();
        for fi in 0..nf {
            for node in [0usize, 43, 86, 129, 172, 215] {
                for a in 0..3 {
                    let mut p = st.clone();
                    p.fields_mut()[fi].values[node].0[a] += eps;
                    let mut q = st.clone();
                    q.fields_mut()[fi].values[node].0[a] -= eps;
                    let fd = (loss(&p) - loss(&q)) / (2.0 * eps);
                    let an = grad.fields()[fi].values[node][a];
                    worst = worst.max((fd - an).abs() / (1.0 + fd.abs()));
                }
            }
        }
        assert!(worst < 1e-6, "{worst}");
    }
}
