//! Fixed-connectivity triangle meshes with per-vertex and per-face organ ids.
//!
//! Vertex order is the correspondence identity: every deformation in the crate
//! returns a mesh whose `faces` array is element-wise equal to its input.

mod obj;
mod sampling;
pub(crate) mod topology;

pub use obj::{read_obj, read_organ_names, write_obj, write_organ_names};
pub use sampling::{sample_surface, sample_surface_organ, SurfaceSamples};
pub use topology::{
    boundary_edges, connected_components, edge_set, euler_characteristic, vertex_neighbors,
    Component,
};

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::scalar::{Aabb, Scalar, Vec3};
use crate::Label;

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub faces: Vec<[usize; 3]>,
    pub organ_of_vertex: Vec<Label>,
    pub organ_of_face: Vec<Label>,
}

impl<T: Scalar> TriMesh<T> {
    /// Builds a mesh and checks index bounds, degenerate faces and organ
    /// consistency between faces and their vertices.
    pub fn new(
        vertices: Vec<Vec3<T>>,
        faces: Vec<[usize; 3]>,
        organ_of_vertex: Vec<Label>,
        organ_of_face: Vec<Label>,
    ) -> Result<Self> {
        let m = TriMesh {
            vertices,
            faces,
            organ_of_vertex,
            organ_of_face,
        };
        m.validate()?;
        Ok(m)
    }

    /// Single-organ mesh with every vertex and face labeled `organ`.
    pub fn single_organ(vertices: Vec<Vec3<T>>, faces: Vec<[usize; 3]>, organ: Label) -> Result<Self> {
        let nv = vertices.len();
        let nf = faces.len();
        Self::new(vertices, faces, vec![organ; nv], vec![organ; nf])
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        if self.organ_of_vertex.len() != nv {
            return Err(Error::InvalidMesh("organ_of_vertex length".into()));
        }
        if self.organ_of_face.len() != self.faces.len() {
            return Err(Error::InvalidMesh("organ_of_face length".into()));
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i >= nv) {
                return Err(Error::InvalidMesh(format!("face {fi} index out of range")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} is degenerate")));
            }
            let o = self.organ_of_face[fi];
            if f.iter().any(|&i| self.organ_of_vertex[i] != o) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} of organ {o} references a vertex of another organ"
                )));
            }
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Same connectivity, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3<T>>) -> Self {
        assert_eq!(vertices.len(), self.vertices.len());
        TriMesh {
            vertices,
            faces: self.faces.clone(),
            organ_of_vertex: self.organ_of_vertex.clone(),
            organ_of_face: self.organ_of_face.clone(),
        }
    }

    /// Sorted distinct organ ids present on faces.
    pub fn organs(&self) -> Vec<Label> {
        self.organ_of_face
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn faces_of_organ(&self, organ: Label) -> Vec<usize> {
        (0..self.faces.len())
            .filter(|&f| self.organ_of_face[f] == organ)
            .collect()
    }

    #[inline]
    pub fn triangle(&self, f: usize) -> [Vec3<T>; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> T {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(c - a).norm() * T::lit(0.5)
    }

    /// Unnormalized face normal `(b - a) x (c - a)`.
    pub fn face_normal_raw(&self, f: usize) -> Vec3<T> {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(c - a)
    }

    /// Area-weighted unit vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3<T>> {
        let mut n = vec![Vec3::zero(); self.vertices.len()];
        for f in 0..self.faces.len() {
            let fn_ = self.face_normal_raw(f);
            for &v in &self.faces[f] {
                n[v] += fn_;
            }
        }
        n.into_iter().map(|v| v.normalized()).collect()
    }

    pub fn bounds(&self) -> Aabb<T> {
        Aabb::from_points(&self.vertices)
    }

    /// Signed enclosed volume (positive for outward-oriented closed meshes).
    pub fn signed_volume(&self) -> T {
        let sixth = T::lit(1.0 / 6.0);
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
                a.dot(b.cross(c)) * sixth
            })
            .fold(T::zero(), |s, v| s + v)
    }

    /// Extracts the faces of one organ as a standalone mesh; returns the map
    /// from local vertex index to global vertex index.
    pub fn organ_submesh(&self, organ: Label) -> (TriMesh<T>, Vec<usize>) {
        let faces = self.faces_of_organ(organ);
        self.submesh(&faces)
    }

    /// Extracts the given faces (and the vertices they reference, in global
    /// order) as a standalone mesh.
    pub fn submesh(&self, face_ids: &[usize]) -> (TriMesh<T>, Vec<usize>) {
        let mut used: Vec<usize> = face_ids.iter().flat_map(|&f| self.faces[f]).collect();
        used.sort_unstable();
        used.dedup();
        let mut local = vec![usize::MAX; self.vertices.len()];
        for (li, &gi) in used.iter().enumerate() {
            local[gi] = li;
        }
        let faces = face_ids
            .iter()
            .map(|&f| self.faces[f].map(|v| local[v]))
            .collect();
        let sub = TriMesh {
            vertices: used.iter().map(|&g| self.vertices[g]).collect(),
            faces,
            organ_of_vertex: used.iter().map(|&g| self.organ_of_vertex[g]).collect(),
            organ_of_face: face_ids.iter().map(|&f| self.organ_of_face[f]).collect(),
        };
        (sub, used)
    }

    /// Concatenates meshes, offsetting face indices.
    pub fn merge(parts: &[TriMesh<T>]) -> TriMesh<T> {
        let mut out = TriMesh {
            vertices: Vec::new(),
            faces: Vec::new(),
            organ_of_vertex: Vec::new(),
            organ_of_face: Vec::new(),
        };
        for p in parts {
            let off = out.vertices.len();
            out.vertices.extend_from_slice(&p.vertices);
            out.organ_of_vertex.extend_from_slice(&p.organ_of_vertex);
            out.faces.extend(p.faces.iter().map(|f| f.map(|i| i + off)));
            out.organ_of_face.extend_from_slice(&p.organ_of_face);
        }
        out
    }

    /// Replaces every organ id with `organ`.
    pub fn relabel(mut self, organ: Label) -> Self {
        self.organ_of_vertex.iter_mut().for_each(|o| *o = organ);
        self.organ_of_face.iter_mut().for_each(|o| *o = organ);
        self
    }

    pub fn map_vertices(&self, f: impl Fn(Vec3<T>) -> Vec3<T>) -> Self {
        self.with_vertices(self.vertices.iter().map(|&v| f(v)).collect())
    }

    pub fn cast<U: Scalar>(&self) -> TriMesh<U> {
        TriMesh {
            vertices: self.vertices.iter().map(|v| v.cast()).collect(),
            faces: self.faces.clone(),
            organ_of_vertex: self.organ_of_vertex.clone(),
            organ_of_face: self.organ_of_face.clone(),
        }
    }
}
