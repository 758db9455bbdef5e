//! ASCII OBJ I/O. Vertices are written in index order, faces in index order,
//! and each run of faces with the same organ is preceded by `g organ_<id>`.
//! Coordinates use the shortest round-trip decimal form, so write/read is
//! lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::scalar::{Scalar, Vec3};
use crate::Label;

pub fn obj_string<T: Scalar>(mesh: &TriMesh<T>) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 40 + mesh.faces.len() * 24);
    s.push_str("# meshflow mesh\n");
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    let mut current: Option<Label> = None;
    for (f, o) in mesh.faces.iter().zip(&mesh.organ_of_face) {
        if current != Some(*o) {
            let _ = writeln!(s, "g organ_{o}");
            current = Some(*o);
        }
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn write_obj<T: Scalar>(path: impl AsRef<Path>, mesh: &TriMesh<T>) -> Result<()> {
    fs::write(path, obj_string(mesh))?;
    Ok(())
}

fn parse_num<T: Scalar>(tok: Option<&str>, line: usize) -> Result<T> {
    tok.and_then(|t| t.parse::<T>().ok())
        .ok_or_else(|| Error::Parse(format!("obj line {line}: bad number")))
}

fn parse_index(tok: &str, nv: usize, line: usize) -> Result<usize> {
    // "f v/vt/vn" forms: only the position index matters
    let head = tok.split('/').next().unwrap_or("");
    let i: i64 = head
        .parse()
        .map_err(|_| Error::Parse(format!("obj line {line}: bad face index {tok:?}")))?;
    let idx = if i > 0 { i - 1 } else { nv as i64 + i };
    if idx < 0 {
        return Err(Error::Parse(format!("obj line {line}: face index {i} out of range")));
    }
    Ok(idx as usize)
}

pub fn parse_obj<T: Scalar>(text: &str) -> Result<TriMesh<T>> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut organ_of_face = Vec::new();
    let mut organ: Label = 0;
    for (ln, line) in text.lines().enumerate() {
        let ln = ln + 1;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let x = parse_num(it.next(), ln)?;
                let y = parse_num(it.next(), ln)?;
                let z = parse_num(it.next(), ln)?;
                vertices.push(Vec3::new(x, y, z));
            }
            Some("g") | Some("o") => {
                let name = it.next().unwrap_or("");
                organ = name
                    .strip_prefix("organ_")
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| {
                        Error::Parse(format!("obj line {ln}: group {name:?} is not organ_<id>"))
                    })?;
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| parse_index(t, vertices.len(), ln))
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::Parse(format!("obj line {ln}: face with <3 vertices")));
                }
                // polygons are fanned
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                    organ_of_face.push(organ);
                }
            }
            _ => {}
        }
    }
    let mut organ_of_vertex = vec![0; vertices.len()];
    for (f, &o) in faces.iter().zip(&organ_of_face) {
        for &v in f {
            if v < organ_of_vertex.len() {
                organ_of_vertex[v] = o;
            }
        }
    }
    TriMesh::new(vertices, faces, organ_of_vertex, organ_of_face)
}

pub fn read_obj<T: Scalar>(path: impl AsRef<Path>) -> Result<TriMesh<T>> {
    parse_obj(&fs::read_to_string(path)?)
}

/// Sidecar `id name` lines.
pub fn write_organ_names(path: impl AsRef<Path>, names: &BTreeMap<Label, String>) -> Result<()> {
    let mut s = String::new();
    for (id, n) in names {
        let _ = writeln!(s, "{id} {n}");
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_organ_names(path: impl AsRef<Path>) -> Result<BTreeMap<Label, String>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, name) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::Parse(format!("organ names line {}: expected `id name`", ln + 1)))?;
        let id: Label = id
            .parse()
            .map_err(|_| Error::Parse(format!("organ names line {}: bad id", ln + 1)))?;
        out.insert(id, name.trim().to_string());
    }
    Ok(out)
}
