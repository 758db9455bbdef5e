//! On-disk stack: one 3-channel MVF volume per field plus a text manifest.
//!
//! ```text
//! steps_per_stage=5
//! h=0.2
//!
//! stage,organ,file
//! 0,1,stage0_organ1.mvf
//! 4,shared,stage4_shared.mvf
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flowfield::{FlowField, FlowStack, Schedule, Stage, STAGES};
use crate::scalar::{Scalar, Vec3};
use crate::volume::{read_mvf, write_mvf, VoxelData, VoxelGrid};
use crate::Label;

pub const MANIFEST_NAME: &str = "flowstack.txt";

fn to_grid<T: Scalar>(f: &FlowField<T>) -> Result<VoxelGrid<T>> {
    let values = f.values.iter().flat_map(|v| v.0).collect();
    VoxelGrid::prob(f.lattice, 3, values)
}

fn from_grid<T: Scalar>(g: VoxelGrid<T>) -> Result<FlowField<T>> {
    match g.data {
        VoxelData::Prob { channels: 3, values } => FlowField::new(
            g.lattice,
            values.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
        ),
        _ => Err(Error::Parse("flow field volume must have 3 channels".into())),
    }
}

/// Writes the manifest and one volume per field into `dir` (created if needed).
pub fn write_stack<T: Scalar>(dir: impl AsRef<Path>, stack: &FlowStack<T>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut text = format!(
        "steps_per_stage={}\nh={}\n\nstage,organ,file\n",
        stack.schedule.steps_per_stage, stack.schedule.h
    );
    for (s, st) in stack.stages.iter().enumerate() {
        for (organ, f) in st.fields() {
            let (tag, name) = match organ {
                Some(o) => (o.to_string(), format!("stage{s}_organ{o}.mvf")),
                None => ("shared".to_string(), format!("stage{s}_shared.mvf")),
            };
            write_mvf(dir.join(&name), &to_grid(f)?)?;
            text.push_str(&format!("{s},{tag},{name}\n"));
        }
    }
    fs::write(dir.join(MANIFEST_NAME), text)?;
    Ok(())
}

pub fn read_stack<T: Scalar>(dir: impl AsRef<Path>) -> Result<FlowStack<T>> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let (head, body) = text
        .split_once("\n\n")
        .ok_or_else(|| Error::Parse("manifest needs a blank line after the schedule".into()))?;
    let mut schedule = Schedule::default();
    for line in head.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad manifest line {line:?}")))?;
        let bad = |_| Error::Parse(format!("bad value in {line:?}"));
        match k.trim() {
            "steps_per_stage" => schedule.steps_per_stage = v.trim().parse().map_err(bad)?,
            "h" => schedule.h = v.trim().parse().map_err(|_| Error::Parse(format!("bad value in {line:?}")))?,
            other => return Err(Error::Parse(format!("unknown manifest key {other:?}"))),
        }
    }
    let mut per: Vec<BTreeMap<Label, FlowField<T>>> = vec![BTreeMap::new(); STAGES];
    let mut shared: Vec<Option<FlowField<T>>> = vec![None; STAGES];
    for line in body.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(Error::Parse(format!("bad manifest row {line:?}")));
        }
        let s: usize = cols[0]
            .parse()
            .map_err(|_| Error::Parse(format!("bad stage in {line:?}")))?;
        if s >= STAGES {
            return Err(Error::Parse(format!("stage {s} out of range")));
        }
        let field = from_grid(read_mvf::<T>(dir.join(cols[2]))?)?;
        if cols[1] == "shared" {
            shared[s] = Some(field);
        } else {
            let o: Label = cols[1]
                .parse()
                .map_err(|_| Error::Parse(format!("bad organ in {line:?}")))?;
            per[s].insert(o, field);
        }
    }
    let mut stages = Vec::with_capacity(STAGES);
    for (s, (p, sh)) in per.into_iter().zip(shared).enumerate() {
        stages.push(match (p.is_empty(), sh) {
            (true, Some(f)) => Stage::Shared(f),
            (false, None) => Stage::PerOrgan(p),
            _ => return Err(Error::Parse(format!("stage {s} must be either shared or per organ"))),
        });
    }
    Ok(FlowStack { stages, schedule })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Lattice;

    #[test]
    fn roundtrip_is_exact_in_f32() {
        let l = Lattice::<f32>::new([3, 4, 5], Vec3::new(1.0, 2.0, 0.5), Vec3::new(-1.0, 0.0, 2.0)).unwrap();
        let mut st = FlowStack::zeros(&[1, 3], &[l; STAGES]);
        for (k, f) in st.fields_mut().into_iter().enumerate() {
            for (i, v) in f.values.iter_mut().enumerate() {
                *v = Vec3::new(i as f32 * 0.25, -(k as f32), 1.0 / (1.0 + i as f32));
            }
        }
        let dir = tempfile::tempdir().unwrap();
        write_stack(dir.path(), &st).unwrap();
        let back: FlowStack<f32> = read_stack(dir.path()).unwrap();
        assert_eq!(back, st);
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap();
        assert!(text.starts_with("steps_per_stage=5\nh=0.2\n\nstage,organ,file\n0,1,"));
        assert!(text.contains("4,shared,stage4_shared.mvf"));
    }
}
