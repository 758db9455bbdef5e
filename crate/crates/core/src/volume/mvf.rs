//! MVF volume files: a UTF-8 `key=value` header terminated by a blank line,
//! followed by raw little-endian voxel data (x fastest; for multi-channel
//! grids the channel index is fastest of all).
//!
//! ```text
//! magic=MVF1
//! kind=label
//! dims=64 64 64
//! spacing=1 1 1
//! origin=0 0 0
//! channels=5
//! dtype=u8
//!
//! <raw data>
//! ```
//!
//! Label grids store `u8` ids and `channels` is the class count. Scalar and
//! prob grids store `f32`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{Scalar, Vec3};
use crate::volume::{Lattice, VoxelData, VoxelGrid};

const MAGIC: &str = "MVF1";

pub fn encode_mvf<T: Scalar>(grid: &VoxelGrid<T>) -> Vec<u8> {
    let l = &grid.lattice;
    let (kind, dtype) = match grid.data {
        VoxelData::Labels { .. } => ("label", "u8"),
        VoxelData::Scalar(_) => ("scalar", "f32"),
        VoxelData::Prob { .. } => ("prob", "f32"),
    };
    let mut h = String::new();
    let _ = writeln!(h, "magic={MAGIC}");
    let _ = writeln!(h, "kind={kind}");
    let _ = writeln!(h, "dims={} {} {}", l.dims[0], l.dims[1], l.dims[2]);
    let _ = writeln!(h, "spacing={} {} {}", l.spacing[0], l.spacing[1], l.spacing[2]);
    let _ = writeln!(h, "origin={} {} {}", l.origin[0], l.origin[1], l.origin[2]);
    let _ = writeln!(h, "channels={}", grid.channels());
    let _ = writeln!(h, "dtype={dtype}");
    h.push('\n');
    let mut out = h.into_bytes();
    match &grid.data {
        VoxelData::Labels { values, .. } => out.extend_from_slice(values),
        VoxelData::Scalar(values) | VoxelData::Prob { values, .. } => {
            out.reserve(values.len() * 4);
            for v in values {
                let f = v.to_f32().unwrap_or(f32::NAN);
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
    }
    out
}

pub fn write_mvf<T: Scalar>(path: impl AsRef<Path>, grid: &VoxelGrid<T>) -> Result<()> {
    fs::write(path, encode_mvf(grid))?;
    Ok(())
}

fn parse_triple<U: std::str::FromStr>(s: &str, key: &str) -> Result<[U; 3]> {
    let parts: Vec<U> = s
        .split_whitespace()
        .map(|t| t.parse::<U>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse(format!("mvf: bad value for {key}")))?;
    parts
        .try_into()
        .map_err(|_| Error::Parse(format!("mvf: {key} needs three values")))
}

pub fn decode_mvf<T: Scalar>(bytes: &[u8]) -> Result<VoxelGrid<T>> {
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Parse("mvf: missing blank line after header".into()))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::Parse("mvf: header is not UTF-8".into()))?;
    let body = &bytes[split + 2..];

    let mut kv = HashMap::new();
    for line in header.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("mvf: header line {line:?} is not key=value")))?;
        kv.insert(k.trim(), v.trim());
    }
    let get = |k: &str| {
        kv.get(k)
            .copied()
            .ok_or_else(|| Error::Parse(format!("mvf: missing header key {k}")))
    };
    if get("magic")? != MAGIC {
        return Err(Error::Parse("mvf: bad magic".into()));
    }
    let dims: [usize; 3] = parse_triple(get("dims")?, "dims")?;
    let spacing: [T; 3] = parse_triple(get("spacing")?, "spacing")?;
    let origin: [T; 3] = parse_triple(get("origin")?, "origin")?;
    let channels: usize = get("channels")?
        .parse()
        .map_err(|_| Error::Parse("mvf: bad channels".into()))?;
    let lattice = Lattice::new(dims, Vec3(spacing), Vec3(origin))?;
    let n = lattice.len();

    let read_f32 = |count: usize| -> Result<Vec<T>> {
        if body.len() != count * 4 {
            return Err(Error::Parse(format!(
                "mvf: expected {} data bytes, found {}",
                count * 4,
                body.len()
            )));
        }
        Ok(body
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect())
    };

    match (get("kind")?, get("dtype")?) {
        ("label", "u8") => {
            if body.len() != n {
                return Err(Error::Parse(format!(
                    "mvf: expected {n} data bytes, found {}",
                    body.len()
                )));
            }
            VoxelGrid::labels(lattice, channels, body.to_vec())
        }
        ("scalar", "f32") => {
            if channels != 1 {
                return Err(Error::Parse("mvf: scalar grids have one channel".into()));
            }
            VoxelGrid::scalar(lattice, read_f32(n)?)
        }
        ("prob", "f32") => VoxelGrid::prob(lattice, channels, read_f32(n * channels)?),
        (k, d) => Err(Error::Parse(format!("mvf: unsupported kind/dtype {k}/{d}"))),
    }
}

pub fn read_mvf<T: Scalar>(path: impl AsRef<Path>) -> Result<VoxelGrid<T>> {
    decode_mvf(&fs::read(path)?)
}
