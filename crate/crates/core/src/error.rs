use thiserror::Error;

use crate::Label;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no voxel edge crosses the iso value")]
    EmptySurface,
    #[error("grid needs at least two voxels per axis, got {0:?}")]
    DegenerateGrid([usize; 3]),
    #[error("surface of organ {0} is not closed")]
    OpenSurface(Label),
    #[error("organ {organ} component has Euler characteristic {chi}, expected 2")]
    TopologyError { organ: Label, chi: i64 },
    #[error("organ {0} is empty")]
    EmptyOrgan(Label),
    #[error("dims mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} is not below class count {classes}")]
    InvalidClass { label: Label, classes: usize },
    #[error("organ {0} has zero surface area")]
    ZeroArea(Label),
    #[error("organ mismatch: {0}")]
    OrganMismatch(String),
    #[error("point set is empty")]
    EmptySet,
    #[error("mesh has no edges")]
    NoEdges,
    #[error("loss became non-finite at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("source needs at least three non-collinear vertices")]
    DegenerateSource,
    #[error("registration system is singular: {0}")]
    SingularSystem(String),
    #[error("gradient check failed: max relative error {0:e}")]
    GradientCheck(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("config: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
