use crate::error::{Error, Result};
use crate::scalar::{Scalar, Vec3};
use crate::Label;

/// Node-centered regular lattice: node `(i, j, k)` sits at
/// `origin + (i, j, k) * spacing`, linear index `i + nx * (j + ny * k)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lattice<T> {
    pub dims: [usize; 3],
    pub spacing: Vec3<T>,
    pub origin: Vec3<T>,
}

impl<T: Scalar> Lattice<T> {
    pub fn new(dims: [usize; 3], spacing: Vec3<T>, origin: Vec3<T>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGrid(format!("zero dimension in {dims:?}")));
        }
        if spacing.0.iter().any(|&s| !(s > T::zero()) || !s.is_finite()) {
            return Err(Error::InvalidGrid("spacing must be strictly positive".into()));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Lattice { dims, spacing, origin })
    }

    /// Isotropic lattice with unit spacing and origin at zero.
    pub fn unit(dims: [usize; 3]) -> Self {
        Self::new(dims, Vec3::splat(T::one()), Vec3::zero()).expect("valid unit lattice")
    }

    /// Lattice with `dims` nodes spanning `[lo, hi]` (both ends included).
    pub fn spanning(dims: [usize; 3], lo: Vec3<T>, hi: Vec3<T>) -> Result<Self> {
        let mut spacing = Vec3::splat(T::one());
        for a in 0..3 {
            if dims[a] > 1 {
                spacing[a] = (hi[a] - lo[a]) / T::from_usize_lossy(dims[a] - 1);
            }
        }
        Self::new(dims, spacing, lo)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let r = idx / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    #[inline]
    pub fn world(&self, i: usize, j: usize, k: usize) -> Vec3<T> {
        Vec3::new(
            self.origin[0] + T::from_usize_lossy(i) * self.spacing[0],
            self.origin[1] + T::from_usize_lossy(j) * self.spacing[1],
            self.origin[2] + T::from_usize_lossy(k) * self.spacing[2],
        )
    }

    #[inline]
    pub fn world_of_index(&self, idx: usize) -> Vec3<T> {
        let [i, j, k] = self.coords(idx);
        self.world(i, j, k)
    }

    /// Continuous lattice coordinates of a world point.
    #[inline]
    pub fn to_lattice(&self, p: Vec3<T>) -> Vec3<T> {
        Vec3::new(
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        )
    }

    /// World position of the last node.
    pub fn far_corner(&self) -> Vec3<T> {
        self.world(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    pub fn same_geometry(&self, o: &Self) -> bool {
        self == o
    }

    pub fn cast<U: Scalar>(&self) -> Lattice<U> {
        Lattice {
            dims: self.dims,
            spacing: self.spacing.cast(),
            origin: self.origin.cast(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridKind {
    Label,
    Scalar,
    Prob,
}

#[derive(Clone, Debug, PartialEq)]
pub enum VoxelData<T> {
    /// One class id per voxel, every value below `classes`.
    Labels { classes: usize, values: Vec<Label> },
    Scalar(Vec<T>),
    /// `channels` values per voxel, channel index fastest.
    Prob { channels: usize, values: Vec<T> },
}

/// A volume on a [`Lattice`].
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid<T> {
    pub lattice: Lattice<T>,
    pub data: VoxelData<T>,
}

impl<T: Scalar> VoxelGrid<T> {
    pub fn labels(lattice: Lattice<T>, classes: usize, values: Vec<Label>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::InvalidGrid(format!(
                "label data has {} values, lattice needs {}",
                values.len(),
                lattice.len()
            )));
        }
        if let Some(&bad) = values.iter().find(|&&v| v as usize >= classes) {
            return Err(Error::InvalidClass { label: bad, classes });
        }
        Ok(VoxelGrid {
            lattice,
            data: VoxelData::Labels { classes, values },
        })
    }

    pub fn scalar(lattice: Lattice<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::InvalidGrid(format!(
                "scalar data has {} values, lattice needs {}",
                values.len(),
                lattice.len()
            )));
        }
        Ok(VoxelGrid {
            lattice,
            data: VoxelData::Scalar(values),
        })
    }

    pub fn prob(lattice: Lattice<T>, channels: usize, values: Vec<T>) -> Result<Self> {
        if channels == 0 || values.len() != lattice.len() * channels {
            return Err(Error::InvalidGrid(format!(
                "prob data has {} values, lattice needs {} x {channels}",
                values.len(),
                lattice.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("prob data must be finite".into()));
        }
        Ok(VoxelGrid {
            lattice,
            data: VoxelData::Prob { channels, values },
        })
    }

    pub fn kind(&self) -> GridKind {
        match self.data {
            VoxelData::Labels { .. } => GridKind::Label,
            VoxelData::Scalar(_) => GridKind::Scalar,
            VoxelData::Prob { .. } => GridKind::Prob,
        }
    }

    /// Values per voxel: class count for labels, 1 for scalars.
    pub fn channels(&self) -> usize {
        match &self.data {
            VoxelData::Labels { classes, .. } => *classes,
            VoxelData::Scalar(_) => 1,
            VoxelData::Prob { channels, .. } => *channels,
        }
    }

    pub fn label_values(&self) -> Option<&[Label]> {
        match &self.data {
            VoxelData::Labels { values, .. } => Some(values),
            _ => None,
        }
    }

    pub fn scalar_values(&self) -> Option<&[T]> {
        match &self.data {
            VoxelData::Scalar(v) => Some(v),
            _ => None,
        }
    }

    fn require_labels(&self) -> Result<&[Label]> {
        self.label_values()
            .ok_or_else(|| Error::InvalidGrid("expected a label grid".into()))
    }

    /// Binary scalar grid: 1 where the label equals `class`, 0 elsewhere.
    pub fn class_mask(&self, class: Label) -> Result<VoxelGrid<T>> {
        let v = self.require_labels()?;
        let data = v
            .iter()
            .map(|&l| if l == class { T::one() } else { T::zero() })
            .collect();
        VoxelGrid::scalar(self.lattice, data)
    }

    /// Distinct non-background labels present, ascending.
    pub fn present_classes(&self) -> Result<Vec<Label>> {
        let v = self.require_labels()?;
        let mut seen = [false; 256];
        for &l in v {
            seen[l as usize] = true;
        }
        Ok((1..256usize).filter(|&l| seen[l]).map(|l| l as Label).collect())
    }

    /// Applies softmax per voxel to a prob grid of logits.
    pub fn softmax(&self) -> Result<VoxelGrid<T>> {
        let VoxelData::Prob { channels, values } = &self.data else {
            return Err(Error::InvalidGrid("softmax needs a prob grid".into()));
        };
        let c = *channels;
        let mut out = values.clone();
        for chunk in out.chunks_mut(c) {
            let m = chunk.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut s = T::zero();
            for x in chunk.iter_mut() {
                *x = (*x - m).exp();
                s = s + *x;
            }
            for x in chunk.iter_mut() {
                *x = *x / s;
            }
        }
        VoxelGrid::prob(self.lattice, c, out)
    }
}
