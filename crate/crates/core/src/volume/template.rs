use crate::error::{Error, Result};
use crate::mesh::topology::component_euler;
use crate::mesh::{connected_components, TriMesh};
use crate::scalar::Scalar;
use crate::volume::{laplacian_smooth_with, marching_cubes, Smoothing, VoxelGrid};
use crate::Label;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemplateOptions {
    /// Occupancy fraction a voxel must exceed to belong to the template.
    pub threshold: f64,
    pub smooth_steps: usize,
    pub smoothing: Smoothing,
}

impl Default for TemplateOptions {
    fn default() -> Self {
        TemplateOptions {
            threshold: 0.30,
            smooth_steps: 20,
            smoothing: Smoothing::default(),
        }
    }
}

/// Occupancy template from a cohort of label volumes with default smoothing.
pub fn build_template<T: Scalar>(labels: &[VoxelGrid<T>], threshold: f64, smooth_steps: usize) -> Result<TriMesh<T>> {
    build_template_with(
        labels,
        TemplateOptions {
            threshold,
            smooth_steps,
            ..Default::default()
        },
    )
}

/// Per class, the fraction of inputs labeling each voxel with that class is
/// contoured at `threshold`, every component is checked to be a closed
/// sphere-like surface, smoothed, and the organs are merged in class order.
pub fn build_template_with<T: Scalar>(labels: &[VoxelGrid<T>], opts: TemplateOptions) -> Result<TriMesh<T>> {
    if !(opts.threshold > 0.0 && opts.threshold <= 1.0) {
        return Err(Error::Config(format!(
            "threshold must be in (0,1], got {}",
            opts.threshold
        )));
    }
    let first = labels
        .first()
        .ok_or_else(|| Error::Config("template needs at least one label volume".into()))?;
    let lattice = first.lattice;
    let mut classes = 0;
    for g in labels {
        if g.lattice != lattice {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                g.lattice.dims, lattice.dims
            )));
        }
        if g.label_values().is_none() {
            return Err(Error::InvalidGrid("template inputs must be label grids".into()));
        }
        classes = classes.max(g.channels());
    }

    let n = lattice.len();
    let total = T::from_usize_lossy(labels.len());
    let thr = T::lit(opts.threshold);
    let mut parts = Vec::new();
    for c in 1..classes {
        let class = c as Label;
        let mut count = vec![0u32; n];
        for g in labels {
            for (k, &l) in g.label_values().expect("checked").iter().enumerate() {
                if l == class {
                    count[k] += 1;
                }
            }
        }
        let occ: Vec<T> = count.iter().map(|&k| T::from_u32(k).expect("u32") / total).collect();
        if !occ.iter().any(|&o| o > thr) {
            return Err(Error::EmptyOrgan(class));
        }
        let grid = VoxelGrid::scalar(lattice, occ)?;
        let surf = marching_cubes(&grid, thr)?;
        for comp in connected_components(&surf) {
            let chi = component_euler(&surf, &comp);
            if chi != 2 {
                return Err(Error::TopologyError { organ: class, chi });
            }
        }
        let smooth = laplacian_smooth_with(&surf, opts.smooth_steps, opts.smoothing);
        parts.push(smooth.relabel(class));
    }
    if parts.is_empty() {
        return Err(Error::EmptyOrgan(1));
    }
    Ok(TriMesh::merge(&parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::euler_characteristic;
    use crate::synth;
    use crate::volume::{laplacian_smooth, Lattice};

    fn two_organs(shift: f64) -> VoxelGrid<f64> {
        let lat = Lattice::unit([24, 20, 20]);
        let a = synth::in_ellipsoid([7.0 + shift, 10.0, 10.0], [4.5, 5.0, 4.0]);
        let b = synth::in_ellipsoid([17.0 + shift, 10.0, 9.5], [3.5, 4.0, 5.0]);
        synth::label_grid(lat, 3, &[(1, &a), (2, &b)])
    }

    #[test]
    fn single_input_matches_direct_extraction() {
        let g = two_organs(0.0);
        let t = build_template(&[g.clone()], 0.3, 20).unwrap();
        let mask = g.class_mask(1).unwrap();
        let direct = laplacian_smooth(&marching_cubes(&mask, 0.3).unwrap(), 20);
        let (organ1, _) = t.organ_submesh(1);
        assert_eq!(organ1.vertices, direct.vertices);
        assert_eq!(organ1.faces, direct.faces);
    }

    #[test]
    fn duplicates_do_not_change_the_template() {
        let g = two_organs(0.0);
        let one = build_template(&[g.clone()], 0.3, 20).unwrap();
        let ten = build_template(&vec![g; 10], 0.3, 20).unwrap();
        assert_eq!(one, ten);
    }

    #[test]
    fn rare_organ_is_empty() {
        let with = two_organs(0.0);
        let lat = with.lattice;
        let a = synth::in_ellipsoid([7.0, 10.0, 10.0], [4.5, 5.0, 4.0]);
        let without = synth::label_grid(lat, 3, &[(1, &a)]);
        let mut cohort = vec![without; 8];
        cohort.push(with.clone());
        cohort.push(with);
        assert!(matches!(build_template(&cohort, 0.3, 5), Err(Error::EmptyOrgan(2))));
    }

    #[test]
    fn permutation_invariant() {
        let cohort: Vec<_> = (0..4).map(|k| two_organs(k as f64 * 0.6)).collect();
        let a = build_template(&cohort, 0.3, 10).unwrap();
        let mut rev = cohort.clone();
        rev.reverse();
        let b = build_template(&rev, 0.3, 10).unwrap();
        assert_eq!(a, b);
        assert!(euler_characteristic(&a).iter().all(|&c| c == 2));
    }

    #[test]
    fn mismatched_dims_rejected() {
        let a = two_organs(0.0);
        let l = Lattice::<f64>::unit([8, 8, 8]);
        let b = VoxelGrid::labels(l, 3, vec![0; l.len()]).unwrap();
        assert!(matches!(build_template(&[a, b], 0.3, 1), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn torus_fails_topology() {
        let lat = Lattice::<f64>::unit([26, 26, 12]);
        let torus = |p: [f64; 3]| {
            let (x, y, z) = (p[0] - 12.5, p[1] - 12.5, p[2] - 5.5);
            let q = (x * x + y * y).sqrt() - 7.0;
            q * q + z * z <= 9.0
        };
        let g = synth::label_grid(lat, 2, &[(1, &torus)]);
        assert!(matches!(
            build_template(&[g], 0.3, 2),
            Err(Error::TopologyError { organ: 1, chi: 0 })
        ));
    }

    #[test]
    fn bad_threshold() {
        assert!(matches!(build_template(&[two_organs(0.0)], 1.5, 1), Err(Error::Config(_))));
    }
}
