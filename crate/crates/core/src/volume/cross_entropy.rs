use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{VoxelData, VoxelGrid};

/// Mean voxel-wise cross-entropy `-(1/N) sum_i log softmax(logits_i)[label_i]`
/// of a prob grid holding pre-softmax scores against a label grid.
pub fn cross_entropy<T: Scalar>(pred: &VoxelGrid<T>, gt: &VoxelGrid<T>) -> Result<T> {
    let VoxelData::Prob { channels, values } = &pred.data else {
        return Err(Error::InvalidGrid("cross entropy needs a prob grid of logits".into()));
    };
    let labels = gt
        .label_values()
        .ok_or_else(|| Error::InvalidGrid("cross entropy needs a label ground truth".into()))?;
    if pred.lattice.dims != gt.lattice.dims {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            pred.lattice.dims, gt.lattice.dims
        )));
    }
    let c = *channels;
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(Error::InvalidClass { label: bad, classes: c });
    }
    let mut sum = 0.0f64;
    for (logits, &l) in values.chunks(c).zip(labels) {
        let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b)).as_f64();
        let lse = m + logits.iter().map(|&z| (z.as_f64() - m).exp()).sum::<f64>().ln();
        sum += lse - logits[l as usize].as_f64();
    }
    Ok(T::lit(sum / labels.len() as f64))
}
