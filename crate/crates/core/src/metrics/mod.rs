//! Per-class overlap and boundary-distance scores and their aggregation
//! into per-organ tables.

mod distance;
mod report;

use std::path::PathBuf;

use ndarray::{Array3, Zip};

pub use distance::{boundary, percentile_sorted, squared_distance_map};
pub use report::{aggregate, ClassSummary, MetricsReport};

use crate::data::LabelMap;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 3], [usize; 3]),
    #[error("class lists differ: {0:?} vs {1:?}")]
    ClassMismatch(Vec<String>, Vec<String>),
    #[error("no cases to aggregate")]
    EmptyInput,
    #[error("voxel spacing must be positive and finite, got {0:?}")]
    InvalidSpacing([f64; 3]),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

fn dims(a: &Array3<u8>) -> [usize; 3] {
    let (d, h, w) = a.dim();
    [d, h, w]
}

fn same_shape(pred: &Array3<u8>, reference: &Array3<u8>) -> Result<(), MetricsError> {
    if pred.dim() != reference.dim() {
        return Err(MetricsError::ShapeMismatch(dims(pred), dims(reference)));
    }
    Ok(())
}

/// `2 |P ∩ R| / (|P| + |R|)` for the voxels labelled `class`; 1.0 when the
/// class is absent from both maps.
pub fn dice_score(pred: &Array3<u8>, reference: &Array3<u8>, class: u8) -> Result<f64, MetricsError> {
    same_shape(pred, reference)?;
    let (mut both, mut p, mut r) = (0usize, 0usize, 0usize);
    Zip::from(pred).and(reference).for_each(|&a, &b| {
        let (a, b) = (a == class, b == class);
        p += usize::from(a);
        r += usize::from(b);
        both += usize::from(a && b);
    });
    if p + r == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (p + r) as f64)
}

/// Sorted pooled distances (mm) from each boundary voxel of one set to the
/// nearest boundary voxel of the other, in both directions. `None` when
/// either set is empty.
pub fn boundary_distances(
    pred: &Array3<u8>,
    reference: &Array3<u8>,
    class: u8,
    spacing: [f64; 3],
) -> Result<Option<Vec<f64>>, MetricsError> {
    same_shape(pred, reference)?;
    if !spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(MetricsError::InvalidSpacing(spacing));
    }
    let bp = boundary(&pred.mapv(|v| v == class));
    let br = boundary(&reference.mapv(|v| v == class));
    if !bp.iter().any(|&v| v) || !br.iter().any(|&v| v) {
        return Ok(None);
    }
    let to_r = squared_distance_map(&br, spacing);
    let to_p = squared_distance_map(&bp, spacing);
    let mut pooled = Vec::new();
    Zip::from(&bp).and(&to_r).for_each(|&b, &d| {
        if b {
            pooled.push(d.sqrt());
        }
    });
    Zip::from(&br).and(&to_p).for_each(|&b, &d| {
        if b {
            pooled.push(d.sqrt());
        }
    });
    pooled.sort_by(f64::total_cmp);
    Ok(Some(pooled))
}

/// 95th percentile of the pooled symmetric boundary distances, in mm.
pub fn hd95(pred: &Array3<u8>, reference: &Array3<u8>, class: u8, spacing: [f64; 3]) -> Result<Option<f64>, MetricsError> {
    Ok(boundary_distances(pred, reference, class, spacing)?.map(|d| percentile_sorted(&d, 0.95)))
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassRecord {
    pub name: String,
    pub dice: f64,
    pub hd95_mm: Option<f64>,
}

/// One record per foreground class of one case.
pub type CaseRecord = Vec<ClassRecord>;

pub fn evaluate_case(pred: &LabelMap, reference: &LabelMap, spacing: [f64; 3]) -> Result<CaseRecord, MetricsError> {
    if pred.class_names() != reference.class_names() {
        return Err(MetricsError::ClassMismatch(
            pred.class_names().to_vec(),
            reference.class_names().to_vec(),
        ));
    }
    let names = reference.class_names();
    (1..names.len())
        .map(|c| {
            let class = c as u8;
            Ok(ClassRecord {
                name: names[c].clone(),
                dice: dice_score(pred.labels(), reference.labels(), class)?,
                hd95_mm: hd95(pred.labels(), reference.labels(), class, spacing)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(labels: Array3<u8>) -> LabelMap {
        LabelMap::new(labels, vec!["background".into(), "a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn dice_examples() {
        let mut p = Array3::<u8>::zeros((1, 1, 4));
        let mut r = p.clone();
        p[[0, 0, 0]] = 1;
        p[[0, 0, 1]] = 1;
        r[[0, 0, 1]] = 1;
        r[[0, 0, 2]] = 1;
        assert_eq!(dice_score(&p, &r, 1).unwrap(), 0.5);
        assert_eq!(dice_score(&p, &p, 1).unwrap(), 1.0);
        r.fill(0);
        r[[0, 0, 3]] = 1;
        assert_eq!(dice_score(&p, &r, 1).unwrap(), 0.0);
        assert_eq!(dice_score(&p, &r, 2).unwrap(), 1.0);
        assert!(matches!(
            dice_score(&p, &Array3::zeros((1, 1, 5)), 1),
            Err(MetricsError::ShapeMismatch(..))
        ));
    }

    #[test]
    fn single_voxels_along_an_axis() {
        let mut p = Array3::<u8>::zeros((6, 3, 3));
        let mut r = p.clone();
        p[[1, 1, 1]] = 1;
        r[[4, 1, 1]] = 1;
        assert_eq!(hd95(&p, &r, 1, [2.0, 1.0, 1.0]).unwrap(), Some(6.0));
        assert_eq!(hd95(&p, &r, 1, [4.0, 1.0, 1.0]).unwrap(), Some(12.0));
        assert_eq!(hd95(&p, &p, 1, [2.0, 1.0, 1.0]).unwrap(), Some(0.0));
        assert_eq!(hd95(&p, &Array3::zeros((6, 3, 3)), 1, [1.0; 3]).unwrap(), None);
        assert!(matches!(hd95(&p, &r, 1, [0.0, 1.0, 1.0]), Err(MetricsError::InvalidSpacing(_))));
    }

    #[test]
    fn case_records() {
        let mut r = Array3::<u8>::zeros((5, 5, 5));
        r[[1, 1, 1]] = 1;
        r[[3, 3, 3]] = 2;
        let perfect = evaluate_case(&map(r.clone()), &map(r.clone()), [1.0; 3]).unwrap();
        assert_eq!(perfect.len(), 2);
        assert!(perfect.iter().all(|c| c.dice == 1.0 && c.hd95_mm == Some(0.0)));
        let empty = evaluate_case(&map(Array3::zeros((5, 5, 5))), &map(r.clone()), [1.0; 3]).unwrap();
        assert!(empty.iter().all(|c| c.dice == 0.0 && c.hd95_mm.is_none()));
        let other = LabelMap::new(r.clone(), vec!["background".into(), "a".into(), "c".into()]).unwrap();
        assert!(matches!(evaluate_case(&other, &map(r), [1.0; 3]), Err(MetricsError::ClassMismatch(..))));
    }
}
