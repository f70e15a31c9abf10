use ndarray::{Array3, Zip};

use super::{DataError, LabelMap};

/// Merges binary organ masks into one label map. A voxel takes the 1-based
/// index of the last mask that covers it, so later organs win on overlap.
/// `class_names` are the foreground names; background is prepended.
pub fn merge_masks(masks: &[Array3<u8>], class_names: &[String]) -> Result<LabelMap, DataError> {
    if masks.len() != class_names.len() {
        return Err(DataError::InvalidLabels(format!(
            "{} masks for {} class names",
            masks.len(),
            class_names.len()
        )));
    }
    let names: Vec<String> = std::iter::once("background".to_string())
        .chain(class_names.iter().cloned())
        .collect();
    let Some(first) = masks.first() else {
        return Err(DataError::InvalidLabels("no masks to merge".into()));
    };
    let shape = first.raw_dim();
    let mut labels = Array3::<u8>::zeros(shape);
    for (i, mask) in masks.iter().enumerate() {
        if mask.raw_dim() != shape {
            return Err(DataError::ShapeMismatch {
                patient: String::new(),
                detail: format!("mask {} has shape {:?}, expected {:?}", i, mask.shape(), first.shape()),
            });
        }
        let label = u8::try_from(i + 1).map_err(|_| DataError::InvalidLabels("more than 255 classes".into()))?;
        Zip::from(&mut labels).and(mask).for_each(|l, &m| {
            if m != 0 {
                *l = label;
            }
        });
    }
    LabelMap::new(labels, names)
}
