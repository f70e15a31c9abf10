use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use super::{check_paired, AugmentationConfig, DataError, LabelMap, Volume};

/// Crop to the labelled bounding box grown by `margin` voxels per side,
/// never smaller than `min_extent` (clamped to the volume).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropPolicy {
    pub margin: usize,
    pub min_extent: [usize; 3],
}

impl Default for CropPolicy {
    fn default() -> Self {
        Self {
            margin: 8,
            min_extent: [32, 32, 32],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Zero mean, unit variance over the (cropped) volume.
    #[default]
    ZScore,
    None,
}

const STD_FLOOR: f64 = 1e-8;

/// Half-open `[lo, hi)` crop box per axis for `labels` under `policy`.
pub fn crop_bounds(labels: &Array3<u8>, policy: &CropPolicy) -> [(usize, usize); 3] {
    let shape = labels.shape();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for ((z, y, x), &l) in labels.indexed_iter() {
        if l != 0 {
            for (a, c) in [z, y, x].into_iter().enumerate() {
                lo[a] = lo[a].min(c);
                hi[a] = hi[a].max(c + 1);
            }
        }
    }
    let empty = lo[0] == usize::MAX;
    let mut bounds = [(0, 0); 3];
    for a in 0..3 {
        let extent = shape[a];
        let (mut l, mut h) = if empty {
            (extent / 2, extent / 2)
        } else {
            (lo[a].saturating_sub(policy.margin), (hi[a] + policy.margin).min(extent))
        };
        let want = policy.min_extent[a].min(extent);
        if h - l < want {
            let grow = want - (h - l);
            let left = (grow / 2).min(l);
            l -= left;
            h += grow - left;
            if h > extent {
                l -= h - extent;
                h = extent;
            }
        }
        bounds[a] = (l, h);
    }
    bounds
}

/// Boundary crop (when configured) followed by intensity normalization.
/// Labels are only cropped; spacing is preserved.
pub fn preprocess(v: &Volume, l: &LabelMap, cfg: &AugmentationConfig) -> Result<(Volume, LabelMap), DataError> {
    check_paired(v, l)?;
    let (voxels, labels) = match &cfg.crop {
        Some(policy) => {
            let [(z0, z1), (y0, y1), (x0, x1)] = crop_bounds(l.labels(), policy);
            (
                v.voxels().slice(s![z0..z1, y0..y1, x0..x1]).to_owned(),
                l.labels().slice(s![z0..z1, y0..y1, x0..x1]).to_owned(),
            )
        }
        None => (v.voxels().clone(), l.labels().clone()),
    };
    let voxels = match cfg.normalization {
        NormalizationMode::ZScore => standardize(voxels),
        NormalizationMode::None => voxels,
    };
    Ok((v.with_voxels(voxels)?, l.with_labels(labels)?))
}

/// Zero mean and unit variance; constant inputs map to zeros.
fn standardize(mut voxels: Array3<f32>) -> Array3<f32> {
    let n = voxels.len() as f64;
    let mean = voxels.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = voxels.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < STD_FLOOR {
        voxels.fill(0.0);
    } else {
        voxels.mapv_inplace(|v| ((v as f64 - mean) / std) as f32);
    }
    voxels
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["background".into(), "fg".into()]
    }

    /// Brute-force bounding box: scan every voxel.
    fn brute_bbox(labels: &Array3<u8>) -> Option<[(usize, usize); 3]> {
        let mut out: Option<[(usize, usize); 3]> = None;
        for ((z, y, x), &l) in labels.indexed_iter() {
            if l == 0 {
                continue;
            }
            let b = out.get_or_insert([(z, z + 1), (y, y + 1), (x, x + 1)]);
            for (a, c) in [z, y, x].into_iter().enumerate() {
                b[a].0 = b[a].0.min(c);
                b[a].1 = b[a].1.max(c + 1);
            }
        }
        out
    }

    #[test]
    fn central_cube_crops_to_box_plus_margin() {
        let mut labels = Array3::<u8>::zeros((128, 128, 128));
        labels.slice_mut(s![32..96, 32..96, 32..96]).fill(1);
        let bbox = brute_bbox(&labels).unwrap();
        let expected: Vec<usize> = bbox.iter().map(|(l, h)| h - l + 2 * 4).collect();
        assert_eq!(expected, vec![72, 72, 72]);

        let v = Volume::new(Array3::from_elem((128, 128, 128), 2.0), [1.0; 3], "p").unwrap();
        let l = LabelMap::new(labels, names()).unwrap();
        let cfg = AugmentationConfig {
            crop: Some(CropPolicy { margin: 4, min_extent: [16; 3] }),
            ..AugmentationConfig::disabled()
        };
        let (cv, cl) = preprocess(&v, &l, &cfg).unwrap();
        assert_eq!(cv.shape(), [72, 72, 72]);
        assert_eq!(cl.shape(), [72, 72, 72]);
        assert_eq!(cl.labels().iter().filter(|&&x| x == 1).count(), 64 * 64 * 64);
        assert_eq!(cv.spacing(), [1.0; 3]);
    }

    #[test]
    fn background_volume_crops_to_minimum_extent() {
        let v = Volume::new(Array3::zeros((20, 40, 10)), [1.0; 3], "p").unwrap();
        let l = LabelMap::new(Array3::zeros((20, 40, 10)), names()).unwrap();
        let cfg = AugmentationConfig {
            crop: Some(CropPolicy { margin: 2, min_extent: [8, 16, 16] }),
            ..AugmentationConfig::disabled()
        };
        let (cv, _) = preprocess(&v, &l, &cfg).unwrap();
        assert_eq!(cv.shape(), [8, 16, 10]);
    }

    #[test]
    fn margin_is_clamped_at_the_border() {
        let mut labels = Array3::<u8>::zeros((10, 10, 10));
        labels[[0, 9, 5]] = 1;
        let b = crop_bounds(&labels, &CropPolicy { margin: 3, min_extent: [1; 3] });
        assert_eq!(b, [(0, 4), (6, 10), (2, 9)]);
    }

    #[test]
    fn constant_volume_normalizes_to_zero() {
        let v = Volume::new(Array3::from_elem((4, 4, 4), 7.5), [1.0; 3], "p").unwrap();
        let l = LabelMap::new(Array3::zeros((4, 4, 4)), names()).unwrap();
        let (out, _) = preprocess(&v, &l, &AugmentationConfig::disabled()).unwrap();
        assert!(out.voxels().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn standardized_moments() {
        let vox = Array3::from_shape_fn((6, 7, 8), |(z, y, x)| ((z * 31 + y * 7 + x * 3) % 17) as f32 * 3.0 - 5.0);
        let v = Volume::new(vox, [1.0; 3], "p").unwrap();
        let l = LabelMap::new(Array3::zeros((6, 7, 8)), names()).unwrap();
        let (out, _) = preprocess(&v, &l, &AugmentationConfig::disabled()).unwrap();
        let n = out.voxels().len() as f64;
        let mean = out.voxels().iter().map(|&x| x as f64).sum::<f64>() / n;
        let std = (out.voxels().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((std - 1.0).abs() < 1e-6, "std {std}");
    }
}
