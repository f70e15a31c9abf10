//! Sliding-window inference over whole volumes and split evaluation.

use std::path::Path;

use ndarray::{s, Array3, Array4, Axis};
use oarseg_tensor::{Tensor, Var};

use super::{load_checkpoint, EngineError, ExperimentConfig, PatchSize, Split};
use crate::data::{extract_patch, load_patient, pad_to, preprocess, AugmentationConfig, LabelMap, Volume};
use crate::metrics::{aggregate, evaluate_case, MetricsReport};
use crate::model::{Mode, Model, ModelConfig};

const EVAL: Mode = Mode { training: false };

fn round_up(e: usize, div: usize) -> usize {
    e.div_ceil(div) * div
}

/// Window extents for a volume of `shape`: the patch size (whole volume
/// for `Full`), rounded up to the model divisor, with depth 1 for planar
/// variants.
pub(crate) fn window_for(cfg: &ModelConfig, patch: PatchSize, shape: [usize; 3]) -> [usize; 3] {
    let div = cfg.divisor();
    let mut w = match patch {
        PatchSize::Full => shape,
        PatchSize::Size(p) => p,
    };
    for e in &mut w {
        *e = round_up((*e).max(1), div);
    }
    if !cfg.variant.is_3d() {
        w[0] = 1;
    }
    w
}

/// Window origins along one axis at 50% overlap, always covering the end.
pub fn window_starts(extent: usize, window: usize) -> Vec<usize> {
    if extent <= window {
        return vec![0];
    }
    let step = (window / 2).max(1);
    let last = extent - window;
    let mut out: Vec<usize> = (0..last).step_by(step).collect();
    out.push(last);
    out
}

/// Per-class logits `[c, d, h, w]` at the volume's resolution, averaging
/// the logits of overlapping windows.
pub fn sliding_window_logits(model: &Model, voxels: &Array3<f32>, window: [usize; 3]) -> Result<Array4<f32>, EngineError> {
    let shape = [voxels.shape()[0], voxels.shape()[1], voxels.shape()[2]];
    let padded = pad_to(voxels, window);
    let ps = [padded.shape()[0], padded.shape()[1], padded.shape()[2]];
    let classes = model.config().num_classes;
    let mut sum = Array4::<f32>::zeros((classes, ps[0], ps[1], ps[2]));
    let mut hits = Array3::<f32>::zeros((ps[0], ps[1], ps[2]));
    for &z in &window_starts(ps[0], window[0]) {
        for &y in &window_starts(ps[1], window[1]) {
            for &x in &window_starts(ps[2], window[2]) {
                let patch = extract_patch(&padded, [z, y, x], window);
                let input = Tensor::new(vec![1, 1, window[0], window[1], window[2]], patch.into_raw_vec_and_offset().0);
                let out = model.forward(&Var::constant(input), EVAL)?.logits;
                let logits = Array4::from_shape_vec((classes, window[0], window[1], window[2]), out.value().data().to_vec())
                    .expect("logits match window");
                let region = s![.., z..z + window[0], y..y + window[1], x..x + window[2]];
                sum.slice_mut(region).zip_mut_with(&logits, |a, b| *a += b);
                hits.slice_mut(s![z..z + window[0], y..y + window[1], x..x + window[2]]).mapv_inplace(|h| h + 1.0);
            }
        }
    }
    for mut channel in sum.axis_iter_mut(Axis(0)) {
        channel.zip_mut_with(&hits, |a, h| *a /= h);
    }
    Ok(sum.slice(s![.., ..shape[0], ..shape[1], ..shape[2]]).to_owned())
}

/// Voxelwise argmax over classes; ties go to the lower class index.
pub(crate) fn argmax(logits: &Array4<f32>) -> Array3<u8> {
    let (_, d, h, w) = logits.dim();
    Array3::from_shape_fn((d, h, w), |(z, y, x)| {
        let mut best = 0;
        for c in 1..logits.dim().0 {
            if logits[[c, z, y, x]] > logits[[best, z, y, x]] {
                best = c;
            }
        }
        best as u8
    })
}

pub fn predict_volume(model: &Model, voxels: &Array3<f32>, patch: PatchSize) -> Result<Array3<u8>, EngineError> {
    let shape = [voxels.shape()[0], voxels.shape()[1], voxels.shape()[2]];
    let window = window_for(model.config(), patch, shape);
    Ok(argmax(&sliding_window_logits(model, voxels, window)?))
}

/// Evaluation-time preprocessing: normalization only, no crop, so
/// predictions align with the reference at full extent.
pub(crate) fn eval_preprocessing(aug: &AugmentationConfig) -> AugmentationConfig {
    AugmentationConfig {
        crop: None,
        ..aug.clone()
    }
}

/// Per-class DICE and HD95 over already preprocessed cases.
pub fn evaluate_model(model: &Model, cases: &[(Volume, LabelMap)], patch: PatchSize) -> Result<MetricsReport, EngineError> {
    let records = cases
        .iter()
        .map(|(v, l)| {
            let pred = l.with_labels(predict_volume(model, v.voxels(), patch)?)?;
            Ok(evaluate_case(&pred, l, v.spacing())?)
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    Ok(aggregate(&records)?)
}

/// Loads `split` of the configured dataset with evaluation preprocessing.
pub fn load_cases(cfg: &ExperimentConfig, split: Split) -> Result<Vec<(Volume, LabelMap)>, EngineError> {
    let assignment = super::train::resolve_split(cfg)?;
    let spec = cfg.dataset.spec();
    let aug = eval_preprocessing(&cfg.augmentation);
    assignment
        .ids(split)
        .iter()
        .map(|id| {
            let (v, l) = load_patient(&cfg.dataset.root, id, &spec)?;
            Ok(preprocess(&v, &l, &aug)?)
        })
        .collect()
}

/// Restores `ckpt` and reports DICE and HD95 on `split` of the configured
/// dataset.
pub fn evaluate_checkpoint(ckpt: &Path, split: Split, cfg: &ExperimentConfig) -> Result<MetricsReport, EngineError> {
    let (model, _) = load_checkpoint(ckpt)?;
    let classes = cfg.dataset.spec().num_classes();
    if model.config().num_classes != classes {
        return Err(EngineError::ConfigMismatch(format!(
            "{} predicts {} classes but dataset {} has {classes}",
            ckpt.display(),
            model.config().num_classes,
            cfg.dataset.kind.as_str()
        )));
    }
    let cases = load_cases(cfg, split)?;
    evaluate_model(&model, &cases, cfg.patch_size)
}

/// Writes `report_<split>.json` and `report_<split>.csv` into `dir`.
pub fn write_report(dir: &Path, split: Split, report: &MetricsReport) -> Result<(), EngineError> {
    Ok(report.write(dir, &format!("report_{}", split.name()))?)
}
