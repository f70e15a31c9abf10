//! Dataset ingestion, mask merging, splitting, preprocessing and augmentation.

mod augment;
mod io;
mod merge;
mod patch;
mod preprocess;
mod split;
pub mod synthetic;

use std::path::PathBuf;

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{augment, derive_seed, AffineAugment, AugmentationConfig, ContrastAugment, ElasticAugment, NoiseAugment};
pub use io::{list_patients, load_dataset, load_patient, read_array_f32, scan_dataset, write_patient, PatientMeta, ScanReport};
pub use merge::merge_masks;
pub use patch::{extract_patch, pad_to, sample_patch};
pub use preprocess::{crop_bounds, preprocess, CropPolicy, NormalizationMode};
pub use split::{split_patients, SplitAssignment, SplitManifest};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("patient {patient}: required structure `{organ}` is missing")]
    MissingStructure { patient: String, organ: String },
    #[error("patient {patient}: shape mismatch ({detail})")]
    ShapeMismatch { patient: String, detail: String },
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("duplicate patient id `{0}`")]
    DuplicateId(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid label map: {0}")]
    InvalidLabels(String),
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unreadable array: {message}")]
    Array { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// A 3D scalar image in `[z, y, x]` order with per-axis spacing in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    voxels: Array3<f32>,
    spacing: [f64; 3],
    patient_id: String,
}

impl Volume {
    pub fn new(voxels: Array3<f32>, spacing: [f64; 3], patient_id: impl Into<String>) -> Result<Self, DataError> {
        if spacing.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(DataError::InvalidVolume(format!("spacing must be positive, got {spacing:?}")));
        }
        if voxels.shape().contains(&0) {
            return Err(DataError::InvalidVolume(format!("empty extent {:?}", voxels.shape())));
        }
        Ok(Self {
            voxels,
            spacing,
            patient_id: patient_id.into(),
        })
    }

    pub fn voxels(&self) -> &Array3<f32> {
        &self.voxels
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.voxels.shape();
        [s[0], s[1], s[2]]
    }

    /// Same metadata, new voxels.
    pub fn with_voxels(&self, voxels: Array3<f32>) -> Result<Self, DataError> {
        Volume::new(voxels, self.spacing, self.patient_id.clone())
    }
}

/// Integer class labels with their names; index 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    labels: Array3<u8>,
    class_names: Vec<String>,
}

impl LabelMap {
    pub fn new(labels: Array3<u8>, class_names: Vec<String>) -> Result<Self, DataError> {
        if class_names.is_empty() || class_names.len() > 256 {
            return Err(DataError::InvalidLabels(format!("{} class names", class_names.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= class_names.len()) {
            return Err(DataError::InvalidLabels(format!(
                "label {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(Self { labels, class_names })
    }

    pub fn labels(&self) -> &Array3<u8> {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.labels.shape();
        [s[0], s[1], s[2]]
    }

    pub fn with_labels(&self, labels: Array3<u8>) -> Result<Self, DataError> {
        LabelMap::new(labels, self.class_names.clone())
    }

    /// Sorted distinct label values.
    pub fn label_set(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        self.labels.iter().for_each(|&l| seen[l as usize] = true);
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }
}

pub(crate) fn check_paired(v: &Volume, l: &LabelMap) -> Result<(), DataError> {
    if v.shape() != l.shape() {
        return Err(DataError::ShapeMismatch {
            patient: v.patient_id().to_string(),
            detail: format!("volume {:?} vs labels {:?}", v.shape(), l.shape()),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Openkbp,
    Pddca,
    Nsclc,
    Synthetic,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Openkbp => "openkbp",
            DatasetKind::Pddca => "pddca",
            DatasetKind::Nsclc => "nsclc",
            DatasetKind::Synthetic => "synthetic",
        }
    }
}

/// One segmentation target: `key` names its mask file, `display` its table row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Organ {
    pub key: String,
    pub display: String,
}

impl Organ {
    fn new(key: &str, display: &str) -> Self {
        Self {
            key: key.to_string(),
            display: display.to_string(),
        }
    }
}

/// File naming convention inside a dataset root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootLayout {
    pub volume_file: String,
    pub mask_prefix: String,
    pub mask_suffix: String,
    pub meta_file: String,
}

impl Default for RootLayout {
    fn default() -> Self {
        Self {
            volume_file: "volume.npy".into(),
            mask_prefix: "mask_".into(),
            mask_suffix: ".npy".into(),
            meta_file: "meta.json".into(),
        }
    }
}

impl RootLayout {
    pub fn mask_file(&self, organ_key: &str) -> String {
        format!("{}{}{}", self.mask_prefix, organ_key, self.mask_suffix)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: DatasetKind,
    /// Foreground organs in label order (label `i + 1` is `organs[i]`).
    pub organs: Vec<Organ>,
    #[serde(default)]
    pub root_layout: RootLayout,
}

impl DatasetSpec {
    pub fn for_kind(kind: DatasetKind) -> Self {
        let organs = match kind {
            DatasetKind::Openkbp => vec![
                Organ::new("brainstem", "Brainstem"),
                Organ::new("spinal_cord", "Spinal Cord"),
                Organ::new("parotid_r", "Parotid R"),
                Organ::new("parotid_l", "Parotid L"),
                Organ::new("mandible", "Mandible"),
            ],
            DatasetKind::Pddca => vec![
                Organ::new("brainstem", "Brainstem"),
                Organ::new("chiasm", "Chiasm"),
                Organ::new("optic_nerve_l", "Optic Nerve L"),
                Organ::new("optic_nerve_r", "Optic Nerve R"),
                Organ::new("parotid_r", "Parotid R"),
                Organ::new("parotid_l", "Parotid L"),
            ],
            DatasetKind::Nsclc => vec![
                Organ::new("lung_r", "Lung R"),
                Organ::new("lung_l", "Lung L"),
                Organ::new("spinal_cord", "Spinal Cord"),
            ],
            DatasetKind::Synthetic => vec![
                Organ::new("lung", "Lung"),
                Organ::new("spinal_cord", "Spinal Cord"),
                Organ::new("chiasm", "Chiasm"),
            ],
        };
        Self {
            name: kind,
            organs,
            root_layout: RootLayout::default(),
        }
    }

    /// Foreground display names in label order.
    pub fn class_names(&self) -> Vec<String> {
        self.organs.iter().map(|o| o.display.clone()).collect()
    }

    /// `["background"]` followed by the foreground names.
    pub fn label_names(&self) -> Vec<String> {
        std::iter::once("background".to_string()).chain(self.class_names()).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.organs.len() + 1
    }
}
