use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use ndarray_npy::{ReadNpyExt, WriteNpyExt};
use serde::{Deserialize, Serialize};

use super::{merge_masks, DataError, DatasetSpec, LabelMap, Volume};

/// Per-patient sidecar: spacing in mm (`[z, y, x]`) and the organ masks present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientMeta {
    pub spacing: [f64; 3],
    #[serde(default)]
    pub organs: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a 3-axis `.npy` array of any common numeric dtype as `f32`.
pub fn read_array_f32(path: &Path) -> Result<Array3<f32>, DataError> {
    macro_rules! attempt {
        ($($t:ty),*) => {$(
            let file = File::open(path).map_err(io_err(path))?;
            if let Ok(a) = Array3::<$t>::read_npy(BufReader::new(file)) {
                return Ok(a.mapv(|v| v as f32));
            }
        )*};
    }
    attempt!(f32, f64, i16, u16, i32, u32, i64, u8, i8);
    let file = File::open(path).map_err(io_err(path))?;
    match Array3::<bool>::read_npy(BufReader::new(file)) {
        Ok(a) => Ok(a.mapv(|v| if v { 1.0 } else { 0.0 })),
        Err(e) => Err(DataError::Array {
            path: path.to_path_buf(),
            message: e.to_string(),
        }),
    }
}

fn write_npy<T: ndarray_npy::WritableElement>(path: &Path, array: &Array3<T>) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    array.write_npy(std::io::BufWriter::new(file)).map_err(|e| DataError::Array {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Patient directory names under `root`, sorted. A missing or empty root
/// yields an empty list.
pub fn list_patients(root: &Path) -> Result<Vec<String>, DataError> {
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        if entry.file_type().map_err(io_err(root))?.is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Loads one patient: the volume, its spacing, and every organ mask in
/// `spec` order merged into a label map.
pub fn load_patient(root: &Path, patient: &str, spec: &DatasetSpec) -> Result<(Volume, LabelMap), DataError> {
    let dir = root.join(patient);
    let layout = &spec.root_layout;
    let meta_path = dir.join(&layout.meta_file);
    let meta_text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: PatientMeta = serde_json::from_str(&meta_text).map_err(|source| DataError::Json {
        path: meta_path.clone(),
        source,
    })?;
    let volume_path = dir.join(&layout.volume_file);
    if !volume_path.exists() {
        return Err(DataError::MissingStructure {
            patient: patient.to_string(),
            organ: layout.volume_file.clone(),
        });
    }
    let voxels = read_array_f32(&volume_path)?;
    let shape = voxels.shape().to_vec();
    let mut masks = Vec::with_capacity(spec.organs.len());
    for organ in &spec.organs {
        let path = dir.join(layout.mask_file(&organ.key));
        if !path.exists() {
            return Err(DataError::MissingStructure {
                patient: patient.to_string(),
                organ: organ.key.clone(),
            });
        }
        let mask = read_array_f32(&path)?;
        if mask.shape() != shape.as_slice() {
            return Err(DataError::ShapeMismatch {
                patient: patient.to_string(),
                detail: format!("mask `{}` {:?} vs volume {:?}", organ.key, mask.shape(), shape),
            });
        }
        masks.push(mask.mapv(|v| u8::from(v > 0.5)));
    }
    let volume = Volume::new(voxels, meta.spacing, patient)?;
    let labels = merge_masks(&masks, &spec.class_names()).map_err(|e| match e {
        DataError::ShapeMismatch { detail, .. } => DataError::ShapeMismatch {
            patient: patient.to_string(),
            detail,
        },
        other => other,
    })?;
    Ok((volume, labels))
}

/// Loads every patient under `root`, failing on the first incomplete one.
pub fn load_dataset(root: &Path, spec: &DatasetSpec) -> Result<Vec<(Volume, LabelMap)>, DataError> {
    list_patients(root)?
        .iter()
        .map(|id| load_patient(root, id, spec))
        .collect()
}

/// Outcome of validating a whole dataset directory.
#[derive(Debug, Default)]
pub struct ScanReport {
    pub ok: Vec<(String, [usize; 3], [f64; 3])>,
    pub errors: Vec<(String, DataError)>,
}

/// Validates every patient without stopping at the first error. Volumes
/// are loaded one at a time and dropped.
pub fn scan_dataset(root: &Path, spec: &DatasetSpec) -> Result<ScanReport, DataError> {
    let mut report = ScanReport::default();
    for id in list_patients(root)? {
        match load_patient(root, &id, spec) {
            Ok((v, _)) => report.ok.push((id, v.shape(), v.spacing())),
            Err(e) => report.errors.push((id, e)),
        }
    }
    Ok(report)
}

/// Writes one patient directory in the standard layout. `masks` are
/// `(organ key, binary mask)` pairs.
pub fn write_patient(
    root: &Path,
    spec: &DatasetSpec,
    volume: &Volume,
    masks: &[(String, Array3<u8>)],
) -> Result<PathBuf, DataError> {
    let dir = root.join(volume.patient_id());
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let layout = &spec.root_layout;
    write_npy(&dir.join(&layout.volume_file), volume.voxels())?;
    for (key, mask) in masks {
        write_npy(&dir.join(layout.mask_file(key)), mask)?;
    }
    let meta = PatientMeta {
        spacing: volume.spacing(),
        organs: masks.iter().map(|(k, _)| k.clone()).collect(),
    };
    let meta_path = dir.join(&layout.meta_file);
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&meta_path, text).map_err(io_err(&meta_path))?;
    Ok(dir)
}
