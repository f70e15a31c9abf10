//! Procedural phantoms with one large ellipsoid ("lung"), one thin tube
//! running the full depth ("spinal cord") and one small sphere ("chiasm").

use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{write_patient, DataError, DatasetKind, DatasetSpec, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub cases: usize,
    pub extent: [usize; 3],
    pub spacing: [f64; 3],
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            cases: 8,
            extent: [32, 32, 32],
            spacing: [1.5, 1.0, 1.0],
            noise_std: 0.15,
            seed: 2021,
        }
    }
}

const LUNG: u8 = 1;
const CORD: u8 = 2;
const CHIASM: u8 = 3;

/// One phantom as (volume, label map with values 0..=3).
pub fn phantom(id: &str, cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Result<(Volume, Array3<u8>), DataError> {
    let [d, h, w] = cfg.extent;
    let (df, hf, wf) = (d as f64, h as f64, w as f64);
    let mut labels = Array3::<u8>::zeros((d, h, w));

    // ellipsoid in the lower-y half, tube and sphere in the upper half
    let semi = [
        rng.random_range(0.22..0.30) * df,
        rng.random_range(0.15..0.20) * hf,
        rng.random_range(0.18..0.26) * wf,
    ];
    let lung_c = [
        rng.random_range(semi[0] + 1.0..df - semi[0] - 1.0),
        rng.random_range(semi[1] + 1.0..hf * 0.45),
        rng.random_range(semi[2] + 1.0..wf - semi[2] - 1.0),
    ];
    let cord_r = rng.random_range(1.3..1.8);
    let cord_c = [rng.random_range(hf * 0.62..hf * 0.85), rng.random_range(wf * 0.15..wf * 0.35)];
    let chiasm_r = rng.random_range(2.3..3.2);
    let chiasm_c = [
        rng.random_range(chiasm_r + 2.0..df - chiasm_r - 2.0),
        rng.random_range(hf * 0.62..hf * 0.85),
        rng.random_range(wf * 0.55..wf * 0.85),
    ];

    for ((z, y, x), l) in labels.indexed_iter_mut() {
        let p = [z as f64, y as f64, x as f64];
        let e: f64 = (0..3).map(|a| ((p[a] - lung_c[a]) / semi[a]).powi(2)).sum();
        if e <= 1.0 {
            *l = LUNG;
        }
        if (p[1] - cord_c[0]).powi(2) + (p[2] - cord_c[1]).powi(2) <= cord_r * cord_r {
            *l = CORD;
        }
        let s: f64 = (0..3).map(|a| (p[a] - chiasm_c[a]).powi(2)).sum();
        if s <= chiasm_r * chiasm_r {
            *l = CHIASM;
        }
    }

    let gain = rng.random_range(0.9..1.1f32);
    let levels = [0.0f32, -1.0, 1.0, 0.55];
    let noise = Normal::new(0.0f32, cfg.noise_std as f32).expect("noise std");
    let tilt = [rng.random_range(-0.01..0.01f32), rng.random_range(-0.01..0.01f32)];
    let mut voxels = Array3::<f32>::zeros((d, h, w));
    for ((z, y, x), v) in voxels.indexed_iter_mut() {
        let base = levels[labels[[z, y, x]] as usize] * gain;
        *v = base + tilt[0] * y as f32 + tilt[1] * x as f32 + noise.sample(rng);
    }
    Ok((Volume::new(voxels, cfg.spacing, id)?, labels))
}

/// Writes `cfg.cases` phantoms under `root` in the standard layout and
/// returns the patient ids.
pub fn generate(root: &Path, cfg: &SyntheticConfig) -> Result<Vec<String>, DataError> {
    let spec = DatasetSpec::for_kind(DatasetKind::Synthetic);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ids = Vec::with_capacity(cfg.cases);
    for i in 0..cfg.cases {
        let id = format!("syn{i:03}");
        let (volume, labels) = phantom(&id, cfg, &mut rng)?;
        let masks: Vec<(String, Array3<u8>)> = spec
            .organs
            .iter()
            .enumerate()
            .map(|(k, organ)| (organ.key.clone(), labels.mapv(|l| u8::from(l as usize == k + 1))))
            .collect();
        write_patient(root, &spec, &volume, &masks)?;
        ids.push(id);
    }
    Ok(ids)
}
