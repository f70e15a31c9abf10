//! Stochastic augmentation. Spatial transforms (affine, elastic) share one
//! sampling grid for image and labels; intensity transforms touch the image
//! only.

use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_paired, CropPolicy, DataError, LabelMap, NormalizationMode, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastAugment {
    pub prob: f64,
    pub gamma: (f64, f64),
}

impl Default for ContrastAugment {
    fn default() -> Self {
        Self {
            prob: 0.3,
            gamma: (0.8, 1.25),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffineAugment {
    pub prob: f64,
    /// Maximum absolute rotation about each axis, degrees.
    pub rotation_deg: f64,
    pub scale: (f64, f64),
    /// Maximum absolute shift along each axis, voxels.
    pub translation_vox: f64,
}

impl Default for AffineAugment {
    fn default() -> Self {
        Self {
            prob: 0.3,
            rotation_deg: 10.0,
            scale: (0.9, 1.1),
            translation_vox: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticAugment {
    pub prob: f64,
    /// Gaussian smoothing of the random displacement field, voxels.
    pub sigma: f64,
    /// Peak displacement, voxels.
    pub magnitude: f64,
}

impl Default for ElasticAugment {
    fn default() -> Self {
        Self {
            prob: 0.3,
            sigma: 8.0,
            magnitude: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseAugment {
    pub prob: f64,
    pub std: f64,
}

impl Default for NoiseAugment {
    fn default() -> Self {
        Self { prob: 0.3, std: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// `None` disables boundary cropping.
    pub crop: Option<CropPolicy>,
    pub normalization: NormalizationMode,
    pub contrast: ContrastAugment,
    pub affine: AffineAugment,
    pub elastic: ElasticAugment,
    pub noise: NoiseAugment,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            crop: Some(CropPolicy::default()),
            normalization: NormalizationMode::ZScore,
            contrast: ContrastAugment::default(),
            affine: AffineAugment::default(),
            elastic: ElasticAugment::default(),
            noise: NoiseAugment::default(),
        }
    }
}

impl AugmentationConfig {
    /// No cropping, z-score normalization, every random transform off.
    pub fn disabled() -> Self {
        Self {
            crop: None,
            normalization: NormalizationMode::ZScore,
            contrast: ContrastAugment { prob: 0.0, ..Default::default() },
            affine: AffineAugment { prob: 0.0, ..Default::default() },
            elastic: ElasticAugment { prob: 0.0, ..Default::default() },
            noise: NoiseAugment { prob: 0.0, ..Default::default() },
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        for (name, p) in [
            ("contrast", self.contrast.prob),
            ("affine", self.affine.prob),
            ("elastic", self.elastic.prob),
            ("noise", self.noise.prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} probability {p} outside [0, 1]"));
            }
        }
        for (name, (lo, hi)) in [("contrast gamma", self.contrast.gamma), ("affine scale", self.affine.scale)] {
            if !(lo <= hi) || lo <= 0.0 {
                return bad(format!("{name} range ({lo}, {hi}) is not a positive ordered range"));
            }
        }
        if self.affine.rotation_deg < 0.0 || self.affine.translation_vox < 0.0 {
            return bad("affine rotation and translation bounds must be nonnegative".into());
        }
        if !(self.elastic.sigma > 0.0) || self.elastic.magnitude < 0.0 {
            return bad("elastic sigma must be positive and magnitude nonnegative".into());
        }
        if self.noise.std < 0.0 {
            return bad("noise std must be nonnegative".into());
        }
        if let Some(crop) = &self.crop {
            if crop.min_extent.contains(&0) {
                return bad("crop min_extent must be positive".into());
            }
        }
        Ok(())
    }
}

/// Stable per-sample seed from the global seed, patient id and epoch
/// (FNV-1a, independent of the platform hasher).
pub fn derive_seed(global: u64, patient: &str, epoch: u64) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for byte in global
        .to_le_bytes()
        .into_iter()
        .chain(patient.bytes())
        .chain(epoch.to_le_bytes())
    {
        h ^= byte as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Applies the configured random transforms. Deterministic in `rng_seed`;
/// output shapes equal input shapes.
pub fn augment(v: &Volume, l: &LabelMap, cfg: &AugmentationConfig, rng_seed: u64) -> Result<(Volume, LabelMap), DataError> {
    check_paired(v, l)?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut voxels = v.voxels().clone();
    let mut labels = l.labels().clone();

    let affine = (rng.random::<f64>() < cfg.affine.prob).then(|| random_affine(&cfg.affine, &mut rng));
    let elastic = (rng.random::<f64>() < cfg.elastic.prob).then(|| random_displacement(v.shape(), &cfg.elastic, &mut rng));
    if affine.is_some() || elastic.is_some() {
        let grid = SamplingGrid {
            shape: v.shape(),
            affine,
            elastic,
        };
        let (nv, nl) = grid.resample(&voxels, &labels);
        voxels = nv;
        labels = nl;
    }

    if rng.random::<f64>() < cfg.contrast.prob {
        let (lo, hi) = cfg.contrast.gamma;
        let gamma = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        adjust_contrast(&mut voxels, gamma);
    }
    if rng.random::<f64>() < cfg.noise.prob && cfg.noise.std > 0.0 {
        let normal = Normal::new(0.0f32, cfg.noise.std as f32).expect("std validated");
        voxels.iter_mut().for_each(|x| *x += normal.sample(&mut rng));
    }
    Ok((v.with_voxels(voxels)?, l.with_labels(labels)?))
}

/// Maps intensities to [0, 1], raises them to `gamma`, maps back.
fn adjust_contrast(voxels: &mut Array3<f32>, gamma: f64) {
    let (min, max) = voxels
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let range = (max - min) as f64;
    if !(range > 0.0) {
        return;
    }
    voxels.mapv_inplace(|x| {
        let t = ((x - min) as f64 / range).clamp(0.0, 1.0);
        (t.powf(gamma) * range + min as f64) as f32
    });
}

/// Inverse affine map about the volume centre: output coordinate to source.
struct Affine {
    /// Row-major 3x3 inverse of rotation * scale.
    inverse: [[f64; 3]; 3],
    translation: [f64; 3],
}

fn random_affine(cfg: &AffineAugment, rng: &mut ChaCha8Rng) -> Affine {
    let mut angle = || {
        let r = cfg.rotation_deg.to_radians();
        if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 }
    };
    let (a, b, c) = (angle(), angle(), angle());
    let (lo, hi) = cfg.scale;
    let mut scale = [1.0; 3];
    for s in &mut scale {
        *s = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    }
    let t = cfg.translation_vox;
    let mut translation = [0.0; 3];
    for v in &mut translation {
        *v = if t > 0.0 { rng.random_range(-t..=t) } else { 0.0 };
    }
    // rotation about the z, y and x axes of the [z, y, x] frame
    let rz = [[1.0, 0.0, 0.0], [0.0, a.cos(), -a.sin()], [0.0, a.sin(), a.cos()]];
    let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
    let rx = [[c.cos(), -c.sin(), 0.0], [c.sin(), c.cos(), 0.0], [0.0, 0.0, 1.0]];
    let rot = matmul(matmul(rz, ry), rx);
    // (R S)^-1 = S^-1 R^T
    let mut inverse = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inverse[i][j] = rot[j][i] / scale[i];
        }
    }
    Affine { inverse, translation }
}

fn matmul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn random_displacement(shape: [usize; 3], cfg: &ElasticAugment, rng: &mut ChaCha8Rng) -> [Array3<f32>; 3] {
    let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
    let mut field = || {
        let mut f = Array3::from_shape_simple_fn((shape[0], shape[1], shape[2]), || normal.sample(rng));
        gaussian_smooth(&mut f, cfg.sigma);
        f
    };
    let mut comps = [field(), field(), field()];
    let peak = comps
        .iter()
        .flat_map(|c| c.iter())
        .fold(0f32, |m, &x| m.max(x.abs()));
    if peak > 0.0 {
        let k = cfg.magnitude as f32 / peak;
        comps.iter_mut().for_each(|c| c.mapv_inplace(|x| x * k));
    }
    comps
}

/// Separable Gaussian blur with edge replication.
fn gaussian_smooth(field: &mut Array3<f32>, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let norm: f32 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|k| k / norm).collect();
    for axis in 0..3 {
        let len = field.len_of(Axis(axis));
        let mut buf = vec![0f32; len];
        for mut lane in field.lanes_mut(Axis(axis)) {
            for (i, out) in buf.iter_mut().enumerate() {
                *out = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| {
                        let j = (i as isize + k as isize - radius).clamp(0, len as isize - 1) as usize;
                        w * lane[j]
                    })
                    .sum();
            }
            lane.iter_mut().zip(&buf).for_each(|(d, s)| *d = *s);
        }
    }
}

struct SamplingGrid {
    shape: [usize; 3],
    affine: Option<Affine>,
    elastic: Option<[Array3<f32>; 3]>,
}

impl SamplingGrid {
    fn source(&self, p: [usize; 3]) -> [f64; 3] {
        let centre = self.shape.map(|s| (s as f64 - 1.0) / 2.0);
        let mut q = [p[0] as f64, p[1] as f64, p[2] as f64];
        if let Some(a) = &self.affine {
            let d = [
                q[0] - centre[0] - a.translation[0],
                q[1] - centre[1] - a.translation[1],
                q[2] - centre[2] - a.translation[2],
            ];
            for i in 0..3 {
                q[i] = centre[i] + (0..3).map(|j| a.inverse[i][j] * d[j]).sum::<f64>();
            }
        }
        if let Some(field) = &self.elastic {
            for i in 0..3 {
                q[i] += field[i][p] as f64;
            }
        }
        q
    }

    /// Image by trilinear interpolation, labels by nearest neighbour; both
    /// clamp to the border so no new label value can appear.
    fn resample(&self, voxels: &Array3<f32>, labels: &Array3<u8>) -> (Array3<f32>, Array3<u8>) {
        let [d, h, w] = self.shape;
        let max = [d as f64 - 1.0, h as f64 - 1.0, w as f64 - 1.0];
        let mut out_v = Array3::zeros((d, h, w));
        let mut out_l = Array3::zeros((d, h, w));
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let q = self.source([z, y, x]);
                    let q = [q[0].clamp(0.0, max[0]), q[1].clamp(0.0, max[1]), q[2].clamp(0.0, max[2])];
                    out_l[[z, y, x]] = labels[[q[0].round() as usize, q[1].round() as usize, q[2].round() as usize]];
                    out_v[[z, y, x]] = trilinear(voxels, q);
                }
            }
        }
        (out_v, out_l)
    }
}

fn trilinear(v: &Array3<f32>, q: [f64; 3]) -> f32 {
    let shape = v.shape();
    let base = [q[0].floor() as usize, q[1].floor() as usize, q[2].floor() as usize];
    let frac = [q[0] - base[0] as f64, q[1] - base[1] as f64, q[2] - base[2] as f64];
    let mut acc = 0.0f64;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let wz = if dz == 0 { 1.0 - frac[0] } else { frac[0] };
                let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
                let wx = if dx == 0 { 1.0 - frac[2] } else { frac[2] };
                let wgt = wz * wy * wx;
                if wgt == 0.0 {
                    continue;
                }
                let i = [
                    (base[0] + dz).min(shape[0] - 1),
                    (base[1] + dy).min(shape[1] - 1),
                    (base[2] + dx).min(shape[2] - 1),
                ];
                acc += wgt * v[i] as f64;
            }
        }
    }
    acc as f32
}
