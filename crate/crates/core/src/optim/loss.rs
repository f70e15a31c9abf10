//! Soft multi-class DICE, categorical cross-entropy and their weighted sum,
//! with analytic gradients with respect to the logits.
//!
//! Kernels are generic over the float type so the same code can be checked
//! against finite differences in `f64` and used for training in `f32`.

use num_traits::Float;
use oarseg_tensor::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::OptimError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub dice_weight: f64,
    pub ce_weight: f64,
    pub smooth: f64,
    pub include_background: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::compound()
    }
}

impl LossConfig {
    /// DICE 0.4 + CE 0.6.
    pub fn compound() -> Self {
        Self::weighted(0.4, 0.6)
    }

    pub fn dice_only() -> Self {
        Self::weighted(1.0, 0.0)
    }

    pub fn weighted(dice_weight: f64, ce_weight: f64) -> Self {
        Self {
            dice_weight,
            ce_weight,
            smooth: 1e-5,
            include_background: false,
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.dice_weight >= 0.0 && self.ce_weight >= 0.0) {
            return Err(OptimError::InvalidConfig("loss weights must be nonnegative".into()));
        }
        if !(self.dice_weight + self.ce_weight > 0.0) {
            return Err(OptimError::InvalidConfig("at least one loss weight must be positive".into()));
        }
        if !(self.smooth > 0.0) {
            return Err(OptimError::InvalidConfig("dice smoothing must be positive".into()));
        }
        Ok(())
    }
}

/// Logit layout `[batch, classes, spatial]`, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossShape {
    pub batch: usize,
    pub classes: usize,
    pub spatial: usize,
}

impl LossShape {
    /// Reads `[b, c, ...spatial]`.
    pub fn from_dims(dims: &[usize]) -> Result<Self, OptimError> {
        if dims.len() < 3 {
            return Err(OptimError::ShapeMismatch(format!("logits must be at least rank 3, got {dims:?}")));
        }
        Ok(Self {
            batch: dims[0],
            classes: dims[1],
            spatial: dims[2..].iter().product(),
        })
    }

    fn numel(&self) -> usize {
        self.batch * self.classes * self.spatial
    }

    fn voxels(&self) -> usize {
        self.batch * self.spatial
    }
}

fn check<F>(logits: &[F], shape: LossShape, target: &[u8]) -> Result<(), OptimError> {
    if logits.len() != shape.numel() {
        return Err(OptimError::ShapeMismatch(format!(
            "{} logits for shape {shape:?}",
            logits.len()
        )));
    }
    if target.len() != shape.voxels() {
        return Err(OptimError::ShapeMismatch(format!(
            "{} target voxels for {} predicted voxels",
            target.len(),
            shape.voxels()
        )));
    }
    if shape.classes < 2 {
        return Err(OptimError::ShapeMismatch("need at least two classes".into()));
    }
    if let Some(&bad) = target.iter().find(|&&t| t as usize >= shape.classes) {
        return Err(OptimError::LabelOutOfRange {
            label: bad,
            classes: shape.classes,
        });
    }
    Ok(())
}

fn cast<F: Float>(v: f64) -> F {
    F::from(v).expect("representable constant")
}

/// Channel-wise softmax; same layout as the logits.
pub fn softmax<F: Float>(logits: &[F], shape: LossShape) -> Vec<F> {
    let LossShape { batch, classes, spatial } = shape;
    let mut p = vec![F::zero(); logits.len()];
    for b in 0..batch {
        let base = b * classes * spatial;
        for v in 0..spatial {
            let idx = |c: usize| base + c * spatial + v;
            let m = (0..classes).map(|c| logits[idx(c)]).fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for c in 0..classes {
                let e = (logits[idx(c)] - m).exp();
                p[idx(c)] = e;
                z = z + e;
            }
            for c in 0..classes {
                p[idx(c)] = p[idx(c)] / z;
            }
        }
    }
    p
}

/// Pulls a gradient with respect to probabilities back through softmax.
fn softmax_backward<F: Float>(p: &[F], grad_p: &[F], shape: LossShape) -> Vec<F> {
    let LossShape { batch, classes, spatial } = shape;
    let mut g = vec![F::zero(); p.len()];
    for b in 0..batch {
        let base = b * classes * spatial;
        for v in 0..spatial {
            let idx = |c: usize| base + c * spatial + v;
            let dot = (0..classes).fold(F::zero(), |acc, c| acc + p[idx(c)] * grad_p[idx(c)]);
            for c in 0..classes {
                g[idx(c)] = p[idx(c)] * (grad_p[idx(c)] - dot);
            }
        }
    }
    g
}

fn dice_from_probs<F: Float>(p: &[F], shape: LossShape, target: &[u8], cfg: &LossConfig) -> (F, Vec<F>) {
    let LossShape { batch, classes, spatial } = shape;
    let s = cast::<F>(cfg.smooth);
    let first = usize::from(!cfg.include_background);
    let included = classes - first;
    let k = cast::<F>(included as f64);
    let two = cast::<F>(2.0);
    let mut grad_p = vec![F::zero(); p.len()];
    let mut score_sum = F::zero();
    for c in first..classes {
        let (mut inter, mut psum, mut tsum) = (F::zero(), F::zero(), F::zero());
        for b in 0..batch {
            for v in 0..spatial {
                let pv = p[(b * classes + c) * spatial + v];
                let t = target[b * spatial + v] as usize == c;
                psum = psum + pv;
                if t {
                    inter = inter + pv;
                    tsum = tsum + F::one();
                }
            }
        }
        let num = two * inter + s;
        let den = psum + tsum + s;
        score_sum = score_sum + num / den;
        for b in 0..batch {
            for v in 0..spatial {
                let t = if target[b * spatial + v] as usize == c { F::one() } else { F::zero() };
                let d_score = (two * t * den - num) / (den * den);
                grad_p[(b * classes + c) * spatial + v] = -d_score / k;
            }
        }
    }
    (F::one() - score_sum / k, grad_p)
}

/// `1 - mean_c (2 sum p_c t_c + s) / (sum p_c + sum t_c + s)` over the
/// included classes, with sums over batch and space.
pub fn dice_loss<F: Float>(logits: &[F], shape: LossShape, target: &[u8], cfg: &LossConfig) -> Result<F, OptimError> {
    dice_loss_grad(logits, shape, target, cfg).map(|(l, _)| l)
}

pub fn dice_loss_grad<F: Float>(
    logits: &[F],
    shape: LossShape,
    target: &[u8],
    cfg: &LossConfig,
) -> Result<(F, Vec<F>), OptimError> {
    check(logits, shape, target)?;
    let p = softmax(logits, shape);
    let (loss, grad_p) = dice_from_probs(&p, shape, target, cfg);
    Ok((loss, softmax_backward(&p, &grad_p, shape)))
}

/// Mean per-voxel categorical cross-entropy.
pub fn ce_loss<F: Float>(logits: &[F], shape: LossShape, target: &[u8]) -> Result<F, OptimError> {
    ce_loss_grad(logits, shape, target).map(|(l, _)| l)
}

pub fn ce_loss_grad<F: Float>(logits: &[F], shape: LossShape, target: &[u8]) -> Result<(F, Vec<F>), OptimError> {
    check(logits, shape, target)?;
    let LossShape { batch, classes, spatial } = shape;
    let n = cast::<F>(shape.voxels() as f64);
    let p = softmax(logits, shape);
    let mut total = F::zero();
    let mut grad = vec![F::zero(); logits.len()];
    for b in 0..batch {
        for v in 0..spatial {
            let t = target[b * spatial + v] as usize;
            let idx = |c: usize| (b * classes + c) * spatial + v;
            let m = (0..classes).map(|c| logits[idx(c)]).fold(F::neg_infinity(), F::max);
            let lse = (0..classes).fold(F::zero(), |acc, c| acc + (logits[idx(c)] - m).exp()).ln() + m;
            total = total + (lse - logits[idx(t)]);
            for c in 0..classes {
                let onehot = if c == t { F::one() } else { F::zero() };
                grad[idx(c)] = (p[idx(c)] - onehot) / n;
            }
        }
    }
    Ok((total / n, grad))
}

/// `dice_weight * dice + ce_weight * ce`. A zero weight drops its term
/// entirely, so `(1, 0)` reproduces the DICE loss bit for bit.
pub fn combined_loss<F: Float>(logits: &[F], shape: LossShape, target: &[u8], cfg: &LossConfig) -> Result<F, OptimError> {
    combined_loss_grad(logits, shape, target, cfg).map(|(l, _)| l)
}

pub fn combined_loss_grad<F: Float>(
    logits: &[F],
    shape: LossShape,
    target: &[u8],
    cfg: &LossConfig,
) -> Result<(F, Vec<F>), OptimError> {
    cfg.validate()?;
    check(logits, shape, target)?;
    let mut loss = F::zero();
    let mut grad = vec![F::zero(); logits.len()];
    let mut first = true;
    let mut accumulate = |w: f64, (l, g): (F, Vec<F>)| {
        let w = cast::<F>(w);
        if first {
            loss = w * l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a = w * *b);
            first = false;
        } else {
            loss = loss + w * l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + w * *b);
        }
    };
    if cfg.dice_weight > 0.0 {
        accumulate(cfg.dice_weight, dice_loss_grad(logits, shape, target, cfg)?);
    }
    if cfg.ce_weight > 0.0 {
        accumulate(cfg.ce_weight, ce_loss_grad(logits, shape, target)?);
    }
    Ok((loss, grad))
}

/// The compound loss as a graph node over `[b, c, ...]` logits. The kernel
/// runs in `f64`; the gradient is handed back in `f32`.
pub fn loss_node(logits: &Var, target: &[u8], cfg: &LossConfig) -> Result<Var, OptimError> {
    let shape = LossShape::from_dims(logits.shape())?;
    let data: Vec<f64> = logits.value().data().iter().map(|&v| v as f64).collect();
    let (loss, grad) = combined_loss_grad(&data, shape, target, cfg)?;
    let grad = Tensor::new(logits.shape().to_vec(), grad.into_iter().map(|g| g as f32).collect());
    Ok(Var::from_op(Tensor::scalar(loss as f32), vec![logits.clone()], move |g, _| {
        let s = g.data()[0];
        vec![Some(grad.map(|v| v * s))]
    }))
}
