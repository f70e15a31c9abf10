//! The five U-Net variants and their encoder backbones behind one forward
//! contract: a batch of images in, per-class logits at input resolution out.

mod blocks;
mod config;
mod layers;
mod net;

use oarseg_tensor::{Param, Tensor, Var};

pub use config::{EncoderKind, ModelConfig, NormKind, Variant};
pub use layers::{LayerInfo, LayerKind, Mode};
pub use net::dilation_at;

use blocks::Dims;
use layers::{Builder, Conv};
use net::{Decoder, Encoder};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("input shape {shape:?}: {reason}")]
    Shape { shape: Vec<usize>, reason: String },
}

/// Logits plus, with deep supervision, the auxiliary outputs of the
/// shallower nested decoder nodes.
pub struct ModelOutput {
    pub logits: Var,
    pub aux: Vec<Var>,
}

pub struct Model {
    cfg: ModelConfig,
    dims: Dims,
    encoder: Encoder,
    decoder: Decoder,
    heads: Vec<Conv>,
    params: Vec<(String, Param)>,
    buffers: Vec<(String, Param)>,
    layers: Vec<LayerInfo>,
}

pub fn build_model(cfg: &ModelConfig) -> Result<Model, ModelError> {
    Model::new(cfg, 0)
}

impl Model {
    /// Builds `cfg` with weights drawn from `seed`.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Model, ModelError> {
        cfg.validate()?;
        let dims = Dims {
            volumetric: cfg.variant.is_3d(),
        };
        let mut b = Builder::new(seed);
        let encoder = Encoder::build(&mut b, cfg, dims);
        let ch = encoder.channels.clone();
        let decoder = Decoder::build(&mut b, cfg, dims, &ch);
        let heads = if cfg.deep_supervision {
            (1..=cfg.depth).map(|j| net::head(&mut b, &format!("head{j}"), ch[0], cfg.num_classes, dims)).collect()
        } else {
            vec![net::head(&mut b, "head", ch[0], cfg.num_classes, dims)]
        };
        Ok(Model {
            cfg: cfg.clone(),
            dims,
            encoder,
            decoder,
            heads,
            params: b.params,
            buffers: b.buffers,
            layers: b.layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Trainable parameters keyed by layer path, in construction order.
    pub fn named_params(&self) -> &[(String, Param)] {
        &self.params
    }

    pub fn params(&self) -> Vec<Param> {
        self.params.iter().map(|(_, p)| p.clone()).collect()
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn named_buffers(&self) -> &[(String, Param)] {
        &self.buffers
    }

    /// Every layer in construction order, which is also forward order
    /// within each block.
    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, p)| p.numel()).sum()
    }

    /// Checks a rank-5 `[b, c, d, h, w]` shape against the input contract.
    pub fn check_input(&self, shape: &[usize]) -> Result<(), ModelError> {
        let err = |reason: String| {
            Err(ModelError::Shape {
                shape: shape.to_vec(),
                reason,
            })
        };
        if shape.len() != 5 {
            return err("expected a rank-5 tensor".into());
        }
        if shape[1] != self.cfg.in_channels {
            return err(format!("expected {} input channels", self.cfg.in_channels));
        }
        if !self.dims.volumetric && shape[2] != 1 {
            return err("planar variants need a unit depth axis".into());
        }
        let div = self.cfg.divisor();
        let first = if self.dims.volumetric { 2 } else { 3 };
        if shape[first..].iter().any(|&e| e == 0 || e % div != 0) {
            return err(format!("spatial extents must be divisible by {div}"));
        }
        Ok(())
    }

    /// Forward pass on a rank-5 batch (planar variants use depth 1).
    pub fn forward(&self, x: &Var, mode: Mode) -> Result<ModelOutput, ModelError> {
        self.check_input(x.shape())?;
        let feats = self.encoder.forward(x, mode);
        match &self.decoder {
            Decoder::U(d) => Ok(ModelOutput {
                logits: self.heads[0].forward(&d.forward(&feats, mode)),
                aux: Vec::new(),
            }),
            Decoder::Nested(d) => {
                let nodes = d.forward(&feats, mode);
                if self.cfg.deep_supervision {
                    let mut outs: Vec<Var> = nodes.iter().zip(&self.heads).map(|(n, h)| h.forward(n)).collect();
                    let logits = outs.pop().expect("at least one head");
                    Ok(ModelOutput { logits, aux: outs })
                } else {
                    Ok(ModelOutput {
                        logits: self.heads[0].forward(nodes.last().expect("nested nodes")),
                        aux: Vec::new(),
                    })
                }
            }
        }
    }

    /// Inference on a batch of the variant's natural rank: `[b, c, h, w]`
    /// for planar variants, `[b, c, d, h, w]` for volumetric ones. Returns
    /// logits of the same rank.
    pub fn predict(&self, batch: &Tensor, mode: Mode) -> Result<Tensor, ModelError> {
        let rank = self.cfg.variant.input_rank();
        if batch.rank() != rank {
            return Err(ModelError::Shape {
                shape: batch.shape().to_vec(),
                reason: format!("{} expects rank-{rank} batches", self.cfg.variant.name()),
            });
        }
        let s = batch.shape().to_vec();
        let x = if rank == 4 {
            batch.clone().reshape(&[s[0], s[1], 1, s[2], s[3]])
        } else {
            batch.clone()
        };
        let out = self.forward(&Var::constant(x), mode)?.logits.value().clone();
        Ok(if rank == 4 {
            let o = out.shape().to_vec();
            out.reshape(&[o[0], o[1], o[3], o[4]])
        } else {
            out
        })
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|(_, p)| p.zero_grad());
    }
}
