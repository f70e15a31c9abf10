//! Parameterized layers and the builder that names and initializes them.

use oarseg_tensor::{
    batch_norm, conv, conv_transpose_up, instance_norm, ConvGeometry, NormStats, Param, Tensor, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::NormKind;

const NORM_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;

/// What a layer is, for structural inspection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv {
        kernel: [usize; 3],
        stride: [usize; 3],
        dilation: [usize; 3],
        groups: usize,
        in_channels: usize,
        out_channels: usize,
    },
    UpConv {
        factor: [usize; 3],
        in_channels: usize,
        out_channels: usize,
    },
    Norm {
        kind: NormKind,
        channels: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub path: String,
    pub kind: LayerKind,
}

/// Forward-pass switches.
#[derive(Clone, Copy, Debug)]
pub struct Mode {
    pub training: bool,
}

/// Creates layers under a dotted path, draws their initial weights from a
/// seeded stream and records every parameter, buffer and layer in creation
/// order.
pub struct Builder {
    rng: ChaCha8Rng,
    path: Vec<String>,
    pub(crate) params: Vec<(String, Param)>,
    pub(crate) buffers: Vec<(String, Param)>,
    pub(crate) layers: Vec<LayerInfo>,
}

impl Builder {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            path: Vec::new(),
            params: Vec::new(),
            buffers: Vec::new(),
            layers: Vec::new(),
        }
    }

    pub fn scope<T>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> T) -> T {
        self.path.push(name.into());
        let out = f(self);
        self.path.pop();
        out
    }

    fn full(&self, leaf: &str) -> String {
        let mut p = self.path.join(".");
        if !leaf.is_empty() {
            if !p.is_empty() {
                p.push('.');
            }
            p.push_str(leaf);
        }
        p
    }

    fn param(&mut self, leaf: &str, value: Tensor) -> Param {
        let p = Param::new(value);
        self.params.push((self.full(leaf), p.clone()));
        p
    }

    fn buffer(&mut self, leaf: &str, value: Tensor) -> Param {
        let p = Param::new(value);
        self.buffers.push((self.full(leaf), p.clone()));
        p
    }

    fn he(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let dist = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("positive std");
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(&mut self.rng)).collect())
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, geom: ConvGeometry, bias: bool) -> Conv {
        self.scope(name, |b| {
            let taps: usize = geom.kernel.iter().product();
            let per_group = cin / geom.groups;
            let weight = b.he(&[cout, per_group, geom.kernel[0], geom.kernel[1], geom.kernel[2]], per_group * taps);
            let weight = b.param("weight", weight);
            let bias = bias.then(|| b.param("bias", Tensor::zeros(&[cout])));
            b.layers.push(LayerInfo {
                path: b.full(""),
                kind: LayerKind::Conv {
                    kernel: geom.kernel,
                    stride: geom.stride,
                    dilation: geom.dilation,
                    groups: geom.groups,
                    in_channels: cin,
                    out_channels: cout,
                },
            });
            Conv { weight, bias, geom }
        })
    }

    pub fn up_conv(&mut self, name: &str, cin: usize, cout: usize, factor: [usize; 3]) -> UpConv {
        self.scope(name, |b| {
            let weight = b.he(&[cin, cout, factor[0], factor[1], factor[2]], cin);
            let weight = b.param("weight", weight);
            b.layers.push(LayerInfo {
                path: b.full(""),
                kind: LayerKind::UpConv {
                    factor,
                    in_channels: cin,
                    out_channels: cout,
                },
            });
            UpConv { weight, factor }
        })
    }

    pub fn norm(&mut self, name: &str, kind: NormKind, channels: usize) -> Norm {
        self.scope(name, |b| {
            let gamma = b.param("gamma", Tensor::full(&[channels], 1.0));
            let beta = b.param("beta", Tensor::zeros(&[channels]));
            let stats = (kind == NormKind::Batch).then(|| NormStats {
                mean: b.buffer("running_mean", Tensor::zeros(&[channels])),
                var: b.buffer("running_var", Tensor::full(&[channels], 1.0)),
                momentum: BN_MOMENTUM,
            });
            b.layers.push(LayerInfo {
                path: b.full(""),
                kind: LayerKind::Norm { kind, channels },
            });
            Norm { gamma, beta, stats }
        })
    }

    pub fn dense(&mut self, name: &str, cin: usize, cout: usize) -> Dense {
        self.scope(name, |b| {
            let weight = b.he(&[cout, cin, 1, 1, 1], cin);
            let weight = b.param("weight", weight);
            let bias = b.param("bias", Tensor::zeros(&[cout]));
            b.layers.push(LayerInfo {
                path: b.full(""),
                kind: LayerKind::Dense {
                    in_features: cin,
                    out_features: cout,
                },
            });
            Dense { weight, bias }
        })
    }
}

pub struct Conv {
    weight: Param,
    bias: Option<Param>,
    pub geom: ConvGeometry,
}

impl Conv {
    pub fn forward(&self, x: &Var) -> Var {
        let bias = self.bias.as_ref().map(Var::param);
        conv(x, &Var::param(&self.weight), bias.as_ref(), self.geom)
    }
}

pub struct UpConv {
    weight: Param,
    factor: [usize; 3],
}

impl UpConv {
    pub fn forward(&self, x: &Var) -> Var {
        conv_transpose_up(x, &Var::param(&self.weight), None, self.factor)
    }
}

pub struct Norm {
    gamma: Param,
    beta: Param,
    stats: Option<NormStats>,
}

impl Norm {
    pub fn forward(&self, x: &Var, mode: Mode) -> Var {
        let (g, b) = (Var::param(&self.gamma), Var::param(&self.beta));
        match &self.stats {
            Some(stats) => batch_norm(x, &g, &b, stats, mode.training, NORM_EPS),
            None => instance_norm(x, &g, &b, NORM_EPS),
        }
    }
}

/// Fully connected layer over `[b, c, 1, 1, 1]` feature vectors.
pub struct Dense {
    weight: Param,
    bias: Param,
}

impl Dense {
    pub fn forward(&self, x: &Var) -> Var {
        conv(
            x,
            &Var::param(&self.weight),
            Some(&Var::param(&self.bias)),
            ConvGeometry::same([1; 3], [1; 3]),
        )
    }
}
