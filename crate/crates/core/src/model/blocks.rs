//! Convolutional building blocks shared by encoders and decoders.

use oarseg_tensor::{add, channel_gate, global_avg_pool, relu, sigmoid, swish, ConvGeometry, Var};

use super::layers::{Builder, Conv, Dense, Mode, Norm};
use super::NormKind;

/// Spatial layout of a network: planar nets keep a unit depth axis.
#[derive(Clone, Copy, Debug)]
pub struct Dims {
    pub volumetric: bool,
}

impl Dims {
    pub fn kernel(self, k: usize) -> [usize; 3] {
        [if self.volumetric { k } else { 1 }, k, k]
    }

    pub fn factor(self, f: usize) -> [usize; 3] {
        [if self.volumetric { f } else { 1 }, f, f]
    }

    pub fn geometry(self, k: usize, stride: usize, dilation: usize) -> ConvGeometry {
        let dilation = if k > 1 { self.factor(dilation) } else { [1; 3] };
        ConvGeometry::same(self.kernel(k), dilation).with_stride(self.factor(stride))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    Relu,
    Swish,
    Identity,
}

impl Act {
    fn apply(self, x: &Var) -> Var {
        match self {
            Act::Relu => relu(x),
            Act::Swish => swish(x),
            Act::Identity => x.clone(),
        }
    }
}

/// Convolution, normalization, activation. The convolution carries no
/// bias since the normalization shift subsumes it.
pub struct ConvNormAct {
    conv: Conv,
    norm: Norm,
    act: Act,
}

/// Options for [`ConvNormAct::build`].
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub act: Act,
}

impl ConvSpec {
    pub fn new(kernel: usize, act: Act) -> Self {
        Self {
            kernel,
            stride: 1,
            dilation: 1,
            groups: 1,
            act,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }
}

impl ConvNormAct {
    pub fn build(b: &mut Builder, name: &str, dims: Dims, norm: NormKind, cin: usize, cout: usize, spec: ConvSpec) -> Self {
        b.scope(name, |b| {
            let geom = dims.geometry(spec.kernel, spec.stride, spec.dilation).with_groups(spec.groups);
            let conv = b.conv("conv", cin, cout, geom, false);
            let norm = b.norm("norm", norm, cout);
            ConvNormAct { conv, norm, act: spec.act }
        })
    }

    pub fn forward(&self, x: &Var, mode: Mode) -> Var {
        self.act.apply(&self.norm.forward(&self.conv.forward(x), mode))
    }
}

/// Two 3x3 conv-norm-ReLU layers.
pub struct DoubleConv {
    first: ConvNormAct,
    second: ConvNormAct,
}

impl DoubleConv {
    pub fn build(b: &mut Builder, name: &str, dims: Dims, norm: NormKind, cin: usize, cout: usize, dilation: usize) -> Self {
        b.scope(name, |b| {
            let spec = ConvSpec::new(3, Act::Relu).dilation(dilation);
            DoubleConv {
                first: ConvNormAct::build(b, "first", dims, norm, cin, cout, spec),
                second: ConvNormAct::build(b, "second", dims, norm, cout, cout, spec),
            }
        })
    }

    pub fn forward(&self, x: &Var, mode: Mode) -> Var {
        self.second.forward(&self.first.forward(x, mode), mode)
    }
}

/// Residual unit: two 3x3 conv-norm layers (the first strided) added to a
/// shortcut, then ReLU. The shortcut is a strided 1x1 conv-norm whenever
/// the shape changes.
pub struct ResidualUnit {
    first: ConvNormAct,
    second: ConvNormAct,
    shortcut: Option<ConvNormAct>,
}

impl ResidualUnit {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        b: &mut Builder,
        name: &str,
        dims: Dims,
        norm: NormKind,
        cin: usize,
        cout: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        b.scope(name, |b| {
            let first = ConvNormAct::build(
                b,
                "first",
                dims,
                norm,
                cin,
                cout,
                ConvSpec::new(3, Act::Relu).stride(stride).dilation(dilation),
            );
            let second = ConvNormAct::build(b, "second", dims, norm, cout, cout, ConvSpec::new(3, Act::Identity).dilation(dilation));
            let shortcut = (stride != 1 || cin != cout).then(|| {
                ConvNormAct::build(b, "shortcut", dims, norm, cin, cout, ConvSpec::new(1, Act::Identity).stride(stride))
            });
            ResidualUnit { first, second, shortcut }
        })
    }

    pub fn forward(&self, x: &Var, mode: Mode) -> Var {
        let y = self.second.forward(&self.first.forward(x, mode), mode);
        let skip = match &self.shortcut {
            Some(s) => s.forward(x, mode),
            None => x.clone(),
        };
        relu(&add(&y, &skip))
    }
}

/// Squeeze-excitation: channel weights from two dense layers over the
/// spatially pooled features.
pub struct SqueezeExcite {
    reduce: Dense,
    expand: Dense,
}

impl SqueezeExcite {
    pub fn build(b: &mut Builder, name: &str, channels: usize, squeezed: usize) -> Self {
        b.scope(name, |b| SqueezeExcite {
            reduce: b.dense("reduce", channels, squeezed),
            expand: b.dense("expand", squeezed, channels),
        })
    }

    pub fn forward(&self, x: &Var) -> Var {
        let s = swish(&self.reduce.forward(&global_avg_pool(x)));
        channel_gate(x, &sigmoid(&self.expand.forward(&s)))
    }
}

/// Inverted bottleneck: 1x1 expansion, depthwise 3x3 (possibly strided),
/// squeeze-excitation, 1x1 projection, identity skip when shapes agree.
pub struct MbConv {
    expand: ConvNormAct,
    depthwise: ConvNormAct,
    se: SqueezeExcite,
    project: ConvNormAct,
    skip: bool,
}

pub const MB_EXPANSION: usize = 4;
const SE_RATIO: f64 = 0.25;

impl MbConv {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        b: &mut Builder,
        name: &str,
        dims: Dims,
        norm: NormKind,
        cin: usize,
        cout: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        b.scope(name, |b| {
            let hidden = cin * MB_EXPANSION;
            let expand = ConvNormAct::build(b, "expand", dims, norm, cin, hidden, ConvSpec::new(1, Act::Swish));
            let depthwise = ConvNormAct::build(
                b,
                "depthwise",
                dims,
                norm,
                hidden,
                hidden,
                ConvSpec::new(3, Act::Swish).stride(stride).dilation(dilation).groups(hidden),
            );
            let squeezed = ((cin as f64 * SE_RATIO).round() as usize).max(1);
            let se = SqueezeExcite::build(b, "se", hidden, squeezed);
            let project = ConvNormAct::build(b, "project", dims, norm, hidden, cout, ConvSpec::new(1, Act::Identity));
            MbConv {
                expand,
                depthwise,
                se,
                project,
                skip: stride == 1 && cin == cout,
            }
        })
    }

    pub fn forward(&self, x: &Var, mode: Mode) -> Var {
        let h = self.expand.forward(x, mode);
        let h = self.se.forward(&self.depthwise.forward(&h, mode));
        let y = self.project.forward(&h, mode);
        if self.skip {
            add(&y, x)
        } else {
            y
        }
    }
}

/// Any block that maps features to features.
pub enum Block {
    Single(ConvNormAct),
    Double(DoubleConv),
    Residual(ResidualUnit),
    Mb(MbConv),
}

impl Block {
    pub fn forward(&self, x: &Var, mode: Mode) -> Var {
        match self {
            Block::Single(b) => b.forward(x, mode),
            Block::Double(b) => b.forward(x, mode),
            Block::Residual(b) => b.forward(x, mode),
            Block::Mb(b) => b.forward(x, mode),
        }
    }
}
