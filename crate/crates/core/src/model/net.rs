//! Encoders (downsampling paths) and decoders (upsampling paths).

use oarseg_tensor::{concat_channels, max_pool, upsample_nearest, Var};

use super::blocks::{Act, Block, ConvNormAct, ConvSpec, Dims, DoubleConv, MbConv, ResidualUnit};
use super::layers::{Builder, Conv, Mode, UpConv};
use super::{EncoderKind, ModelConfig, Variant};

const RESNET_STAGES: [usize; 4] = [3, 4, 6, 3];
const MB_STAGES: [usize; 5] = [1, 2, 2, 3, 3];

struct EncoderLevel {
    pool: Option<[usize; 3]>,
    blocks: Vec<Block>,
}

/// Produces one feature map per resolution level `0..=depth`.
pub struct Encoder {
    levels: Vec<EncoderLevel>,
    pub channels: Vec<usize>,
}

/// Dilation of the 3x3 convolutions at `level`: the configured factor on
/// the two deepest encoder stages and the bottleneck, 1 elsewhere.
pub fn dilation_at(cfg: &ModelConfig, level: usize) -> usize {
    if level + 2 >= cfg.depth {
        cfg.dilation
    } else {
        1
    }
}

fn stage_repeats(table: &[usize], level: usize) -> usize {
    table.get(level - 1).copied().unwrap_or(*table.last().unwrap())
}

impl Encoder {
    pub fn build(b: &mut Builder, cfg: &ModelConfig, dims: Dims) -> Self {
        b.scope("encoder", |b| match cfg.encoder {
            EncoderKind::Plain => Self::plain(b, cfg, dims),
            EncoderKind::Resnet34Style => Self::resnet(b, cfg, dims),
            EncoderKind::EfficientnetStyle => Self::efficient(b, cfg, dims),
        })
    }

    fn plain(b: &mut Builder, cfg: &ModelConfig, dims: Dims) -> Self {
        let mut levels = Vec::new();
        let mut channels = Vec::new();
        let mut cin = cfg.in_channels;
        for level in 0..=cfg.depth {
            let cout = cfg.width(level);
            let d = dilation_at(cfg, level);
            let name = format!("level{level}");
            let (pool, block) = if cfg.variant.is_residual() {
                let stride = if level == 0 { 1 } else { 2 };
                (None, Block::Residual(ResidualUnit::build(b, &name, dims, cfg.norm, cin, cout, stride, d)))
            } else {
                let pool = (level > 0).then(|| dims.factor(2));
                (pool, Block::Double(DoubleConv::build(b, &name, dims, cfg.norm, cin, cout, d)))
            };
            levels.push(EncoderLevel { pool, blocks: vec![block] });
            channels.push(cout);
            cin = cout;
        }
        Encoder { levels, channels }
    }

    fn resnet(b: &mut Builder, cfg: &ModelConfig, dims: Dims) -> Self {
        let w0 = cfg.width(0);
        let stem = ConvNormAct::build(
            b,
            "stem",
            dims,
            cfg.norm,
            cfg.in_channels,
            w0,
            ConvSpec::new(3, Act::Relu).dilation(dilation_at(cfg, 0)),
        );
        let mut levels = vec![EncoderLevel {
            pool: None,
            blocks: vec![Block::Single(stem)],
        }];
        let mut channels = vec![w0];
        for level in 1..=cfg.depth {
            let (cin, cout) = (cfg.width(level - 1), cfg.width(level));
            let d = dilation_at(cfg, level);
            let blocks = b.scope(format!("level{level}"), |b| {
                (0..stage_repeats(&RESNET_STAGES, level))
                    .map(|k| {
                        let (ci, s) = if k == 0 { (cin, 2) } else { (cout, 1) };
                        Block::Residual(ResidualUnit::build(b, &format!("block{k}"), dims, cfg.norm, ci, cout, s, d))
                    })
                    .collect()
            });
            levels.push(EncoderLevel { pool: None, blocks });
            channels.push(cout);
        }
        Encoder { levels, channels }
    }

    fn efficient(b: &mut Builder, cfg: &ModelConfig, dims: Dims) -> Self {
        let scaled = |level: usize| ((cfg.width(level) as f64 * cfg.width_mult).round() as usize).max(4);
        let c0 = scaled(0);
        let stem = ConvNormAct::build(
            b,
            "stem",
            dims,
            cfg.norm,
            cfg.in_channels,
            c0,
            ConvSpec::new(3, Act::Swish).dilation(dilation_at(cfg, 0)),
        );
        let mut levels = vec![EncoderLevel {
            pool: None,
            blocks: vec![Block::Single(stem)],
        }];
        let mut channels = vec![c0];
        for level in 1..=cfg.depth {
            let (cin, cout) = (scaled(level - 1), scaled(level));
            let d = dilation_at(cfg, level);
            let repeats = ((stage_repeats(&MB_STAGES, level) as f64 * cfg.depth_mult).ceil() as usize).max(1);
            let blocks = b.scope(format!("level{level}"), |b| {
                (0..repeats)
                    .map(|k| {
                        let (ci, s) = if k == 0 { (cin, 2) } else { (cout, 1) };
                        Block::Mb(MbConv::build(b, &format!("block{k}"), dims, cfg.norm, ci, cout, s, d))
                    })
                    .collect()
            });
            levels.push(EncoderLevel { pool: None, blocks });
            channels.push(cout);
        }
        Encoder { levels, channels }
    }

    pub fn forward(&self, x: &Var, mode: Mode) -> Vec<Var> {
        let mut feats: Vec<Var> = Vec::with_capacity(self.levels.len());
        let mut h = x.clone();
        for level in &self.levels {
            if let Some(f) = level.pool {
                h = max_pool(&h, f);
            }
            for block in &level.blocks {
                h = block.forward(&h, mode);
            }
            feats.push(h.clone());
        }
        feats
    }
}

/// Decoder block for `variant`: residual units for ResU-Nets, double
/// convolutions otherwise.
fn decoder_block(b: &mut Builder, name: &str, cfg: &ModelConfig, dims: Dims, cin: usize, cout: usize) -> Block {
    if cfg.variant.is_residual() {
        Block::Residual(ResidualUnit::build(b, name, dims, cfg.norm, cin, cout, 1, 1))
    } else {
        Block::Double(DoubleConv::build(b, name, dims, cfg.norm, cin, cout, 1))
    }
}

/// Learned upsampling, concatenation with the skip and a block per level.
pub struct UDecoder {
    ups: Vec<UpConv>,
    blocks: Vec<Block>,
}

impl UDecoder {
    pub fn build(b: &mut Builder, cfg: &ModelConfig, dims: Dims, ch: &[usize]) -> Self {
        b.scope("decoder", |b| {
            let mut ups = Vec::new();
            let mut blocks = Vec::new();
            for level in (0..cfg.depth).rev() {
                b.scope(format!("level{level}"), |b| {
                    ups.push(b.up_conv("up", ch[level + 1], ch[level], dims.factor(2)));
                    blocks.push(decoder_block(b, "block", cfg, dims, 2 * ch[level], ch[level]));
                });
            }
            UDecoder { ups, blocks }
        })
    }

    pub fn forward(&self, feats: &[Var], mode: Mode) -> Var {
        let depth = feats.len() - 1;
        let mut h = feats[depth].clone();
        for (k, (up, block)) in self.ups.iter().zip(&self.blocks).enumerate() {
            let level = depth - 1 - k;
            let u = up.forward(&h);
            h = block.forward(&concat_channels(&[feats[level].clone(), u]), mode);
        }
        h
    }
}

/// Nested dense skip pathways: node `(i, j)` sees every earlier node at
/// level `i` and the upsampled node `(i + 1, j - 1)`.
pub struct NestedDecoder {
    /// `nodes[i][j - 1]` is node `(i, j)` for `j` in `1..=depth - i`.
    nodes: Vec<Vec<Block>>,
    factor: [usize; 3],
}

impl NestedDecoder {
    pub fn build(b: &mut Builder, cfg: &ModelConfig, dims: Dims, ch: &[usize]) -> Self {
        b.scope("decoder", |b| {
            let nodes = (0..cfg.depth)
                .map(|i| {
                    (1..=cfg.depth - i)
                        .map(|j| decoder_block(b, &format!("node{i}_{j}"), cfg, dims, j * ch[i] + ch[i + 1], ch[i]))
                        .collect()
                })
                .collect();
            NestedDecoder {
                nodes,
                factor: dims.factor(2),
            }
        })
    }

    /// Returns the level-0 nodes `(0, 1) ..= (0, depth)`.
    pub fn forward(&self, feats: &[Var], mode: Mode) -> Vec<Var> {
        let depth = feats.len() - 1;
        let mut grid: Vec<Vec<Var>> = feats.iter().map(|f| vec![f.clone()]).collect();
        // fill anti-diagonals so both inputs of each node already exist
        for sum in 1..=depth {
            for j in 1..=sum {
                let i = sum - j;
                let mut inputs: Vec<Var> = grid[i][..j].to_vec();
                inputs.push(upsample_nearest(&grid[i + 1][j - 1], self.factor));
                let node = self.nodes[i][j - 1].forward(&concat_channels(&inputs), mode);
                grid[i].push(node);
            }
        }
        grid.swap_remove(0).split_off(1)
    }
}

pub enum Decoder {
    U(UDecoder),
    Nested(NestedDecoder),
}

impl Decoder {
    pub fn build(b: &mut Builder, cfg: &ModelConfig, dims: Dims, ch: &[usize]) -> Self {
        if cfg.variant == Variant::Unetpp2d {
            Decoder::Nested(NestedDecoder::build(b, cfg, dims, ch))
        } else {
            Decoder::U(UDecoder::build(b, cfg, dims, ch))
        }
    }
}

/// Pointwise classifier to per-class logits.
pub fn head(b: &mut Builder, name: &str, cin: usize, classes: usize, dims: Dims) -> Conv {
    b.conv(name, cin, classes, dims.geometry(1, 1, 1), true)
}
