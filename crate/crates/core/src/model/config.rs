use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Unet2d,
    Unetpp2d,
    Resunet2d,
    DilatedResunet2d,
    Resunet3d,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Unet2d,
        Variant::Unetpp2d,
        Variant::Resunet2d,
        Variant::DilatedResunet2d,
        Variant::Resunet3d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Unet2d => "unet2d",
            Variant::Unetpp2d => "unetpp2d",
            Variant::Resunet2d => "resunet2d",
            Variant::DilatedResunet2d => "dilated_resunet2d",
            Variant::Resunet3d => "resunet3d",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn is_3d(self) -> bool {
        self == Variant::Resunet3d
    }

    pub fn is_residual(self) -> bool {
        matches!(self, Variant::Resunet2d | Variant::DilatedResunet2d | Variant::Resunet3d)
    }

    /// Rank of the batches `forward` accepts.
    pub fn input_rank(self) -> usize {
        if self.is_3d() {
            5
        } else {
            4
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// The variant's own downsampling path.
    Plain,
    /// Basic residual stages with [3, 4, 6, 3] blocks.
    Resnet34Style,
    /// Inverted bottlenecks with squeeze-excitation.
    EfficientnetStyle,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::Plain, EncoderKind::Resnet34Style, EncoderKind::EfficientnetStyle];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Plain => "plain",
            EncoderKind::Resnet34Style => "resnet34_style",
            EncoderKind::EfficientnetStyle => "efficientnet_style",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Instance,
    Batch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub encoder: EncoderKind,
    pub in_channels: usize,
    /// Foreground classes plus background.
    pub num_classes: usize,
    pub base_width: usize,
    /// Number of downsampling steps.
    pub depth: usize,
    pub dilation: usize,
    pub norm: NormKind,
    pub deep_supervision: bool,
    /// Channel multiplier of the EfficientNet-style encoder.
    pub width_mult: f64,
    /// Block-count multiplier of the EfficientNet-style encoder.
    pub depth_mult: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::for_variant(Variant::Resunet3d, 4)
    }
}

impl ModelConfig {
    /// Defaults for `variant`: depth 5, base width 16, dilation 3 only for
    /// the dilated variant, instance norm for residual variants and batch
    /// norm otherwise.
    pub fn for_variant(variant: Variant, num_classes: usize) -> Self {
        Self {
            variant,
            encoder: EncoderKind::Plain,
            in_channels: 1,
            num_classes,
            base_width: 16,
            depth: 5,
            dilation: if variant == Variant::DilatedResunet2d { 3 } else { 1 },
            norm: if variant.is_residual() { NormKind::Instance } else { NormKind::Batch },
            deep_supervision: false,
            width_mult: 1.0,
            depth_mult: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.depth < 2 {
            return bad(format!("depth must be at least 2, got {}", self.depth));
        }
        if self.base_width < 4 {
            return bad(format!("base_width must be at least 4, got {}", self.base_width));
        }
        if self.in_channels == 0 {
            return bad("in_channels must be positive".into());
        }
        if self.dilation == 0 {
            return bad("dilation must be positive".into());
        }
        if self.dilation != 1 && self.variant != Variant::DilatedResunet2d {
            return bad(format!("dilation {} requires dilated_resunet2d", self.dilation));
        }
        if self.deep_supervision && self.variant != Variant::Unetpp2d {
            return bad("deep supervision is only available for unetpp2d".into());
        }
        if !(self.width_mult > 0.0 && self.depth_mult > 0.0) {
            return bad("encoder scaling multipliers must be positive".into());
        }
        Ok(())
    }

    /// Channel count at resolution level `level`.
    pub fn width(&self, level: usize) -> usize {
        self.base_width << level.min(4)
    }

    /// Required divisor of every downsampled spatial extent.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }
}
