use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskActivation {
    #[default]
    Sigmoid,
    Relu,
}

/// Conv-TasNet sizes in the usual N/L/B/R/X/H/P notation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvTasNetConfig {
    /// Encoder basis count (N).
    pub n_filters: usize,
    /// Encoder kernel length in samples (L); the stride is `L / 2`.
    pub kernel_len: usize,
    /// Bottleneck channels (B).
    pub bottleneck: usize,
    /// Repeats of the dilated stack (R).
    pub repeats: usize,
    /// Blocks per repeat (X); block `i` uses dilation `2^i`.
    pub blocks_per_repeat: usize,
    /// Channels inside each block (H).
    pub conv_channels: usize,
    /// Depthwise kernel size (P).
    pub kernel: usize,
    #[serde(default)]
    pub mask: MaskActivation,
}

impl ConvTasNetConfig {
    /// Full-size network: N=4096, L=320, B=256, R=4, X=8, H=512, P=3.
    pub fn full() -> Self {
        Self {
            n_filters: 4096,
            kernel_len: 320,
            bottleneck: 256,
            repeats: 4,
            blocks_per_repeat: 8,
            conv_channels: 512,
            kernel: 3,
            mask: MaskActivation::Sigmoid,
        }
    }

    /// Reduced network for desk-scale training runs.
    pub fn desk() -> Self {
        Self {
            n_filters: 256,
            kernel_len: 40,
            bottleneck: 64,
            repeats: 2,
            blocks_per_repeat: 4,
            conv_channels: 128,
            kernel: 3,
            mask: MaskActivation::Sigmoid,
        }
    }

    pub fn stride(&self) -> usize {
        self.kernel_len / 2
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_filters", self.n_filters),
            ("kernel_len", self.kernel_len),
            ("bottleneck", self.bottleneck),
            ("repeats", self.repeats),
            ("blocks_per_repeat", self.blocks_per_repeat),
            ("conv_channels", self.conv_channels),
            ("kernel", self.kernel),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("enhancer: {name} must be positive")));
        }
        if self.kernel_len % 2 != 0 {
            return Err(Error::InvalidConfig("enhancer: kernel_len must be even".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidConfig("enhancer: kernel must be odd".into()));
        }
        if self.blocks_per_repeat > 16 {
            return Err(Error::InvalidConfig("enhancer: blocks_per_repeat above 16".into()));
        }
        Ok(())
    }

    /// Learnable scalar count, computed from the layer sizes.
    pub fn parameter_count(&self) -> usize {
        let (n, l, b, h, p) = (
            self.n_filters,
            self.kernel_len,
            self.bottleneck,
            self.conv_channels,
            self.kernel,
        );
        let encoder = n * l;
        let input_norm = 2 * n;
        let bottleneck = n * b + b;
        let block = (b * h + h) // 1x1 in
            + 1 + 2 * h         // prelu, gLN
            + (h * p + h)       // depthwise
            + 1 + 2 * h         // prelu, gLN
            + 2 * (h * b + b); // residual and skip 1x1
        // the final block has no residual output
        let blocks = self.repeats * self.blocks_per_repeat * block - (h * b + b);
        let mask = 1 + b * n + n;
        let decoder = n * l;
        encoder + input_norm + bottleneck + blocks + mask + decoder
    }
}

impl Default for ConvTasNetConfig {
    fn default() -> Self {
        Self::desk()
    }
}
