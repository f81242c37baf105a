use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// One inverted-residual bottleneck stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub out_channels: usize,
    pub expansion: usize,
    pub stride: usize,
}

const fn block(out_channels: usize, expansion: usize, stride: usize) -> BlockSpec {
    BlockSpec {
        out_channels,
        expansion,
        stride,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Square input resolution.
    pub input_size: usize,
    pub stem_channels: usize,
    pub blocks: Vec<BlockSpec>,
    /// Channel width `C` of the trunk output.
    pub trunk_channels: usize,
    pub attention_heads: usize,
    /// Bottleneck width of each attention head is `max(8, C / reduction)`.
    pub attention_reduction: usize,
    pub embedding_dim: usize,
    pub prelu_init: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackbonePreset {
    /// Scaled-down trunk for CPU training (default).
    Desk,
    /// Full-width mobile face trunk.
    Mfn,
    /// Tiny 16×16 configuration for gradient checks and fast tests.
    Toy,
}

impl BackbonePreset {
    pub fn config(self) -> BackboneConfig {
        match self {
            BackbonePreset::Desk => BackboneConfig::desk(),
            BackbonePreset::Mfn => BackboneConfig::mfn(),
            BackbonePreset::Toy => BackboneConfig::toy(),
        }
    }
}

impl BackboneConfig {
    pub fn desk() -> Self {
        Self {
            input_size: 112,
            stem_channels: 16,
            blocks: vec![
                block(24, 2, 2),
                block(24, 2, 1),
                block(48, 2, 2),
                block(48, 2, 1),
                block(64, 2, 2),
                block(64, 2, 1),
            ],
            trunk_channels: 128,
            attention_heads: 2,
            attention_reduction: 8,
            embedding_dim: 512,
            prelu_init: 0.25,
        }
    }

    pub fn mfn() -> Self {
        let mut blocks = Vec::new();
        blocks.push(block(64, 2, 2));
        blocks.extend(core::iter::repeat_n(block(64, 2, 1), 4));
        blocks.push(block(128, 4, 2));
        blocks.extend(core::iter::repeat_n(block(128, 2, 1), 6));
        blocks.push(block(128, 4, 2));
        blocks.extend(core::iter::repeat_n(block(128, 2, 1), 2));
        Self {
            input_size: 112,
            stem_channels: 64,
            blocks,
            trunk_channels: 512,
            attention_heads: 2,
            attention_reduction: 32,
            embedding_dim: 512,
            prelu_init: 0.25,
        }
    }

    pub fn toy() -> Self {
        Self {
            input_size: 16,
            stem_channels: 4,
            blocks: vec![block(6, 2, 2), block(6, 2, 1)],
            trunk_channels: 8,
            attention_heads: 2,
            attention_reduction: 2,
            embedding_dim: 12,
            prelu_init: 0.25,
        }
    }

    /// Spatial side of the trunk output (the stem and every stride-2 block halve it).
    pub fn feature_size(&self) -> usize {
        let mut s = (self.input_size + 2 - 3) / 2 + 1;
        for b in &self.blocks {
            s = (s + 2 - 3) / b.stride + 1;
        }
        s
    }

    pub fn attention_width(&self) -> usize {
        (self.trunk_channels / self.attention_reduction.max(1)).max(8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_reach_seven_by_seven() {
        assert_eq!(BackboneConfig::desk().feature_size(), 7);
        assert_eq!(BackboneConfig::mfn().feature_size(), 7);
        assert_eq!(BackboneConfig::toy().feature_size(), 4);
    }
}
