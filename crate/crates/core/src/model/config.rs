use crate::autodiff::Activation;
use crate::error::{Error, Result};

/// Settings of the channel gate: kernel size of the 1D convolution across
/// channels and the activation that turns its output into weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub kernel_size: usize,
    pub activation: Activation,
    /// When false the spatial layers skip the gate entirely.
    pub enabled: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            kernel_size: 1,
            activation: Activation::Sigmoid,
            enabled: true,
        }
    }
}

/// One spatial + temporal block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockConfig {
    pub channels: usize,
    pub stride: usize,
}

/// Multi-scale temporal branches: four dilated convolutions, one max-pool
/// branch and one 1x1 pass-through branch.
pub const TEMPORAL_BRANCHES: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub num_joints: usize,
    pub num_classes: usize,
    pub blocks: Vec<BlockConfig>,
    pub attention: AttentionConfig,
    pub dilations: [usize; 4],
}

impl NetworkConfig {
    /// Four blocks small enough to train on a CPU in minutes.
    pub fn desk(num_joints: usize, num_classes: usize) -> Self {
        Self::with_blocks(
            num_joints,
            num_classes,
            &[(12, 1), (12, 1), (24, 2), (24, 1)],
        )
    }

    /// Ten blocks with widths 60/120/240 and stride 2 at blocks 5 and 8.
    pub fn full(num_joints: usize, num_classes: usize) -> Self {
        Self::with_blocks(
            num_joints,
            num_classes,
            &[
                (60, 1),
                (60, 1),
                (60, 1),
                (60, 1),
                (120, 2),
                (120, 1),
                (120, 1),
                (240, 2),
                (240, 1),
                (240, 1),
            ],
        )
    }

    pub fn with_blocks(num_joints: usize, num_classes: usize, blocks: &[(usize, usize)]) -> Self {
        Self {
            in_channels: 3,
            num_joints,
            num_classes,
            blocks: blocks
                .iter()
                .map(|&(channels, stride)| BlockConfig { channels, stride })
                .collect(),
            attention: AttentionConfig::default(),
            dilations: [1, 2, 3, 4],
        }
    }

    /// Width of the pooled feature fed to the bottleneck head.
    pub fn feature_dim(&self) -> usize {
        self.blocks.last().map_or(self.in_channels, |b| b.channels)
    }

    /// Frame count after all temporal strides.
    pub fn output_frames(&self, frames: usize) -> usize {
        self.blocks
            .iter()
            .fold(frames, |m, b| (m - 1) / b.stride + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::invalid("network needs at least one block"));
        }
        if self.in_channels == 0 || self.num_joints == 0 {
            return Err(Error::invalid("input channels and joints must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("network needs at least two classes"));
        }
        for (k, b) in self.blocks.iter().enumerate() {
            if b.channels == 0 || b.stride == 0 {
                return Err(Error::invalid(format!(
                    "block {k}: width and stride must be positive"
                )));
            }
            if b.channels % TEMPORAL_BRANCHES != 0 {
                return Err(Error::invalid(format!(
                    "block {k}: width {} is not divisible by {TEMPORAL_BRANCHES} temporal branches",
                    b.channels
                )));
            }
        }
        let k = self.attention.kernel_size;
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "attention kernel size {k} must be odd"
            )));
        }
        if self.dilations.contains(&0) {
            return Err(Error::invalid("dilations must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        NetworkConfig::desk(5, 3).validate().unwrap();
        let full = NetworkConfig::full(25, 120);
        full.validate().unwrap();
        assert_eq!(full.blocks.len(), 10);
        assert_eq!(full.output_frames(64), 16);
        assert_eq!(NetworkConfig::desk(5, 3).output_frames(64), 32);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = NetworkConfig::desk(5, 3);
        c.blocks[1].channels = 16;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::desk(5, 3);
        c.attention.kernel_size = 2;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::desk(5, 3);
        c.blocks.clear();
        assert!(c.validate().is_err());
        assert!(NetworkConfig::desk(5, 1).validate().is_err());
    }
}
