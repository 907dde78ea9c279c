use crate::error::{Error, Result};

/// Architecture hyperparameters.
///
/// `input_frames` x `input_bins` is the patch size the network is trained
/// on and tiled over at inference; both must be divisible by `2^depth` so
/// the pool/upsample ladder closes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_filters: usize,
    pub dropout_rate: f64,
    pub use_batch_norm: bool,
    pub out_classes: usize,
    pub input_frames: usize,
    pub input_bins: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            depth: 4,
            base_filters: 16,
            dropout_rate: 0.2,
            use_batch_norm: true,
            out_classes: 1,
            input_frames: 64,
            input_bins: 64,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.base_filters < 1 {
            return Err(Error::Config("base_filters must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        if self.out_classes != 1 {
            return Err(Error::Config(format!(
                "out_classes must be 1, got {}",
                self.out_classes
            )));
        }
        let block = 1usize << self.depth;
        if self.input_frames == 0 || self.input_frames % block != 0 {
            return Err(Error::Config(format!(
                "input_frames {} must be a positive multiple of 2^depth = {block}",
                self.input_frames
            )));
        }
        if self.input_bins == 0 || self.input_bins % block != 0 {
            return Err(Error::Config(format!(
                "input_bins {} must be a positive multiple of 2^depth = {block}",
                self.input_bins
            )));
        }
        Ok(())
    }

    /// Channel count at encoder level `i` (level 0 is the full-resolution
    /// block).
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_filters << level
    }

    /// Channels out of the bottleneck block.
    pub fn bottleneck_channels(&self) -> usize {
        self.base_filters << self.depth
    }
}
