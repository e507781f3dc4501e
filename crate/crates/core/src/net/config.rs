use std::fmt;
use std::str::FromStr;

use crate::error::{contract, Result};
use crate::geometry::DEFAULT_MAX_DEPTH_M;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LidarBranchKind {
    RegularConv,
    SparseConv,
}

/// `LiMono` drops the right image: no correlation, and left features take the
/// place of the cost volume in the fusion stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    LiStereo,
    LiMono,
}

impl fmt::Display for LidarBranchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LidarBranchKind::RegularConv => "regular_conv",
            LidarBranchKind::SparseConv => "sparse_conv",
        })
    }
}

impl FromStr for LidarBranchKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "regular_conv" => Ok(Self::RegularConv),
            "sparse_conv" => Ok(Self::SparseConv),
            _ => Err(format!("expected regular_conv or sparse_conv, got {s:?}")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::LiStereo => "listereo",
            Variant::LiMono => "limono",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "listereo" => Ok(Self::LiStereo),
            "limono" => Ok(Self::LiMono),
            _ => Err(format!("expected listereo or limono, got {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Downsampling factor of the feature maps; a power of two, at least 4.
    pub feature_stride: usize,
    pub max_disparity_px: usize,
    /// Channels of the stride-2 stem; later encoder stages double it.
    pub base_channels: usize,
    /// Residual blocks per encoder stage. Stage 0 runs at stride 4, each
    /// further stage halves the resolution. The last entry repeats if the
    /// stride needs more stages than listed.
    pub encoder_blocks: Vec<usize>,
    pub fusion_channels: usize,
    pub fusion_residual_blocks: usize,
    pub upsample_blocks: usize,
    /// Width of the first decoder block; each later block halves it (minimum 4).
    pub decoder_channels: usize,
    pub psp_bins: Vec<usize>,
    pub psp_channels: usize,
    pub lidar_branch_kind: LidarBranchKind,
    pub variant: Variant,
    /// Depth-inversion cap; also the depth assigned to zero disparity.
    pub depth_cap_m: f64,
}

/// Desk inversion cap. Kept close to the desk scene range so that the
/// normalized LIDAR input spans a useful part of `[0, 1]`.
pub const DESK_DEPTH_CAP_M: f64 = 10.0;

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Desk scale: stride 4, 32 px maximum disparity, 16 base channels.
    pub fn desk() -> Self {
        Self {
            feature_stride: 4,
            max_disparity_px: 32,
            base_channels: 16,
            encoder_blocks: vec![2],
            fusion_channels: 32,
            fusion_residual_blocks: 6,
            upsample_blocks: 3,
            decoder_channels: 32,
            psp_bins: vec![1, 2, 3, 6],
            psp_channels: 8,
            lidar_branch_kind: LidarBranchKind::RegularConv,
            variant: Variant::LiStereo,
            depth_cap_m: DESK_DEPTH_CAP_M,
        }
    }

    /// The full-size structure: stride 8, 192 px disparity, 193 output
    /// channels, six fusion blocks and four upsampling blocks. Channel widths
    /// are kept small; only the structure is full size.
    pub fn kitti_scale() -> Self {
        Self {
            feature_stride: 8,
            max_disparity_px: 192,
            base_channels: 8,
            encoder_blocks: vec![1, 1],
            fusion_channels: 16,
            fusion_residual_blocks: 6,
            upsample_blocks: 4,
            decoder_channels: 16,
            psp_bins: vec![1, 2, 3, 6],
            psp_channels: 4,
            lidar_branch_kind: LidarBranchKind::RegularConv,
            variant: Variant::LiStereo,
            depth_cap_m: DEFAULT_MAX_DEPTH_M,
        }
    }

    /// Search range of the correlation layer in feature pixels.
    pub fn max_displacement(&self) -> usize {
        self.max_disparity_px / self.feature_stride
    }

    pub fn output_channels(&self) -> usize {
        self.max_disparity_px + 1
    }

    /// Encoder stages needed to go from stride 4 down to `feature_stride`.
    pub fn encoder_stages(&self) -> usize {
        self.feature_stride.trailing_zeros() as usize - 1
    }

    pub fn stage_blocks(&self, stage: usize) -> usize {
        let b = &self.encoder_blocks;
        b.get(stage).or(b.last()).copied().unwrap_or(0)
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    pub fn feature_channels(&self) -> usize {
        self.stage_channels(self.encoder_stages() - 1)
    }

    pub fn decoder_block_channels(&self, block: usize) -> usize {
        (self.decoder_channels >> block).max(4)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.feature_stride;
        if !s.is_power_of_two() || s < 4 {
            return contract(format!("feature_stride {s} must be a power of two >= 4"));
        }
        if self.max_disparity_px == 0 || self.max_disparity_px % s != 0 {
            return contract(format!("max_disparity_px {} must be a positive multiple of feature_stride {s}", self.max_disparity_px));
        }
        let needed = s.trailing_zeros() as usize + 1;
        if self.upsample_blocks != needed {
            return contract(format!("upsample_blocks {} cannot reach full resolution from stride {s} (need {needed})", self.upsample_blocks));
        }
        if self.base_channels == 0 || self.fusion_channels < 2 || self.decoder_channels == 0 || self.psp_channels == 0 {
            return contract("channel widths must be positive (fusion_channels >= 2)");
        }
        if self.encoder_blocks.is_empty() {
            return contract("encoder_blocks needs at least one stage");
        }
        if self.psp_bins.iter().any(|&b| b == 0) {
            return contract("psp bins must be >= 1");
        }
        if !(self.depth_cap_m > 0.0) {
            return contract(format!("depth cap {} must be positive", self.depth_cap_m));
        }
        Ok(())
    }

    /// Input sizes must be multiples of the feature stride.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let s = self.feature_stride;
        if height % s != 0 || width % s != 0 || height == 0 || width == 0 {
            return contract(format!("input {height}x{width} is not divisible by feature_stride {s}"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kitti_scale_constants() {
        let c = ModelConfig::kitti_scale();
        c.validate().unwrap();
        assert_eq!(c.max_displacement(), 24);
        assert_eq!(c.output_channels(), 193);
        assert_eq!(c.fusion_residual_blocks, 6);
        assert_eq!(c.upsample_blocks, 4);
    }

    #[test]
    fn desk_constants() {
        let c = ModelConfig::desk();
        c.validate().unwrap();
        assert_eq!(c.max_displacement(), 8);
        assert_eq!(c.output_channels(), 33);
        assert_eq!(c.encoder_stages(), 1);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            ModelConfig { max_disparity_px: 30, ..ModelConfig::desk() },
            ModelConfig { upsample_blocks: 4, ..ModelConfig::desk() },
            ModelConfig { feature_stride: 6, ..ModelConfig::desk() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(ModelConfig::desk().check_input(64, 126).is_err());
    }

    #[test]
    fn enum_names_round_trip() {
        for k in [LidarBranchKind::RegularConv, LidarBranchKind::SparseConv] {
            assert_eq!(k.to_string().parse::<LidarBranchKind>().unwrap(), k);
        }
        for v in [Variant::LiStereo, Variant::LiMono] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
    }
}
