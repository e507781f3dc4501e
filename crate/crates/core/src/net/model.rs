use listereo_tensor::{Scalar, Shape, Tensor, Var};

use super::config::{LidarBranchKind, ModelConfig, Variant};
use super::params::Builder;
use crate::dataset::StereoInputs;
use crate::error::{contract, Result};
use crate::geometry::{depth_inversion, disparity_to_depth_var, CameraRig};

/// Left-branch maps kept for the decoder.
#[derive(Clone, Copy, Debug)]
pub struct Skips {
    pub stride2: Var,
    pub stride4: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct SiameseFeatures {
    pub left: Var,
    pub right: Option<Var>,
    pub skips: Skips,
}

/// Network inputs for a batch: images in `[-1, 1]`, the depth-inverted LIDAR
/// map scaled to `[0, 1]`, and its validity mask.
#[derive(Clone, Debug)]
pub struct NetInput<T: Scalar> {
    pub left: Tensor<T>,
    pub right: Tensor<T>,
    pub lidar: Tensor<T>,
    pub lidar_mask: Tensor<T>,
    pub rig: CameraRig,
}

#[derive(Clone, Copy, Debug)]
pub struct NetOutput {
    pub left: Var,
    pub right: Var,
    pub logits: Var,
    pub disparity: Var,
    pub depth: Var,
}

/// Stacks samples into batch tensors. All samples must share size, focal
/// length and baseline.
pub fn prepare_input<T: Scalar>(samples: &[StereoInputs], depth_cap_m: f64) -> Result<NetInput<T>> {
    let Some(first) = samples.first() else {
        return contract("empty batch");
    };
    let rig = first.rig;
    let (mut left, mut right, mut lidar, mut mask) = (vec![], vec![], vec![], vec![]);
    for s in samples {
        if s.rig.fb() != rig.fb() || s.left.width != first.left.width || s.left.height != first.left.height {
            return contract("batch samples differ in size or calibration");
        }
        left.push(s.left.to_tensor());
        right.push(s.right.to_tensor());
        let shape = Shape::new(1, 1, s.sparse.height, s.sparse.width);
        let inv = depth_inversion(&s.sparse, depth_cap_m)?;
        lidar.push(Tensor::new(shape, inv.iter().map(|v| T::lit(v / depth_cap_m)).collect())?);
        mask.push(Tensor::new(shape, s.sparse.depth.iter().map(|&d| if d > 0.0 { T::one() } else { T::zero() }).collect())?);
    }
    Ok(NetInput {
        left: Tensor::stack(&left)?,
        right: Tensor::stack(&right)?,
        lidar: Tensor::stack(&lidar)?,
        lidar_mask: Tensor::stack(&mask)?,
        rig,
    })
}

fn residual_block<T: Scalar>(b: &mut Builder<T>, name: &str, x: Var, cout: usize, stride: usize) -> Result<Var> {
    let cin = b.g.shape(x).c;
    let h = b.conv_bn(&format!("{name}.a"), x, cout, 3, stride, true)?;
    let h = b.conv_bn(&format!("{name}.b"), h, cout, 3, 1, false)?;
    let shortcut = if cin != cout || stride != 1 { b.conv_bn(&format!("{name}.proj"), x, cout, 1, stride, false)? } else { x };
    let y = b.g.add(h, shortcut)?;
    Ok(b.g.leaky_relu(y))
}

/// Residual encoder to `1/feature_stride` resolution. Returns the features and
/// the stride-2 and stride-4 maps.
pub fn encoder<T: Scalar>(b: &mut Builder<T>, cfg: &ModelConfig, prefix: &str, x: Var) -> Result<(Var, Skips)> {
    let s = b.g.shape(x);
    cfg.check_input(s.h, s.w)?;
    let c = cfg.base_channels;
    let stride2 = b.conv_bn(&format!("{prefix}.stem7"), x, c, 7, 2, true)?;
    let mut h = b.conv_bn(&format!("{prefix}.stem5"), stride2, c, 5, 2, true)?;
    let mut stride4 = h;
    for stage in 0..cfg.encoder_stages() {
        let cout = cfg.stage_channels(stage);
        for block in 0..cfg.stage_blocks(stage).max(1) {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            h = residual_block(b, &format!("{prefix}.s{stage}.b{block}"), h, cout, stride)?;
        }
        if stage == 0 {
            stride4 = h;
        }
    }
    let out = b.conv(&format!("{prefix}.out"), h, cfg.feature_channels(), 3, 1, true)?;
    Ok((out, Skips { stride2, stride4 }))
}

/// Shared-weight feature extraction for both views; skips come from the left view.
pub fn siamese_extract<T: Scalar>(b: &mut Builder<T>, cfg: &ModelConfig, left: Var, right: Option<Var>) -> Result<SiameseFeatures> {
    let (fl, skips) = encoder(b, cfg, "image", left)?;
    let fr = match right {
        Some(r) => Some(encoder(b, cfg, "image", r)?.0),
        None => None,
    };
    Ok(SiameseFeatures { left: fl, right: fr, skips })
}

/// Pyramid pooling: per bin size, adaptive average pool, 1x1 conv, leaky
/// ReLU, bilinear resize back; all concatenated after the input.
pub fn psp_module<T: Scalar>(b: &mut Builder<T>, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let s = b.g.shape(x);
    let mut parts = vec![x];
    for &bin in &cfg.psp_bins {
        let p = b.g.adaptive_avg_pool2d(x, bin, bin)?;
        let p = b.conv(&format!("psp.bin{bin}"), p, cfg.psp_channels, 1, 1, true)?;
        let p = b.g.leaky_relu(p);
        parts.push(b.g.bilinear_resize(p, s.h, s.w)?);
    }
    Ok(b.g.concat_channels(&parts)?)
}

pub fn transform_layer<T: Scalar>(b: &mut Builder<T>, cfg: &ModelConfig, x: Var) -> Result<Var> {
    b.conv_bn("transform", x, cfg.feature_channels(), 1, 1, true)
}

/// LIDAR encoder with its own weights. The sparse kind uses sparsity-invariant
/// convolutions without batch norm and threads the validity mask through.
pub fn lidar_branch<T: Scalar>(b: &mut Builder<T>, cfg: &ModelConfig, x: Var, mask: &Tensor<T>) -> Result<Var> {
    match cfg.lidar_branch_kind {
        LidarBranchKind::RegularConv => Ok(encoder(b, cfg, "lidar", x)?.0),
        LidarBranchKind::SparseConv => {
            let s = b.g.shape(x);
            cfg.check_input(s.h, s.w)?;
            let c = cfg.base_channels;
            let (h, m) = b.sparse_conv("lidar.stem7", x, mask, c, 7, 2)?;
            let h = b.g.leaky_relu(h);
            let (h, m) = b.sparse_conv("lidar.stem5", h, &m, c, 5, 2)?;
            let (mut h, mut m) = (b.g.leaky_relu(h), m);
            for stage in 0..cfg.encoder_stages() {
                let cout = cfg.stage_channels(stage);
                for block in 0..cfg.stage_blocks(stage).max(1) {
                    let stride = if stage > 0 && block == 0 { 2 } else { 1 };
                    let name = format!("lidar.s{stage}.b{block}");
                    let (a, ma) = b.sparse_conv(&format!("{name}.a"), h, &m, cout, 3, stride)?;
                    let a = b.g.leaky_relu(a);
                    let (r, mr) = b.sparse_conv(&format!("{name}.b"), a, &ma, cout, 3, 1)?;
                    let shortcut = if b.g.shape(h).c != cout || stride != 1 {
                        b.sparse_conv(&format!("{name}.proj"), h, &m, cout, 1, stride)?.0
                    } else {
                        h
                    };
                    let y = b.g.add(r, shortcut)?;
                    h = b.g.leaky_relu(y);
                    m = mr;
                }
            }
            Ok(b.sparse_conv("lidar.out", h, &m, cfg.feature_channels(), 3, 1)?.0)
        }
    }
}

fn bottleneck_block<T: Scalar>(b: &mut Builder<T>, name: &str, x: Var) -> Result<Var> {
    let c = b.g.shape(x).c;
    let h = b.conv_bn(&format!("{name}.reduce"), x, c / 2, 1, 1, true)?;
    let h = b.conv_bn(&format!("{name}.mid"), h, c / 2, 3, 1, true)?;
    let h = b.conv_bn(&format!("{name}.expand"), h, c, 1, 1, false)?;
    let y = b.g.add(h, x)?;
    Ok(b.g.leaky_relu(y))
}

/// Concatenation fusion, residual blocks, upsampling decoder with left skips,
/// and the final plain convolution to `max_disparity_px + 1` channels.
pub fn fuse_and_decode<T: Scalar>(
    b: &mut Builder<T>,
    cfg: &ModelConfig,
    cost_volume: Var,
    context: Var,
    transformed: Var,
    lidar_feat: Var,
    skips: Skips,
    out_h: usize,
    out_w: usize,
) -> Result<Var> {
    let x = b.g.concat_channels(&[cost_volume, context, transformed, lidar_feat])?;
    let mut h = b.conv_bn("fuse.proj", x, cfg.fusion_channels, 3, 1, true)?;
    for i in 0..cfg.fusion_residual_blocks {
        h = bottleneck_block(b, &format!("fuse.res{i}"), h)?;
    }
    for i in 0..cfg.upsample_blocks {
        let stride = cfg.feature_stride >> i;
        let (th, tw) = (out_h / stride, out_w / stride);
        h = b.g.bilinear_resize(h, th, tw)?;
        let skip = match stride {
            4 => Some(skips.stride4),
            2 => Some(skips.stride2),
            _ => None,
        };
        if let Some(sk) = skip {
            let ss = b.g.shape(sk);
            if (ss.h, ss.w) != (th, tw) {
                return contract(format!("skip map {ss} does not match decoder resolution {th}x{tw}"));
            }
            h = b.g.concat_channels(&[h, sk])?;
        }
        h = b.conv_bn(&format!("dec.up{i}"), h, cfg.decoder_block_channels(i), 3, 1, true)?;
    }
    b.conv("head", h, cfg.output_channels(), 3, 1, true)
}

/// Expected disparity under the per-pixel softmax over disparity channels.
pub fn soft_argmax<T: Scalar>(b: &mut Builder<T>, logits: Var) -> Var {
    let p = b.g.softmax_channel(logits);
    b.g.channel_expectation(p)
}

pub fn forward<T: Scalar>(b: &mut Builder<T>, cfg: &ModelConfig, input: &NetInput<T>) -> Result<NetOutput> {
    cfg.validate()?;
    let s = input.left.shape();
    cfg.check_input(s.h, s.w)?;
    let left = b.g.input(input.left.clone());
    let right = b.g.input(input.right.clone());
    let lidar = b.g.input(input.lidar.clone());

    let feats = match cfg.variant {
        Variant::LiStereo => siamese_extract(b, cfg, left, Some(right))?,
        Variant::LiMono => siamese_extract(b, cfg, left, None)?,
    };
    let cost = match feats.right {
        Some(fr) => b.g.correlation(feats.left, fr, cfg.max_displacement())?,
        None => feats.left,
    };
    let context = psp_module(b, cfg, feats.left)?;
    let transformed = transform_layer(b, cfg, feats.left)?;
    let lidar_feat = lidar_branch(b, cfg, lidar, &input.lidar_mask)?;
    let logits = fuse_and_decode(b, cfg, cost, context, transformed, lidar_feat, feats.skips, s.h, s.w)?;
    let disparity = soft_argmax(b, logits);
    let rig = CameraRig { max_depth_m: cfg.depth_cap_m, ..input.rig };
    let depth = disparity_to_depth_var(&mut b.g, disparity, &rig);
    Ok(NetOutput { left, right, logits, disparity, depth })
}
