//! Finite-difference check of the full training objective with respect to
//! network parameters.

use listereo_tensor::gradcheck::{relative_error, GradCheckReport};
use listereo_tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{LidarBranchKind, ModelConfig, Variant};
use super::model::{forward, NetInput};
use super::params::{Builder, ParamStore};
use crate::error::Result;
use crate::geometry::CameraRig;
use crate::losses::{total_loss, LossWeights};

/// Smallest configuration that still has every structural element.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        feature_stride: 4,
        max_disparity_px: 8,
        base_channels: 4,
        encoder_blocks: vec![1],
        fusion_channels: 4,
        fusion_residual_blocks: 1,
        upsample_blocks: 3,
        decoder_channels: 4,
        psp_bins: vec![1, 2],
        psp_channels: 2,
        lidar_branch_kind: LidarBranchKind::RegularConv,
        variant: Variant::LiStereo,
        depth_cap_m: 20.0,
    }
}

/// Random `8 x 16` stereo input with a 30% dense depth target.
pub fn random_problem(seed: u64) -> Result<(NetInput<f64>, Tensor<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (8, 16);
    let img = Shape::new(1, 3, h, w);
    let one = Shape::new(1, 1, h, w);
    let left = Tensor::uniform(img, -1.0, 1.0, &mut rng)?;
    let right = Tensor::uniform(img, -1.0, 1.0, &mut rng)?;
    let depth: Vec<f64> = (0..h * w).map(|_| if rng.gen_bool(0.3) { rng.gen_range(2.0..18.0) } else { 0.0 }).collect();
    let cap = tiny_config().depth_cap_m;
    let lidar = depth.iter().map(|&d| if d > 0.0 { (cap - d) / cap } else { 0.0 }).collect();
    let mask = depth.iter().map(|&d| if d > 0.0 { 1.0 } else { 0.0 }).collect();
    let rig = CameraRig { focal_px: 16.0, baseline_m: 0.5, cx: 7.5, cy: 3.5, width: w, height: h, max_depth_m: cap };
    let input = NetInput { left, right, lidar: Tensor::new(one, lidar)?, lidar_mask: Tensor::new(one, mask)?, rig };
    Ok((input, Tensor::new(one, depth)?))
}

/// Compares analytic gradients of the total loss with central differences on
/// `count` randomly chosen parameter entries. `step` is the absolute
/// perturbation.
pub fn end_to_end_gradcheck(cfg: &ModelConfig, count: usize, step: f64, seed: u64) -> Result<GradCheckReport> {
    let (input, target) = random_problem(seed)?;
    let weights = LossWeights::default();
    let loss = |store: &mut ParamStore<f64>, with_grads: bool| -> Result<(f64, Vec<(String, Tensor<f64>)>)> {
        let mut b = Builder::new(store, true);
        let out = forward(&mut b, cfg, &input)?;
        let (terms, report) = total_loss(&mut b.g, out.left, out.right, out.disparity, out.depth, &target, &weights)?;
        let mut grads = Vec::new();
        if with_grads {
            b.g.backward(terms.total)?;
            grads = b.vars().iter().map(|(k, &v)| (k.clone(), b.g.grad(v).expect("parameter leaf"))).collect();
        }
        Ok((report.total, grads))
    };
    let mut store = ParamStore::<f64>::new(seed);
    let (_, grads) = loss(&mut store, true)?;
    let total: usize = grads.iter().map(|(_, g)| g.shape().numel()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut max_rel_err: f64 = 0.0;
    for _ in 0..count {
        let mut k = rng.gen_range(0..total);
        let (name, grad) = grads
            .iter()
            .find(|(_, g)| {
                let n = g.shape().numel();
                if k < n {
                    true
                } else {
                    k -= n;
                    false
                }
            })
            .expect("index within total");
        let eval_at = |delta: f64| -> Result<f64> {
            let mut s = store.clone();
            let p = s.params.get_mut(name).expect("parameter exists");
            let mut v = p.to_vec();
            v[k] += delta;
            *p = Tensor::new(p.shape(), v)?;
            Ok(loss(&mut s, false)?.0)
        };
        let numeric = (eval_at(step)? - eval_at(-step)?) / (2.0 * step);
        max_rel_err = max_rel_err.max(relative_error(grad.data()[k], numeric));
    }
    Ok(GradCheckReport { name: "end_to_end_total_loss".into(), max_rel_err, checked: count })
}
