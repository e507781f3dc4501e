//! Training objective: sparse depth term, photometric reconstruction with
//! SSIM, and edge-aware second-order smoothness.

use std::fmt;
use std::str::FromStr;

use listereo_tensor::{Graph, Scalar, Tensor, Var};

use crate::error::{contract, Result};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    SelfSupervised,
    Supervised,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::SelfSupervised => "self_supervised",
            TrainMode::Supervised => "supervised",
        })
    }
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "self_supervised" | "self" => Ok(Self::SelfSupervised),
            "supervised" => Ok(Self::Supervised),
            _ => Err(format!("expected self_supervised or supervised, got {s:?}")),
        }
    }
}

/// `total = alpha·depth + beta·photometric + gamma·smooth`; `lambda1` and
/// `lambda2` weight the SSIM and absolute-difference parts of the photometric term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossWeights {
    pub fn for_mode(mode: TrainMode) -> Self {
        let gamma = match mode {
            TrainMode::SelfSupervised => 0.01,
            TrainMode::Supervised => 0.001,
        };
        Self { alpha: 1.0, beta: 0.5, gamma, lambda1: 0.85, lambda2: 0.2 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.lambda1, self.lambda2];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return contract(format!("loss weights must be finite and non-negative: {self:?}"));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::for_mode(TrainMode::SelfSupervised)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub depth: f64,
    pub photometric: f64,
    pub smooth: f64,
}

impl LossReport {
    pub fn from_components(w: &LossWeights, depth: f64, photometric: f64, smooth: f64) -> Self {
        Self { total: w.alpha * depth + w.beta * photometric + w.gamma * smooth, depth, photometric, smooth }
    }
}

/// Validity mask (1 where `target > 0`) with the target's shape.
pub fn valid_mask<T: Scalar>(target: &Tensor<T>) -> Tensor<T> {
    target.map(|v| if v > T::zero() { T::one() } else { T::zero() })
}

/// Mean absolute error over valid target pixels; zero when none are valid.
pub fn sparse_depth_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: &Tensor<T>) -> Result<Var> {
    let t = g.input(target.clone());
    let d = g.sub(pred, t)?;
    let a = g.abs(d);
    Ok(g.masked_mean(a, &valid_mask(target))?)
}

/// Synthesizes the left view by sampling `right` at `x - disp`.
pub fn warp_right_to_left<T: Scalar>(g: &mut Graph<T>, right: Var, disp: Var) -> Result<Var> {
    Ok(g.sample_horizontal(right, disp)?)
}

/// Per-pixel, per-channel SSIM from 3x3 windowed statistics. Windows are
/// truncated at the border.
pub fn ssim<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let pool = |g: &mut Graph<T>, x: Var| g.avg_pool2d(x, 3, 1, 1);
    let mu_a = pool(g, a)?;
    let mu_b = pool(g, b)?;
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let e_aa = pool(g, aa)?;
    let e_bb = pool(g, bb)?;
    let e_ab = pool(g, ab)?;
    let mu_aa = g.mul(mu_a, mu_a)?;
    let mu_bb = g.mul(mu_b, mu_b)?;
    let mu_ab = g.mul(mu_a, mu_b)?;
    let var_a = g.sub(e_aa, mu_aa)?;
    let var_b = g.sub(e_bb, mu_bb)?;
    let cov = g.sub(e_ab, mu_ab)?;

    let (c1, c2) = (T::lit(SSIM_C1), T::lit(SSIM_C2));
    let l_num = g.scale(mu_ab, T::lit(2.0));
    let l_num = g.add_scalar(l_num, c1);
    let c_num = g.scale(cov, T::lit(2.0));
    let c_num = g.add_scalar(c_num, c2);
    let l_den = g.add(mu_aa, mu_bb)?;
    let l_den = g.add_scalar(l_den, c1);
    let c_den = g.add(var_a, var_b)?;
    let c_den = g.add_scalar(c_den, c2);
    let num = g.mul(l_num, c_num)?;
    let den = g.mul(l_den, c_den)?;
    Ok(g.div(num, den)?)
}

/// `mean(lambda1·clamp((1 - SSIM)/2, 0, 1)) + mean(lambda2·|a - b|)` on images in `[0, 1]`.
pub fn photometric_loss<T: Scalar>(g: &mut Graph<T>, image: Var, warped: Var, w: &LossWeights) -> Result<Var> {
    let s = ssim(g, image, warped)?;
    let dissim = g.scale(s, T::lit(-0.5));
    let dissim = g.add_scalar(dissim, T::lit(0.5));
    let dissim = g.clamp(dissim, T::zero(), T::one());
    let structural = g.mean(dissim);
    let diff = g.sub(image, warped)?;
    let diff = g.abs(diff);
    let l1 = g.mean(diff);
    let structural = g.scale(structural, T::lit(w.lambda1));
    let l1 = g.scale(l1, T::lit(w.lambda2));
    Ok(g.add(structural, l1)?)
}

/// `D(i-1) - 2·D(i) + D(i+1)` along x (`horizontal`) or y, on the interior.
fn second_diff<T: Scalar>(g: &mut Graph<T>, x: Var, horizontal: bool) -> Result<Option<Var>> {
    let s = g.shape(x);
    let (dy, dx) = if horizontal { (0, 1) } else { (1, 0) };
    if (horizontal && s.w < 3) || (!horizontal && s.h < 3) {
        return Ok(None);
    }
    let (h, w) = (s.h - 2 * dy, s.w - 2 * dx);
    let prev = g.crop(x, 0, 0, h, w)?;
    let mid = g.crop(x, dy, dx, h, w)?;
    let next = g.crop(x, 2 * dy, 2 * dx, h, w)?;
    let outer = g.add(prev, next)?;
    let mid2 = g.scale(mid, T::lit(2.0));
    Ok(Some(g.sub(outer, mid2)?))
}

/// `(1/N)·sum(|d2x D|·exp(-|d2x I|) + |d2y D|·exp(-|d2y I|))` with `N` the
/// number of pixels of `field` and the image derivative averaged over channels.
pub fn edge_aware_smoothness<T: Scalar>(g: &mut Graph<T>, image: Var, field: Var) -> Result<Var> {
    let fs = g.shape(field);
    let is = g.shape(image);
    if fs.c != 1 || (fs.n, fs.h, fs.w) != (is.n, is.h, is.w) {
        return contract(format!("smoothness field {fs} against image {is}"));
    }
    let mut terms = Vec::new();
    for horizontal in [true, false] {
        let (Some(dd), Some(di)) = (second_diff(g, field, horizontal)?, second_diff(g, image, horizontal)?) else {
            continue;
        };
        let dd = g.abs(dd);
        let di = g.abs(di);
        let di = g.mean_channels(di);
        let di = g.neg(di);
        let weight = g.exp(di);
        let weighted = g.mul(dd, weight)?;
        terms.push(g.sum(weighted));
    }
    let total = match terms.as_slice() {
        [] => {
            let z = g.input(Tensor::scalar(T::zero()));
            return Ok(z);
        }
        [a] => *a,
        [a, b] => g.add(*a, *b)?,
        _ => unreachable!(),
    };
    Ok(g.scale(total, T::one() / T::lit(fs.numel() as f64)))
}

/// Smoothness on disparity plus smoothness on depth divided by its global mean.
pub fn smoothness_loss<T: Scalar>(g: &mut Graph<T>, image: Var, disp: Var, depth: Var) -> Result<Var> {
    let on_disp = edge_aware_smoothness(g, image, disp)?;
    let m = g.mean(depth);
    let normalized = g.div_by_scalar(depth, m)?;
    let on_depth = edge_aware_smoothness(g, image, normalized)?;
    Ok(g.add(on_disp, on_depth)?)
}

/// Images in `[-1, 1]` mapped to `[0, 1]`.
pub fn to_unit_range<T: Scalar>(g: &mut Graph<T>, x: Var) -> Var {
    let h = g.scale(x, T::lit(0.5));
    g.add_scalar(h, T::lit(0.5))
}

/// Graph-side terms of the objective, before weighting.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub depth: Var,
    pub photometric: Var,
    pub smooth: Var,
}

/// Weighted objective. `left`/`right` are network images in `[-1, 1]`;
/// `depth_target` is the sparse input in self-supervised training and ground
/// truth in supervised training.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    left: Var,
    right: Var,
    disparity: Var,
    depth: Var,
    depth_target: &Tensor<T>,
    w: &LossWeights,
) -> Result<(LossTerms, LossReport)> {
    w.validate()?;
    let depth_term = sparse_depth_loss(g, depth, depth_target)?;
    let il = to_unit_range(g, left);
    let ir = to_unit_range(g, right);
    let warped = warp_right_to_left(g, ir, disparity)?;
    let photo = photometric_loss(g, il, warped, w)?;
    let smooth = smoothness_loss(g, il, disparity, depth)?;

    let mut parts = Vec::new();
    for (v, weight) in [(depth_term, w.alpha), (photo, w.beta), (smooth, w.gamma)] {
        if weight != 0.0 {
            parts.push(g.scale(v, T::lit(weight)));
        }
    }
    let total = match parts.split_first() {
        None => g.input(Tensor::scalar(T::zero())),
        Some((&first, rest)) => rest.iter().try_fold(first, |acc, &p| g.add(acc, p))?,
    };
    let value = |g: &Graph<T>, v: Var| g.value(v).item().as_f64();
    let report = LossReport::from_components(w, value(g, depth_term), value(g, photo), value(g, smooth));
    Ok((LossTerms { total, depth: depth_term, photometric: photo, smooth }, report))
}

/// Target of the depth term for the given mode.
pub fn depth_target<'a, T: Scalar>(mode: TrainMode, sparse: &'a Tensor<T>, ground_truth: Option<&'a Tensor<T>>) -> Result<&'a Tensor<T>> {
    match (mode, ground_truth) {
        (TrainMode::SelfSupervised, _) => Ok(sparse),
        (TrainMode::Supervised, Some(gt)) => Ok(gt),
        (TrainMode::Supervised, None) => contract("supervised training needs ground truth"),
    }
}
