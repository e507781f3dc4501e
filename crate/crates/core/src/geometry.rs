//! Rectified stereo geometry: disparity/depth conversion, LIDAR projection,
//! sparsity subsampling and the depth-inversion input transform.

use listereo_tensor::{Graph, Scalar, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};

/// Default cap for zero or near-zero disparity, and default depth-inversion cap.
pub const DEFAULT_MAX_DEPTH_M: f64 = 100.0;

/// Calibration of a rectified stereo pair; the right camera sits `baseline_m` along +x.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraRig {
    pub focal_px: f64,
    pub baseline_m: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub max_depth_m: f64,
}

impl Default for CameraRig {
    /// Desk scale: 64 x 128 pixels, f = 100 px, B = 0.5 m.
    fn default() -> Self {
        Self {
            focal_px: 100.0,
            baseline_m: 0.5,
            cx: 63.5,
            cy: 31.5,
            width: 128,
            height: 64,
            max_depth_m: DEFAULT_MAX_DEPTH_M,
        }
    }
}

impl CameraRig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.focal_px > 0.0
            && self.baseline_m > 0.0
            && self.width >= 1
            && self.height >= 1
            && self.max_depth_m > 0.0
            && self.cx.is_finite()
            && self.cy.is_finite();
        if !ok {
            return contract(format!("invalid camera rig {self:?}"));
        }
        Ok(())
    }

    /// `f * B`, the disparity-depth product in px·m.
    pub fn fb(&self) -> f64 {
        self.focal_px * self.baseline_m
    }

    /// Disparities below this map to `max_depth_m`.
    pub fn min_disparity(&self) -> f64 {
        self.fb() / self.max_depth_m
    }

    pub fn depth_from_disparity(&self, d: f64) -> f64 {
        if d < self.min_disparity() {
            self.max_depth_m
        } else {
            self.fb() / d
        }
    }

    /// Same rig viewing the window whose top-left corner is `(x0, y0)`.
    pub fn cropped(&self, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Self { cx: self.cx - x0 as f64, cy: self.cy - y0 as f64, width, height, ..*self }
    }
}

/// Per-pixel depth in metres; a pixel is valid iff its depth is > 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
}

impl DepthMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, depth: vec![0.0; width * height] }
    }

    /// Builds a map, forcing non-positive or non-finite entries to the invalid value 0.
    pub fn new(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        if depth.len() != width * height {
            return contract(format!("{} depth values for a {width}x{height} map", depth.len()));
        }
        let depth = depth.into_iter().map(|d| if d.is_finite() && d > 0.0 { d } else { 0.0 }).collect();
        Ok(Self { width, height, depth })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.depth[i] > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d > 0.0).count()
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.depth.iter().map(|&d| d > 0.0).collect()
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        let depth = (y0..y0 + height)
            .flat_map(|y| self.depth[y * self.width + x0..][..width].iter().copied())
            .collect();
        Self { width, height, depth }
    }
}

/// Per-pixel disparity in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap {
    pub width: usize,
    pub height: usize,
    pub disparity: Vec<f64>,
}

impl DisparityMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.disparity[y * self.width + x]
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        let disparity = (y0..y0 + height)
            .flat_map(|y| self.disparity[y * self.width + x0..][..width].iter().copied())
            .collect();
        Self { width, height, disparity }
    }
}

/// `depth = f·B / disparity`; disparities below `f·B / max_depth` (including 0)
/// become `max_depth`. Every output pixel is valid.
pub fn disparity_to_depth(disp: &DisparityMap, rig: &CameraRig) -> DepthMap {
    let depth = disp.disparity.iter().map(|&d| rig.depth_from_disparity(d)).collect();
    DepthMap { width: disp.width, height: disp.height, depth }
}

/// `disparity = f·B / depth` on valid pixels, 0 elsewhere.
pub fn depth_to_disparity(depth: &DepthMap, rig: &CameraRig) -> DisparityMap {
    let disparity = depth.depth.iter().map(|&z| if z > 0.0 { rig.fb() / z } else { 0.0 }).collect();
    DisparityMap { width: depth.width, height: depth.height, disparity }
}

/// Differentiable disparity-to-depth conversion with the same cap rule.
pub fn disparity_to_depth_var<T: Scalar>(g: &mut Graph<T>, disp: Var, rig: &CameraRig) -> Var {
    let floored = g.clamp_min(disp, T::lit(rig.min_disparity()));
    g.recip_scaled(floored, T::lit(rig.fb()))
}

/// Pinhole projection of left-camera points; nearest depth wins on collisions.
pub fn project_lidar(points: &[[f64; 3]], rig: &CameraRig) -> DepthMap {
    let mut map = DepthMap::empty(rig.width, rig.height);
    for &[x, y, z] in points {
        if !(z > 0.0) || !x.is_finite() || !y.is_finite() {
            continue;
        }
        let u = (rig.focal_px * x / z + rig.cx).round();
        let v = (rig.focal_px * y / z + rig.cy).round();
        if u < 0.0 || v < 0.0 || u >= rig.width as f64 || v >= rig.height as f64 {
            continue;
        }
        let i = v as usize * rig.width + u as usize;
        if map.depth[i] == 0.0 || z < map.depth[i] {
            map.depth[i] = z;
        }
    }
    map
}

/// Keeps `round(level * V)` of the `V` valid pixels, chosen uniformly without
/// replacement; deterministic for a given seed.
pub fn subsample_depth(map: &DepthMap, level_of_sparsity: f64, seed: u64) -> Result<DepthMap> {
    if !(level_of_sparsity > 0.0 && level_of_sparsity <= 1.0) {
        return contract(format!("level of sparsity {level_of_sparsity} outside (0, 1]"));
    }
    let valid: Vec<usize> = (0..map.depth.len()).filter(|&i| map.is_valid(i)).collect();
    let keep = (level_of_sparsity * valid.len() as f64).round() as usize;
    if keep == valid.len() {
        return Ok(map.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DepthMap::empty(map.width, map.height);
    for k in rand::seq::index::sample(&mut rng, valid.len(), keep) {
        let i = valid[k];
        out.depth[i] = map.depth[i];
    }
    Ok(out)
}

/// `cap - depth` on valid pixels, 0 on invalid ones.
pub fn depth_inversion(map: &DepthMap, cap_m: f64) -> Result<Vec<f64>> {
    map.depth
        .iter()
        .map(|&d| {
            if d > cap_m {
                contract(format!("valid depth {d} m exceeds inversion cap {cap_m} m"))
            } else if d > 0.0 {
                Ok(cap_m - d)
            } else {
                Ok(0.0)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rig(f: f64, b: f64) -> CameraRig {
        CameraRig { focal_px: f, baseline_m: b, ..CameraRig::default() }
    }

    fn disp1(v: f64) -> DisparityMap {
        DisparityMap { width: 1, height: 1, disparity: vec![v] }
    }

    #[test]
    fn disparity_to_depth_examples() {
        assert_eq!(disparity_to_depth(&disp1(50.0), &rig(100.0, 0.5)).depth[0], 1.0);
        assert_eq!(disparity_to_depth(&disp1(0.0), &rig(100.0, 0.5)).depth[0], 100.0);
        let kitti = disparity_to_depth(&disp1(192.0), &rig(721.0, 0.54)).depth[0];
        assert!((kitti - 2.0278125).abs() < 1e-9, "{kitti}");
    }

    #[test]
    fn depth_to_disparity_examples() {
        let r = rig(100.0, 0.5);
        let d = DepthMap::new(2, 1, vec![2.0, 0.0]).unwrap();
        assert_eq!(depth_to_disparity(&d, &r).disparity, vec![25.0, 0.0]);
    }

    #[test]
    fn round_trip_above_cap_threshold() {
        let r = rig(100.0, 0.5);
        let disp = DisparityMap { width: 4, height: 1, disparity: vec![0.6, 3.3, 17.25, 31.9] };
        let back = depth_to_disparity(&disparity_to_depth(&disp, &r), &r);
        for (a, b) in disp.disparity.iter().zip(&back.disparity) {
            assert!((a - b).abs() <= 1e-9 * a);
        }
    }

    #[test]
    fn projection_rules() {
        let r = CameraRig::default();
        let m = project_lidar(&[[0.0, 0.0, 2.0]], &r);
        assert_eq!(m.get(r.cx.round() as usize, r.cy.round() as usize), 2.0);
        assert_eq!(m.valid_count(), 1);
        assert_eq!(project_lidar(&[[0.0, 0.0, -1.0]], &r).valid_count(), 0);
        let m = project_lidar(&[[0.1, 0.0, 5.0], [0.06, 0.0, 3.0]], &r);
        assert_eq!(m.valid_count(), 1);
        assert_eq!(m.get(66, 32), 3.0);
        assert_eq!(project_lidar(&[[100.0, 0.0, 1.0]], &r).valid_count(), 0);
    }

    #[test]
    fn projection_reconstructs_depth() {
        let r = CameraRig::default();
        let pts: Vec<[f64; 3]> = (0..50).map(|i| [i as f64 * 0.03 - 0.7, (i % 7) as f64 * 0.05 - 0.15, 1.5 + i as f64 * 0.17]).collect();
        let m = project_lidar(&pts, &r);
        let mut nearest = std::collections::HashMap::new();
        for p in &pts {
            let u = (r.focal_px * p[0] / p[2] + r.cx).round() as usize;
            let v = (r.focal_px * p[1] / p[2] + r.cy).round() as usize;
            let e = nearest.entry((u, v)).or_insert(f64::INFINITY);
            *e = p[2].min(*e);
        }
        assert_eq!(m.valid_count(), nearest.len());
        for ((u, v), z) in nearest {
            assert_eq!(m.get(u, v), z);
        }
    }

    #[test]
    fn subsample_counts_and_determinism() {
        let full = DepthMap::new(50, 20, (0..1000).map(|i| 1.0 + i as f64 * 0.01).collect()).unwrap();
        assert_eq!(subsample_depth(&full, 1.0, 3).unwrap(), full);
        let half = subsample_depth(&full, 0.5, 3).unwrap();
        assert_eq!(half.valid_count(), 500);
        assert_eq!(half, subsample_depth(&full, 0.5, 3).unwrap());
        assert_ne!(half, subsample_depth(&full, 0.5, 4).unwrap());
        for i in 0..1000 {
            assert!(half.depth[i] == 0.0 || half.depth[i] == full.depth[i]);
        }
        assert!(subsample_depth(&full, 0.0, 1).is_err());
        assert!(subsample_depth(&full, 1.5, 1).is_err());
    }

    #[test]
    fn nested_subsampling_count() {
        let full = DepthMap::new(40, 10, (0..400).map(|i| if i % 3 == 0 { 2.0 } else { 0.0 }).collect()).unwrap();
        let v = full.valid_count();
        let a = subsample_depth(&full, 0.37, 1).unwrap();
        let b = subsample_depth(&a, 0.61, 2).unwrap();
        let want = (0.61 * (0.37 * v as f64).round()).round() as usize;
        assert_eq!(b.valid_count(), want);
    }

    #[test]
    fn inversion_examples() {
        let m = DepthMap::new(3, 1, vec![20.0, 0.0, 99.0]).unwrap();
        assert_eq!(depth_inversion(&m, 100.0).unwrap(), vec![80.0, 0.0, 1.0]);
        assert!(depth_inversion(&m, 50.0).is_err());
    }

    #[test]
    fn depth_var_matches_scalar_rule() {
        let r = CameraRig::default();
        let mut g = Graph::<f64>::new();
        let d = g.input(listereo_tensor::Tensor::new(listereo_tensor::Shape::new(1, 1, 1, 3), vec![0.0, 0.25, 25.0]).unwrap());
        let z = disparity_to_depth_var(&mut g, d, &r);
        assert_eq!(g.value(z).data(), &[100.0, 100.0, 2.0]);
    }
}
