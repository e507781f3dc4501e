//! Procedural rectified stereo scenes: textured slanted planes and boxes,
//! ray cast from both cameras, with exact ground truth and simulated LIDAR.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::geometry::{CameraRig, DepthMap, DisparityMap};
use crate::image::{Mask, RgbImage};

/// Depth margin by which another surface must win the right-view depth test
/// for a left pixel to count as occluded.
pub const OCCLUSION_EPS_M: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    /// Slanted rectangular patches in front of the background plane.
    pub num_planes: usize,
    pub num_boxes: usize,
    pub depth_near_m: f64,
    pub depth_far_m: f64,
    /// Maximum tilt of any plane away from fronto-parallel.
    pub max_slant_deg: f64,
    pub texture_octaves: usize,
    /// Amplitude of the noise around each surface's base colour; 0 gives flat surfaces.
    pub texture_contrast: f64,
    /// Approximate image-space period of the coarsest noise octave.
    pub texture_period_px: f64,
    pub rig: CameraRig,
    pub lidar_beams: usize,
    pub lidar_azimuth_step: usize,
    /// Fraction of image rows, counted from the bottom, that the beams span.
    /// Rows above receive no returns, as with a roof-mounted scanner.
    pub lidar_coverage: f64,
    /// Probability that a surface returns nothing, as dark or specular
    /// materials do. Drawn once per surface.
    pub lidar_dropout: f64,
}

impl SceneSpec {
    /// Desk-scale defaults: 64 x 128 images with disparities in about [8, 31] px.
    pub fn desk(seed: u64) -> Self {
        Self {
            seed,
            num_planes: 2,
            num_boxes: 1,
            depth_near_m: 1.6,
            depth_far_m: 6.0,
            max_slant_deg: 40.0,
            texture_octaves: 2,
            texture_contrast: 1.2,
            texture_period_px: 10.0,
            rig: CameraRig::default(),
            lidar_beams: 16,
            lidar_azimuth_step: 2,
            lidar_coverage: 0.6,
            lidar_dropout: 0.15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        if !(self.depth_near_m > 0.0 && self.depth_near_m < self.depth_far_m && self.depth_far_m < self.rig.max_depth_m) {
            return contract(format!(
                "depth range [{}, {}] must be non-empty and inside (0, {})",
                self.depth_near_m, self.depth_far_m, self.rig.max_depth_m
            ));
        }
        if !(0.0..90.0).contains(&self.max_slant_deg) {
            return contract(format!("slant {} deg outside [0, 90)", self.max_slant_deg));
        }
        if !(0.0..1.0).contains(&self.lidar_dropout) {
            return contract(format!("lidar dropout {} outside [0, 1)", self.lidar_dropout));
        }
        if !(self.lidar_coverage > 0.0 && self.lidar_coverage <= 1.0) {
            return contract(format!("lidar coverage {} outside (0, 1]", self.lidar_coverage));
        }
        let rows = lidar_rows(self.rig.height, self.lidar_coverage);
        if self.lidar_beams == 0 || self.lidar_beams > rows || self.lidar_azimuth_step == 0 {
            return contract(format!(
                "lidar needs 1..={rows} beams and a positive azimuth step, got {} / {}",
                self.lidar_beams, self.lidar_azimuth_step
            ));
        }
        if self.texture_octaves == 0 || !(self.texture_period_px > 0.0) || !(self.texture_contrast >= 0.0) {
            return contract("texture needs at least one octave, a positive period and non-negative contrast");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub left: RgbImage,
    pub right: RgbImage,
    pub gt_depth: DepthMap,
    pub gt_disparity: DisparityMap,
    pub sparse_depth: DepthMap,
    /// Left pixels not visible from the right camera.
    pub occlusion: Mask,
    pub rig: CameraRig,
    pub seed: u64,
}

type V3 = [f64; 3];

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn along(o: V3, d: V3, t: f64) -> V3 {
    [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]
}

#[derive(Clone, Debug)]
enum Shape {
    /// Unbounded plane `n·X = k`.
    Background { n: V3, k: f64 },
    Patch { c: V3, n: V3, e1: V3, e2: V3, h1: f64, h2: f64 },
    Cuboid { lo: V3, hi: V3 },
}

impl Shape {
    /// Smallest positive ray parameter at which the ray hits the shape, and
    /// the face hit (always 0 for planar shapes).
    fn hit(&self, o: V3, d: V3) -> Option<(f64, u8)> {
        match *self {
            Shape::Background { n, k } => {
                let den = dot(n, d);
                (den.abs() > 1e-12).then(|| (k - dot(n, o)) / den).filter(|&t| t > 0.0).map(|t| (t, 0))
            }
            Shape::Patch { c, n, e1, e2, h1, h2 } => {
                let den = dot(n, d);
                if den.abs() < 1e-12 {
                    return None;
                }
                let t = dot(n, sub(c, o)) / den;
                let r = sub(along(o, d, t), c);
                (t > 0.0 && dot(r, e1).abs() <= h1 && dot(r, e2).abs() <= h2).then_some((t, 0))
            }
            Shape::Cuboid { lo, hi } => {
                let (mut t0, mut t1, mut face) = (f64::NEG_INFINITY, f64::INFINITY, 0u8);
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if o[a] < lo[a] || o[a] > hi[a] {
                            return None;
                        }
                        continue;
                    }
                    let (mut ta, mut tb) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
                    let mut side = 0;
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                        side = 1;
                    }
                    if ta > t0 {
                        t0 = ta;
                        face = 2 * a as u8 + side;
                    }
                    t1 = t1.min(tb);
                }
                (t0 <= t1 && t0 > 0.0).then_some((t0, face))
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Surface {
    shape: Shape,
    tint: V3,
    /// Noise lattice cells per metre.
    freq: f64,
    /// Extra factor on the z frequency. Box side faces are seen at grazing
    /// angles, so their texture is stretched along the viewing axis.
    z_squash: f64,
    noise_seed: u64,
}

struct Scene {
    surfaces: Vec<Surface>,
    octaves: usize,
    contrast: f64,
}

impl Scene {
    /// Nearest hit as `((surface, face), t)`.
    fn cast(&self, o: V3, d: V3) -> Option<((usize, u8), f64)> {
        self.surfaces
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.shape.hit(o, d).map(|(t, f)| ((i, f), t)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    fn colour(&self, surface: usize, p: V3) -> [f64; 3] {
        let s = &self.surfaces[surface];
        let n = fractal_noise([p[0] * s.freq, p[1] * s.freq, p[2] * s.freq * s.z_squash], self.octaves, s.noise_seed);
        let v = self.contrast * (n - 0.5);
        s.tint.map(|t| (t + v).clamp(0.0, 1.0))
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let h = splitmix(seed ^ splitmix(ix as u64 ^ splitmix(iy as u64 ^ splitmix(iz as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(p: V3, seed: u64) -> f64 {
    let f = p.map(f64::floor);
    let i = f.map(|v| v as i64);
    let w = [fade(p[0] - f[0]), fade(p[1] - f[1]), fade(p[2] - f[2])];
    let mut acc = 0.0;
    for corner in 0..8 {
        let b = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let mut weight = 1.0;
        for a in 0..3 {
            weight *= if b[a] == 1 { w[a] } else { 1.0 - w[a] };
        }
        acc += weight * lattice(i[0] + b[0] as i64, i[1] + b[1] as i64, i[2] + b[2] as i64, seed);
    }
    acc
}

/// Octave sum with halving amplitude, normalized back to `[0, 1]`.
fn fractal_noise(p: V3, octaves: usize, seed: u64) -> f64 {
    let (mut acc, mut norm, mut amp, mut freq) = (0.0, 0.0, 1.0, 1.0);
    for o in 0..octaves {
        acc += amp * value_noise(p.map(|v| v * freq), seed.wrapping_add(o as u64));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    acc / norm
}

fn rotate(v: V3, yaw: f64, pitch: f64) -> V3 {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let v = [cy * v[0] + sy * v[2], v[1], -sy * v[0] + cy * v[2]];
    [v[0], cp * v[1] - sp * v[2], sp * v[1] + cp * v[2]]
}

fn build_scene(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Scene {
    let rig = &spec.rig;
    let (near, far) = (spec.depth_near_m, spec.depth_far_m);
    let slant = spec.max_slant_deg.to_radians();
    // Texture frequency placing one lattice cell near `texture_period_px` at depth z.
    let freq_at = |z: f64| rig.focal_px / (spec.texture_period_px * z);
    let tint = |rng: &mut ChaCha8Rng| [0; 3].map(|_| rng.gen_range(0.25..0.75));
    let mut surfaces = Vec::new();

    // Background: inverse depth is affine in normalized image coordinates, so
    // the range check at the corners of the area seen by either camera is exact.
    let margin = rig.fb() / near;
    let us = [-rig.cx - margin, rig.width as f64 - 1.0 - rig.cx + margin].map(|x| x / rig.focal_px);
    let vs = [-rig.cy, rig.height as f64 - 1.0 - rig.cy].map(|y| y / rig.focal_px);
    let z0 = 1.0 / rng.gen_range(1.0 / far..1.0 / (0.6 * far + 0.4 * near));
    let (mut p, mut q) = (rng.gen_range(-1.0..1.0) * slant.tan() / z0, rng.gen_range(-1.0..1.0) * slant.tan() / z0);
    let r = 1.0 / z0;
    loop {
        let inv: Vec<f64> = us.iter().flat_map(|&u| vs.iter().map(move |&v| p * u + q * v + r)).collect();
        if inv.iter().all(|&i| i >= 1.0 / far && i <= 1.0 / near) || (p == 0.0 && q == 0.0) {
            break;
        }
        p *= 0.5;
        q *= 0.5;
        if p.abs() < 1e-9 && q.abs() < 1e-9 {
            p = 0.0;
            q = 0.0;
        }
    }
    // 1/z = p·u + q·v + r  <=>  p·X + q·Y + r·Z = 1
    surfaces.push(Surface {
        shape: Shape::Background { n: [p, q, r], k: 1.0 },
        tint: tint(rng),
        freq: freq_at(z0),
        z_squash: 1.0,
        noise_seed: rng.gen(),
    });

    let in_range = |zs: &[f64]| zs.iter().all(|&z| z >= near && z <= far);
    let centre = |rng: &mut ChaCha8Rng, z: f64| {
        let x = rng.gen_range(0.15..0.85) * rig.width as f64;
        let y = rng.gen_range(0.2..0.8) * rig.height as f64;
        [(x - rig.cx) / rig.focal_px * z, (y - rig.cy) / rig.focal_px * z, z]
    };
    let object_depth = |rng: &mut ChaCha8Rng| 1.0 / rng.gen_range(1.0 / (0.7 * z0.min(far)) ..1.0 / near);

    for _ in 0..spec.num_planes {
        for _attempt in 0..32 {
            let z = object_depth(rng);
            let c = centre(rng, z);
            let (yaw, pitch) = (rng.gen_range(-slant..=slant), rng.gen_range(-slant..=slant));
            let (n, e1, e2) = (rotate([0.0, 0.0, -1.0], yaw, pitch), rotate([1.0, 0.0, 0.0], yaw, pitch), rotate([0.0, 1.0, 0.0], yaw, pitch));
            let h1 = rng.gen_range(6.0..18.0) * z / rig.focal_px;
            let h2 = rng.gen_range(5.0..14.0) * z / rig.focal_px;
            let corners: Vec<f64> = [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)]
                .iter()
                .map(|&(a, b)| c[2] + a * h1 * e1[2] + b * h2 * e2[2])
                .collect();
            if in_range(&corners) {
                surfaces.push(Surface {
                    shape: Shape::Patch { c, n, e1, e2, h1, h2 },
                    tint: tint(rng),
                    freq: freq_at(z),
                    z_squash: 1.0,
                    noise_seed: rng.gen(),
                });
                break;
            }
        }
    }

    for _ in 0..spec.num_boxes {
        for _attempt in 0..32 {
            let z = object_depth(rng);
            let c = centre(rng, z);
            let half = [rng.gen_range(5.0..15.0) * z / rig.focal_px, rng.gen_range(5.0..12.0) * z / rig.focal_px];
            let depth = rng.gen_range(0.1..0.5) * z;
            let lo = [c[0] - half[0], c[1] - half[1], z];
            let hi = [c[0] + half[0], c[1] + half[1], z + depth];
            if in_range(&[lo[2], hi[2]]) {
                surfaces.push(Surface {
                    shape: Shape::Cuboid { lo, hi },
                    tint: tint(rng),
                    freq: freq_at(z),
                    z_squash: 0.1,
                    noise_seed: rng.gen(),
                });
                break;
            }
        }
    }

    Scene { surfaces, octaves: spec.texture_octaves, contrast: spec.texture_contrast }
}

struct View {
    image: RgbImage,
    depth: Vec<f64>,
    surface: Vec<Option<(usize, u8)>>,
}

fn render(scene: &Scene, rig: &CameraRig, origin: V3, fallback_depth: f64) -> View {
    let mut depth = vec![0.0; rig.width * rig.height];
    let mut surface = vec![None; rig.width * rig.height];
    let image = RgbImage::from_fn(rig.width, rig.height, |x, y| {
        let d = [(x as f64 - rig.cx) / rig.focal_px, (y as f64 - rig.cy) / rig.focal_px, 1.0];
        match scene.cast(origin, d) {
            Some((s, t)) => {
                depth[y * rig.width + x] = t;
                surface[y * rig.width + x] = Some(s);
                scene.colour(s.0, along(origin, d, t))
            }
            None => {
                depth[y * rig.width + x] = fallback_depth;
                [0.0; 3]
            }
        }
    });
    View { image, depth, surface }
}

/// Renders one scene. Deterministic in `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<SceneSample> {
    spec.validate()?;
    let rig = spec.rig;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scene = build_scene(spec, &mut rng);
    let left = render(&scene, &rig, [0.0; 3], spec.depth_far_m);
    let right_origin = [rig.baseline_m, 0.0, 0.0];
    let right = render(&scene, &rig, right_origin, spec.depth_far_m);

    let gt_depth = DepthMap::new(rig.width, rig.height, left.depth.clone())?;
    let gt_disparity = DisparityMap {
        width: rig.width,
        height: rig.height,
        disparity: left.depth.iter().map(|&z| rig.fb() / z).collect(),
    };

    // A left pixel is occluded when its right-view correspondence falls out of
    // frame, or when at a right pixel used to sample it the surface it lies on
    // loses the depth test (or is missed entirely) against another surface.
    let mut occluded = vec![false; rig.width * rig.height];
    for y in 0..rig.height {
        let ny = (y as f64 - rig.cy) / rig.focal_px;
        for x in 0..rig.width {
            let i = y * rig.width + x;
            let xr = x as f64 - gt_disparity.disparity[i];
            occluded[i] = match left.surface[i] {
                _ if xr < 0.0 => true,
                None => false,
                Some((s, face)) => {
                    let x0 = xr.floor() as usize;
                    let taps = if xr > x0 as f64 && x0 + 1 < rig.width { x0..x0 + 2 } else { x0..x0 + 1 };
                    taps.into_iter().any(|xt| {
                        let d = [(xt as f64 - rig.cx) / rig.focal_px, ny, 1.0];
                        match scene.surfaces[s].shape.hit(right_origin, d) {
                            Some((t, f)) => f != face || right.depth[y * rig.width + xt] < t - OCCLUSION_EPS_M,
                            None => true,
                        }
                    })
                }
            };
        }
    }

    let mut sparse_depth = simulate_lidar(&gt_depth, spec, &mut rng)?;
    let silent: Vec<bool> = (0..scene.surfaces.len()).map(|_| rng.gen_bool(spec.lidar_dropout)).collect();
    for (d, s) in sparse_depth.depth.iter_mut().zip(&left.surface) {
        if s.is_some_and(|(i, _)| silent[i]) {
            *d = 0.0;
        }
    }
    Ok(SceneSample {
        left: left.image,
        right: right.image,
        gt_depth,
        gt_disparity,
        sparse_depth,
        occlusion: Mask::new(rig.width, rig.height, occluded)?,
        rig,
        seed: spec.seed,
    })
}

/// Rows spanned by the beams: the bottom `coverage` of `height`, at least one.
pub fn lidar_rows(height: usize, coverage: f64) -> usize {
    ((height as f64 * coverage).round() as usize).clamp(1, height)
}

/// Samples `lidar_beams` evenly spaced rows within the covered bottom band,
/// shifted by one shared sub-pixel jitter, and every `lidar_azimuth_step`-th
/// column from a random phase.
pub fn simulate_lidar<R: Rng>(gt_depth: &DepthMap, spec: &SceneSpec, rng: &mut R) -> Result<DepthMap> {
    let (w, h) = (gt_depth.width, gt_depth.height);
    let rows = lidar_rows(h, spec.lidar_coverage);
    if spec.lidar_beams == 0 || spec.lidar_beams > rows || spec.lidar_azimuth_step == 0 {
        return contract(format!("{} beams / step {} on {rows} rows", spec.lidar_beams, spec.lidar_azimuth_step));
    }
    let top = (h - rows) as f64;
    let jitter: f64 = rng.gen_range(-0.5..0.5);
    let phase = rng.gen_range(0..spec.lidar_azimuth_step);
    let mut out = DepthMap::empty(w, h);
    for beam in 0..spec.lidar_beams {
        let row = (top + (beam as f64 + 0.5) * rows as f64 / spec.lidar_beams as f64 + jitter).floor();
        let row = (row.max(top) as usize).min(h - 1);
        for x in (phase..w).step_by(spec.lidar_azimuth_step) {
            let i = row * w + x;
            out.depth[i] = gt_depth.depth[i];
        }
    }
    Ok(out)
}

/// Fraction of non-occluded left pixels whose colour matches the right image
/// sampled at `x - disparity` (linear interpolation) within `tol` per channel.
pub fn photometric_consistency(sample: &SceneSample, tol: f64) -> f64 {
    let (w, h) = (sample.left.width, sample.left.height);
    let (mut total, mut ok) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if sample.occlusion.get(x, y) {
                continue;
            }
            total += 1;
            let xr = x as f64 - sample.gt_disparity.get(x, y);
            let x0 = xr.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let a = xr - x0 as f64;
            let matches = (0..3).all(|c| {
                let r = (1.0 - a) * sample.right.get(x0, y, c) + a * sample.right.get(x1, y, c);
                (r - sample.left.get(x, y, c)).abs() <= tol
            });
            ok += matches as usize;
        }
    }
    if total == 0 {
        1.0
    } else {
        ok as f64 / total as f64
    }
}
