//! 8-bit RGB images and binary masks.

use listereo_tensor::{Scalar, Shape, Tensor};

use crate::error::{contract, Result};
use crate::geometry::DepthMap;

/// Interleaved 8-bit RGB image; channel values read as `v / 255` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return contract(format!("{} bytes for a {width}x{height} RGB image", data.len()));
        }
        Ok(Self { width, height, data })
    }

    /// Quantizes `[0, 1]` values produced by `f(x, y)` to 8 bits.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                for v in f(x, y) {
                    data.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        Self { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c] as f64 / 255.0
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        let data = (y0..y0 + height)
            .flat_map(|y| self.data[(y * self.width + x0) * 3..][..width * 3].iter().copied())
            .collect();
        Self { width, height, data }
    }

    /// Planar `(1, 3, h, w)` tensor with values mapped from `[0, 1]` to `[-1, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(Shape::new(1, 3, self.height, self.width), |_, c, y, x| T::lit(self.get(x, y, c) * 2.0 - 1.0))
            .expect("image dimensions are nonzero")
    }
}

/// Row-major binary mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return contract(format!("{} mask entries for {width}x{height}", data.len()));
        }
        Ok(Self { width, height, data })
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        let data = (y0..y0 + height)
            .flat_map(|y| self.data[y * self.width + x0..][..width].iter().copied())
            .collect();
        Self { width, height, data }
    }
}

/// Anchor colours from nearest to farthest. Red minus blue strictly decreases
/// along the table, so nearer depths always come out warmer.
pub const DEPTH_COLORMAP: [[f64; 3]; 6] = [
    [1.0, 0.2, 0.0],
    [1.0, 0.7, 0.1],
    [0.9, 0.9, 0.3],
    [0.5, 0.8, 0.6],
    [0.2, 0.5, 0.8],
    [0.05, 0.15, 0.7],
];

/// Colour for a normalized depth `t` in `[0, 1]`, interpolated linearly
/// between neighbouring anchors.
pub fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0) * (DEPTH_COLORMAP.len() - 1) as f64;
    let i = (t.floor() as usize).min(DEPTH_COLORMAP.len() - 2);
    let f = t - i as f64;
    let (a, b) = (DEPTH_COLORMAP[i], DEPTH_COLORMAP[i + 1]);
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * f)
}

/// Colourizes a depth map for viewing. Depth is scaled by `max_depth_m`, or by
/// the largest valid depth when `None`; invalid pixels are black.
pub fn colorize_depth(map: &DepthMap, max_depth_m: Option<f64>) -> RgbImage {
    let scale = max_depth_m.unwrap_or_else(|| map.depth.iter().copied().filter(|d| *d > 0.0).fold(0.0, f64::max));
    RgbImage::from_fn(map.width, map.height, |x, y| {
        let d = map.get(x, y);
        if d > 0.0 && scale > 0.0 {
            colormap(d / scale)
        } else {
            [0.0; 3]
        }
    })
}
