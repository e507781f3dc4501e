//! Linear spatial resampling: bilinear resize and average pooling.
//!
//! Each operator is expressed as a per-plane sparse matrix of taps, so the
//! backward pass is the transposed application of the same taps.

use std::sync::Arc;

use crate::error::{arg_err, Result};
use crate::ops::conv::conv_output_size;
use crate::{Graph, Scalar, Tensor, Var};

struct PlaneMap<T> {
    in_plane: usize,
    out_h: usize,
    out_w: usize,
    /// For each output pixel, `(input index, weight)` pairs.
    taps: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> PlaneMap<T> {
    fn apply(&self, x: &[T], planes: usize) -> Vec<T> {
        let out_plane = self.out_h * self.out_w;
        let mut out = vec![T::zero(); planes * out_plane];
        for p in 0..planes {
            let src = &x[p * self.in_plane..][..self.in_plane];
            for (o, taps) in out[p * out_plane..][..out_plane].iter_mut().zip(&self.taps) {
                *o = taps.iter().fold(T::zero(), |acc, &(i, w)| acc + w * src[i]);
            }
        }
        out
    }

    fn apply_transpose(&self, g: &[T], planes: usize) -> Vec<T> {
        let out_plane = self.out_h * self.out_w;
        let mut gx = vec![T::zero(); planes * self.in_plane];
        for p in 0..planes {
            let dst = &mut gx[p * self.in_plane..][..self.in_plane];
            for (&gv, taps) in g[p * out_plane..][..out_plane].iter().zip(&self.taps) {
                for &(i, w) in taps {
                    dst[i] = dst[i] + w * gv;
                }
            }
        }
        gx
    }
}

/// Source coordinate and interpolation weights along one axis, half-pixel
/// centres (`align_corners = false`), clamped at the borders.
fn linear_axis(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn bilinear_map<T: Scalar>(h: usize, w: usize, out_h: usize, out_w: usize) -> PlaneMap<T> {
    let ys = linear_axis(out_h, h);
    let xs = linear_axis(out_w, w);
    let mut taps = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, ly) in &ys {
        for &(x0, x1, lx) in &xs {
            let mut t = Vec::with_capacity(4);
            for (idx, wt) in [
                (y0 * w + x0, (1.0 - ly) * (1.0 - lx)),
                (y0 * w + x1, (1.0 - ly) * lx),
                (y1 * w + x0, ly * (1.0 - lx)),
                (y1 * w + x1, ly * lx),
            ] {
                if wt != 0.0 {
                    t.push((idx, T::lit(wt)));
                }
            }
            taps.push(t);
        }
    }
    PlaneMap { in_plane: h * w, out_h, out_w, taps }
}

/// Average over in-bounds window elements only (padding is not counted).
fn avg_pool_map<T: Scalar>(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<PlaneMap<T>> {
    let out_h = conv_output_size(h, k, stride, pad)?;
    let out_w = conv_output_size(w, k, stride, pad)?;
    let mut taps = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let mut idx = Vec::with_capacity(k * k);
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix >= 0 && ix < w as isize {
                        idx.push(iy as usize * w + ix as usize);
                    }
                }
            }
            let wt = T::one() / T::lit(idx.len() as f64);
            taps.push(idx.into_iter().map(|i| (i, wt)).collect());
        }
    }
    Some(PlaneMap { in_plane: h * w, out_h, out_w, taps })
}

/// Adaptive bins: `[floor(i * n / b), ceil((i + 1) * n / b))`.
fn adaptive_map<T: Scalar>(h: usize, w: usize, out_h: usize, out_w: usize) -> PlaneMap<T> {
    let bins = |n: usize, b: usize| -> Vec<(usize, usize)> {
        (0..b).map(|i| (i * n / b, ((i + 1) * n).div_ceil(b))).collect()
    };
    let (by, bx) = (bins(h, out_h), bins(w, out_w));
    let mut taps = Vec::with_capacity(out_h * out_w);
    for &(y0, y1) in &by {
        for &(x0, x1) in &bx {
            let wt = T::one() / T::lit(((y1 - y0) * (x1 - x0)) as f64);
            taps.push((y0..y1).flat_map(|y| (x0..x1).map(move |x| (y * w + x, wt))).collect());
        }
    }
    PlaneMap { in_plane: h * w, out_h, out_w, taps }
}

impl<T: Scalar> Graph<T> {
    fn plane_map(&mut self, x: Var, map: PlaneMap<T>) -> Var {
        let s = self.shape(x);
        let planes = s.n * s.c;
        let out = map.apply(self.value(x).data(), planes);
        let out_shape = s.with_hw(map.out_h, map.out_w);
        let map = Arc::new(map);
        self.push(
            Tensor::from_parts(out_shape, out),
            &[x],
            Box::new(move |g| vec![Some(map.apply_transpose(g, planes))]),
        )
    }

    /// Bilinear resize with half-pixel centres (`align_corners = false`).
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        if out_h == 0 || out_w == 0 {
            return arg_err("bilinear_resize", format!("target size {out_h}x{out_w}"));
        }
        let s = self.shape(x);
        if (s.h, s.w) == (out_h, out_w) {
            return Ok(x);
        }
        Ok(self.plane_map(x, bilinear_map(s.h, s.w, out_h, out_w)))
    }

    /// Average pooling over `k x k` windows; border windows average their in-bounds part.
    pub fn avg_pool2d(&mut self, x: Var, k: usize, stride: usize, padding: usize) -> Result<Var> {
        let s = self.shape(x);
        let Some(map) = avg_pool_map(s.h, s.w, k, stride, padding) else {
            return arg_err("avg_pool2d", format!("window {k} stride {stride} does not fit {s}"));
        };
        Ok(self.plane_map(x, map))
    }

    /// Adaptive average pooling to an `out_h x out_w` grid of bins.
    pub fn adaptive_avg_pool2d(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.shape(x);
        if out_h == 0 || out_w == 0 || out_h > s.h || out_w > s.w {
            return arg_err("adaptive_avg_pool2d", format!("{out_h}x{out_w} bins for input {s}"));
        }
        Ok(self.plane_map(x, adaptive_map(s.h, s.w, out_h, out_w)))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Shape, Tensor};

    /// Per-output-pixel bilinear interpolation written out directly.
    fn naive_resize(src: &[[f64; 2]; 2], out: usize) -> Vec<f64> {
        let coord = |o: usize| -> (usize, usize, f64) {
            let mut s = (o as f64 + 0.5) * 2.0 / out as f64 - 0.5;
            if s < 0.0 {
                s = 0.0;
            }
            let i0 = s.floor() as usize;
            let i1 = if i0 + 1 > 1 { 1 } else { i0 + 1 };
            (i0, i1, s - i0 as f64)
        };
        let mut v = vec![];
        for oy in 0..out {
            let (y0, y1, ly) = coord(oy);
            for ox in 0..out {
                let (x0, x1, lx) = coord(ox);
                let top = src[y0][x0] * (1.0 - lx) + src[y0][x1] * lx;
                let bot = src[y1][x0] * (1.0 - lx) + src[y1][x1] * lx;
                v.push(top * (1.0 - ly) + bot * ly);
            }
        }
        v
    }

    #[test]
    fn upsample_2x2_matches_direct_interpolation() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(Shape::new(1, 1, 2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap());
        let y = g.bilinear_resize(x, 4, 4).unwrap();
        let want = naive_resize(&[[0.0, 1.0], [2.0, 3.0]], 4);
        assert_eq!(g.value(y).data(), want.as_slice());
        assert_eq!(&want[..4], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn resize_constant_and_identity() {
        let mut g = Graph::<f64>::new();
        let c = g.input(Tensor::full(Shape::new(1, 2, 3, 5), 1.25).unwrap());
        let up = g.bilinear_resize(c, 7, 11).unwrap();
        assert!(g.value(up).data().iter().all(|&v| (v - 1.25).abs() < 1e-12));
        let x = g.input(Tensor::from_fn(Shape::new(1, 1, 3, 4), |_, _, y, x| (y * 7 + x) as f64).unwrap());
        let same = g.bilinear_resize(x, 3, 4).unwrap();
        assert_eq!(g.value(same), g.value(x));
    }

    #[test]
    fn avg_pool_excludes_padding() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, y, x| (y * 3 + x) as f64).unwrap());
        let p = g.avg_pool2d(x, 3, 1, 1).unwrap();
        let v = g.value(p);
        assert_eq!(v.get(0, 0, 1, 1), 4.0);
        assert_eq!(v.get(0, 0, 0, 0), (0.0 + 1.0 + 3.0 + 4.0) / 4.0);
    }

    #[test]
    fn adaptive_pool_bins_cover_uneven_sizes() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(Shape::new(1, 1, 5, 5), |_, _, y, x| (y * 5 + x) as f64).unwrap());
        let p = g.adaptive_avg_pool2d(x, 2, 2).unwrap();
        // bins along each axis: [0, 3) and [2, 5)
        let v = g.value(p);
        let mean = |ys: std::ops::Range<usize>, xs: std::ops::Range<usize>| {
            let cells: Vec<f64> = ys.flat_map(|y| xs.clone().map(move |x| (y * 5 + x) as f64)).collect();
            cells.iter().sum::<f64>() / cells.len() as f64
        };
        assert!((v.get(0, 0, 0, 0) - mean(0..3, 0..3)).abs() < 1e-12);
        assert!((v.get(0, 0, 1, 0) - mean(2..5, 0..3)).abs() < 1e-12);
        let full = g.adaptive_avg_pool2d(x, 1, 1).unwrap();
        assert!((g.value(full).item() - 12.0).abs() < 1e-12);
    }
}
