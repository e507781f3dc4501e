//! 2-D cross-correlation (no kernel flip) via im2col + gemm, and the
//! sparsity-invariant variant that normalizes by the count of valid inputs.

use rayon::prelude::*;

use crate::error::{arg_err, shape_err, Result};
use crate::{Graph, Scalar, Shape, Tensor, Var};

/// Denominator floor of [`Graph::sparse_conv2d`].
pub const SPARSE_CONV_EPS: f64 = 1e-8;

/// Spatial output size of a square-kernel convolution or pooling window.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn cols_rows(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.out_plane();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut cols[((ci * g.k + ky) * g.k + kx) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.wo..][..g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..][..g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let p = g.out_plane();
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &cols[((ci * g.k + ky) * g.k + kx) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..][..g.w];
                    for (ox, &v) in row[oy * g.wo..][..g.wo].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Per-sample `y = W * im2col(x)`, without bias.
fn forward_kernel<T: Scalar>(x: &[T], n: usize, w: &[T], cout: usize, g: &ConvGeom) -> Vec<T> {
    let kk = g.cols_rows();
    let p = g.out_plane();
    let in_len = g.cin * g.h * g.w;
    let mut out = vec![T::zero(); n * cout * p];
    out.par_chunks_mut(cout * p).enumerate().for_each(|(i, y)| {
        let xi = &x[i * in_len..][..in_len];
        let owned;
        let cols: &[T] = if g.is_pointwise() {
            xi
        } else {
            let mut buf = vec![T::zero(); kk * p];
            im2col(xi, g, &mut buf);
            owned = buf;
            &owned
        };
        T::gemm(cout, kk, p, T::one(), (w, kk as isize, 1), (cols, p as isize, 1), T::zero(), (y, p as isize, 1));
    });
    out
}

/// Gradients of `y = W * im2col(x)` with respect to `x` and `W`.
fn backward_kernel<T: Scalar>(
    x: &[T],
    n: usize,
    w: &[T],
    cout: usize,
    g: &ConvGeom,
    gy: &[T],
    need_gx: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let kk = g.cols_rows();
    let p = g.out_plane();
    let in_len = g.cin * g.h * g.w;
    let per_sample: Vec<(Option<Vec<T>>, Vec<T>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &x[i * in_len..][..in_len];
            let gyi = &gy[i * cout * p..][..cout * p];
            let owned;
            let cols: &[T] = if g.is_pointwise() {
                xi
            } else {
                let mut buf = vec![T::zero(); kk * p];
                im2col(xi, g, &mut buf);
                owned = buf;
                &owned
            };
            let mut gw = vec![T::zero(); cout * kk];
            // gW = gY * cols^T
            T::gemm(cout, p, kk, T::one(), (gyi, p as isize, 1), (cols, 1, p as isize), T::zero(), (&mut gw, kk as isize, 1));
            let gx = need_gx.then(|| {
                let mut gcols = vec![T::zero(); kk * p];
                // gcols = W^T * gY
                T::gemm(kk, cout, p, T::one(), (w, 1, kk as isize), (gyi, p as isize, 1), T::zero(), (&mut gcols, p as isize, 1));
                if g.is_pointwise() {
                    gcols
                } else {
                    let mut gxi = vec![T::zero(); in_len];
                    col2im_add(&gcols, g, &mut gxi);
                    gxi
                }
            });
            (gx, gw)
        })
        .collect();
    let mut gw_total = vec![T::zero(); cout * kk];
    let mut gx_total = need_gx.then(|| Vec::with_capacity(n * in_len));
    for (gx, gw) in per_sample {
        gw_total.iter_mut().zip(&gw).for_each(|(a, &b)| *a = *a + b);
        if let (Some(total), Some(gx)) = (gx_total.as_mut(), gx) {
            total.extend_from_slice(&gx);
        }
    }
    (gx_total, gw_total)
}

fn geometry(op: &'static str, xs: Shape, ws: Shape, stride: usize, pad: usize) -> Result<ConvGeom> {
    if ws.h != ws.w {
        return shape_err(op, format!("kernel must be square, got {ws}"));
    }
    if xs.c != ws.c {
        return shape_err(op, format!("input has {} channels but weight {ws} expects {}", xs.c, ws.c));
    }
    let (Some(ho), Some(wo)) = (
        conv_output_size(xs.h, ws.h, stride, pad),
        conv_output_size(xs.w, ws.w, stride, pad),
    ) else {
        return arg_err(op, format!("kernel {} stride {stride} padding {pad} does not fit input {xs}", ws.h));
    };
    Ok(ConvGeom { cin: xs.c, h: xs.h, w: xs.w, k: ws.h, stride, pad, ho, wo })
}

fn check_bias(op: &'static str, bs: Shape, cout: usize) -> Result<()> {
    if bs != Shape::new(1, cout, 1, 1) {
        return shape_err(op, format!("bias must be (1, {cout}, 1, 1), got {bs}"));
    }
    Ok(())
}

fn add_bias<T: Scalar>(y: &mut [T], bias: &[T], plane: usize) {
    let cout = bias.len();
    for (chunk_idx, chunk) in y.chunks_mut(plane).enumerate() {
        let b = bias[chunk_idx % cout];
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn bias_grad<T: Scalar>(gy: &[T], cout: usize, plane: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); cout];
    for (chunk_idx, chunk) in gy.chunks(plane).enumerate() {
        let s: T = chunk.iter().copied().sum();
        gb[chunk_idx % cout] = gb[chunk_idx % cout] + s;
    }
    gb
}

impl<T: Scalar> Graph<T> {
    /// Cross-correlation of `x` `(n, cin, h, w)` with `weight` `(cout, cin, k, k)`,
    /// plus an optional per-channel `bias` of shape `(1, cout, 1, 1)`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(weight));
        let geom = geometry("conv2d", xs, ws, stride, padding)?;
        let cout = ws.n;
        if let Some(b) = bias {
            check_bias("conv2d", self.shape(b), cout)?;
        }
        let xv = self.value(x).clone();
        let wv = self.value(weight).clone();
        let mut y = forward_kernel(xv.data(), xs.n, wv.data(), cout, &geom);
        if let Some(b) = bias {
            add_bias(&mut y, self.value(b).data(), geom.out_plane());
        }
        let out = Tensor::from_parts(Shape::new(xs.n, cout, geom.ho, geom.wo), y);
        let need_gx = self.requires_grad(x);
        let mut parents = vec![x, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.push(
            out,
            &parents,
            Box::new(move |gy| {
                let (gx, gw) = backward_kernel(xv.data(), xs.n, wv.data(), cout, &geom, gy, need_gx);
                let mut grads = vec![gx, Some(gw)];
                if has_bias {
                    grads.push(Some(bias_grad(gy, cout, geom.out_plane())));
                }
                grads
            }),
        ))
    }

    /// Sparsity-invariant convolution.
    ///
    /// `out = conv(x * mask, W) / max(sum_window(mask), eps) + bias`, where the
    /// `(n, 1, h, w)` binary `mask` is broadcast over input channels and the
    /// window sum counts valid pixels. Returns the output together with the
    /// propagated mask (max-pool of `mask` over the same window).
    pub fn sparse_conv2d(
        &mut self,
        x: Var,
        mask: &Tensor<T>,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<(Var, Tensor<T>)> {
        let (xs, ws) = (self.shape(x), self.shape(weight));
        let ms = mask.shape();
        if ms != xs.with_c(1) {
            return shape_err("sparse_conv2d", format!("mask {ms} does not match input {xs}"));
        }
        let geom = geometry("sparse_conv2d", xs, ws, stride, padding)?;
        let cout = ws.n;
        check_bias("sparse_conv2d", self.shape(bias), cout)?;
        let plane = xs.plane();
        let valid: Vec<bool> = mask.data().iter().map(|m| *m != T::zero()).collect();
        // Select rather than multiply so invalid values never reach the arithmetic.
        let mut xm = self.value(x).to_vec();
        for (i, v) in xm.iter_mut().enumerate() {
            let (n, rem) = (i / (xs.c * plane), i % plane);
            if !valid[n * plane + rem] {
                *v = T::zero();
            }
        }
        let count_geom = ConvGeom { cin: 1, ..geom };
        let ones = vec![T::one(); ws.h * ws.w];
        let binary: Vec<T> = valid.iter().map(|&v| if v { T::one() } else { T::zero() }).collect();
        let counts = forward_kernel(&binary, xs.n, &ones, 1, &count_geom);
        let eps = T::lit(SPARSE_CONV_EPS);
        let inv_norm: Vec<T> = counts.iter().map(|&c| T::one() / c.max(eps)).collect();

        let wv = self.value(weight).clone();
        let mut y = forward_kernel(&xm, xs.n, wv.data(), cout, &geom);
        let op = geom.out_plane();
        for (i, v) in y.iter_mut().enumerate() {
            let (n, rem) = (i / (cout * op), i % op);
            *v = *v * inv_norm[n * op + rem];
        }
        add_bias(&mut y, self.value(bias).data(), op);
        let out = Tensor::from_parts(Shape::new(xs.n, cout, geom.ho, geom.wo), y);
        let out_mask = max_pool2d(mask, ws.h, stride, padding)?;

        let need_gx = self.requires_grad(x);
        let var = self.push(
            out,
            &[x, weight, bias],
            Box::new(move |gy| {
                let gnum: Vec<T> = gy
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| g * inv_norm[(i / (cout * op)) * op + i % op])
                    .collect();
                let (gxm, gw) = backward_kernel(&xm, xs.n, wv.data(), cout, &geom, &gnum, need_gx);
                let gx = gxm.map(|mut gx| {
                    for (i, v) in gx.iter_mut().enumerate() {
                        if !valid[(i / (xs.c * plane)) * plane + i % plane] {
                            *v = T::zero();
                        }
                    }
                    gx
                });
                vec![gx, Some(gw), Some(bias_grad(gy, cout, op))]
            }),
        );
        Ok((var, out_mask))
    }
}

/// Max pooling over square windows with implicit `-inf` padding. Not differentiated;
/// used to propagate validity masks.
pub fn max_pool2d<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    let (Some(ho), Some(wo)) = (conv_output_size(s.h, k, stride, padding), conv_output_size(s.w, k, stride, padding)) else {
        return arg_err("max_pool2d", format!("window {k} stride {stride} does not fit {s}"));
    };
    let mut out = Vec::with_capacity(s.n * s.c * ho * wo);
    for nc in 0..s.n * s.c {
        let plane = &x.data()[nc * s.plane()..][..s.plane()];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut m = T::neg_infinity();
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < s.w as isize {
                            m = m.max(plane[iy as usize * s.w + ix as usize]);
                        }
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(s.with_hw(ho, wo), out)
}
