use crate::error::{arg_err, shape_err, Result};
use crate::{Graph, Scalar, Tensor, Var};

impl<T: Scalar> Graph<T> {
    /// Concatenates along the channel axis; batch and spatial sizes must agree.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return arg_err("concat_channels", "no inputs");
        };
        let s0 = self.shape(first);
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return shape_err("concat_channels", format!("{s} vs {s0}"));
            }
            channels.push(s.c);
        }
        let total_c: usize = channels.iter().sum();
        let out_shape = s0.with_c(total_c);
        let plane = s0.plane();
        let mut out = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.n {
            for (&p, &c) in parts.iter().zip(&channels) {
                out.extend_from_slice(&self.value(p).data()[n * c * plane..][..c * plane]);
            }
        }
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            parts,
            Box::new(move |g| {
                let mut grads: Vec<Vec<T>> =
                    channels.iter().map(|&c| Vec::with_capacity(s0.n * c * plane)).collect();
                let mut offset = 0;
                for _ in 0..s0.n {
                    for (gp, &c) in grads.iter_mut().zip(&channels) {
                        gp.extend_from_slice(&g[offset..offset + c * plane]);
                        offset += c * plane;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Spatial window `[y0, y0 + h) x [x0, x0 + w)` of every channel.
    pub fn crop(&mut self, x: Var, y0: usize, x0: usize, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x);
        if h == 0 || w == 0 || y0 + h > s.h || x0 + w > s.w {
            return arg_err("crop", format!("window {h}x{w} at ({y0}, {x0}) outside {s}"));
        }
        let xv = self.value(x);
        let out_shape = s.with_hw(h, w);
        let mut out = Vec::with_capacity(out_shape.numel());
        for nc in 0..s.n * s.c {
            for y in 0..h {
                let row = (nc * s.h + y0 + y) * s.w + x0;
                out.extend_from_slice(&xv.data()[row..row + w]);
            }
        }
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            &[x],
            Box::new(move |g| {
                let mut gx = vec![T::zero(); s.numel()];
                for nc in 0..s.n * s.c {
                    for y in 0..h {
                        let row = (nc * s.h + y0 + y) * s.w + x0;
                        gx[row..row + w].copy_from_slice(&g[(nc * h + y) * w..][..w]);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}
