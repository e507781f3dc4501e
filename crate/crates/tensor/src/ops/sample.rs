use crate::error::{shape_err, Result};
use crate::{Graph, Scalar, Tensor, Var};

impl<T: Scalar> Graph<T> {
    /// Samples each row of `x` at `col - disparity` with 1-D linear interpolation.
    ///
    /// `disparity` is `(n, 1, h, w)` and shared by all channels. Sampling
    /// positions outside `[0, w - 1]` yield zero and pass no gradient.
    pub fn sample_horizontal(&mut self, x: Var, disparity: Var) -> Result<Var> {
        let (xs, ds) = (self.shape(x), self.shape(disparity));
        if ds != xs.with_c(1) {
            return shape_err("sample_horizontal", format!("disparity {ds} for input {xs}"));
        }
        let (xv, dv) = (self.value(x).clone(), self.value(disparity).clone());
        let (h, w, plane) = (xs.h, xs.w, xs.plane());
        let last = T::lit((w - 1) as f64);
        // Per disparity pixel: left tap, fraction; None when out of range.
        let taps: Vec<Option<(usize, T)>> = dv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let col = T::lit((i % w) as f64);
                let s = col - d;
                if !(s >= T::zero() && s <= last) {
                    return None;
                }
                let x0 = s.floor().to_usize().unwrap_or(0).min(w - 1);
                Some((x0, s - T::lit(x0 as f64)))
            })
            .collect();
        let mut out = vec![T::zero(); xs.numel()];
        for n in 0..xs.n {
            for c in 0..xs.c {
                let src = &xv.data()[(n * xs.c + c) * plane..][..plane];
                let dst = &mut out[(n * xs.c + c) * plane..][..plane];
                for y in 0..h {
                    for col in 0..w {
                        if let Some((x0, a)) = taps[n * plane + y * w + col] {
                            let row = &src[y * w..][..w];
                            let x1 = (x0 + 1).min(w - 1);
                            dst[y * w + col] = (T::one() - a) * row[x0] + a * row[x1];
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(xs, out),
            &[x, disparity],
            Box::new(move |g| {
                let mut gx = vec![T::zero(); xs.numel()];
                let mut gd = vec![T::zero(); ds.numel()];
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        let base = (n * xs.c + c) * plane;
                        let src = &xv.data()[base..][..plane];
                        for y in 0..h {
                            for col in 0..w {
                                let pix = y * w + col;
                                let Some((x0, a)) = taps[n * plane + pix] else { continue };
                                let x1 = (x0 + 1).min(w - 1);
                                let gv = g[base + pix];
                                gx[base + y * w + x0] = gx[base + y * w + x0] + (T::one() - a) * gv;
                                gx[base + y * w + x1] = gx[base + y * w + x1] + a * gv;
                                // d(out)/d(s) = row[x1] - row[x0]; d(s)/d(disparity) = -1
                                let slope = src[y * w + x1] - src[y * w + x0];
                                gd[n * plane + pix] = gd[n * plane + pix] - slope * gv;
                            }
                        }
                    }
                }
                vec![Some(gx), Some(gd)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Shape, Tensor};

    fn warp(img: Tensor<f64>, disp: f64) -> Tensor<f64> {
        let s = img.shape();
        let mut g = Graph::new();
        let x = g.input(img);
        let d = g.input(Tensor::full(s.with_c(1), disp).unwrap());
        let y = g.sample_horizontal(x, d).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn zero_disparity_is_identity() {
        let img = Tensor::from_fn(Shape::new(2, 3, 4, 5), |n, c, y, x| (n + c * 2 + y * 3 + x * 7) as f64 * 0.1).unwrap();
        assert_eq!(warp(img.clone(), 0.0), img);
    }

    #[test]
    fn unit_disparity_on_ramp() {
        let img = Tensor::from_fn(Shape::new(1, 1, 2, 6), |_, _, _, x| x as f64).unwrap();
        let out = warp(img, 1.0);
        for y in 0..2 {
            assert_eq!(out.get(0, 0, y, 0), 0.0);
            for x in 1..6 {
                assert_eq!(out.get(0, 0, y, x), x as f64 - 1.0);
            }
        }
    }

    #[test]
    fn disparity_beyond_width_gives_zeros() {
        let img = Tensor::full(Shape::new(1, 2, 3, 4), 0.8).unwrap();
        assert!(warp(img, 9.0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_disparity_samples_to_the_right() {
        let img = Tensor::from_fn(Shape::new(1, 1, 1, 4), |_, _, _, x| (x * x) as f64).unwrap();
        let out = warp(img, -0.5);
        assert_eq!(out.data(), &[0.5, 2.5, 6.5, 0.0]);
    }
}
