use crate::error::{shape_err, Result};
use crate::{Graph, Scalar, Tensor, Var};

impl<T: Scalar> Graph<T> {
    /// Horizontal correlation cost volume.
    ///
    /// `out[n, d, y, x] = (1 / c) * sum_c left[n, c, y, x] * right[n, c, y, x - d]`
    /// for `d` in `0..=max_disp`; displacements reaching past the left border contribute zero.
    pub fn correlation(&mut self, left: Var, right: Var, max_disp: usize) -> Result<Var> {
        let (ls, rs) = (self.shape(left), self.shape(right));
        if ls != rs {
            return shape_err("correlation", format!("left {ls} vs right {rs}"));
        }
        let (lv, rv) = (self.value(left).clone(), self.value(right).clone());
        let s = ls;
        let (plane, w) = (s.plane(), s.w);
        let nd = max_disp + 1;
        let inv_c = T::one() / T::lit(s.c as f64);
        let out_shape = s.with_c(nd);
        let mut out = vec![T::zero(); out_shape.numel()];
        for n in 0..s.n {
            for c in 0..s.c {
                let l = &lv.data()[(n * s.c + c) * plane..][..plane];
                let r = &rv.data()[(n * s.c + c) * plane..][..plane];
                for d in 0..nd.min(w) {
                    let o = &mut out[(n * nd + d) * plane..][..plane];
                    for y in 0..s.h {
                        for x in d..w {
                            let i = y * w + x;
                            o[i] = o[i] + l[i] * r[i - d];
                        }
                    }
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv_c);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            &[left, right],
            Box::new(move |g| {
                let mut gl = vec![T::zero(); s.numel()];
                let mut gr = vec![T::zero(); s.numel()];
                for n in 0..s.n {
                    for c in 0..s.c {
                        let base = (n * s.c + c) * plane;
                        let l = &lv.data()[base..][..plane];
                        let r = &rv.data()[base..][..plane];
                        for d in 0..nd.min(w) {
                            let go = &g[(n * nd + d) * plane..][..plane];
                            for y in 0..s.h {
                                for x in d..w {
                                    let i = y * w + x;
                                    let gv = go[i] * inv_c;
                                    gl[base + i] = gl[base + i] + gv * r[i - d];
                                    gr[base + i - d] = gr[base + i - d] + gv * l[i];
                                }
                            }
                        }
                    }
                }
                vec![Some(gl), Some(gr)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::{Graph, Shape, Tensor};

    #[test]
    fn self_correlation_peaks_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Tensor::<f64>::uniform(Shape::new(1, 4, 3, 8), 0.5, 1.5, &mut rng).unwrap();
        let mut g = Graph::new();
        let l = g.input(f.clone());
        let r = g.input(f.clone());
        let cv = g.correlation(l, r, 3).unwrap();
        let v = g.value(cv);
        assert_eq!(v.shape(), Shape::new(1, 4, 3, 8));
        for y in 0..3 {
            for x in 0..8 {
                let sq: f64 = (0..4).map(|c| f.get(0, c, y, x).powi(2)).sum::<f64>() / 4.0;
                assert!((v.get(0, 0, y, x) - sq).abs() < 1e-12);
            }
        }
    }
}
