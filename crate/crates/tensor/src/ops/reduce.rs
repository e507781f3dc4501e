use crate::error::{shape_err, Result};
use crate::{Graph, Scalar, Shape, Tensor, Var};

impl<T: Scalar> Graph<T> {
    /// Sum of all elements as a `(1, 1, 1, 1)` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.shape().numel();
        let out = Tensor::scalar(xv.sum());
        self.push(out, &[x], Box::new(move |g| vec![Some(vec![g[0]; n])]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.shape(x).numel();
        let s = self.sum(x);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Mean of `x` over elements where `mask` is nonzero; zero when the mask is empty.
    pub fn masked_mean(&mut self, x: Var, mask: &Tensor<T>) -> Result<Var> {
        let s = self.shape(x);
        if s != mask.shape() {
            return shape_err("masked_mean", format!("{s} vs mask {}", mask.shape()));
        }
        let keep: Vec<bool> = mask.data().iter().map(|m| *m != T::zero()).collect();
        let count = keep.iter().filter(|&&k| k).count();
        let denom = T::lit(count.max(1) as f64);
        let total: T = self
            .value(x)
            .data()
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(&v, _)| v)
            .sum();
        let out = Tensor::scalar(total / denom);
        Ok(self.push(
            out,
            &[x],
            Box::new(move |g| {
                let gx = keep.iter().map(|&k| if k { g[0] / denom } else { T::zero() }).collect();
                vec![Some(gx)]
            }),
        ))
    }

    /// Mean across the channel axis: `(n, c, h, w) -> (n, 1, h, w)`.
    pub fn mean_channels(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let plane = s.plane();
        let inv = T::one() / T::lit(s.c as f64);
        let xv = self.value(x);
        let mut out = vec![T::zero(); s.n * plane];
        for n in 0..s.n {
            for c in 0..s.c {
                let src = &xv.data()[(n * s.c + c) * plane..][..plane];
                for (o, &v) in out[n * plane..][..plane].iter_mut().zip(src) {
                    *o = *o + v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        self.push(
            Tensor::from_parts(s.with_c(1), out),
            &[x],
            Box::new(move |g| {
                let mut gx = vec![T::zero(); s.numel()];
                for n in 0..s.n {
                    for c in 0..s.c {
                        let dst = &mut gx[(n * s.c + c) * plane..][..plane];
                        for (d, &gv) in dst.iter_mut().zip(&g[n * plane..][..plane]) {
                            *d = gv * inv;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Divides every element of `x` by the scalar node `s` of shape `(1, 1, 1, 1)`.
    pub fn div_by_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.shape(s) != Shape::SCALAR {
            return shape_err("div_by_scalar", format!("divisor has shape {}", self.shape(s)));
        }
        let xv = self.value(x).clone();
        let sv = self.value(s).item();
        let out = xv.map(|v| v / sv);
        Ok(self.push(
            out,
            &[x, s],
            Box::new(move |g| {
                let gx = g.iter().map(|&g| g / sv).collect();
                let gs: T = g.iter().zip(xv.data()).map(|(&g, &x)| -g * x / (sv * sv)).sum();
                vec![Some(gx), Some(vec![gs])]
            }),
        ))
    }

    /// `sum_c c * x[c]` per pixel: the expectation of the channel index under `x`.
    pub fn channel_expectation(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let plane = s.plane();
        let xv = self.value(x);
        let mut out = vec![T::zero(); s.n * plane];
        for n in 0..s.n {
            for c in 0..s.c {
                let w = T::lit(c as f64);
                let src = &xv.data()[(n * s.c + c) * plane..][..plane];
                for (o, &v) in out[n * plane..][..plane].iter_mut().zip(src) {
                    *o = *o + w * v;
                }
            }
        }
        self.push(
            Tensor::from_parts(s.with_c(1), out),
            &[x],
            Box::new(move |g| {
                let mut gx = vec![T::zero(); s.numel()];
                for n in 0..s.n {
                    for c in 0..s.c {
                        let w = T::lit(c as f64);
                        let dst = &mut gx[(n * s.c + c) * plane..][..plane];
                        for (d, &gv) in dst.iter_mut().zip(&g[n * plane..][..plane]) {
                            *d = gv * w;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Shape, Tensor};

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::full(Shape::new(2, 3, 4, 5), 0.7).unwrap());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn masked_mean_of_empty_mask_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::full(Shape::new(1, 1, 2, 2), 5.0).unwrap());
        let m = Tensor::zeros(Shape::new(1, 1, 2, 2)).unwrap();
        let y = g.masked_mean(x, &m).unwrap();
        assert_eq!(g.value(y).item(), 0.0);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().sum(), 0.0);
    }

    #[test]
    fn masked_mean_ignores_unmasked_values() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(Shape::new(1, 1, 1, 4), vec![1.0, 3.0, 100.0, -7.0]).unwrap());
        let m = Tensor::new(Shape::new(1, 1, 1, 4), vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let y = g.masked_mean(x, &m).unwrap();
        assert_eq!(g.value(y).item(), 2.0);
    }
}
