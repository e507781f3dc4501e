use crate::{Graph, Scalar, Tensor, Var};

impl<T: Scalar> Graph<T> {
    /// Per-pixel softmax across channels, stabilized by subtracting the channel maximum.
    pub fn softmax_channel(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let plane = s.plane();
        let xv = self.value(x);
        let mut out = vec![T::zero(); s.numel()];
        for n in 0..s.n {
            let base = n * s.c * plane;
            for p in 0..plane {
                let at = |c: usize| base + c * plane + p;
                let m = (0..s.c).fold(T::neg_infinity(), |m, c| m.max(xv.data()[at(c)]));
                let mut z = T::zero();
                for c in 0..s.c {
                    let e = (xv.data()[at(c)] - m).exp();
                    out[at(c)] = e;
                    z = z + e;
                }
                for c in 0..s.c {
                    out[at(c)] = out[at(c)] / z;
                }
            }
        }
        let y = Tensor::from_parts(s, out);
        let yv = y.clone();
        self.push(
            y,
            &[x],
            Box::new(move |g| {
                let y = yv.data();
                let mut gx = vec![T::zero(); s.numel()];
                for n in 0..s.n {
                    let base = n * s.c * plane;
                    for p in 0..plane {
                        let at = |c: usize| base + c * plane + p;
                        let dot = (0..s.c).fold(T::zero(), |acc, c| acc + g[at(c)] * y[at(c)]);
                        for c in 0..s.c {
                            gx[at(c)] = y[at(c)] * (g[at(c)] - dot);
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
    fn equal_logits_are_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(Shape::new(1, 5, 2, 2), 3.0).unwrap());
        let p = g.softmax_channel(x);
        assert!(g.value(p).data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn huge_logit_does_not_overflow() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(Shape::new(1, 3, 1, 1), vec![0.0, 1000.0, -5.0]).unwrap());
        let p = g.softmax_channel(x);
        let v = g.value(p);
        assert!(v.is_finite());
        assert!((v.get(0, 1, 0, 0) - 1.0).abs() < 1e-12);
    }
}
