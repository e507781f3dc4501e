use crate::error::{shape_err, Result};
use crate::{Graph, Scalar, Tensor, Var};

/// Negative slope of [`Graph::leaky_relu`].
pub const LEAKY_RELU_SLOPE: f64 = 0.1;

impl<T: Scalar> Graph<T> {
    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var {
        let xv = self.value(x).clone();
        let out = xv.map(f);
        let yv = out.clone();
        self.push(
            out,
            &[x],
            Box::new(move |g| {
                let gx = g
                    .iter()
                    .zip(xv.data().iter().zip(yv.data()))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err(op, format!("{sa} vs {sb}"));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, &[a, b], Box::new(|g| vec![Some(g.to_vec()), Some(g.to_vec())])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|g| vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let out = zip_map(&av, &bv, |x, y| x * y);
        Ok(self.push(
            out,
            &[a, b],
            Box::new(move |g| {
                let ga = g.iter().zip(bv.data()).map(|(&g, &b)| g * b).collect();
                let gb = g.iter().zip(av.data()).map(|(&g, &a)| g * a).collect();
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let out = zip_map(&av, &bv, |x, y| x / y);
        Ok(self.push(
            out,
            &[a, b],
            Box::new(move |g| {
                let ga = g.iter().zip(bv.data()).map(|(&g, &b)| g / b).collect();
                let gb = g
                    .iter()
                    .zip(av.data().iter().zip(bv.data()))
                    .map(|(&g, (&a, &b))| -g * a / (b * b))
                    .collect();
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, |_, _| -T::one())
    }

    /// `|x|`; the derivative at zero is taken as zero.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), |x, _| sign(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), |_, y| y)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, move |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        self.unary(x, move |v| v + s, |_, _| T::one())
    }

    /// `s / x` elementwise.
    pub fn recip_scaled(&mut self, x: Var, s: T) -> Var {
        self.unary(x, move |v| s / v, |x, y| -y / x)
    }

    /// Clamps into `[lo, hi]`; gradient passes only strictly inside the interval.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(
            x,
            move |v| v.max(lo).min(hi),
            move |x, _| if x > lo && x < hi { T::one() } else { T::zero() },
        )
    }

    pub fn clamp_min(&mut self, x: Var, lo: T) -> Var {
        self.clamp(x, lo, T::infinity())
    }

    /// Leaky ReLU with slope [`LEAKY_RELU_SLOPE`] for negative inputs.
    pub fn leaky_relu(&mut self, x: Var) -> Var {
        let slope = T::lit(LEAKY_RELU_SLOPE);
        self.unary(
            x,
            move |v| if v >= T::zero() { v } else { slope * v },
            move |x, _| if x >= T::zero() { T::one() } else { slope },
        )
    }

    /// Multiplies by a constant tensor of the same shape (no gradient to the constant).
    pub fn mul_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        let s = self.shape(x);
        if s != c.shape() {
            return shape_err("mul_const", format!("{s} vs {}", c.shape()));
        }
        let cv = c.clone();
        let out = zip_map(self.value(x), &cv, |a, b| a * b);
        Ok(self.push(
            out,
            &[x],
            Box::new(move |g| vec![Some(g.iter().zip(cv.data()).map(|(&g, &c)| g * c).collect())]),
        ))
    }
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub(crate) fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape(), data)
}
