use std::collections::BTreeMap;

use listereo_tensor::{Graph, RunningStats, Scalar, Shape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Zero-mean Gaussian with std `sqrt(2 / fan_in)`, truncated at two standard deviations.
    TruncatedHe,
    Zeros,
    Ones,
}

/// Named parameters and batch-norm running statistics.
///
/// Missing parameters are created on first use, seeded from the store seed and
/// the parameter name, so initial values do not depend on creation order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar> {
    pub seed: u64,
    pub params: BTreeMap<String, Tensor<T>>,
    pub stats: BTreeMap<String, RunningStats<T>>,
}

fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn init_tensor<T: Scalar>(shape: Shape, init: Init, seed: u64) -> Tensor<T> {
    match init {
        Init::Zeros => Tensor::zeros(shape).expect("nonzero shape"),
        Init::Ones => Tensor::full(shape, T::one()).expect("nonzero shape"),
        Init::TruncatedHe => {
            let fan_in = (shape.c * shape.h * shape.w).max(1);
            let std = (2.0 / fan_in as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..shape.numel())
                .map(|_| loop {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if z.abs() <= 2.0 {
                        break T::lit(z * std);
                    }
                })
                .collect();
            Tensor::new(shape, data).expect("length matches shape")
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self { seed, params: BTreeMap::new(), stats: BTreeMap::new() }
    }

    pub fn get_or_init(&mut self, name: &str, shape: Shape, init: Init) -> Result<&Tensor<T>> {
        let seed = self.seed ^ name_hash(name);
        let t = self.params.entry(name.to_string()).or_insert_with(|| init_tensor(shape, init, seed));
        if t.shape() != shape {
            return contract(format!("parameter {name} has shape {}, requested {shape}", t.shape()));
        }
        Ok(t)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|t| t.shape().numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let cast_vec = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        ParamStore {
            seed: self.seed,
            params: self.params.iter().map(|(k, t)| (k.clone(), t.cast())).collect(),
            stats: self
                .stats
                .iter()
                .map(|(k, s)| (k.clone(), RunningStats { mean: cast_vec(&s.mean), var: cast_vec(&s.var) }))
                .collect(),
        }
    }
}

/// One forward pass: owns the graph and maps parameter names to graph leaves.
pub struct Builder<'s, T: Scalar> {
    pub g: Graph<T>,
    store: &'s mut ParamStore<T>,
    vars: BTreeMap<String, Var>,
    training: bool,
}

impl<'s, T: Scalar> Builder<'s, T> {
    /// `training` selects batch statistics (and running-stat updates) in batch norm.
    pub fn new(store: &'s mut ParamStore<T>, training: bool) -> Self {
        Self { g: Graph::new(), store, vars: BTreeMap::new(), training }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Parameter leaves used so far, by name.
    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    /// The graph leaf for `name`; repeated calls return the same leaf, which
    /// is how weights are shared.
    pub fn param(&mut self, name: &str, shape: Shape, init: Init) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            if self.g.shape(v) != shape {
                return contract(format!("parameter {name} reused with shape {shape}"));
            }
            return Ok(v);
        }
        let t = self.store.get_or_init(name, shape, init)?.clone();
        let v = self.g.param(t);
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn conv(&mut self, name: &str, x: Var, cout: usize, k: usize, stride: usize, bias: bool) -> Result<Var> {
        let cin = self.g.shape(x).c;
        let w = self.param(&format!("{name}.weight"), Shape::new(cout, cin, k, k), Init::TruncatedHe)?;
        let b = if bias { Some(self.param(&format!("{name}.bias"), Shape::new(1, cout, 1, 1), Init::Zeros)?) } else { None };
        Ok(self.g.conv2d(x, w, b, stride, (k - 1) / 2)?)
    }

    pub fn sparse_conv(&mut self, name: &str, x: Var, mask: &Tensor<T>, cout: usize, k: usize, stride: usize) -> Result<(Var, Tensor<T>)> {
        let cin = self.g.shape(x).c;
        let w = self.param(&format!("{name}.weight"), Shape::new(cout, cin, k, k), Init::TruncatedHe)?;
        let b = self.param(&format!("{name}.bias"), Shape::new(1, cout, 1, 1), Init::Zeros)?;
        Ok(self.g.sparse_conv2d(x, mask, w, b, stride, (k - 1) / 2)?)
    }

    pub fn batch_norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let c = self.g.shape(x).c;
        let gamma = self.param(&format!("{name}.gamma"), Shape::new(1, c, 1, 1), Init::Ones)?;
        let beta = self.param(&format!("{name}.beta"), Shape::new(1, c, 1, 1), Init::Zeros)?;
        let stats = self.store.stats.entry(name.to_string()).or_insert_with(|| RunningStats::new(c));
        Ok(self.g.batch_norm(x, gamma, beta, stats, self.training)?)
    }

    /// Convolution without bias, batch norm, optional leaky ReLU.
    pub fn conv_bn(&mut self, name: &str, x: Var, cout: usize, k: usize, stride: usize, act: bool) -> Result<Var> {
        let y = self.conv(&format!("{name}.conv"), x, cout, k, stride, false)?;
        let y = self.batch_norm(&format!("{name}.bn"), y)?;
        Ok(if act { self.g.leaky_relu(y) } else { y })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_order_independent_and_truncated() {
        let mut a = ParamStore::<f64>::new(5);
        let mut b = ParamStore::<f64>::new(5);
        let s = Shape::new(8, 4, 3, 3);
        a.get_or_init("x", s, Init::TruncatedHe).unwrap();
        a.get_or_init("y", s, Init::TruncatedHe).unwrap();
        b.get_or_init("y", s, Init::TruncatedHe).unwrap();
        b.get_or_init("x", s, Init::TruncatedHe).unwrap();
        assert_eq!(a, b);
        let std = (2.0 / 36.0f64).sqrt();
        let w = &a.params["x"];
        assert!(w.data().iter().all(|v| v.abs() <= 2.0 * std));
        let mean = w.sum() / w.data().len() as f64;
        assert!(mean.abs() < 0.1 * std);
        assert_ne!(a.params["x"], a.params["y"]);
    }

    #[test]
    fn shape_conflict_is_an_error() {
        let mut s = ParamStore::<f32>::new(0);
        s.get_or_init("w", Shape::new(1, 1, 3, 3), Init::Zeros).unwrap();
        assert!(s.get_or_init("w", Shape::new(1, 1, 1, 1), Init::Zeros).is_err());
    }

    #[test]
    fn builder_shares_leaves_by_name() {
        let mut store = ParamStore::<f64>::new(1);
        let mut b = Builder::new(&mut store, true);
        let p = b.param("k", Shape::new(1, 1, 1, 1), Init::Ones).unwrap();
        assert_eq!(p, b.param("k", Shape::new(1, 1, 1, 1), Init::Ones).unwrap());
        assert_eq!(b.vars().len(), 1);
    }
}
