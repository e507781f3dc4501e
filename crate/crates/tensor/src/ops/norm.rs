use crate::error::{shape_err, Result, TensorError};
use crate::{Graph, Scalar, Shape, Tensor, Var};

pub const BATCH_NORM_EPS: f64 = 1e-5;
/// Weight of the previous running value in the running-statistics update.
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;

/// Per-channel running mean and (unbiased) variance used in evaluation mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }
}

impl<T: Scalar> Graph<T> {
    /// Batch normalization with per-channel `gamma`/`beta` of shape `(1, c, 1, 1)`.
    ///
    /// Training mode normalizes with the batch statistics and folds them into
    /// `running`; evaluation mode uses `running` as is.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats<T>,
        training: bool,
    ) -> Result<Var> {
        let s = self.shape(x);
        let param_shape = Shape::new(1, s.c, 1, 1);
        for p in [gamma, beta] {
            if self.shape(p) != param_shape {
                return shape_err("batch_norm", format!("affine parameter {} for input {s}", self.shape(p)));
            }
        }
        if running.mean.len() != s.c || running.var.len() != s.c {
            return shape_err("batch_norm", format!("running stats for {} channels, input {s}", running.mean.len()));
        }
        let count = s.n * s.plane();
        if training && count < 2 {
            return Err(TensorError::DegenerateStatistics(count));
        }
        let xv = self.value(x).clone();
        let gv = self.value(gamma).to_vec();
        let bv = self.value(beta).to_vec();
        let plane = s.plane();
        let eps = T::lit(BATCH_NORM_EPS);

        let (mean, var) = if training {
            let m = T::lit(count as f64);
            let mut mean = vec![T::zero(); s.c];
            let mut var = vec![T::zero(); s.c];
            for c in 0..s.c {
                let mut acc = T::zero();
                for n in 0..s.n {
                    acc = acc + xv.data()[(n * s.c + c) * plane..][..plane].iter().copied().sum::<T>();
                }
                mean[c] = acc / m;
                let mut sq = T::zero();
                for n in 0..s.n {
                    for &v in &xv.data()[(n * s.c + c) * plane..][..plane] {
                        let d = v - mean[c];
                        sq = sq + d * d;
                    }
                }
                var[c] = sq / m;
            }
            let mom = T::lit(BATCH_NORM_MOMENTUM);
            let unbias = m / (m - T::one());
            for c in 0..s.c {
                running.mean[c] = mom * running.mean[c] + (T::one() - mom) * mean[c];
                running.var[c] = mom * running.var[c] + (T::one() - mom) * var[c] * unbias;
            }
            (mean, var)
        } else {
            (running.mean.clone(), running.var.clone())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let mut xhat = vec![T::zero(); s.numel()];
        let mut out = vec![T::zero(); s.numel()];
        for n in 0..s.n {
            for c in 0..s.c {
                let base = (n * s.c + c) * plane;
                for i in base..base + plane {
                    xhat[i] = (xv.data()[i] - mean[c]) * inv_std[c];
                    out[i] = gv[c] * xhat[i] + bv[c];
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(s, out),
            &[x, gamma, beta],
            Box::new(move |g| {
                let mut dgamma = vec![T::zero(); s.c];
                let mut dbeta = vec![T::zero(); s.c];
                for n in 0..s.n {
                    for c in 0..s.c {
                        let base = (n * s.c + c) * plane;
                        for i in base..base + plane {
                            dgamma[c] = dgamma[c] + g[i] * xhat[i];
                            dbeta[c] = dbeta[c] + g[i];
                        }
                    }
                }
                let mut dx = vec![T::zero(); s.numel()];
                let m = T::lit(count as f64);
                for n in 0..s.n {
                    for c in 0..s.c {
                        let base = (n * s.c + c) * plane;
                        let scale = gv[c] * inv_std[c];
                        for i in base..base + plane {
                            dx[i] = if training {
                                scale * (g[i] - dbeta[c] / m - xhat[i] * dgamma[c] / m)
                            } else {
                                scale * g[i]
                            };
                        }
                    }
                }
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            }),
        ))
    }
}
