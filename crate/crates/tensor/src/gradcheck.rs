//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::{Graph, Tensor, Var};

/// Gradients below this magnitude are compared absolutely rather than relatively.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Step used for an input value `x`: `1e-3 * max(1, |x|)`.
pub fn default_step(x: f64) -> f64 {
    1e-3 * x.abs().max(1.0)
}

/// Checks the gradient of `f` with respect to every element of every input.
///
/// The output of `f` is reduced to a scalar through a fixed random projection so
/// every output element contributes. `step` maps an input value to its
/// finite-difference step.
pub fn check<F>(name: &str, inputs: &[Tensor<f64>], f: F, step: impl Fn(f64) -> f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>], projection: Option<&Tensor<f64>>, grads: bool| -> Result<(f64, Vec<Tensor<f64>>, Tensor<f64>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let out_value = g.value(out).clone();
        let proj = match projection {
            Some(p) => p.clone(),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(0x9e37);
                Tensor::from_fn(out_value.shape(), |_, _, _, _| rng.gen_range(0.5..1.5))?
            }
        };
        let weighted = g.mul_const(out, &proj)?;
        let loss = g.sum(weighted);
        let value = g.value(loss).item();
        let mut gs = Vec::new();
        if grads {
            g.backward(loss)?;
            gs = vars.iter().map(|&v| g.grad(v).expect("param leaf has a gradient")).collect();
        }
        Ok((value, gs, proj))
    };

    let (_, analytic, proj) = eval(inputs, None, true)?;
    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.shape().numel() {
            let x = input.data()[j];
            let h = step(x);
            let mut perturbed = inputs.to_vec();
            let mut buf = input.to_vec();
            buf[j] = x + h;
            perturbed[i] = Tensor::new(input.shape(), buf.clone())?;
            let (plus, _, _) = eval(&perturbed, Some(&proj), false)?;
            buf[j] = x - h;
            perturbed[i] = Tensor::new(input.shape(), buf)?;
            let (minus, _, _) = eval(&perturbed, Some(&proj), false)?;
            let numeric = (plus - minus) / (2.0 * h);
            max_rel_err = max_rel_err.max(relative_error(analytic[i].data()[j], numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport { name: name.to_string(), max_rel_err, checked })
}

/// Random tensor whose entries stay at least `gap` away from every integer
/// multiple of `period` (keeps finite differences off kinks).
fn away_from_kinks(shape: crate::Shape, lo: f64, hi: f64, period: f64, gap: f64, rng: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
    Tensor::from_fn(shape, |_, _, _, _| loop {
        let v: f64 = rng.gen_range(lo..hi);
        let r = (v / period).rem_euclid(1.0) * period;
        if r > gap && period - r > gap {
            break v;
        }
    })
}

/// Finite-difference checks of every differentiable primitive on random
/// instances no larger than `1 x 4 x 6 x 8`.
pub fn primitive_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    use crate::Shape;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let s = Shape::new(1, 4, 6, 8);
    let small = Shape::new(1, 2, 5, 6);
    let u = |shape: Shape, lo: f64, hi: f64, rng: &mut ChaCha8Rng| Tensor::<f64>::uniform(shape, lo, hi, rng);
    let mut out = Vec::new();

    let x = u(small, -1.0, 1.0, rng)?;
    let w = u(Shape::new(3, 2, 3, 3), -1.0, 1.0, rng)?;
    let b = u(Shape::new(1, 3, 1, 1), -1.0, 1.0, rng)?;
    out.push(check("conv2d", &[x.clone(), w.clone(), b.clone()], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1), default_step)?);
    out.push(check("conv2d_stride2", &[x.clone(), w.clone(), b.clone()], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1), default_step)?);

    let mask = Tensor::from_fn(small.with_c(1), |_, _, _, _| if rng.gen_bool(0.4) { 1.0 } else { 0.0 })?;
    out.push(check(
        "sparse_conv2d",
        &[x.clone(), w.clone(), b.clone()],
        |g, v| Ok(g.sparse_conv2d(v[0], &mask, v[1], v[2], 1, 1)?.0),
        default_step,
    )?);

    let xb = u(Shape::new(2, 3, 4, 5), -2.0, 2.0, rng)?;
    let gamma = u(Shape::new(1, 3, 1, 1), 0.5, 1.5, rng)?;
    let beta = u(Shape::new(1, 3, 1, 1), -0.5, 0.5, rng)?;
    out.push(check(
        "batch_norm_train",
        &[xb.clone(), gamma.clone(), beta.clone()],
        |g, v| g.batch_norm(v[0], v[1], v[2], &mut crate::RunningStats::new(3), true),
        default_step,
    )?);
    out.push(check(
        "batch_norm_eval",
        &[xb, gamma, beta],
        |g, v| {
            let mut rs = crate::RunningStats { mean: vec![0.1, -0.2, 0.3], var: vec![0.5, 1.5, 2.0] };
            g.batch_norm(v[0], v[1], v[2], &mut rs, false)
        },
        default_step,
    )?);

    let kinked = u(s, -2.0, 2.0, rng)?.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    out.push(check("leaky_relu", &[kinked.clone()], |g, v| Ok(g.leaky_relu(v[0])), default_step)?);
    out.push(check("abs", &[kinked.clone()], |g, v| Ok(g.abs(v[0])), default_step)?);

    let a = u(s, -1.0, 1.0, rng)?;
    let bb = u(s, 0.5, 2.0, rng)?;
    out.push(check("add", &[a.clone(), bb.clone()], |g, v| g.add(v[0], v[1]), default_step)?);
    out.push(check("sub", &[a.clone(), bb.clone()], |g, v| g.sub(v[0], v[1]), default_step)?);
    out.push(check("mul", &[a.clone(), bb.clone()], |g, v| g.mul(v[0], v[1]), default_step)?);
    out.push(check("div", &[a.clone(), bb.clone()], |g, v| g.div(v[0], v[1]), default_step)?);
    out.push(check("exp", &[a.clone()], |g, v| Ok(g.exp(v[0])), default_step)?);
    out.push(check("negate", &[a.clone()], |g, v| Ok(g.neg(v[0])), default_step)?);
    out.push(check("scale", &[a.clone()], |g, v| Ok(g.scale(v[0], -2.5)), default_step)?);
    out.push(check("recip_scaled", &[bb.clone()], |g, v| Ok(g.recip_scaled(v[0], 3.0)), default_step)?);
    out.push(check("clamp", &[kinked.map(|v| v * 0.4)], |g, v| Ok(g.clamp(v[0], -0.5, 0.5)), default_step)?);
    out.push(check("sum", &[a.clone()], |g, v| Ok(g.sum(v[0])), default_step)?);
    out.push(check("mean", &[a.clone()], |g, v| Ok(g.mean(v[0])), default_step)?);
    let m = Tensor::from_fn(s, |_, _, _, _| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })?;
    out.push(check("masked_mean", &[a.clone()], |g, v| g.masked_mean(v[0], &m), default_step)?);
    out.push(check("mean_channels", &[a.clone()], |g, v| Ok(g.mean_channels(v[0])), default_step)?);
    out.push(check("channel_expectation", &[a.clone()], |g, v| Ok(g.channel_expectation(v[0])), default_step)?);
    let denom = u(crate::Shape::SCALAR, 0.5, 2.0, rng)?;
    out.push(check("div_by_scalar", &[a.clone(), denom], |g, v| g.div_by_scalar(v[0], v[1]), default_step)?);

    out.push(check("concat_channels", &[a.clone(), bb.clone()], |g, v| g.concat_channels(&[v[0], v[1]]), default_step)?);
    out.push(check("crop", &[a.clone()], |g, v| g.crop(v[0], 1, 2, 4, 5), default_step)?);
    out.push(check("bilinear_resize_up", &[a.clone()], |g, v| g.bilinear_resize(v[0], 9, 13), default_step)?);
    out.push(check("bilinear_resize_down", &[a.clone()], |g, v| g.bilinear_resize(v[0], 3, 3), default_step)?);
    out.push(check("avg_pool2d", &[a.clone()], |g, v| g.avg_pool2d(v[0], 3, 1, 1), default_step)?);
    out.push(check("adaptive_avg_pool2d", &[a.clone()], |g, v| g.adaptive_avg_pool2d(v[0], 4, 3), default_step)?);
    out.push(check("softmax_channel", &[u(s, -3.0, 3.0, rng)?], |g, v| Ok(g.softmax_channel(v[0])), default_step)?);

    let img = u(Shape::new(1, 3, 6, 8), 0.0, 1.0, rng)?;
    let disp = away_from_kinks(Shape::new(1, 1, 6, 8), -1.0, 6.0, 1.0, 0.15, rng)?;
    out.push(check("sample_horizontal", &[img, disp], |g, v| g.sample_horizontal(v[0], v[1]), default_step)?);

    let fl = u(s, -1.0, 1.0, rng)?;
    let fr = u(s, -1.0, 1.0, rng)?;
    out.push(check("correlation", &[fl, fr], |g, v| g.correlation(v[0], v[1], 3), default_step)?);
    Ok(out)
}
