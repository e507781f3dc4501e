use listereo_core::dataset::generate_scenes;
use listereo_core::losses::*;
use listereo_core::synth::SceneSpec;
use listereo_tensor::{gradcheck, Graph, Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: Shape, v: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, v).unwrap()
}

fn random(shape: Shape, lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape, lo, hi, &mut rng).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

/// 3x3 window statistics clipped to the image, evaluated per pixel.
fn ssim_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let s = a.shape();
    let mut out = Vec::with_capacity(s.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut vals = Vec::new();
                    for yy in y.saturating_sub(1)..=(y + 1).min(s.h - 1) {
                        for xx in x.saturating_sub(1)..=(x + 1).min(s.w - 1) {
                            vals.push((a.get(n, c, yy, xx), b.get(n, c, yy, xx)));
                        }
                    }
                    let k = vals.len() as f64;
                    let ma = vals.iter().map(|v| v.0).sum::<f64>() / k;
                    let mb = vals.iter().map(|v| v.1).sum::<f64>() / k;
                    let va = vals.iter().map(|v| v.0 * v.0).sum::<f64>() / k - ma * ma;
                    let vb = vals.iter().map(|v| v.1 * v.1).sum::<f64>() / k - mb * mb;
                    let cov = vals.iter().map(|v| v.0 * v.1).sum::<f64>() / k - ma * mb;
                    let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
                    let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
                    out.push(num / den);
                }
            }
        }
    }
    out
}

fn ssim_values(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let mut g = Graph::new();
    let (va, vb) = (g.input(a.clone()), g.input(b.clone()));
    let s = ssim(&mut g, va, vb).unwrap();
    g.value(s).to_vec()
}

fn photometric(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let mut g = Graph::new();
    let (va, vb) = (g.input(a.clone()), g.input(b.clone()));
    let l = photometric_loss(&mut g, va, vb, &LossWeights::default()).unwrap();
    g.value(l).item()
}

/// Naive stencil evaluation of the edge-aware second-order smoothness term.
fn smoothness_oracle(image: &Tensor<f64>, field: &Tensor<f64>) -> f64 {
    let s = field.shape();
    let c = image.shape().c;
    let img_d2 = |n, y: usize, x: usize, dy: usize, dx: usize| {
        (0..c)
            .map(|ch| (image.get(n, ch, y - dy, x - dx) - 2.0 * image.get(n, ch, y, x) + image.get(n, ch, y + dy, x + dx)).abs())
            .sum::<f64>()
            / c as f64
    };
    let mut total = 0.0;
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                if x >= 1 && x + 1 < s.w {
                    let d = field.get(n, 0, y, x - 1) - 2.0 * field.get(n, 0, y, x) + field.get(n, 0, y, x + 1);
                    total += d.abs() * (-img_d2(n, y, x, 0, 1)).exp();
                }
                if y >= 1 && y + 1 < s.h {
                    let d = field.get(n, 0, y - 1, x) - 2.0 * field.get(n, 0, y, x) + field.get(n, 0, y + 1, x);
                    total += d.abs() * (-img_d2(n, y, x, 1, 0)).exp();
                }
            }
        }
    }
    total / s.numel() as f64
}

fn smoothness(image: &Tensor<f64>, field: &Tensor<f64>) -> f64 {
    let mut g = Graph::new();
    let (vi, vf) = (g.input(image.clone()), g.input(field.clone()));
    let l = edge_aware_smoothness(&mut g, vi, vf).unwrap();
    g.value(l).item()
}

/// Linear interpolation along rows at `x - d`, zero outside `[0, w - 1]`.
fn warp_oracle(img: &Tensor<f64>, disp: &Tensor<f64>) -> Vec<f64> {
    let s = img.shape();
    let mut out = Vec::new();
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let p = x as f64 - disp.get(n, 0, y, x);
                    if p < 0.0 || p > (s.w - 1) as f64 {
                        out.push(0.0);
                        continue;
                    }
                    let x0 = p.floor() as usize;
                    let f = p - x0 as f64;
                    let v0 = img.get(n, c, y, x0);
                    let v1 = if x0 + 1 < s.w { img.get(n, c, y, x0 + 1) } else { 0.0 };
                    out.push(v0 * (1.0 - f) + v1 * f);
                }
            }
        }
    }
    out
}

#[test]
fn ssim_self_similarity() {
    let a = random(Shape::new(1, 3, 6, 8), 0.0, 1.0, 1);
    for v in ssim_values(&a, &a) {
        assert!((v - 1.0).abs() < 1e-6);
    }
}

#[test]
fn ssim_matches_windowed_oracle_on_5x5_patches() {
    for seed in 0..20 {
        let s = Shape::new(1, 1, 5, 5);
        let a = random(s, 0.0, 1.0, seed);
        let b = random(s, 0.0, 1.0, seed + 100);
        for (x, y) in ssim_values(&a, &b).iter().zip(ssim_oracle(&a, &b)) {
            assert!(rel_close(*x, y, 1e-9), "{x} vs {y}");
        }
    }
}

#[test]
fn photometric_identical_views_is_zero() {
    let a = random(Shape::new(1, 3, 6, 8), 0.0, 1.0, 4);
    assert!(photometric(&a, &a).abs() < 1e-12);
}

#[test]
fn photometric_uniform_offset_matches_oracle() {
    let a = random(Shape::new(1, 3, 6, 8), 0.1, 0.8, 5);
    let b = a.map(|v| v + 0.1);
    let w = LossWeights::default();
    let s = ssim_oracle(&a, &b);
    let structural = s.iter().map(|v| ((1.0 - v) / 2.0).clamp(0.0, 1.0)).sum::<f64>() / s.len() as f64;
    let want = w.lambda1 * structural + w.lambda2 * 0.1;
    assert!(rel_close(photometric(&a, &b), want, 1e-9));
    assert!(structural > 0.0);
}

#[test]
fn smoothness_ramp_is_zero() {
    let s = Shape::new(1, 1, 5, 7);
    let ramp = Tensor::from_fn(s, |_, _, y, x| 0.3 * x as f64 - 0.2 * y as f64 + 1.0).unwrap();
    let img = random(Shape::new(1, 3, 5, 7), 0.0, 1.0, 6);
    assert!(smoothness(&img, &ramp).abs() < 1e-9);
    let depth = Tensor::full(s, 4.0).unwrap();
    let mut g = Graph::new();
    let (vi, vd, vz) = (g.input(img), g.input(ramp), g.input(depth));
    let l = smoothness_loss(&mut g, vi, vd, vz).unwrap();
    assert!(g.value(l).item().abs() < 1e-9);
}

#[test]
fn smoothness_step_cheaper_at_image_edge() {
    let s = Shape::new(1, 1, 4, 8);
    let step = Tensor::from_fn(s, |_, _, _, x| if x < 4 { 0.0 } else { 5.0 }).unwrap();
    let edge = Tensor::from_fn(Shape::new(1, 3, 4, 8), |_, _, _, x| if x < 4 { 0.0 } else { 1.0 }).unwrap();
    let flat = Tensor::full(Shape::new(1, 3, 4, 8), 0.5).unwrap();
    assert!(smoothness(&edge, &step) < smoothness(&flat, &step));
}

#[test]
fn smoothness_matches_stencil_oracle_4x4() {
    let disp = random(Shape::new(1, 1, 4, 4), 0.0, 10.0, 7);
    let img = random(Shape::new(1, 3, 4, 4), 0.0, 1.0, 8);
    assert!(rel_close(smoothness(&img, &disp), smoothness_oracle(&img, &disp), 1e-9));
}

#[test]
fn oracle_equivalence_twenty_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for k in 0..20u64 {
        let (c, h, w) = (rng.gen_range(1..=4), rng.gen_range(3..=6), rng.gen_range(3..=8));
        let a = random(Shape::new(1, c, h, w), 0.0, 1.0, 1000 + k);
        let b = random(Shape::new(1, c, h, w), 0.0, 1.0, 2000 + k);
        for (x, y) in ssim_values(&a, &b).iter().zip(ssim_oracle(&a, &b)) {
            assert!(rel_close(*x, y, 1e-9));
        }
        let field = random(Shape::new(1, 1, h, w), -3.0, 3.0, 3000 + k);
        assert!(rel_close(smoothness(&a, &field), smoothness_oracle(&a, &field), 1e-9));
        let disp = random(Shape::new(1, 1, h, w), -1.0, w as f64, 4000 + k);
        let mut g = Graph::new();
        let (va, vd) = (g.input(a.clone()), g.input(disp.clone()));
        let warped = warp_right_to_left(&mut g, va, vd).unwrap();
        for (x, y) in g.value(warped).data().iter().zip(warp_oracle(&a, &disp)) {
            assert!(rel_close(*x, y, 1e-9), "{x} vs {y}");
        }
    }
}

#[test]
fn zero_disparity_warp_is_identity_and_far_shift_is_zero() {
    let img = random(Shape::new(1, 3, 4, 6), 0.0, 1.0, 9);
    let mut g = Graph::new();
    let vi = g.input(img.clone());
    let zero = g.input(Tensor::zeros(Shape::new(1, 1, 4, 6)).unwrap());
    let far = g.input(Tensor::full(Shape::new(1, 1, 4, 6), 7.0).unwrap());
    let same = warp_right_to_left(&mut g, vi, zero).unwrap();
    let gone = warp_right_to_left(&mut g, vi, far).unwrap();
    assert_eq!(g.value(same).data(), img.data());
    assert!(g.value(gone).data().iter().all(|&v| v == 0.0));
}

#[test]
fn ground_truth_disparity_reconstructs_left_view() {
    let scenes = generate_scenes(&SceneSpec::desk(300), 6).unwrap();
    for s in &scenes {
        let (w, h) = (s.left.width, s.left.height);
        let left = s.left.to_tensor::<f64>().map(|v| 0.5 * v + 0.5);
        let right = s.right.to_tensor::<f64>().map(|v| 0.5 * v + 0.5);
        let disp = t(Shape::new(1, 1, h, w), s.gt_disparity.disparity.clone());
        let zero = Tensor::zeros(Shape::new(1, 1, h, w)).unwrap();
        let mut g = Graph::new();
        let (vr, vd, vz, vl) = (g.input(right), g.input(disp), g.input(zero), g.input(left.clone()));
        let warped = warp_right_to_left(&mut g, vr, vd).unwrap();
        let unwarped = warp_right_to_left(&mut g, vr, vz).unwrap();
        let wv = g.value(warped).clone();
        for c in 0..3 {
            let (mut err, mut n) = (0.0, 0);
            for y in 0..h {
                for x in 0..w {
                    if !s.occlusion.get(x, y) {
                        err += (wv.get(0, c, y, x) - left.get(0, c, y, x)).abs();
                        n += 1;
                    }
                }
            }
            assert!(err / n as f64 <= 3e-2, "seed {} channel {c}: {}", s.seed, err / n as f64);
        }
        let w8 = LossWeights::default();
        let with_gt = photometric_loss(&mut g, vl, warped, &w8).unwrap();
        let with_zero = photometric_loss(&mut g, vl, unwarped, &w8).unwrap();
        assert!(g.value(with_gt).item() < g.value(with_zero).item());
    }
}

#[test]
fn total_loss_gradient_wrt_disparity() {
    let s = Shape::new(1, 1, 6, 8);
    let left = random(Shape::new(1, 3, 6, 8), -1.0, 1.0, 10);
    let right = random(Shape::new(1, 3, 6, 8), -1.0, 1.0, 11);
    let mut target = random(s, 2.0, 20.0, 12).to_vec();
    for (i, v) in target.iter_mut().enumerate() {
        if i % 3 != 0 {
            *v = 0.0;
        }
    }
    let target = t(s, target);
    let disp0 = random(s, 1.0, 5.0, 13);
    let w = LossWeights::default();
    let f = |g: &mut Graph<f64>, vars: &[listereo_tensor::Var]| {
        let (l, r) = (g.input(left.clone()), g.input(right.clone()));
        let depth = g.recip_scaled(vars[0], 50.0);
        let (terms, _) = total_loss(g, l, r, vars[0], depth, &target, &w).unwrap();
        Ok(terms.total)
    };
    let report = gradcheck::check("total_loss", &[disp0], f, |x| 1e-6 * x.abs().max(1.0)).unwrap();
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn weighted_total_examples() {
    let w = LossWeights { alpha: 1.0, beta: 0.5, gamma: 0.01, lambda1: 0.85, lambda2: 0.2 };
    assert!((LossReport::from_components(&w, 2.0, 4.0, 10.0).total - 4.1).abs() < 1e-12);
    let w = LossWeights { alpha: 1.0, beta: 0.0, gamma: 0.0, ..w };
    assert_eq!(LossReport::from_components(&w, 2.0, 4.0, 10.0).total, 2.0);
}

#[test]
fn modes_differ_only_in_depth_target() {
    let s = Shape::new(1, 1, 1, 2);
    let sparse = t(s, vec![1.0, 0.0]);
    let gt = t(s, vec![1.5, 2.0]);
    assert_eq!(depth_target(TrainMode::SelfSupervised, &sparse, Some(&gt)).unwrap(), &sparse);
    assert_eq!(depth_target(TrainMode::Supervised, &sparse, Some(&gt)).unwrap(), &gt);
    assert!(depth_target(TrainMode::Supervised, &sparse, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ssim_and_photometric_are_symmetric(seed in 0u64..10_000) {
        let s = Shape::new(1, 3, 4, 5);
        let a = random(s, 0.0, 1.0, seed);
        let b = random(s, 0.0, 1.0, seed ^ 0xabc);
        for (x, y) in ssim_values(&a, &b).iter().zip(ssim_values(&b, &a)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert!((photometric(&a, &b) - photometric(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn losses_are_finite_and_non_negative(seed in 0u64..10_000) {
        let s = Shape::new(1, 1, 5, 6);
        let left = random(Shape::new(1, 3, 5, 6), -1.0, 1.0, seed);
        let right = random(Shape::new(1, 3, 5, 6), -1.0, 1.0, seed + 1);
        let target = random(s, 0.0, 30.0, seed + 2).map(|v| if v < 15.0 { 0.0 } else { v });
        let disp = random(s, 0.0, 8.0, seed + 3);
        let mut g = Graph::new();
        let (l, r, d) = (g.input(left), g.input(right), g.input(disp));
        let depth = g.recip_scaled(d, 50.0);
        let (_, rep) = total_loss(&mut g, l, r, d, depth, &target, &LossWeights::default()).unwrap();
        for v in [rep.total, rep.depth, rep.photometric, rep.smooth] {
            prop_assert!(v.is_finite() && v >= 0.0);
        }
        let w = LossWeights::default();
        prop_assert!((rep.total - (w.alpha * rep.depth + w.beta * rep.photometric + w.gamma * rep.smooth)).abs() < 1e-9);
    }

    #[test]
    fn depth_loss_ignores_invalid_pixels(seed in 0u64..10_000, junk in -50.0f64..50.0) {
        let s = Shape::new(1, 1, 2, 4);
        let target = t(s, vec![3.0, 0.0, 7.0, 0.0, 0.0, 2.0, 0.0, 9.0]);
        let pred = random(s, 0.0, 10.0, seed);
        let mut moved = pred.to_vec();
        moved[1] = junk;
        moved[6] = -junk;
        let eval = |p: Tensor<f64>| {
            let mut g = Graph::new();
            let v = g.input(p);
            let l = sparse_depth_loss(&mut g, v, &target).unwrap();
            g.value(l).item()
        };
        prop_assert_eq!(eval(pred), eval(t(s, moved)));
    }
}
