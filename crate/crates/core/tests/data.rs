use listereo_core::codec::{decode_depth_png16, decode_ppm, encode_depth_png16, encode_ppm, DEPTH_PNG_QUANTUM_M};
use listereo_core::dataset::{scene_specs, write_dataset, DiskDataset, SampleSource};
use listereo_core::eval::{compute_metrics, eval_inputs, evaluate_oracle};
use listereo_core::geometry::DepthMap;
use listereo_core::image::{colorize_depth, colormap, RgbImage, DEPTH_COLORMAP};
use listereo_core::synth::{generate_scene, lidar_rows, SceneSpec};
use listereo_core::Error;
use proptest::prelude::*;

fn quantized_map() -> impl Strategy<Value = DepthMap> {
    (1usize..9, 1usize..9).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop_oneof![Just(0u16), 1u16..=u16::MAX], w * h).prop_map(move |codes| {
            DepthMap::new(w, h, codes.iter().map(|&c| c as f64 * DEPTH_PNG_QUANTUM_M).collect()).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn png16_is_lossless_on_the_grid(map in quantized_map()) {
        let back = decode_depth_png16(&encode_depth_png16(&map).unwrap()).unwrap();
        prop_assert_eq!(back, map);
    }

    #[test]
    fn png16_error_is_half_a_quantum(d in 0.01f64..200.0) {
        let map = DepthMap::new(1, 1, vec![d]).unwrap();
        let back = decode_depth_png16(&encode_depth_png16(&map).unwrap()).unwrap();
        prop_assert!(back.depth[0] > 0.0);
        prop_assert!((back.depth[0] - d).abs() <= DEPTH_PNG_QUANTUM_M / 2.0 + 1e-12);
    }

    #[test]
    fn ppm_round_trip(w in 1usize..7, h in 1usize..7, seed in any::<u64>()) {
        let bytes: Vec<u8> = (0..w * h * 3).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
        let img = RgbImage::new(w, h, bytes).unwrap();
        prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }

    // Scaling both maps by k scales depth errors by k and inverse errors by 1/k.
    #[test]
    fn metrics_scale_with_depth(
        pairs in prop::collection::vec((0.5f64..50.0, 0.5f64..50.0), 1..40),
        k in 0.1f64..10.0,
    ) {
        let n = pairs.len();
        let pred = DepthMap::new(n, 1, pairs.iter().map(|p| p.0).collect()).unwrap();
        let gt = DepthMap::new(n, 1, pairs.iter().map(|p| p.1).collect()).unwrap();
        let scale = |m: &DepthMap| DepthMap::new(n, 1, m.depth.iter().map(|d| d * k).collect()).unwrap();
        let a = compute_metrics(&pred, &gt).unwrap();
        let b = compute_metrics(&scale(&pred), &scale(&gt)).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0);
        prop_assert!(close(b.rmse_mm, k * a.rmse_mm));
        prop_assert!(close(b.mae_mm, k * a.mae_mm));
        prop_assert!(close(b.irmse_per_km, a.irmse_per_km / k));
        prop_assert!(close(b.imae_per_km, a.imae_per_km / k));
        prop_assert!(a.mae_mm <= a.rmse_mm + 1e-9);
    }

    #[test]
    fn colormap_is_warmer_when_nearer(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        prop_assume!((a - b).abs() > 1e-9);
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        let warmth = |t: f64| { let c = colormap(t); c[0] - c[2] };
        prop_assert!(warmth(near) > warmth(far));
    }
}

#[test]
fn colormap_hits_its_anchors() {
    let last = DEPTH_COLORMAP.len() - 1;
    for (i, anchor) in DEPTH_COLORMAP.iter().enumerate() {
        let c = colormap(i as f64 / last as f64);
        for k in 0..3 {
            assert!((c[k] - anchor[k]).abs() < 1e-12);
        }
    }
    assert_eq!(colormap(-1.0), colormap(0.0));
    assert_eq!(colormap(2.0), colormap(1.0));
}

#[test]
fn colorize_blacks_out_invalid_pixels() {
    let map = DepthMap::new(3, 1, vec![0.0, 2.0, 4.0]).unwrap();
    let img = colorize_depth(&map, None);
    assert_eq!(img.data[..3], [0, 0, 0]);
    let far = DEPTH_COLORMAP[DEPTH_COLORMAP.len() - 1].map(|v| (v * 255.0).round() as u8);
    assert_eq!(img.data[6..9], far);
    let fixed = colorize_depth(&map, Some(8.0));
    assert_ne!(fixed.data[6..9], far);
}

#[test]
fn metrics_hand_example() {
    // errors of +1 m and -3 m: RMSE sqrt(5) m, MAE 2 m
    let gt = DepthMap::new(3, 1, vec![4.0, 5.0, 0.0]).unwrap();
    let pred = DepthMap::new(3, 1, vec![5.0, 2.0, 7.0]).unwrap();
    let m = compute_metrics(&pred, &gt).unwrap();
    assert!((m.rmse_mm - 5f64.sqrt() * 1000.0).abs() < 1e-9);
    assert!((m.mae_mm - 2000.0).abs() < 1e-9);
    let ie: [f64; 2] = [1000.0 / 5.0 - 1000.0 / 4.0, 1000.0 / 2.0 - 1000.0 / 5.0];
    assert!((m.imae_per_km - (ie[0].abs() + ie[1].abs()) / 2.0).abs() < 1e-9);
    assert_eq!(m.valid_pixel_count, 2);
}

#[test]
fn scenes_respect_spec() {
    for seed in 0..5 {
        let spec = SceneSpec::desk(seed);
        let s = generate_scene(&spec).unwrap();
        assert_eq!(s, generate_scene(&spec).unwrap());
        let top = spec.rig.height - lidar_rows(spec.rig.height, spec.lidar_coverage);
        for y in 0..spec.rig.height {
            for x in 0..spec.rig.width {
                let d = s.gt_depth.get(x, y);
                assert!(d >= spec.depth_near_m - 1e-9 && d <= spec.depth_far_m + 1e-9, "depth {d} at ({x},{y})");
                let disp = s.gt_disparity.get(x, y);
                assert!((disp * d - spec.rig.fb()).abs() < 1e-6);
                let sp = s.sparse_depth.get(x, y);
                if sp > 0.0 {
                    assert!(y >= top, "return above the covered rows");
                    assert_eq!(sp, d);
                }
            }
        }
    }
}

#[test]
fn dataset_round_trip_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let specs = scene_specs(&SceneSpec::desk(40), 3);
    write_dataset(&specs, dir.path()).unwrap();
    let ds = DiskDataset::open(dir.path()).unwrap();
    assert_eq!(ds.len(), 3);
    for (i, spec) in specs.iter().enumerate() {
        let s = generate_scene(spec).unwrap();
        let inp = ds.inputs(i).unwrap();
        assert_eq!(inp.left, s.left);
        assert_eq!(inp.right, s.right);
        assert_eq!(ds.occlusion(i).unwrap(), s.occlusion);
        let gt = ds.ground_truth(i).unwrap();
        for (a, b) in gt.depth.iter().zip(&s.gt_depth.depth) {
            assert!((a - b).abs() <= DEPTH_PNG_QUANTUM_M / 2.0 + 1e-12);
        }
        let full = eval_inputs(&ds, i, 1.0, 9).unwrap();
        assert_eq!(full.sparse, inp.sparse);
        let tenth = eval_inputs(&ds, i, 0.1, 9).unwrap();
        assert!(tenth.sparse.valid_count() <= inp.sparse.valid_count());
    }
    let ev = evaluate_oracle(&ds, 0.5, 1).unwrap();
    assert_eq!(ev.metrics.rmse_mm, 0.0);
    assert_eq!(ev.per_sample.len(), 3);
}

#[test]
fn missing_manifest_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    match DiskDataset::open(dir.path()) {
        Err(Error::Io { .. }) => {}
        other => panic!("expected an I/O error, got {other:?}"),
    }
}
