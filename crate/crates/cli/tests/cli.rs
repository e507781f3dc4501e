use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use listereo_core::codec::{decode_ppm, encode_depth_png16};
use listereo_core::config::RunConfig;
use listereo_core::geometry::DepthMap;
use listereo_core::image::colormap;
use listereo_core::train::LATEST_CHECKPOINT;

const SMALL: &str = "\
data.samples = 4
model.base_channels = 4
model.fusion_channels = 8
model.fusion_residual_blocks = 1
model.decoder_channels = 8
model.psp_channels = 2
train.epochs = 2
train.lr_drop_epoch = 1
train.batch_size = 2
train.crop_height = 32
train.crop_width = 48
sweep.levels = 0.1, 1
sweep.betas = 0, 0.5
";

fn listereo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_listereo")).args(args).env("LISTEREO_THREADS", "1").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = listereo(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, format!("{SMALL}{extra}")).unwrap();
    p
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Generates a dataset with the small config and the given scene seed.
fn dataset(dir: &Path, name: &str, seed: u64) -> PathBuf {
    let cfg = write_config(dir, &format!("{name}.cfg"), &format!("scene.seed = {seed}\n"));
    let out = dir.join(name);
    ok(&["gen", "--config", s(&cfg), "--out", s(&out)]);
    out
}

#[test]
fn gen_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let a = dataset(dir.path(), "a", 3);
    let cfg = dir.path().join("a.cfg");
    let b = dir.path().join("b");
    ok(&["gen", "--config", s(&cfg), "--out", s(&b)]);
    let ta = tree(&a);
    assert_eq!(ta, tree(&b));
    assert_eq!(ta.keys().filter(|k| k.starts_with("gt")).count(), 4);
    assert_eq!(fs::read_to_string(a.join("manifest.txt")).unwrap().lines().count(), 4);
}

#[test]
fn gen_refuses_non_empty_directory_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    let cfg = write_config(dir.path(), "c.cfg", "");
    let r = listereo(&["gen", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&r), 1);
    assert_eq!(tree(&out).len(), 1);
    ok(&["gen", "--config", s(&cfg), "--out", s(&out), "--force"]);
    assert!(out.join("manifest.txt").is_file());
    assert!(out.join("keep.txt").is_file());
}

#[test]
fn invalid_config_names_the_key_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    for (text, key) in [("train.lr_drop_epoch = 9\n", "train.lr_drop_epoch"), ("model.colour = 3\n", "model.colour")] {
        let cfg = write_config(dir.path(), "bad.cfg", text);
        for args in [
            vec!["gen", "--config", s(&cfg), "--out", s(&out)],
            vec!["train", "--config", s(&cfg), "--data", s(&out), "--out", s(&out)],
        ] {
            let r = listereo(&args);
            assert_eq!(code(&r), 1, "{args:?}");
            assert!(String::from_utf8_lossy(&r.stderr).contains(key), "{}", String::from_utf8_lossy(&r.stderr));
            assert!(!out.exists());
        }
    }
}

#[test]
fn missing_files_exit_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    assert_eq!(code(&listereo(&["gen", "--config", s(&missing), "--out", s(&dir.path().join("o"))])), 3);
    assert_eq!(code(&listereo(&["eval", "--oracle", "--data", s(&missing)])), 3);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&listereo(&["train"])), 1);
    assert_eq!(code(&listereo(&["frobnicate"])), 1);
    let r = Command::new(env!("CARGO_BIN_EXE_listereo")).args(["gradcheck"]).env("LISTEREO_THREADS", "zero").output().unwrap();
    assert_eq!(code(&r), 1);
    assert_eq!(code(&listereo(&["--help"])), 0);
}

#[test]
fn self_supervised_training_never_opens_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "d", 0);
    fs::remove_dir_all(data.join("gt")).unwrap();
    let cfg = write_config(dir.path(), "t.cfg", "train.max_steps = 2\n");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("self")), "--mode", "self"]);
    let r = listereo(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("sup")), "--mode", "supervised"]);
    assert_eq!(code(&r), 3);
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "d", 0);
    let full = write_config(dir.path(), "full.cfg", "");
    let half = write_config(dir.path(), "half.cfg", "train.max_steps = 2\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["train", "--config", s(&full), "--data", s(&data), "--out", s(&a)]);
    ok(&["train", "--config", s(&half), "--data", s(&data), "--out", s(&b)]);
    let resume_from = dir.path().join("step2.ckpt");
    fs::copy(b.join(LATEST_CHECKPOINT), &resume_from).unwrap();
    ok(&["train", "--config", s(&full), "--data", s(&data), "--out", s(&b), "--from-checkpoint", s(&resume_from)]);
    assert_eq!(fs::read_to_string(a.join("train.log")).unwrap(), fs::read_to_string(b.join("train.log")).unwrap());
    assert_eq!(fs::read(a.join(LATEST_CHECKPOINT)).unwrap(), fs::read(b.join(LATEST_CHECKPOINT)).unwrap());
    assert_eq!(fs::read_to_string(a.join("train.log")).unwrap().lines().count(), 4);
}

#[test]
fn divergence_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "d", 0);
    let cfg = write_config(dir.path(), "nan.cfg", "").to_path_buf();
    let text = fs::read_to_string(&cfg).unwrap().replace("train.epochs = 2", "train.epochs = 10") + "train.lr_after = 1e30\n";
    fs::write(&cfg, text).unwrap();
    let r = listereo(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&r), 2, "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn eval_formats_agree_and_default_los_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "d", 0);
    let cfg = write_config(dir.path(), "t.cfg", "train.max_steps = 1\n");
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    let ck = run.join(LATEST_CHECKPOINT);
    let table = ok(&["eval", "--checkpoint", s(&ck), "--data", s(&data)]);
    assert_eq!(table, ok(&["eval", "--checkpoint", s(&ck), "--data", s(&data), "--los", "1.0"]));
    let csv = ok(&["eval", "--checkpoint", s(&ck), "--data", s(&data), "--format", "csv"]);
    let lines: Vec<&str> = csv.lines().collect();
    let from_csv: Vec<(&str, &str)> = lines[0].split(',').zip(lines[1].split(',')).collect();
    let from_table: Vec<(&str, &str)> = table.lines().map(|l| l.split_once(' ').map(|(k, v)| (k, v.trim())).unwrap()).collect();
    assert_eq!(from_csv, from_table);

    let out = dir.path().join("m.csv");
    ok(&["eval", "--checkpoint", s(&ck), "--data", s(&data), "--format", "csv", "--out", s(&out)]);
    assert_eq!(fs::read_to_string(out).unwrap(), csv);
}

#[test]
fn oracle_yields_zero_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "d", 0);
    let csv = ok(&["eval", "--oracle", "--data", s(&data), "--format", "csv"]);
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[1..6], ["0.000", "0.000", "0.0000", "0.0000", "0.0000"]);
    assert_ne!(row[6], "0");
}

#[test]
fn sweeps_write_reports_with_reference_rows() {
    let dir = tempfile::tempdir().unwrap();
    let train_data = dataset(dir.path(), "tr", 0);
    let eval_data = dataset(dir.path(), "ev", 100);
    let cfg = write_config(dir.path(), "sw.cfg", "train.max_steps = 1\n");
    let out = dir.path().join("train_sweep");
    ok(&["sweep", "train", "--config", s(&cfg), "--train-data", s(&train_data), "--eval-data", s(&eval_data), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("sweep_train.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.contains("kitti-scale-reference")).count(), 6);
    assert!(csv.contains("3177.83"));
    assert!(out.join("sweep_train.ppm").is_file());
    assert_eq!(fs::read_to_string(out.join("config.txt")).unwrap(), RunConfig::parse(&fs::read_to_string(&cfg).unwrap()).unwrap().serialize());

    let beta = dir.path().join("beta");
    ok(&["sweep", "beta", "--config", s(&cfg), "--train-data", s(&train_data), "--eval-data", s(&eval_data), "--out", s(&beta)]);
    let csv = fs::read_to_string(beta.join("sweep_beta.csv")).unwrap();
    assert!(csv.contains("1970.63") && csv.contains("1277.36"));
    assert_eq!(csv.lines().filter(|l| l.ends_with(",desk")).count(), 2);
}

#[test]
fn inference_sweep_reads_one_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "d", 0);
    let cfg = write_config(dir.path(), "t.cfg", "train.max_steps = 1\n");
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    let only = dir.path().join("only.ckpt");
    fs::rename(run.join(LATEST_CHECKPOINT), &only).unwrap();
    fs::remove_dir_all(&run).unwrap();
    let out = dir.path().join("infer");
    ok(&["sweep", "infer", "--config", s(&cfg), "--checkpoint", s(&only), "--eval-data", s(&data), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("sweep_infer.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let r = listereo(&["sweep", "infer", "--config", s(&cfg), "--eval-data", s(&data), "--out", s(&out)]);
    assert_eq!(code(&r), 1);
}

#[test]
fn colorize_two_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.png");
    let bytes = encode_depth_png16(&DepthMap::new(3, 1, vec![2.0, 8.0, 0.0]).unwrap()).unwrap();
    fs::write(&input, &bytes).unwrap();
    let out = dir.path().join("d.ppm");
    ok(&["colorize", "--input", s(&input), "--out", s(&out), "--max-depth", "10"]);
    assert_eq!(fs::read(&input).unwrap(), bytes);
    let img = decode_ppm(&fs::read(&out).unwrap()).unwrap();
    let px = |x: usize| [0, 1, 2].map(|c| img.data[x * 3 + c]);
    let q = |t: f64| colormap(t).map(|v| (v * 255.0).round() as u8);
    assert_eq!(px(0), q(0.2));
    assert_eq!(px(1), q(0.8));
    assert_eq!(px(2), [0, 0, 0]);
    let warmth = |p: [u8; 3]| p[0] as i32 - p[2] as i32;
    assert!(warmth(px(0)) > warmth(px(1)));
}

#[test]
fn gradcheck_reports_every_op_and_fails_loudly() {
    let text = ok(&["gradcheck"]);
    let names: Vec<String> = listereo_tensor::gradcheck::primitive_suite(0).unwrap().into_iter().map(|r| r.name).collect();
    for n in names.iter().chain([&"end_to_end_total_loss".to_string()]) {
        assert!(text.lines().any(|l| l.starts_with(n.as_str()) && l.ends_with("pass")), "{n}");
    }
    let r = listereo(&["gradcheck", "--tol", "0"]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stdout).contains("FAIL"));
}

#[test]
fn reference_parses_back_to_defaults() {
    let text = ok(&["reference"]);
    assert_eq!(RunConfig::parse(&text).unwrap(), RunConfig::default());
    assert_eq!(text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).count(), listereo_core::config::keys().len());
}

#[test]
fn help_lists_every_registered_flag() {
    for (path, flags) in listereo_cli::flag_registry() {
        let mut args: Vec<&str> = path.iter().map(String::as_str).collect();
        args.push("--help");
        assert_eq!(listereo_cli::flags_in(&ok(&args)), flags, "{path:?}");
    }
}
