use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use listereo_core::codec::{decode_depth_png16, encode_ppm};
use listereo_core::config::RunConfig;
use listereo_core::dataset::{scene_specs, write_dataset, DiskDataset, MANIFEST_FILE, SAMPLE_KINDS};
use listereo_core::eval::{
    ablate_loss_weights, evaluate_model, evaluate_oracle, plot_sweeps, sweep_inference_time, sweep_train_time, Evaluation,
    SweepSetup,
};
use listereo_core::image::colorize_depth;
use listereo_core::losses::TrainMode;
use listereo_core::net::{end_to_end_gradcheck, tiny_config, Checkpoint, ModelConfig};
use listereo_core::train::{train, TrainOutput, TrainState};
use listereo_core::Error;
use listereo_tensor::gradcheck::primitive_suite;

use crate::{
    ColorizeArgs, Command, EvalArgs, Failure, Format, GenArgs, GradcheckArgs, SweepArgs, SweepKindArg, TrainArgs, THREADS_ENV,
};

/// Copy of the run configuration written next to every output.
pub const CONFIG_FILE: &str = "config.txt";

const PLOT_SIZE: (usize, usize) = (320, 200);
const E2E_STEP: f64 = 1e-6;

type Outcome = Result<(), Failure>;

pub(crate) fn execute(command: Command) -> Outcome {
    init_threads()?;
    match command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Colorize(a) => colorize(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Reference => {
            print!("{}", RunConfig::reference());
            Ok(())
        }
    }
}

fn init_threads() -> Outcome {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::Usage(format!("{THREADS_ENV}: expected a positive integer, got {v:?}")))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    listereo_tensor::init_threads(threads);
    Ok(())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |source| Failure::Core(Error::Io { path: path.to_path_buf(), source })
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(RunConfig::parse(&text)?)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Outcome {
    fs::write(path, bytes).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Outcome {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn emit(text: &str, out: Option<&Path>) -> Outcome {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str, kind: &str) -> Result<&'a Path, Failure> {
    value.as_deref().ok_or_else(|| Failure::Usage(format!("{flag} is required for the {kind} sweep")))
}

/// Model and mode keys stored in checkpoint metadata so that a checkpoint can
/// be evaluated without its run configuration.
fn model_meta(cfg: &RunConfig) -> Vec<(String, String)> {
    cfg.serialize()
        .lines()
        .filter(|l| l.starts_with("model.") || l.starts_with("train.mode"))
        .filter_map(|l| l.split_once(" = ").map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

fn model_from_checkpoint(ck: &Checkpoint) -> Result<ModelConfig, Failure> {
    let text: String = ck.meta.iter().filter(|(k, _)| k.starts_with("model.")).map(|(k, v)| format!("{k} = {v}\n")).collect();
    if text.is_empty() {
        return Err(Error::Config { key: "model".into(), detail: "checkpoint carries no model.* metadata".into() }.into());
    }
    Ok(RunConfig::parse(&text)?.model)
}

fn mode_from_checkpoint(ck: &Checkpoint, fallback: TrainMode) -> Result<TrainMode, Failure> {
    match ck.meta("train.mode") {
        Some(m) => m.parse().map_err(|e: String| Error::Config { key: "train.mode".into(), detail: e }.into()),
        None => Ok(fallback),
    }
}

fn gen(a: GenArgs) -> Outcome {
    let cfg = load_config(a.config.as_deref())?;
    if a.out.exists() {
        let mut entries = fs::read_dir(&a.out).map_err(io_err(&a.out))?;
        if entries.next().is_some() {
            if !a.force {
                return Err(Failure::Usage(format!("{}: directory is not empty; pass --force to replace it", a.out.display())));
            }
            // Only entries a previous `gen` would have written are removed.
            for kind in SAMPLE_KINDS {
                let sub = a.out.join(kind);
                if sub.is_dir() {
                    fs::remove_dir_all(&sub).map_err(io_err(&sub))?;
                }
            }
            for file in [MANIFEST_FILE, CONFIG_FILE] {
                let p = a.out.join(file);
                if p.is_file() {
                    fs::remove_file(&p).map_err(io_err(&p))?;
                }
            }
        }
    }
    create_dir(&a.out)?;
    let ds = write_dataset(&scene_specs(&cfg.scene, cfg.samples), &a.out)?;
    write(&a.out.join(CONFIG_FILE), cfg.serialize())?;
    println!("wrote {} samples to {}", ds.records.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(mode) = a.mode {
        cfg.train.mode = mode;
    }
    cfg.validate()?;
    let data = DiskDataset::open(&a.data)?;
    let state = match &a.from_checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if model_from_checkpoint(&ck)? != cfg.model {
                return Err(Error::Config { key: "model".into(), detail: format!("differs from {}", p.display()) }.into());
            }
            TrainState::from_checkpoint(&ck)?
        }
        None => TrainState::new(cfg.init_seed),
    };
    create_dir(&a.out)?;
    write(&a.out.join(CONFIG_FILE), cfg.serialize())?;
    let output = TrainOutput { dir: Some(a.out.clone()), meta: model_meta(&cfg) };
    let (state, log) = train(&data, &cfg.model, &cfg.train, state, &output)?;
    match log.last() {
        Some(last) => println!("step {} loss {:.6}; checkpoints in {}", state.step, last.report.total, a.out.display()),
        None => println!("nothing to do: already at step {}", state.step),
    }
    Ok(())
}

const METRIC_COLUMNS: [&str; 7] = ["los", "rmse_mm", "mae_mm", "irmse", "imae", "disp_mae_px", "valid_px"];

fn metric_values(e: &Evaluation, los: f64) -> [String; 7] {
    let m = &e.metrics;
    [
        los.to_string(),
        format!("{:.3}", m.rmse_mm),
        format!("{:.3}", m.mae_mm),
        format!("{:.4}", m.irmse_per_km),
        format!("{:.4}", m.imae_per_km),
        format!("{:.4}", e.disparity_mae_px),
        m.valid_pixel_count.to_string(),
    ]
}

/// Both formats print the same rounded strings.
pub fn format_metrics(e: &Evaluation, los: f64, format: Format) -> String {
    let values = metric_values(e, los);
    match format {
        Format::Csv => format!("{}\n{}\n", METRIC_COLUMNS.join(","), values.join(",")),
        Format::Table => {
            let mut s = String::new();
            for (k, v) in METRIC_COLUMNS.iter().zip(&values) {
                let _ = writeln!(s, "{k:<12} {v:>14}");
            }
            s
        }
    }
}

fn check_los(los: f64) -> Outcome {
    if los > 0.0 && los <= 1.0 {
        Ok(())
    } else {
        Err(Failure::Usage(format!("--los must lie in (0, 1], got {los}")))
    }
}

fn eval(a: EvalArgs) -> Outcome {
    let cfg = load_config(a.config.as_deref())?;
    let los = a.los.unwrap_or(cfg.eval.los);
    check_los(los)?;
    let data = DiskDataset::open(&a.data)?;
    let e = match &a.checkpoint {
        Some(p) if !a.oracle => {
            let ck = Checkpoint::load(p)?;
            let model = model_from_checkpoint(&ck)?;
            evaluate_model(&ck.store()?, &model, &data, los, cfg.eval.seed)?
        }
        _ => evaluate_oracle(&data, los, cfg.eval.seed)?,
    };
    emit(&format_metrics(&e, los, a.format), a.out.as_deref())
}

fn sweep(a: SweepArgs) -> Outcome {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(mode) = a.mode {
        cfg.train.mode = mode;
    }
    cfg.validate()?;
    let (name, csv, table, plot) = match a.kind {
        SweepKindArg::Infer => {
            let ck = Checkpoint::load(required(&a.checkpoint, "--checkpoint", "infer")?)?;
            let model = model_from_checkpoint(&ck)?;
            let mode = mode_from_checkpoint(&ck, cfg.train.mode)?;
            let eval_data = DiskDataset::open(&a.eval_data)?;
            let r = sweep_inference_time(&cfg.sweep.levels, &ck.store()?, &model, mode, &eval_data, cfg.eval.seed)?;
            ("infer", r.to_csv(), r.to_table(), Some(plot_sweeps(&[&r], PLOT_SIZE.0, PLOT_SIZE.1)?))
        }
        kind => {
            let label = if kind == SweepKindArg::Train { "train" } else { "beta" };
            let train_data = DiskDataset::open(required(&a.train_data, "--train-data", label)?)?;
            let eval_data = DiskDataset::open(&a.eval_data)?;
            let setup = SweepSetup {
                train_data: &train_data,
                eval_data: &eval_data,
                model: cfg.model.clone(),
                train: cfg.train.clone(),
                init_seed: cfg.init_seed,
                eval_seed: cfg.eval.seed,
            };
            if kind == SweepKindArg::Train {
                let r = sweep_train_time(&cfg.sweep.levels, &setup)?;
                ("train", r.to_csv(), r.to_table(), Some(plot_sweeps(&[&r], PLOT_SIZE.0, PLOT_SIZE.1)?))
            } else {
                let r = ablate_loss_weights(&cfg.sweep.betas, &setup)?;
                ("beta", r.to_csv(), r.to_table(), None)
            }
        }
    };
    create_dir(&a.out)?;
    write(&a.out.join(CONFIG_FILE), cfg.serialize())?;
    write(&a.out.join(format!("sweep_{name}.csv")), &csv)?;
    write(&a.out.join(format!("sweep_{name}.txt")), &table)?;
    if let Some(img) = plot {
        write(&a.out.join(format!("sweep_{name}.ppm")), encode_ppm(&img))?;
    }
    print!("{table}");
    Ok(())
}

fn colorize(a: ColorizeArgs) -> Outcome {
    if let Some(d) = a.max_depth {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Failure::Usage(format!("--max-depth must be positive, got {d}")));
        }
    }
    let bytes = fs::read(&a.input).map_err(io_err(&a.input))?;
    let map = decode_depth_png16(&bytes).map_err(|e| match e {
        Error::Decode(detail) => Error::Format { path: a.input.clone(), detail },
        other => other,
    })?;
    write(&a.out, encode_ppm(&colorize_depth(&map, a.max_depth)))
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    let mut rows: Vec<(String, usize, f64, f64)> = primitive_suite(a.seed)
        .map_err(Error::from)?
        .into_iter()
        .map(|r| (r.name, r.checked, r.max_rel_err, a.tol))
        .collect();
    let e2e = end_to_end_gradcheck(&tiny_config(), a.params, E2E_STEP, a.seed)?;
    rows.push((e2e.name, e2e.checked, e2e.max_rel_err, a.e2e_tol));
    println!("{:<28} {:>7} {:>12} {:>10}", "op", "checked", "max_rel_err", "tolerance");
    let mut failed = 0;
    for (name, checked, err, tol) in &rows {
        let ok = *err < *tol;
        failed += usize::from(!ok);
        println!("{name:<28} {checked:>7} {err:>12.3e} {tol:>10.0e} {}", if ok { "pass" } else { "FAIL" });
    }
    if failed > 0 {
        return Err(Failure::Numeric(format!("{failed} of {} gradient checks failed", rows.len())));
    }
    println!("all {} checks passed", rows.len());
    Ok(())
}
