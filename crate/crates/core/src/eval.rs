//! Depth metrics, sparsity sweeps, loss-weight ablation and report output.

use std::fmt::Write as _;

use listereo_tensor::Shape;

use crate::dataset::{SampleSource, StereoInputs};
use crate::error::{contract, Error, Result};
use crate::geometry::{subsample_depth, DepthMap};
use crate::image::RgbImage;
use crate::losses::TrainMode;
use crate::net::{forward, prepare_input, Builder, ModelConfig, ParamStore, Variant};
use crate::train::{train, TrainConfig, TrainOutput, TrainState};

/// Label carried by every embedded reference row.
pub const REFERENCE_LABEL: &str = "kitti-scale-reference";

pub const CSV_HEADER: &str = "los,rmse_mm,mae_mm,irmse,imae,variant,mode";

/// Reported KITTI-scale RMSE (mm) for train-time sparsity levels
/// 0.01, 0.02, 0.05, 0.1, 0.2, 1.0.
pub const REFERENCE_LEVELS: [f64; 6] = [0.01, 0.02, 0.05, 0.1, 0.2, 1.0];
pub const REFERENCE_SELF_SUPERVISED_RMSE_MM: [f64; 6] = [3177.83, 2030.36, 1587.28, 1438.79, 1327.68, 1277.36];
pub const REFERENCE_SUPERVISED_RMSE_MM: [f64; 6] = [1371.28, 1133.58, 1042.62, 976.35, 940.25, 898.77];
/// Reported KITTI-scale RMSE (mm) per photometric weight.
pub const REFERENCE_BETA_RMSE_MM: [(f64, f64); 3] = [(0.0, 1970.63), (0.5, 1277.36), (2.0, 1434.89)];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricSet {
    pub rmse_mm: f64,
    pub mae_mm: f64,
    pub irmse_per_km: f64,
    pub imae_per_km: f64,
    pub valid_pixel_count: usize,
}

impl MetricSet {
    /// Per-image average, the usual convention for benchmark tables.
    pub fn mean(sets: &[MetricSet]) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::EmptyGroundTruth);
        }
        let n = sets.len() as f64;
        let avg = |f: fn(&MetricSet) -> f64| sets.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            rmse_mm: avg(|m| m.rmse_mm),
            mae_mm: avg(|m| m.mae_mm),
            irmse_per_km: avg(|m| m.irmse_per_km),
            imae_per_km: avg(|m| m.imae_per_km),
            valid_pixel_count: sets.iter().map(|m| m.valid_pixel_count).sum(),
        })
    }
}

/// RMSE/MAE of depth in millimetres and iRMSE/iMAE of inverse depth in 1/km,
/// over the pixels where `gt` is valid.
pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<MetricSet> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return contract(format!("prediction {}x{} vs ground truth {}x{}", pred.width, pred.height, gt.width, gt.height));
    }
    let (mut se, mut ae, mut ise, mut iae, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for (&p, &g) in pred.depth.iter().zip(&gt.depth) {
        if g <= 0.0 {
            continue;
        }
        if !(p > 0.0 && p.is_finite()) {
            return contract(format!("prediction {p} at a valid ground-truth pixel"));
        }
        let e = (p - g) * 1000.0;
        let ie = 1000.0 / p - 1000.0 / g;
        se += e * e;
        ae += e.abs();
        ise += ie * ie;
        iae += ie.abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let nf = n as f64;
    Ok(MetricSet {
        rmse_mm: (se / nf).sqrt(),
        mae_mm: ae / nf,
        irmse_per_km: (ise / nf).sqrt(),
        imae_per_km: iae / nf,
        valid_pixel_count: n,
    })
}

/// Runs the network in inference mode on a batch of samples.
pub fn predict(store: &mut ParamStore<f32>, cfg: &ModelConfig, inputs: &[StereoInputs]) -> Result<Vec<DepthMap>> {
    let input = prepare_input::<f32>(inputs, cfg.depth_cap_m)?;
    let mut b = Builder::new(store, false);
    let out = forward(&mut b, cfg, &input)?;
    let depth = b.g.value(out.depth);
    let Shape { n, h, w, .. } = depth.shape();
    (0..n)
        .map(|i| DepthMap::new(w, h, depth.batch_item(i).data().iter().map(|&v| v as f64).collect()))
        .collect()
}

/// Seed used to subsample the sparse input of evaluation sample `index`.
pub fn eval_subsample_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ index as u64
}

/// Sparse input of an evaluation sample at the given level of sparsity.
/// Level 1 leaves the input untouched.
pub fn eval_inputs(source: &dyn SampleSource, index: usize, los: f64, seed: u64) -> Result<StereoInputs> {
    let mut inp = source.inputs(index)?;
    if los < 1.0 {
        inp.sparse = subsample_depth(&inp.sparse, los, eval_subsample_seed(seed, index))?;
    }
    Ok(inp)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricSet,
    pub per_sample: Vec<MetricSet>,
    /// Mean absolute disparity error in pixels over non-occluded valid pixels.
    pub disparity_mae_px: f64,
}

/// Evaluates predictions produced by `predictor` against ground truth.
/// `predictor` gets batches of `(index, inputs)`.
pub fn evaluate_with(
    source: &dyn SampleSource,
    los: f64,
    seed: u64,
    batch: usize,
    predictor: &mut dyn FnMut(&[usize], &[StereoInputs]) -> Result<Vec<DepthMap>>,
) -> Result<Evaluation> {
    if !(los > 0.0 && los <= 1.0) {
        return contract(format!("level of sparsity {los} outside (0, 1]"));
    }
    let indices: Vec<usize> = (0..source.len()).collect();
    let mut per_sample = Vec::new();
    let (mut disp_err, mut disp_n) = (0.0, 0usize);
    for chunk in indices.chunks(batch.max(1)) {
        let inputs: Vec<StereoInputs> = chunk.iter().map(|&i| eval_inputs(source, i, los, seed)).collect::<Result<_>>()?;
        let preds = predictor(chunk, &inputs)?;
        for ((&i, pred), inp) in chunk.iter().zip(&preds).zip(&inputs) {
            let gt = source.ground_truth(i)?;
            let occ = source.occlusion(i)?;
            per_sample.push(compute_metrics(pred, &gt)?);
            let fb = inp.rig.fb();
            for (k, (&p, &g)) in pred.depth.iter().zip(&gt.depth).enumerate() {
                if g > 0.0 && !occ.data[k] {
                    disp_err += (fb / p - fb / g).abs();
                    disp_n += 1;
                }
            }
        }
    }
    Ok(Evaluation {
        metrics: MetricSet::mean(&per_sample)?,
        per_sample,
        disparity_mae_px: if disp_n > 0 { disp_err / disp_n as f64 } else { 0.0 },
    })
}

pub const EVAL_BATCH: usize = 4;

pub fn evaluate_model(store: &ParamStore<f32>, cfg: &ModelConfig, source: &dyn SampleSource, los: f64, seed: u64) -> Result<Evaluation> {
    let mut store = store.clone();
    evaluate_with(source, los, seed, EVAL_BATCH, &mut |_, inputs| predict(&mut store, cfg, inputs))
}

/// Ground truth returned as the prediction; all metrics are zero.
pub fn evaluate_oracle(source: &dyn SampleSource, los: f64, seed: u64) -> Result<Evaluation> {
    evaluate_with(source, los, seed, EVAL_BATCH, &mut |idx, _| idx.iter().map(|&i| source.ground_truth(i)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    TrainTime,
    InferenceTime,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::TrainTime => "train_time",
            SweepKind::InferenceTime => "inference_time",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub los: f64,
    pub metrics: MetricSet,
}

/// Display-only KITTI-scale value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceRow {
    pub key: f64,
    pub rmse_mm: f64,
    pub mode: TrainMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub mode: TrainMode,
    pub variant: Variant,
    pub rows: Vec<SweepRow>,
    pub reference: Vec<ReferenceRow>,
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return contract("no sparsity levels");
    }
    for w in levels.windows(2) {
        if w[0] >= w[1] {
            return contract("sparsity levels must be strictly increasing");
        }
    }
    if levels.iter().any(|&l| !(l > 0.0 && l <= 1.0)) {
        return contract("sparsity levels must lie in (0, 1]");
    }
    Ok(())
}

pub fn train_time_reference(mode: TrainMode) -> Vec<ReferenceRow> {
    let values = match mode {
        TrainMode::SelfSupervised => REFERENCE_SELF_SUPERVISED_RMSE_MM,
        TrainMode::Supervised => REFERENCE_SUPERVISED_RMSE_MM,
    };
    REFERENCE_LEVELS.iter().zip(values).map(|(&key, rmse_mm)| ReferenceRow { key, rmse_mm, mode }).collect()
}

/// Inputs shared by every cell of a sweep.
pub struct SweepSetup<'a> {
    pub train_data: &'a dyn SampleSource,
    pub eval_data: &'a dyn SampleSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub init_seed: u64,
    pub eval_seed: u64,
}

impl SweepSetup<'_> {
    /// Trains one model from scratch with the given training config.
    pub fn train_cell(&self, cfg: &TrainConfig) -> Result<ParamStore<f32>> {
        let (state, _) = train(self.train_data, &self.model, cfg, TrainState::new(self.init_seed), &TrainOutput::default())?;
        Ok(state.store)
    }
}

/// One model per level, trained and evaluated at that level.
pub fn sweep_train_time(levels: &[f64], setup: &SweepSetup) -> Result<SweepReport> {
    check_levels(levels)?;
    let mut rows = Vec::new();
    for &los in levels {
        let cfg = TrainConfig { level_of_sparsity: los, ..setup.train.clone() };
        let store = setup.train_cell(&cfg)?;
        let e = evaluate_model(&store, &setup.model, setup.eval_data, los, setup.eval_seed)?;
        rows.push(SweepRow { los, metrics: e.metrics });
    }
    Ok(SweepReport {
        kind: SweepKind::TrainTime,
        mode: setup.train.mode,
        variant: setup.model.variant,
        rows,
        reference: train_time_reference(setup.train.mode),
    })
}

/// One trained model evaluated at every level.
pub fn sweep_inference_time(
    levels: &[f64],
    store: &ParamStore<f32>,
    model: &ModelConfig,
    mode: TrainMode,
    eval_data: &dyn SampleSource,
    eval_seed: u64,
) -> Result<SweepReport> {
    check_levels(levels)?;
    let rows = levels
        .iter()
        .map(|&los| Ok(SweepRow { los, metrics: evaluate_model(store, model, eval_data, los, eval_seed)?.metrics }))
        .collect::<Result<_>>()?;
    Ok(SweepReport { kind: SweepKind::InferenceTime, mode, variant: model.variant, rows, reference: Vec::new() })
}

/// Flatness statistic: RMSE at the sparsest level over RMSE at the densest.
pub fn flatness_ratio(report: &SweepReport) -> Option<f64> {
    let first = report.rows.first()?;
    let last = report.rows.last()?;
    Some(first.metrics.rmse_mm / last.metrics.rmse_mm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaAblation {
    pub rows: Vec<(f64, MetricSet)>,
    pub reference: Vec<ReferenceRow>,
}

/// Trains one self-supervised model per photometric weight; rows ordered by
/// weight ascending.
pub fn ablate_loss_weights(betas: &[f64], setup: &SweepSetup) -> Result<BetaAblation> {
    let mut betas = betas.to_vec();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    let mut rows = Vec::new();
    for beta in betas {
        let mut cfg = setup.train.clone();
        cfg.mode = TrainMode::SelfSupervised;
        cfg.weights.beta = beta;
        let store = setup.train_cell(&cfg)?;
        let e = evaluate_model(&store, &setup.model, setup.eval_data, cfg.level_of_sparsity, setup.eval_seed)?;
        rows.push((beta, e.metrics));
    }
    let reference = REFERENCE_BETA_RMSE_MM
        .iter()
        .map(|&(key, rmse_mm)| ReferenceRow { key, rmse_mm, mode: TrainMode::SelfSupervised })
        .collect();
    Ok(BetaAblation { rows, reference })
}

fn metric_fields(m: &MetricSet) -> String {
    format!("{:.3},{:.3},{:.4},{:.4}", m.rmse_mm, m.mae_mm, m.irmse_per_km, m.imae_per_km)
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.los, metric_fields(&r.metrics), self.variant, self.mode);
        }
        for r in &self.reference {
            let _ = writeln!(s, "{},{:.2},,,,{REFERENCE_LABEL},{}", r.key, r.rmse_mm, r.mode);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{} sweep, {} {}\n", self.kind.name(), self.variant, self.mode);
        let _ = writeln!(s, "{:>8} {:>12} {:>12} {:>10} {:>10}", "los", "rmse_mm", "mae_mm", "irmse", "imae");
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                s,
                "{:>8} {:>12.3} {:>12.3} {:>10.4} {:>10.4}",
                r.los, m.rmse_mm, m.mae_mm, m.irmse_per_km, m.imae_per_km
            );
        }
        if !self.reference.is_empty() {
            let _ = writeln!(s, "{REFERENCE_LABEL} (display only)");
            for r in &self.reference {
                let _ = writeln!(s, "{:>8} {:>12.2}", r.key, r.rmse_mm);
            }
        }
        s
    }
}

impl BetaAblation {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("beta,rmse_mm,mae_mm,irmse,imae,source\n");
        for (beta, m) in &self.rows {
            let _ = writeln!(s, "{beta},{},desk", metric_fields(m));
        }
        for r in &self.reference {
            let _ = writeln!(s, "{},{:.2},,,,{REFERENCE_LABEL}", r.key, r.rmse_mm);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:>6} {:>12} {:>12}\n", "beta", "rmse_mm", "mae_mm");
        for (beta, m) in &self.rows {
            let _ = writeln!(s, "{beta:>6} {:>12.3} {:>12.3}", m.rmse_mm, m.mae_mm);
        }
        let _ = writeln!(s, "{REFERENCE_LABEL} (display only)");
        for r in &self.reference {
            let _ = writeln!(s, "{:>6} {:>12.2}", r.key, r.rmse_mm);
        }
        s
    }
}

const PLOT_COLORS: [[u8; 3]; 6] = [[220, 40, 40], [40, 90, 220], [30, 160, 60], [200, 140, 0], [140, 40, 180], [0, 150, 160]];

fn draw_line(buf: &mut [u8], width: usize, height: usize, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: [u8; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
            let i = (y as usize * width + x as usize) * 3;
            buf[i..i + 3].copy_from_slice(&color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// RMSE against log10 of the level of sparsity, one colored polyline per
/// report, on a white canvas with black axes.
pub fn plot_sweeps(reports: &[&SweepReport], width: usize, height: usize) -> Result<RgbImage> {
    const MARGIN: i64 = 16;
    if width as i64 <= 2 * MARGIN || height as i64 <= 2 * MARGIN {
        return contract("plot too small");
    }
    let points: Vec<(f64, f64)> = reports.iter().flat_map(|r| r.rows.iter().map(|row| (row.los.log10(), row.metrics.rmse_mm))).collect();
    if points.is_empty() {
        return contract("nothing to plot");
    }
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, 0.0f64, f64::MIN);
    for &(x, y) in &points {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if xmax - xmin < 1e-12 {
        xmin -= 1.0;
        xmax += 1.0;
    }
    if ymax - ymin < 1e-12 {
        ymax = ymin + 1.0;
    }
    let (w, h) = (width as i64, height as i64);
    let px = |x: f64| MARGIN + ((x - xmin) / (xmax - xmin) * (w - 2 * MARGIN - 1) as f64).round() as i64;
    let py = |y: f64| h - 1 - MARGIN - ((y - ymin) / (ymax - ymin) * (h - 2 * MARGIN - 1) as f64).round() as i64;
    let mut buf = vec![255u8; width * height * 3];
    let black = [0, 0, 0];
    draw_line(&mut buf, width, height, (MARGIN, h - 1 - MARGIN), (w - MARGIN, h - 1 - MARGIN), black);
    draw_line(&mut buf, width, height, (MARGIN, MARGIN), (MARGIN, h - 1 - MARGIN), black);
    for (k, r) in reports.iter().enumerate() {
        let color = PLOT_COLORS[k % PLOT_COLORS.len()];
        let pts: Vec<(i64, i64)> = r.rows.iter().map(|row| (px(row.los.log10()), py(row.metrics.rmse_mm))).collect();
        for p in pts.windows(2) {
            draw_line(&mut buf, width, height, p[0], p[1], color);
        }
        for &(x, y) in &pts {
            draw_line(&mut buf, width, height, (x - 2, y), (x + 2, y), color);
            draw_line(&mut buf, width, height, (x, y - 2), (x, y + 2), color);
        }
    }
    RgbImage::new(width, height, buf)
}
