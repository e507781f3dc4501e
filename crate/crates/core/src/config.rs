//! Plain-text run configuration: one `section.key = value` line per field.
//! Blank lines and `#` comments are ignored; unknown or repeated keys are
//! rejected.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::TrainMode;
use crate::net::{LidarBranchKind, ModelConfig, Variant};
use crate::synth::{lidar_rows, SceneSpec};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub los: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub levels: Vec<f64>,
    pub betas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub samples: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub init_seed: u64,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::desk(0),
            samples: 200,
            model: ModelConfig::desk(),
            train: TrainConfig::desk(TrainMode::SelfSupervised),
            init_seed: 0,
            eval: EvalConfig { los: 1.0, seed: 0 },
            sweep: SweepConfig { levels: vec![0.01, 0.1, 1.0], betas: vec![0.0, 0.5, 2.0] },
        }
    }
}

trait Value: Sized {
    fn show(&self) -> String;
    fn read(s: &str) -> std::result::Result<Self, String>;
}

macro_rules! display_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn show(&self) -> String {
                self.to_string()
            }

            fn read(s: &str) -> std::result::Result<Self, String> {
                <$t as FromStr>::from_str(s).map_err(|e| e.to_string())
            }
        }
    )*};
}

display_value!(u64, usize, f64, TrainMode, Variant, LidarBranchKind);

impl<T: Value> Value for Vec<T> {
    fn show(&self) -> String {
        self.iter().map(Value::show).collect::<Vec<_>>().join(",")
    }

    fn read(s: &str) -> std::result::Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|p| T::read(p.trim())).collect()
    }
}

impl<T: Value> Value for Option<T> {
    fn show(&self) -> String {
        self.as_ref().map_or_else(|| "none".to_string(), Value::show)
    }

    fn read(s: &str) -> std::result::Result<Self, String> {
        if s == "none" {
            Ok(None)
        } else {
            T::read(s).map(Some)
        }
    }
}

struct Field {
    key: &'static str,
    doc: &'static str,
    get: fn(&RunConfig) -> String,
    set: fn(&mut RunConfig, &str) -> std::result::Result<(), String>,
}

macro_rules! field {
    ($key:literal, $doc:literal, $($path:ident).+) => {
        Field {
            key: $key,
            doc: $doc,
            get: |c| Value::show(&c.$($path).+),
            set: |c, s| {
                c.$($path).+ = Value::read(s)?;
                Ok(())
            },
        }
    };
}

fn fields() -> Vec<Field> {
    vec![
        field!("scene.seed", "seed of the first scene; scene i uses seed + i", scene.seed),
        field!("scene.num_planes", "slanted patches in front of the background", scene.num_planes),
        field!("scene.num_boxes", "axis-aligned boxes", scene.num_boxes),
        field!("scene.depth_near_m", "nearest allowed depth in metres", scene.depth_near_m),
        field!("scene.depth_far_m", "farthest allowed depth in metres", scene.depth_far_m),
        field!("scene.max_slant_deg", "maximum plane tilt in degrees", scene.max_slant_deg),
        field!("scene.texture_octaves", "value-noise octaves", scene.texture_octaves),
        field!("scene.texture_contrast", "noise amplitude around the base colour", scene.texture_contrast),
        field!("scene.texture_period_px", "image-space period of the coarsest octave", scene.texture_period_px),
        field!("scene.lidar_beams", "simulated LIDAR rows", scene.lidar_beams),
        field!("scene.lidar_azimuth_step", "pixels between LIDAR returns along a row", scene.lidar_azimuth_step),
        field!("scene.lidar_coverage", "fraction of rows, from the bottom, reached by LIDAR beams", scene.lidar_coverage),
        field!("scene.lidar_dropout", "probability that a surface returns no LIDAR points", scene.lidar_dropout),
        field!("scene.focal_px", "focal length in pixels", scene.rig.focal_px),
        field!("scene.baseline_m", "stereo baseline in metres", scene.rig.baseline_m),
        field!("scene.cx", "principal point x", scene.rig.cx),
        field!("scene.cy", "principal point y", scene.rig.cy),
        field!("scene.width", "image width", scene.rig.width),
        field!("scene.height", "image height", scene.rig.height),
        field!("scene.max_depth_m", "depth assigned to zero disparity", scene.rig.max_depth_m),
        field!("data.samples", "scenes written by gen", samples),
        field!("model.feature_stride", "feature map downsampling, power of two >= 4", model.feature_stride),
        field!("model.max_disparity_px", "largest disparity; output has one more channel", model.max_disparity_px),
        field!("model.base_channels", "stem width; encoder stages double it", model.base_channels),
        field!("model.encoder_blocks", "residual blocks per encoder stage", model.encoder_blocks),
        field!("model.fusion_channels", "width of the fusion blocks", model.fusion_channels),
        field!("model.fusion_residual_blocks", "residual blocks after fusion", model.fusion_residual_blocks),
        field!("model.upsample_blocks", "decoder blocks, log2(stride) + 1", model.upsample_blocks),
        field!("model.decoder_channels", "width of the first decoder block", model.decoder_channels),
        field!("model.psp_bins", "pyramid pooling bin sizes", model.psp_bins),
        field!("model.psp_channels", "channels per pyramid level", model.psp_channels),
        field!("model.lidar_branch_kind", "regular_conv or sparse_conv", model.lidar_branch_kind),
        field!("model.variant", "listereo or limono", model.variant),
        field!("model.depth_cap_m", "depth inversion cap in metres", model.depth_cap_m),
        field!("loss.alpha", "sparse depth weight", train.weights.alpha),
        field!("loss.beta", "photometric weight", train.weights.beta),
        field!("loss.gamma", "smoothness weight", train.weights.gamma),
        field!("loss.lambda1", "SSIM part of the photometric term", train.weights.lambda1),
        field!("loss.lambda2", "absolute-difference part of the photometric term", train.weights.lambda2),
        field!("train.mode", "self_supervised or supervised", train.mode),
        field!("train.epochs", "passes over the dataset", train.epochs),
        field!("train.batch_size", "samples per step", train.batch_size),
        field!("train.lr_initial", "learning rate before the drop", train.lr_initial),
        field!("train.lr_after", "learning rate from lr_drop_epoch on", train.lr_after),
        field!("train.lr_drop_epoch", "first epoch at the lower rate", train.lr_drop_epoch),
        field!("train.crop_height", "bottom crop height", train.crop_height),
        field!("train.crop_width", "bottom crop width", train.crop_width),
        field!("train.seed", "shuffling, cropping and subsampling seed", train.seed),
        field!("train.level_of_sparsity", "fraction of LIDAR returns kept during training", train.level_of_sparsity),
        field!("train.max_steps", "stop after this many steps, or none", train.max_steps),
        field!("train.init_seed", "parameter initialization seed", init_seed),
        field!("eval.los", "fraction of LIDAR returns kept during evaluation", eval.los),
        field!("eval.seed", "evaluation subsampling seed", eval.seed),
        field!("sweep.levels", "sparsity levels, strictly increasing", sweep.levels),
        field!("sweep.betas", "photometric weights for the ablation", sweep.betas),
    ]
}

/// Every accepted key, in serialization order.
pub fn keys() -> Vec<&'static str> {
    fields().iter().map(|f| f.key).collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table = fields();
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!("line {}", n + 1), format!("expected `section.key = value`, got {line:?}")));
            };
            let (key, value) = (key.trim(), value.trim());
            let field = table.iter().find(|f| f.key == key).ok_or_else(|| Error::config(key, "unknown key"))?;
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "repeated key"));
            }
            (field.set)(&mut cfg, value).map_err(|e| Error::config(key, e))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn serialize(&self) -> String {
        fields().iter().map(|f| format!("{} = {}\n", f.key, (f.get)(self))).collect()
    }

    /// Checks every field; errors name the offending `section.key`.
    pub fn validate(&self) -> Result<()> {
        let (s, m, t) = (&self.scene, &self.model, &self.train);
        let checks: Vec<(&str, bool, &str)> = vec![
            ("scene.depth_near_m", s.depth_near_m > 0.0 && s.depth_near_m < s.depth_far_m, "must be positive and below depth_far_m"),
            ("scene.depth_far_m", s.depth_far_m < s.rig.max_depth_m, "must be below max_depth_m"),
            ("scene.max_slant_deg", (0.0..90.0).contains(&s.max_slant_deg), "must lie in [0, 90)"),
            ("scene.texture_octaves", s.texture_octaves > 0, "must be positive"),
            ("scene.texture_contrast", s.texture_contrast >= 0.0, "must be non-negative"),
            ("scene.texture_period_px", s.texture_period_px > 0.0, "must be positive"),
            ("scene.lidar_coverage", s.lidar_coverage > 0.0 && s.lidar_coverage <= 1.0, "must lie in (0, 1]"),
            ("scene.lidar_dropout", (0.0..1.0).contains(&s.lidar_dropout), "must lie in [0, 1)"),
            ("scene.lidar_beams", s.lidar_beams > 0 && s.lidar_beams <= lidar_rows(s.rig.height, s.lidar_coverage), "must lie in 1..=covered rows"),
            ("scene.lidar_azimuth_step", s.lidar_azimuth_step > 0, "must be positive"),
            ("scene.focal_px", s.rig.focal_px > 0.0, "must be positive"),
            ("scene.baseline_m", s.rig.baseline_m > 0.0, "must be positive"),
            ("scene.cx", s.rig.cx.is_finite(), "must be finite"),
            ("scene.cy", s.rig.cy.is_finite(), "must be finite"),
            ("scene.width", s.rig.width > 0 && s.rig.width % m.feature_stride == 0, "must be a positive multiple of model.feature_stride"),
            ("scene.height", s.rig.height > 0 && s.rig.height % m.feature_stride == 0, "must be a positive multiple of model.feature_stride"),
            ("scene.max_depth_m", s.rig.max_depth_m > 0.0, "must be positive"),
            ("data.samples", self.samples > 0, "must be positive"),
            ("model.feature_stride", m.feature_stride.is_power_of_two() && m.feature_stride >= 4, "must be a power of two >= 4"),
            ("model.max_disparity_px", m.max_disparity_px > 0 && m.max_disparity_px % m.feature_stride == 0, "must be a positive multiple of feature_stride"),
            ("model.base_channels", m.base_channels > 0, "must be positive"),
            ("model.encoder_blocks", !m.encoder_blocks.is_empty(), "needs at least one entry"),
            ("model.fusion_channels", m.fusion_channels >= 2, "must be at least 2"),
            ("model.upsample_blocks", m.upsample_blocks == m.feature_stride.trailing_zeros() as usize + 1, "must equal log2(feature_stride) + 1"),
            ("model.decoder_channels", m.decoder_channels > 0, "must be positive"),
            ("model.psp_bins", m.psp_bins.iter().all(|&b| b > 0), "bins must be positive"),
            ("model.psp_channels", m.psp_channels > 0, "must be positive"),
            ("model.depth_cap_m", m.depth_cap_m > s.depth_far_m, "must exceed scene.depth_far_m"),
            ("loss.alpha", t.weights.alpha >= 0.0 && t.weights.alpha.is_finite(), "must be finite and non-negative"),
            ("loss.beta", t.weights.beta >= 0.0 && t.weights.beta.is_finite(), "must be finite and non-negative"),
            ("loss.gamma", t.weights.gamma >= 0.0 && t.weights.gamma.is_finite(), "must be finite and non-negative"),
            ("loss.lambda1", t.weights.lambda1 >= 0.0 && t.weights.lambda1.is_finite(), "must be finite and non-negative"),
            ("loss.lambda2", t.weights.lambda2 >= 0.0 && t.weights.lambda2.is_finite(), "must be finite and non-negative"),
            ("train.epochs", t.epochs > 0, "must be positive"),
            ("train.batch_size", t.batch_size > 0, "must be positive"),
            ("train.lr_initial", t.lr_initial >= 0.0, "must be non-negative"),
            ("train.lr_after", t.lr_after >= 0.0, "must be non-negative"),
            ("train.lr_drop_epoch", t.lr_drop_epoch <= t.epochs, "must not exceed train.epochs"),
            ("train.crop_height", t.crop_height > 0 && t.crop_height <= s.rig.height && t.crop_height % m.feature_stride == 0, "must fit the image and be a multiple of model.feature_stride"),
            ("train.crop_width", t.crop_width > 0 && t.crop_width <= s.rig.width && t.crop_width % m.feature_stride == 0, "must fit the image and be a multiple of model.feature_stride"),
            ("train.level_of_sparsity", t.level_of_sparsity > 0.0 && t.level_of_sparsity <= 1.0, "must lie in (0, 1]"),
            ("eval.los", self.eval.los > 0.0 && self.eval.los <= 1.0, "must lie in (0, 1]"),
            ("sweep.levels", valid_levels(&self.sweep.levels), "must be non-empty, strictly increasing and inside (0, 1]"),
            ("sweep.betas", !self.sweep.betas.is_empty() && self.sweep.betas.iter().all(|b| *b >= 0.0 && b.is_finite()), "must be non-empty and non-negative"),
        ];
        for (key, ok, detail) in checks {
            if !ok {
                return Err(Error::config(key, detail));
            }
        }
        let section = |name: &'static str| move |e: Error| Error::config(name, e.to_string());
        s.validate().map_err(section("scene"))?;
        m.validate().map_err(section("model"))?;
        t.validate().map_err(section("train"))?;
        Ok(())
    }

    /// Documented listing of every key with its default value.
    pub fn reference() -> String {
        let defaults = Self::default();
        let mut out = String::from("# Run configuration reference. Every key is optional; shown values are defaults.\n");
        let mut section = "";
        for f in fields() {
            let this = f.key.split('.').next().unwrap_or("");
            if this != section {
                let _ = writeln!(out, "\n# [{this}]");
                section = this;
            }
            let _ = writeln!(out, "# {}\n{} = {}", f.doc, f.key, (f.get)(&defaults));
        }
        out
    }
}

fn valid_levels(levels: &[f64]) -> bool {
    !levels.is_empty() && levels.windows(2).all(|w| w[0] < w[1]) && levels.iter().all(|&l| l > 0.0 && l <= 1.0)
}
