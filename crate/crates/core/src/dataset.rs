//! On-disk datasets and the sample-access interface used by training and
//! evaluation.
//!
//! Layout: `left/NNNN.ppm`, `right/NNNN.ppm`, `sparse/NNNN.png`,
//! `gt/NNNN.png`, `occ/NNNN.pgm` and `manifest.txt` with one line per sample:
//! `id focal_px baseline_m cx cy width height max_depth_m seed`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::codec::{decode_depth_png16, decode_pgm_mask, decode_ppm, encode_depth_png16, encode_pgm_mask, encode_ppm};
use crate::error::{Error, Result};
use crate::geometry::{CameraRig, DepthMap};
use crate::image::{Mask, RgbImage};
use crate::synth::{generate_scene, SceneSample, SceneSpec};

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Network inputs of one sample; everything except ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoInputs {
    pub left: RgbImage,
    pub right: RgbImage,
    pub sparse: DepthMap,
    pub rig: CameraRig,
}

/// Indexed access to samples. Ground truth and occlusion masks are fetched
/// separately so that callers which must not see them never do.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn inputs(&self, index: usize) -> Result<StereoInputs>;

    fn ground_truth(&self, index: usize) -> Result<DepthMap>;

    fn occlusion(&self, index: usize) -> Result<Mask>;
}

impl SampleSource for [SceneSample] {
    fn len(&self) -> usize {
        <[SceneSample]>::len(self)
    }

    fn inputs(&self, index: usize) -> Result<StereoInputs> {
        let s = &self[index];
        Ok(StereoInputs { left: s.left.clone(), right: s.right.clone(), sparse: s.sparse_depth.clone(), rig: s.rig })
    }

    fn ground_truth(&self, index: usize) -> Result<DepthMap> {
        Ok(self[index].gt_depth.clone())
    }

    fn occlusion(&self, index: usize) -> Result<Mask> {
        Ok(self[index].occlusion.clone())
    }
}

impl SampleSource for Vec<SceneSample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn inputs(&self, index: usize) -> Result<StereoInputs> {
        self.as_slice().inputs(index)
    }

    fn ground_truth(&self, index: usize) -> Result<DepthMap> {
        self.as_slice().ground_truth(index)
    }

    fn occlusion(&self, index: usize) -> Result<Mask> {
        self.as_slice().occlusion(index)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub rig: CameraRig,
    pub seed: u64,
}

impl ManifestRecord {
    fn line(&self) -> String {
        let r = &self.rig;
        format!(
            "{} {} {} {} {} {} {} {} {}",
            self.id, r.focal_px, r.baseline_m, r.cx, r.cy, r.width, r.height, r.max_depth_m, self.seed
        )
    }

    fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 9 {
            return None;
        }
        let rig = CameraRig {
            focal_px: f[1].parse().ok()?,
            baseline_m: f[2].parse().ok()?,
            cx: f[3].parse().ok()?,
            cy: f[4].parse().ok()?,
            width: f[5].parse().ok()?,
            height: f[6].parse().ok()?,
            max_depth_m: f[7].parse().ok()?,
        };
        Some(Self { id: f[0].to_string(), rig, seed: f[8].parse().ok()? })
    }
}

/// A dataset directory opened through its manifest. Files are read on demand.
#[derive(Clone, Debug)]
pub struct DiskDataset {
    pub dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

fn sample_path(dir: &Path, kind: &str, id: &str) -> PathBuf {
    let ext = match kind {
        "left" | "right" => "ppm",
        "occ" => "pgm",
        _ => "png",
    };
    dir.join(kind).join(format!("{id}.{ext}"))
}

/// Per-sample subdirectories of a dataset.
pub const SAMPLE_KINDS: [&str; 5] = ["left", "right", "sparse", "gt", "occ"];
const INPUT_KINDS: [&str; 3] = ["left", "right", "sparse"];

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Decode(detail) => Error::format(path, detail),
        other => other,
    })
}

/// Writes one sample under `dir` with the given id.
pub fn write_sample(dir: &Path, id: &str, sample: &SceneSample) -> Result<ManifestRecord> {
    write_file(&sample_path(dir, "left", id), &encode_ppm(&sample.left))?;
    write_file(&sample_path(dir, "right", id), &encode_ppm(&sample.right))?;
    write_file(&sample_path(dir, "sparse", id), &encode_depth_png16(&sample.sparse_depth)?)?;
    write_file(&sample_path(dir, "gt", id), &encode_depth_png16(&sample.gt_depth)?)?;
    write_file(&sample_path(dir, "occ", id), &encode_pgm_mask(&sample.occlusion))?;
    Ok(ManifestRecord { id: id.to_string(), rig: sample.rig, seed: sample.seed })
}

/// Generates and writes one sample per spec, then the manifest.
pub fn write_dataset(specs: &[SceneSpec], dir: &Path) -> Result<DiskDataset> {
    for kind in SAMPLE_KINDS {
        let sub = dir.join(kind);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    }
    let mut records = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        records.push(write_sample(dir, &format!("{i:04}"), &generate_scene(spec)?)?);
    }
    let manifest: String = records.iter().map(|r| r.line() + "\n").collect();
    write_file(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;
    Ok(DiskDataset { dir: dir.to_path_buf(), records })
}

impl DiskDataset {
    /// Reads the manifest and checks that every input file exists. Ground
    /// truth and occlusion files are only touched when read.
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec = ManifestRecord::parse(line)
                .ok_or_else(|| Error::format(&path, format!("line {}: malformed record {line:?}", n + 1)))?;
            for kind in INPUT_KINDS {
                let file = sample_path(dir, kind, &rec.id);
                if !file.is_file() {
                    return Err(Error::io(&file, std::io::Error::from(std::io::ErrorKind::NotFound)));
                }
            }
            records.push(rec);
        }
        Ok(Self { dir: dir.to_path_buf(), records })
    }

    fn path(&self, kind: &str, index: usize) -> PathBuf {
        sample_path(&self.dir, kind, &self.records[index].id)
    }

    fn depth(&self, kind: &str, index: usize) -> Result<DepthMap> {
        let p = self.path(kind, index);
        with_path(&p, decode_depth_png16(&read_file(&p)?))
    }
}

impl SampleSource for DiskDataset {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn inputs(&self, index: usize) -> Result<StereoInputs> {
        let image = |kind| {
            let p = self.path(kind, index);
            with_path(&p, decode_ppm(&read_file(&p)?))
        };
        Ok(StereoInputs {
            left: image("left")?,
            right: image("right")?,
            sparse: self.depth("sparse", index)?,
            rig: self.records[index].rig,
        })
    }

    fn ground_truth(&self, index: usize) -> Result<DepthMap> {
        self.depth("gt", index)
    }

    fn occlusion(&self, index: usize) -> Result<Mask> {
        let p = self.path("occ", index);
        with_path(&p, decode_pgm_mask(&read_file(&p)?))
    }
}

/// Specs for `count` scenes with consecutive seeds starting at `base.seed`.
pub fn scene_specs(base: &SceneSpec, count: usize) -> Vec<SceneSpec> {
    (0..count as u64).map(|i| SceneSpec { seed: base.seed.wrapping_add(i), ..base.clone() }).collect()
}

/// Generates `count` scenes in memory.
pub fn generate_scenes(base: &SceneSpec, count: usize) -> Result<Vec<SceneSample>> {
    scene_specs(base, count).iter().map(generate_scene).collect()
}
