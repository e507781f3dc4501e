//! Flat binary checkpoint: a text header listing each named tensor's shape
//! and byte offset, followed by little-endian `f32` data.
//!
//! ```text
//! LISTEREO-CKPT 1
//! step 1200
//! meta model.feature_stride 4
//! tensor param/image.stem7.conv.weight 16 3 7 7 0
//! end
//! <data>
//! ```

use std::fs;
use std::path::Path;

use listereo_tensor::{RunningStats, Shape, Tensor};

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "LISTEREO-CKPT 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new(step: u64) -> Self {
        Self { step, meta: Vec::new(), tensors: Vec::new() }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(k, _)| k == name).map(|(_, t)| t)
    }

    /// Tensors whose name starts with `prefix`, with the prefix removed.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Tensor<f32>)> + 'a {
        self.tensors.iter().filter_map(move |(k, t)| k.strip_prefix(prefix).map(|n| (n, t)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{CHECKPOINT_MAGIC}\nstep {}\n", self.step);
        for (k, v) in &self.meta {
            header += &format!("meta {k} {v}\n");
        }
        let mut offset = 0;
        for (name, t) in &self.tensors {
            let s = t.shape();
            header += &format!("tensor {name} {} {} {} {} {offset}\n", s.n, s.c, s.h, s.w);
            offset += s.numel() * 4;
        }
        header += "end\n";
        let mut out = header.into_bytes();
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: String| Error::Decode(format!("checkpoint: {d}"));
        let end = bytes
            .windows(5)
            .position(|w| w == b"\nend\n")
            .ok_or_else(|| bad("header has no end marker".into()))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
        let body = &bytes[end + 5..];
        let mut lines = header.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad(format!("missing magic {CHECKPOINT_MAGIC:?}")));
        }
        let mut ck = Checkpoint::new(0);
        for line in lines {
            let (kind, rest) = line.split_once(' ').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
            match kind {
                "step" => ck.step = rest.parse().map_err(|_| bad(format!("bad step {rest:?}")))?,
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ck.meta.push((k.to_string(), v.to_string()));
                }
                "tensor" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    let nums: Option<Vec<usize>> = f.get(1..6).map(|s| s.iter().map(|v| v.parse().ok()).collect()).flatten();
                    let Some(n) = nums.filter(|_| f.len() == 6) else {
                        return Err(bad(format!("malformed tensor line {line:?}")));
                    };
                    let shape = Shape::new(n[0], n[1], n[2], n[3]);
                    let len = shape.numel() * 4;
                    let chunk = body.get(n[4]..n[4] + len).ok_or_else(|| bad(format!("tensor {} runs past the data", f[0])))?;
                    let data = chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
                    ck.tensors.push((f[0].to_string(), Tensor::new(shape, data)?));
                }
                _ => return Err(bad(format!("unknown header entry {kind:?}"))),
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Decode(d) => Error::format(path, d),
            other => other,
        })
    }

    /// Adds parameters and running statistics under `param/`, `bn_mean/` and `bn_var/`.
    pub fn put_store(&mut self, store: &ParamStore<f32>) {
        self.meta.push(("init_seed".into(), store.seed.to_string()));
        for (k, t) in &store.params {
            self.tensors.push((format!("param/{k}"), t.clone()));
        }
        for (k, s) in &store.stats {
            let shape = Shape::new(1, s.mean.len(), 1, 1);
            self.tensors.push((format!("bn_mean/{k}"), Tensor::new(shape, s.mean.clone()).expect("stat length")));
            self.tensors.push((format!("bn_var/{k}"), Tensor::new(shape, s.var.clone()).expect("stat length")));
        }
    }

    pub fn store(&self) -> Result<ParamStore<f32>> {
        let seed = self.meta("init_seed").and_then(|s| s.parse().ok()).unwrap_or(0);
        let mut store = ParamStore::new(seed);
        for (k, t) in self.with_prefix("param/") {
            store.params.insert(k.to_string(), t.clone());
        }
        for (k, m) in self.with_prefix("bn_mean/") {
            let v = self
                .tensor(&format!("bn_var/{k}"))
                .ok_or_else(|| Error::Decode(format!("checkpoint: bn_mean/{k} without bn_var")))?;
            store.stats.insert(k.to_string(), RunningStats { mean: m.to_vec(), var: v.to_vec() });
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::params::Init;

    #[test]
    fn round_trip() {
        let mut store = ParamStore::<f32>::new(42);
        store.get_or_init("a.weight", Shape::new(2, 3, 3, 3), Init::TruncatedHe).unwrap();
        store.get_or_init("a.bias", Shape::new(1, 2, 1, 1), Init::Ones).unwrap();
        store.stats.insert("bn".into(), RunningStats { mean: vec![0.5, -1.0], var: vec![2.0, 3.0] });
        let mut ck = Checkpoint::new(17);
        ck.meta.push(("model.variant".into(), "limono".into()));
        ck.put_store(&store);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.store().unwrap(), store);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.meta("model.variant"), Some("limono"));
    }

    #[test]
    fn corrupt_streams_are_rejected() {
        assert!(Checkpoint::from_bytes(b"garbage").is_err());
        assert!(Checkpoint::from_bytes(b"LISTEREO-CKPT 9\nend\n").is_err());
        assert!(Checkpoint::from_bytes(b"LISTEREO-CKPT 1\ntensor w 1 1 1 2 0\nend\nabc").is_err());
    }
}
