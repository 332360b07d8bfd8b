//! Named-tensor checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "HSGC" | version u8
//! repeated until end of file:
//!   name_len u32 | name (UTF-8) | extents 4×u32 | values numel×f32
//! ```
//!
//! The model configuration is stored next to the checkpoint as TOML, in a
//! file with the same stem and a `.toml` extension.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::net::{Model, ModelConfig};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"HSGC";
pub const VERSION: u8 = 1;
const MAX_NAME_LEN: usize = 1024;

pub type NamedTensor = (String, Tensor<f32>);

pub fn encode_tensors(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for e in t.shape().0 {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    let mut names = HashSet::new();
    while c.pos < bytes.len() {
        let len = c.u32("name length")?;
        if len == 0 || len > MAX_NAME_LEN {
            return Err(Error::Checkpoint(format!("name length {len} out of range")));
        }
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?
            .to_string();
        let mut ext = [0usize; 4];
        for e in &mut ext {
            *e = c.u32("extents")?;
        }
        let numel = ext
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
        let raw = c.take(numel * 4, "values")?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        if !names.insert(name.clone()) {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
        out.push((name, Tensor::from_vec(Shape(ext), data)?));
    }
    Ok(out)
}

fn stat_names(layer: &str) -> (String, String) {
    (format!("{layer}.running_mean"), format!("{layer}.running_var"))
}

/// Parameters followed by batch-norm running statistics.
pub fn model_tensors(model: &Model<f32>) -> Vec<NamedTensor> {
    let mut out: Vec<NamedTensor> = model.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
    for run in model.norms() {
        let (m, v) = stat_names(&run.name);
        let s = Shape::new(1, run.mean.len(), 1, 1);
        out.push((m, Tensor::from_vec(s, run.mean.clone()).expect("channel count")));
        out.push((v, Tensor::from_vec(s, run.var.clone()).expect("channel count")));
    }
    out
}

/// Rebuilds a model; every expected tensor must be present with its exact
/// shape, and nothing else.
pub fn model_from_tensors(config: ModelConfig, tensors: Vec<NamedTensor>) -> Result<Model<f32>> {
    // Initial values are all overwritten below.
    let mut model = Model::<f32>::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut expected = model_tensors(&model);
    if tensors.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors for this configuration, found {}",
            expected.len(),
            tensors.len()
        )));
    }
    let mut by_name: HashMap<String, Tensor<f32>> = tensors.into_iter().collect();
    let mut stats = HashMap::new();
    for (name, want) in expected.drain(..) {
        let got = by_name
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if got.shape() != want.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {}, expected {}",
                got.shape(),
                want.shape()
            )));
        }
        if !got.all_finite() {
            return Err(Error::Checkpoint(format!("tensor `{name}` holds non-finite values")));
        }
        if model.param_index(&name).is_some() {
            model.set_param(&name, got)?;
        } else {
            stats.insert(name, got.into_data());
        }
    }
    let layers: Vec<String> = model.norms().iter().map(|r| r.name.clone()).collect();
    for layer in layers {
        let (m, v) = stat_names(&layer);
        let (mean, var) = (stats.remove(&m), stats.remove(&v));
        model.set_running_stats(&layer, mean.unwrap_or_default(), var.unwrap_or_default())?;
    }
    Ok(model)
}

pub fn config_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("toml")
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model<f32>) -> Result<()> {
    let path = path.as_ref();
    write_atomic(&config_path(path), model.config().to_toml()?.as_bytes())?;
    write_atomic(path, &encode_tensors(&model_tensors(model)))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let path = path.as_ref();
    let cfg_path = config_path(path);
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let config = ModelConfig::from_toml(&text).map_err(|e| e.in_file(&cfg_path))?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = decode_tensors(&bytes).map_err(|e| e.in_file(path))?;
    model_from_tensors(config, tensors).map_err(|e| e.in_file(path))
}
