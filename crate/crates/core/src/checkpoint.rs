//! The OVNT checkpoint container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "OVNT" version count { name_len name rank dims[rank] f32[prod(dims)] }*
//! ```
//!
//! A checkpoint holds a `config` entry (the model configuration as
//! `key = value` text, one byte per value), an optional `train_config`
//! entry, every parameter followed by its `.adam_m` and `.adam_v` moments,
//! and a rank-0 `step_count`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{self, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"OVNT";
pub const VERSION: u32 = 1;

/// Largest step count a rank-0 `f32` entry represents exactly.
pub const MAX_STEP: u64 = 1 << 24;

/// One named array in the container.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl Entry {
    fn tensor(name: String, t: &Tensor<f32>) -> Self {
        Entry {
            name,
            dims: t.shape().dims().iter().map(|&d| d as u32).collect(),
            data: t.data().to_vec(),
        }
    }

    fn text(name: &str, text: &str) -> Self {
        Entry {
            name: name.to_string(),
            dims: vec![text.len() as u32],
            data: text.bytes().map(f32::from).collect(),
        }
    }

    fn as_text(&self) -> Option<String> {
        if self.dims.len() != 1 {
            return None;
        }
        let bytes: Option<Vec<u8>> = self
            .data
            .iter()
            .map(|&v| (v.fract() == 0.0 && (0.0..=255.0).contains(&v)).then_some(v as u8))
            .collect();
        String::from_utf8(bytes?).ok()
    }

    fn shape(&self) -> Option<Shape> {
        match self.dims[..] {
            [n, c, h, w] => Some(Shape::new(n as usize, c as usize, h as usize, w as usize)),
            _ => None,
        }
    }
}

pub fn encode(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
        for d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("truncated checkpoint while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<Entry>> {
    let mut cur = Cursor { bytes, pos: 0, path };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::format(path, "not an OVNT checkpoint (bad magic)"));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {version} (expected {VERSION})"),
        ));
    }
    let count = cur.u32("entry count")?;
    let mut entries = Vec::new();
    for i in 0..count {
        let len = cur.u32(&format!("name of entry {i}"))? as usize;
        let name = String::from_utf8(cur.take(len, &format!("name of entry {i}"))?.to_vec())
            .map_err(|_| Error::format(path, format!("entry {i} has a non-UTF-8 name")))?;
        let rank = cur.u32(&format!("rank of `{name}`"))? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(cur.u32(&format!("dims of `{name}`"))?);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or_else(|| Error::format(path, format!("entry `{name}` is impossibly large")))?;
        let raw = cur.take(numel * 4, &format!("data of `{name}`"))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        entries.push(Entry { name, dims, data });
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after the last entry"));
    }
    Ok(entries)
}

/// Parameters, optimizer state and the configurations that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    /// Training configuration as `key = value` text, if any.
    pub train_config: Option<String>,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn new(model: ModelConfig, params: ParamStore<f32>) -> Self {
        Checkpoint {
            model,
            train_config: None,
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let step = self.params.step_count();
        if step > MAX_STEP {
            return Err(Error::usage(format!(
                "step count {step} exceeds the checkpoint limit {MAX_STEP}"
            )));
        }
        let mut entries = vec![Entry::text("config", &self.model.to_text())];
        if let Some(t) = &self.train_config {
            entries.push(Entry::text("train_config", t));
        }
        for (name, e) in self.params.iter() {
            entries.push(Entry::tensor(name.to_string(), &e.value));
            entries.push(Entry::tensor(format!("{name}.adam_m"), &e.adam_m));
            entries.push(Entry::tensor(format!("{name}.adam_v"), &e.adam_v));
        }
        entries.push(Entry {
            name: "step_count".into(),
            dims: vec![],
            data: vec![step as f32],
        });
        Ok(encode(&entries))
    }

    /// Decode and validate against the embedded model configuration.
    /// Errors name the first entry that does not fit.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let entries = decode(bytes, path)?;
        let bad = |msg: String| Error::format(path, msg);
        let mut it = entries.into_iter().peekable();

        let config = it
            .next()
            .filter(|e| e.name == "config")
            .ok_or_else(|| bad("first entry must be `config`".into()))?;
        let text = config
            .as_text()
            .ok_or_else(|| bad("entry `config` is not a text block".into()))?;
        let model = ModelConfig::from_text(&text).map_err(|e| bad(format!("entry `config`: {e}")))?;

        let train_config = match it.peek() {
            Some(e) if e.name == "train_config" => {
                let e = it.next().expect("peeked");
                Some(
                    e.as_text()
                        .ok_or_else(|| bad("entry `train_config` is not a text block".into()))?,
                )
            }
            _ => None,
        };

        let mut params = ParamStore::new();
        for (name, shape) in model::param_shapes(&model) {
            let mut next = |expect: String| -> Result<Tensor<f32>> {
                let e = it
                    .next()
                    .ok_or_else(|| bad(format!("missing entry `{expect}`")))?;
                if e.name != expect {
                    return Err(bad(format!("unexpected entry `{}` (expected `{expect}`)", e.name)));
                }
                if e.shape() != Some(shape) {
                    return Err(bad(format!(
                        "entry `{expect}` has dims {:?}, the model config implies {shape}",
                        e.dims
                    )));
                }
                Tensor::from_vec(shape, e.data)
            };
            let value = next(name.clone())?;
            let m = next(format!("{name}.adam_m"))?;
            let v = next(format!("{name}.adam_v"))?;
            params.insert(name.clone(), value)?;
            let entry = params.get_mut(&name).expect("just inserted");
            entry.adam_m = m;
            entry.adam_v = v;
        }

        let step = it
            .next()
            .filter(|e| e.name == "step_count")
            .ok_or_else(|| bad("missing entry `step_count`".into()))?;
        match step.data[..] {
            [s] if step.dims.is_empty() && s >= 0.0 && s.fract() == 0.0 => {
                params.set_step_count(s as u64)
            }
            _ => return Err(bad("entry `step_count` is not a non-negative integer scalar".into())),
        }
        if let Some(extra) = it.next() {
            return Err(bad(format!("unexpected entry `{}`", extra.name)));
        }
        Ok(Checkpoint {
            model,
            train_config,
            params,
        })
    }

    /// Write atomically: the file is either absent or complete.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut tmp = PathBuf::from(path);
        tmp.as_mut_os_string().push(".tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            base_channels: 4,
            ..ModelConfig::tiny()
        };
        let mut params = model::init_params::<f32>(&cfg, 3).unwrap();
        for (_, e) in params.iter_mut() {
            e.adam_m.fill(0.25);
            e.adam_v.fill(-0.0);
        }
        params.set_step_count(12345);
        let mut ck = Checkpoint::new(cfg, params);
        ck.train_config = Some("lr0 = 0.001\n".into());
        ck
    }

    #[test]
    fn container_layout() {
        let bytes = encode(&[Entry {
            name: "ab".into(),
            dims: vec![2],
            data: vec![1.0, -2.0],
        }]);
        let mut expect = b"OVNT".to_vec();
        for v in [1u32, 1, 2] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        expect.extend_from_slice(b"ab");
        for v in [1u32, 2] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = sample();
        let a = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&a, Path::new("x")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), a);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
            assert!(Checkpoint::from_bytes(&bytes[..cut], Path::new("x")).is_err(), "{cut}");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 9;
        let err = Checkpoint::from_bytes(&bytes, Path::new("ck.ovnt")).unwrap_err().to_string();
        assert!(err.contains("version 9") && err.contains("ck.ovnt"), "{err}");
        bytes[0] = b'X';
        let err = Checkpoint::from_bytes(&bytes, Path::new("ck")).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn shape_mismatch_names_the_entry() {
        let ck = sample();
        let mut entries = decode(&ck.to_bytes().unwrap(), Path::new("x")).unwrap();
        let i = entries.iter().position(|e| e.name == "ldg0.rb1.reduce.v").unwrap();
        entries[i].dims[0] += 1;
        let extra = entries[i].dims[1..].iter().product::<u32>() as usize;
        entries[i].data.extend(std::iter::repeat(0.0).take(extra));
        let err = Checkpoint::from_bytes(&encode(&entries), Path::new("x"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("ldg0.rb1.reduce.v"), "{err}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ovnt");
        let ck = sample();
        ck.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), ck);
        assert!(!dir.path().join("m.ovnt.tmp").exists());
    }
}
