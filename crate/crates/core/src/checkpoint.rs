//! Versioned binary checkpoint container.
//!
//! Layout: 6-byte magic naming the kind, config JSON and metadata JSON (each
//! a u32 length prefix plus UTF-8), a u32 tensor count, then per tensor its
//! name, u32 rank, u32 dims and little-endian f32 data. All integers are
//! little-endian.

use std::path::Path;

use facedeblur_tensor::{ParamStore, Tensor};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::deblur_net::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::error::{io_err, Error, Result};
use crate::parse_net::{ParsingModel, ParsingModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Parsing,
    Generator,
    Discriminator,
    Training,
}

impl CheckpointKind {
    pub fn magic(self) -> &'static [u8; 6] {
        match self {
            CheckpointKind::Parsing => b"PCKPT1",
            CheckpointKind::Generator => b"GCKPT1",
            CheckpointKind::Discriminator => b"DCKPT1",
            CheckpointKind::Training => b"TCKPT1",
        }
    }

    fn from_magic(m: &[u8]) -> Option<Self> {
        [CheckpointKind::Parsing, CheckpointKind::Generator, CheckpointKind::Discriminator, CheckpointKind::Training]
            .into_iter()
            .find(|k| k.magic() == m)
    }

    pub fn name(self) -> &'static str {
        match self {
            CheckpointKind::Parsing => "parsing",
            CheckpointKind::Generator => "generator",
            CheckpointKind::Discriminator => "discriminator",
            CheckpointKind::Training => "training",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    /// Config echo as JSON text.
    pub config: String,
    /// Free-form JSON metadata.
    pub meta: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind, config: &impl Serialize, meta: &impl Serialize) -> Result<Self> {
        Ok(Checkpoint {
            kind,
            config: serde_json::to_string(config)?,
            meta: serde_json::to_string(meta)?,
            tensors: Vec::new(),
        })
    }

    /// Appends every parameter of `store` under `prefix`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore<f32>) {
        for (_, name, t) in store.iter() {
            self.tensors.push((format!("{prefix}{name}"), t.clone()));
        }
    }

    /// Tensors whose names start with `prefix`, with the prefix removed.
    pub fn tensors_with_prefix(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .collect()
    }

    pub fn config_as<C: DeserializeOwned>(&self) -> Result<C> {
        serde_json::from_str(&self.config).map_err(|e| Error::Checkpoint(format!("config: {e}")))
    }

    pub fn meta_as<M: DeserializeOwned>(&self) -> Result<M> {
        serde_json::from_str(&self.meta).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(self.kind.magic());
        put_str(&mut out, &self.config);
        put_str(&mut out, &self.meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a checkpoint, requiring `expected` kind when given.
    pub fn from_bytes(bytes: &[u8], expected: Option<CheckpointKind>) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r.take(6).map_err(|_| Error::Checkpoint("not a checkpoint".into()))?;
        let kind = CheckpointKind::from_magic(magic).ok_or_else(|| {
            Error::Checkpoint(format!("unknown checkpoint version {:?}", String::from_utf8_lossy(magic)))
        })?;
        if let Some(want) = expected {
            if want != kind {
                return Err(Error::Checkpoint(format!("file is a {} checkpoint, expected {}", kind.name(), want.name())));
            }
        }
        let config = r.string()?;
        let meta = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let bytes = numel
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name}: shape overflow")))?;
            let data = r.take(bytes)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { kind, config, meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path, expected: Option<CheckpointKind>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes, expected).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn load_store(store: &mut ParamStore<f32>, named: &[(String, Tensor<f32>)]) -> Result<()> {
    store.load_named(named).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn parser_checkpoint(model: &ParsingModel<f32>, meta: &impl Serialize) -> Result<Checkpoint> {
    let mut c = Checkpoint::new(CheckpointKind::Parsing, model.config(), meta)?;
    c.push_store("", model.store());
    Ok(c)
}

pub fn parser_from_checkpoint(c: &Checkpoint) -> Result<ParsingModel<f32>> {
    let cfg: ParsingModelConfig = c.config_as()?;
    let mut m = ParsingModel::build(&cfg, 0)?;
    load_store(m.store_mut(), &c.tensors)?;
    Ok(m)
}

pub fn load_parser(path: &Path) -> Result<ParsingModel<f32>> {
    parser_from_checkpoint(&Checkpoint::load(path, Some(CheckpointKind::Parsing))?)
}

pub fn generator_checkpoint(gen: &Generator<f32>, meta: &impl Serialize) -> Result<Checkpoint> {
    let mut c = Checkpoint::new(CheckpointKind::Generator, gen.config(), meta)?;
    c.push_store("", gen.store());
    Ok(c)
}

pub fn generator_from_checkpoint(c: &Checkpoint) -> Result<Generator<f32>> {
    let cfg: GeneratorConfig = c.config_as()?;
    let mut g = Generator::build(&cfg, 0)?;
    load_store(g.store_mut(), &c.tensors)?;
    Ok(g)
}

pub fn load_generator(path: &Path) -> Result<Generator<f32>> {
    generator_from_checkpoint(&Checkpoint::load(path, Some(CheckpointKind::Generator))?)
}

pub fn discriminator_checkpoint(d: &Discriminator<f32>, meta: &impl Serialize) -> Result<Checkpoint> {
    let mut c = Checkpoint::new(CheckpointKind::Discriminator, d.config(), meta)?;
    c.push_store("", d.store());
    Ok(c)
}

pub fn load_discriminator(path: &Path) -> Result<Discriminator<f32>> {
    let c = Checkpoint::load(path, Some(CheckpointKind::Discriminator))?;
    let cfg: DiscriminatorConfig = c.config_as()?;
    let mut d = Discriminator::build(&cfg, 0)?;
    load_store(d.store_mut(), &c.tensors)?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip_and_kind_check() {
        let mut c = Checkpoint::new(CheckpointKind::Parsing, &serde_json::json!({"a": 1}), &"m").unwrap();
        c.tensors.push(("w".into(), Tensor::new(&[2, 2], vec![1.5f32, -0.0, f32::MIN_POSITIVE, 3.0]).unwrap()));
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Some(CheckpointKind::Parsing)).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert!(matches!(Checkpoint::from_bytes(&bytes, Some(CheckpointKind::Generator)), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], None).is_err());
        let mut v2 = bytes.clone();
        v2[5] = b'2';
        assert!(Checkpoint::from_bytes(&v2, None).is_err());
    }
}
