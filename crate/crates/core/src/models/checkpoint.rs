//! Binary checkpoint format.
//!
//! All integers are little-endian `u32`:
//!
//! ```text
//! "WKRT"  version  topology-tag  channels height width classes
//! spec-json-len  spec-json
//! tensor-count
//! { name-len name rank dim*rank f64-le*product(dims) } * tensor-count
//! ```
//!
//! Model parameters come first in binding order. Tensors whose name starts
//! with `input.` carry preprocessing state (normalization) and are returned
//! separately as [`Checkpoint::extras`].

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelSpec, MultiPathModel, Param, Topology};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WKRT";
pub const CHECKPOINT_VERSION: u32 = 1;

const EXTRA_PREFIX: &str = "input.";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: MultiPathModel,
    pub extras: Vec<Param>,
}

impl Checkpoint {
    pub fn extra(&self, name: &str) -> Option<&Tensor> {
        self.extras.iter().find(|p| p.name == name).map(|p| &p.value)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Contract(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes `model` plus `extras` (names must start with `input.`).
pub fn write_checkpoint(model: &MultiPathModel, extras: &[Param], mut w: impl Write) -> Result<()> {
    if let Some(p) = extras.iter().find(|p| !p.name.starts_with(EXTRA_PREFIX)) {
        return Err(Error::Contract(format!(
            "extra tensor {:?} must be prefixed with {EXTRA_PREFIX:?}",
            p.name
        )));
    }
    let spec = model.spec();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize)?;
    put_u32(&mut out, model.topology().tag() as usize)?;
    put_u32(&mut out, spec.geometry.channels)?;
    put_u32(&mut out, spec.geometry.height)?;
    put_u32(&mut out, spec.geometry.width)?;
    put_u32(&mut out, spec.column.classes)?;
    let json = serde_json::to_vec(spec).expect("model spec serializes");
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    put_u32(&mut out, model.params().len() + extras.len())?;
    for p in model.params().iter().chain(extras) {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.rank())?;
        for &d in p.value.shape() {
            put_u32(&mut out, d)?;
        }
        for &v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&out).map_err(|e| Error::io("<checkpoint writer>", e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl Cursor<'_> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.origin.to_path_buf(),
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated: wanted {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

/// Parses a checkpoint; `origin` is only used in error messages.
pub fn read_checkpoint(mut r: impl Read, origin: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io(origin, e))?;
    let mut c = Cursor { buf: &buf, pos: 0, origin };
    let magic = c.take(4)?.to_vec();
    if magic != CHECKPOINT_MAGIC {
        return Err(c.fail(format!("bad magic {:?}, expected \"WKRT\"", String::from_utf8_lossy(&magic))));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(c.fail(format!("unsupported version {version}")));
    }
    let tag = c.u32()?;
    let topology = Topology::from_tag(tag as u32).ok_or_else(|| c.fail(format!("unknown topology tag {tag}")))?;
    let dims = [c.u32()?, c.u32()?, c.u32()?, c.u32()?];
    let json_len = c.u32()?;
    let json = c.take(json_len)?.to_vec();
    let spec: ModelSpec = serde_json::from_slice(&json).map_err(|e| c.fail(format!("bad model spec: {e}")))?;
    let g = spec.geometry;
    if spec.topology() != topology || dims != [g.channels, g.height, g.width, spec.column.classes] {
        return Err(Error::Consistency(format!(
            "checkpoint header ({topology}, {dims:?}) disagrees with its model spec"
        )));
    }
    let count = c.u32()?;
    let mut params = Vec::new();
    let mut extras = Vec::new();
    for _ in 0..count {
        let n = c.u32()?;
        let raw_name = c.take(n)?.to_vec();
        let name = String::from_utf8(raw_name).map_err(|_| c.fail("tensor name is not UTF-8"))?;
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let bytes = len.checked_mul(8).ok_or_else(|| c.fail("tensor too large"))?;
        let data: Vec<f64> = c
            .take(bytes)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let value = Tensor::new(shape, data)?;
        let p = Param { name, value };
        if p.name.starts_with(EXTRA_PREFIX) {
            extras.push(p);
        } else {
            params.push(p);
        }
    }
    if c.pos != buf.len() {
        return Err(c.fail(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    let mut model = MultiPathModel::build(&spec)?;
    model.load_params(params)?;
    Ok(Checkpoint { model, extras })
}

pub fn save_checkpoint(path: &Path, model: &MultiPathModel, extras: &[Param]) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, extras, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f), path)
}
