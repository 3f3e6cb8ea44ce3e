//! Binary container: magic, version, spec JSON, then every named buffer
//! with its shape and little-endian `f64` data.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gnn::{Model, ModelSpec};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"KAGNNCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Buffer {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

struct Contents {
    spec: ModelSpec,
    buffers: Vec<Buffer>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit the header")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let spec = serde_json::to_vec(model.spec())?;
    put_u32(&mut out, spec.len())?;
    out.extend_from_slice(&spec);
    let entries = model.store().entries();
    put_u32(&mut out, entries.len())?;
    for e in entries {
        put_u32(&mut out, e.name.len())?;
        out.extend_from_slice(e.name.as_bytes());
        put_u32(&mut out, e.tensor.rank())?;
        for &d in e.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in e.tensor.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|_| Error::Checkpoint("file is truncated".into()))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn vec(&mut self, len: usize) -> Result<Vec<u8>> {
        if self.0.len() < len {
            return Err(Error::Checkpoint("file is truncated".into()));
        }
        let (head, rest) = self.0.split_at(len);
        self.0 = rest;
        Ok(head.to_vec())
    }
}

fn read(path: &Path) -> Result<Contents> {
    let raw = std::fs::read(path)?;
    let mut r = Reader(&raw);
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(r.bytes()?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let spec_len = r.u32()?;
    let spec: ModelSpec = serde_json::from_slice(&r.vec(spec_len)?)
        .map_err(|e| Error::Checkpoint(format!("bad model spec: {e}")))?;
    let count = r.u32()?;
    let mut buffers = Vec::new();
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = String::from_utf8(r.vec(name_len)?)
            .map_err(|_| Error::Checkpoint("buffer name is not UTF-8".into()))?;
        let rank = r.u32()?;
        let shape = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(r.bytes()?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        if r.0.len() / 8 < len {
            return Err(Error::Checkpoint("file is truncated".into()));
        }
        let data = (0..len)
            .map(|_| Ok(f64::from_le_bytes(r.bytes()?)))
            .collect::<Result<Vec<_>>>()?;
        buffers.push(Buffer { name, shape, data });
    }
    if !r.0.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.0.len())));
    }
    Ok(Contents { spec, buffers })
}

/// Copies the buffers into `model` after checking every name and shape;
/// nothing is written unless all of them match.
fn fill<T: Scalar>(model: &mut Model<T>, buffers: &[Buffer]) -> Result<()> {
    let entries = model.store().entries();
    if entries.len() != buffers.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} buffers, model has {}",
            buffers.len(),
            entries.len()
        )));
    }
    for (e, b) in entries.iter().zip(buffers) {
        if e.name != b.name || e.tensor.shape() != b.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "buffer {} {:?} does not match model buffer {} {:?}",
                b.name,
                b.shape,
                e.name,
                e.tensor.shape()
            )));
        }
    }
    for (e, b) in model.store_mut().entries_mut().iter_mut().zip(buffers) {
        for (dst, &src) in e.tensor.data_mut().iter_mut().zip(&b.data) {
            *dst = T::of(src);
        }
    }
    Ok(())
}

/// Rebuilds the model recorded in a checkpoint.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let c = read(path)?;
    let mut model = Model::new(c.spec, 0)?;
    fill(&mut model, &c.buffers)?;
    Ok(model)
}

/// Loads parameters into an existing model; the recorded spec must equal
/// the model's.
pub fn load_checkpoint_into<T: Scalar>(model: &mut Model<T>, path: &Path) -> Result<()> {
    let c = read(path)?;
    if &c.spec != model.spec() {
        return Err(Error::Checkpoint("checkpoint was written for a different model spec".into()));
    }
    fill(model, &c.buffers)
}
