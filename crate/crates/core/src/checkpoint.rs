//! Versioned binary checkpoint format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   4 bytes  "HNCK"
//! version u32      currently 1
//! config  u64 length + JSON of the model config (variant, encoder, layout)
//! params  u64 count, then per parameter:
//!           u64 name length + UTF-8 name
//!           u64 rank, then u64 per dimension
//!           f64 per value, row-major
//! opt     u8 flag; when 1: f64 beta1, beta2, epsilon; u64 step count;
//!           then per parameter (same order) f64 first and second moments
//! whiten  u64 count, then per block:
//!           u64 name length + UTF-8 block name
//!           u64 dim, f64 mean (dim), f64 forward (dim*dim), f64 inverse
//! ```
//!
//! Identical model state serializes to identical bytes, which is what the
//! strict-determinism checks compare.

use crate::autodiff::{AdamState, Moments, Tensor};
use crate::error::{Error, Result};
use crate::model::{HintedModel, ModelConfig};
use crate::whiten::{PoseWhiteners, Whitener};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"HNCK";
pub const VERSION: u32 = 1;

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        let mut buf = Vec::with_capacity(vs.len().min(65536) * 8);
        for chunk in vs.chunks(65536 / 8) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            self.inner.write_all(&buf)?;
        }
        Ok(())
    }

    fn str(&mut self, s: &str) -> Result<()> {
        self.u64(s.len() as u64)?;
        self.inner.write_all(s.as_bytes())?;
        Ok(())
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b).map_err(truncated)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b).map_err(truncated)?;
        Ok(u64::from_le_bytes(b))
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.inner.read_exact(&mut b).map_err(truncated)?;
        Ok(b[0])
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b).map_err(truncated)?;
        Ok(f64::from_le_bytes(b))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; n * 8];
        self.inner.read_exact(&mut bytes).map_err(truncated)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        if n > 1 << 20 {
            return Err(Error::Checkpoint("implausible string length".into()));
        }
        let mut bytes = vec![0u8; n];
        self.inner.read_exact(&mut bytes).map_err(truncated)?;
        String::from_utf8(bytes).map_err(|_| Error::Checkpoint("invalid UTF-8 name".into()))
    }
}

fn truncated(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("truncated checkpoint: {e}"))
}

/// Saves model parameters, optional optimizer state, and whiteners.
pub fn save(model: &HintedModel, adam: Option<&AdamState>, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let file = std::fs::File::create(path)?;
    let mut w = Writer { inner: BufWriter::new(file) };
    w.inner.write_all(MAGIC)?;
    w.u32(VERSION)?;

    let config = serde_json::to_string(&model.config)?;
    w.str(&config)?;

    let params = model.parameters();
    w.u64(params.len() as u64)?;
    for p in &params {
        w.str(&p.name)?;
        w.u64(p.value.shape().len() as u64)?;
        for &dim in p.value.shape() {
            w.u64(dim as u64)?;
        }
        w.f64s(p.value.data())?;
    }

    match adam {
        Some(state) => {
            if state.moments.len() != params.len() {
                return Err(Error::Checkpoint(
                    "optimizer state does not match parameter count".into(),
                ));
            }
            w.inner.write_all(&[1u8])?;
            w.f64(state.beta1)?;
            w.f64(state.beta2)?;
            w.f64(state.epsilon)?;
            w.u64(state.t)?;
            for m in &state.moments {
                w.f64s(&m.m)?;
                w.f64s(&m.v)?;
            }
        }
        None => w.inner.write_all(&[0u8])?,
    }

    let blocks = model.layout().blocks();
    w.u64(blocks.len() as u64)?;
    for (b, wh) in blocks.iter().zip(model.whiteners.blocks()) {
        w.str(b.name)?;
        w.u64(wh.dim() as u64)?;
        w.f64s(wh.mean())?;
        w.f64s(wh.forward_matrix())?;
        w.f64s(wh.inverse_matrix())?;
    }
    w.inner.flush()?;
    Ok(())
}

/// Loads a checkpoint, rebuilding the model from its embedded config.
pub fn load(path: &Path) -> Result<(HintedModel, Option<AdamState>)> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open '{}': {e}", path.display())))?;
    let mut r = Reader { inner: BufReader::new(file) };

    let mut magic = [0u8; 4];
    r.inner.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "'{}' is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {version} unsupported (expected {VERSION})"
        )));
    }

    let config: ModelConfig = serde_json::from_str(&r.str()?)?;
    let mut model = HintedModel::build(config.variant, config.encoder.clone(), config.layout, 0)?;

    let n_params = r.u64()? as usize;
    let expected = model.parameters().len();
    if n_params != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {n_params} parameters, model expects {expected}"
        )));
    }
    let mut loaded: Vec<(String, Tensor)> = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.str()?;
        let rank = r.u64()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint("implausible tensor rank".into()));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel > 1 << 28 {
            return Err(Error::Checkpoint("implausible tensor size".into()));
        }
        let data = r.f64s(numel)?;
        loaded.push((name, Tensor::new(shape, data)?));
    }
    {
        let mut params = model.parameters_mut();
        for (p, (name, tensor)) in params.iter_mut().zip(loaded) {
            if p.name != name {
                return Err(Error::Checkpoint(format!(
                    "parameter order mismatch: expected '{}', found '{name}'",
                    p.name
                )));
            }
            if p.value.shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    tensor.shape(),
                    p.value.shape()
                )));
            }
            p.value = tensor.with_grad();
        }
    }

    let adam = match r.u8()? {
        0 => None,
        1 => {
            let beta1 = r.f64()?;
            let beta2 = r.f64()?;
            let epsilon = r.f64()?;
            let t = r.u64()?;
            let mut moments = Vec::with_capacity(n_params);
            for p in model.parameters() {
                let n = p.value.len();
                moments.push(Moments { m: r.f64s(n)?, v: r.f64s(n)? });
            }
            Some(AdamState { beta1, beta2, epsilon, t, moments })
        }
        other => {
            return Err(Error::Checkpoint(format!("invalid optimizer flag {other}")));
        }
    };

    let n_whiteners = r.u64()? as usize;
    let blocks = model.layout().blocks();
    if n_whiteners != blocks.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {n_whiteners} whitener blocks, layout expects {}",
            blocks.len()
        )));
    }
    let mut whiteners = Vec::with_capacity(n_whiteners);
    for b in blocks {
        let name = r.str()?;
        if name != b.name {
            return Err(Error::Checkpoint(format!(
                "whitener block mismatch: expected '{}', found '{name}'",
                b.name
            )));
        }
        let dim = r.u64()? as usize;
        if dim != b.dim {
            return Err(Error::Checkpoint(format!(
                "whitener '{name}' has dim {dim}, expected {}",
                b.dim
            )));
        }
        let mean = r.f64s(dim)?;
        let forward = r.f64s(dim * dim)?;
        let inverse = r.f64s(dim * dim)?;
        whiteners.push(Whitener::from_parts(mean, forward, inverse)?);
    }
    model.whiteners = PoseWhiteners::from_blocks(model.layout(), whiteners)?;

    Ok((model, adam))
}
