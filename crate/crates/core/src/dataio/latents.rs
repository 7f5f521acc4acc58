//! `BNL1`: per-bundle latent records.
//!
//! ```text
//! "BNL1" version:u32 record_count:u32 group_size:u32 dim:u32
//! per record: tag label provenance (len:u32 utf8 each)
//!             z: group_size*dim f64, has_s:u8, [s: group_size*dim f64]
//! ```

use std::path::Path;

use super::binio::{read_file, write_file, Reader, Writer};
use crate::codec::Model;
use crate::curves::Bundle;
use crate::diffnum::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BNL1";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentRecord {
    /// Free-form model identifier, usually the architecture name.
    pub tag: String,
    pub label: String,
    pub provenance: String,
    /// Pre-bottleneck latents `[S, d]`.
    pub z: Tensor,
    /// Bottleneck output `[S, d]`, when the model has one distinct from `z`.
    pub s: Option<Tensor>,
}

impl LatentRecord {
    fn dims(&self) -> (usize, usize) {
        (self.z.shape()[0], self.z.shape()[1])
    }
}

/// Eval-mode latents for every bundle, in dataset order.
pub fn export_latents(model: &Model, bundles: &[Bundle], tag: &str) -> Result<Vec<LatentRecord>> {
    bundles
        .iter()
        .map(|b| {
            let (z, s) = model.latents(&b.to_tensor()?)?;
            let s = (s != z).then_some(s);
            Ok(LatentRecord { tag: tag.to_string(), label: b.label.clone(), provenance: b.provenance.clone(), z, s })
        })
        .collect()
}

fn check_consistent(records: &[LatentRecord]) -> Result<Option<(usize, usize)>> {
    let mut dims = None;
    for (i, r) in records.iter().enumerate() {
        if r.z.shape().len() != 2 {
            return Err(Error::shape("latents", format!("record {i}: z has shape {:?}", r.z.shape())));
        }
        if r.s.as_ref().is_some_and(|s| s.shape() != r.z.shape()) {
            return Err(Error::shape("latents", format!("record {i}: s and z shapes differ")));
        }
        match dims {
            None => dims = Some(r.dims()),
            Some(d) if d != r.dims() => {
                return Err(Error::InvalidArgument(format!(
                    "latent dimension mismatch: record {i} is {:?}, file holds {:?}",
                    r.dims(),
                    d
                )))
            }
            _ => {}
        }
    }
    Ok(dims)
}

pub fn encode_latents(records: &[LatentRecord]) -> Result<Vec<u8>> {
    let (s, d) = check_consistent(records)?.unwrap_or((0, 0));
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.len32(records.len())?;
    w.len32(s)?;
    w.len32(d)?;
    for r in records {
        w.str(&r.tag)?;
        w.str(&r.label)?;
        w.str(&r.provenance)?;
        w.f64s(r.z.data());
        match &r.s {
            Some(t) => {
                w.u8(1);
                w.f64s(t.data());
            }
            None => w.u8(0),
        }
    }
    Ok(w.buf)
}

pub fn decode_latents(bytes: &[u8]) -> Result<Vec<LatentRecord>> {
    let mut r = Reader::new(bytes, "BNL1 payload");
    r.header(MAGIC, VERSION)?;
    let (n, s, d) = (r.count()?, r.count()?, r.count()?);
    let numel = s.checked_mul(d).ok_or_else(|| Error::Format("BNL1: size overflow".into()))?;
    let mut out = Vec::new();
    for _ in 0..n {
        let (tag, label, provenance) = (r.str()?, r.str()?, r.str()?);
        let z = Tensor::new(vec![s, d], r.f64s(numel)?)?;
        let s_t = match r.u8()? {
            0 => None,
            1 => Some(Tensor::new(vec![s, d], r.f64s(numel)?)?),
            f => return Err(Error::Format(format!("BNL1: bad quantized-latent flag {f}"))),
        };
        out.push(LatentRecord { tag, label, provenance, z, s: s_t });
    }
    r.finish()?;
    Ok(out)
}

pub fn write_latents(records: &[LatentRecord], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_latents(records)?)
}

pub fn read_latents(path: impl AsRef<Path>) -> Result<Vec<LatentRecord>> {
    decode_latents(&read_file(path.as_ref())?)
}

/// Appends to an existing file (or creates it); dimensions must agree.
pub fn append_latents(records: &[LatentRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut all = if path.exists() { read_latents(path)? } else { Vec::new() };
    all.extend_from_slice(records);
    write_latents(&all, path)
}
