//! `BNC1`: training checkpoints.
//!
//! ```text
//! "BNC1" version:u32 config(len:u32 utf8 JSON) seed:u64 iteration:u64
//! param_count:u32 { name tensor }*
//! has_codebook:u8 [tensor]
//! has_ema:u8 [counts(len:u32 f64*) sums:tensor]
//! has_adam:u8 [lr b1 b2 eps:f64 t:u64 n:u32 { len:u32 m:f64* v:f64* }*]
//! tensor = rank:u32 dims:u32* data:f64*
//! ```

use std::path::Path;

use super::binio::{read_file, write_file, Reader, Writer};
use crate::codec::{EmaState, ParamSet};
use crate::diffnum::{AdamConfig, AdamState, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BNC1";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Training configuration, echoed verbatim as JSON.
    pub config: String,
    pub seed: u64,
    /// Completed iterations.
    pub iteration: u64,
    pub params: ParamSet,
    pub codebook: Option<Tensor>,
    pub ema: Option<EmaState>,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(&self.config)?;
        w.u64(self.seed);
        w.u64(self.iteration);
        w.len32(self.params.len())?;
        for (name, t) in self.params.iter() {
            w.str(name)?;
            w.tensor(t)?;
        }
        w.u8(self.codebook.is_some() as u8);
        if let Some(cb) = &self.codebook {
            w.tensor(cb)?;
        }
        w.u8(self.ema.is_some() as u8);
        if let Some(e) = &self.ema {
            w.len32(e.counts.len())?;
            w.f64s(&e.counts);
            w.tensor(&e.sums)?;
        }
        w.u8(self.adam.is_some() as u8);
        if let Some(a) = &self.adam {
            let AdamConfig { lr, beta1, beta2, eps } = a.config;
            w.f64s(&[lr, beta1, beta2, eps]);
            w.u64(a.t);
            w.len32(a.m.len())?;
            for (m, v) in a.m.iter().zip(&a.v) {
                w.len32(m.len())?;
                w.f64s(m);
                w.f64s(v);
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "BNC1 payload");
        r.header(MAGIC, VERSION)?;
        let config = r.str()?;
        let (seed, iteration) = (r.u64()?, r.u64()?);
        let n = r.count()?;
        let mut entries = Vec::new();
        for _ in 0..n {
            entries.push((r.str()?, r.tensor()?));
        }
        let flag = |r: &mut Reader, what: &str| -> Result<bool> {
            match r.u8()? {
                0 => Ok(false),
                1 => Ok(true),
                f => Err(Error::Format(format!("BNC1: bad {what} flag {f}"))),
            }
        };
        let codebook = if flag(&mut r, "codebook")? { Some(r.tensor()?) } else { None };
        let ema = if flag(&mut r, "EMA")? {
            let k = r.count()?;
            let counts = r.f64s(k)?;
            Some(EmaState { counts, sums: r.tensor()? })
        } else {
            None
        };
        let adam = if flag(&mut r, "optimizer")? {
            let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let t = r.u64()?;
            let k = r.count()?;
            let (mut m, mut v) = (Vec::new(), Vec::new());
            for _ in 0..k {
                let len = r.count()?;
                m.push(r.f64s(len)?);
                v.push(r.f64s(len)?);
            }
            Some(AdamState { config: AdamConfig { lr, beta1, beta2, eps }, t, m, v })
        } else {
            None
        };
        r.finish()?;
        Ok(Checkpoint { config, seed, iteration, params: ParamSet::from_entries(entries), codebook, ema, adam })
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &ckpt.to_bytes()?)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&read_file(path.as_ref())?)
}
