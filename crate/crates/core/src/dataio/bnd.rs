//! `BND1`: prepared bundle datasets.
//!
//! ```text
//! "BND1" version:u32 bundle_count:u32 group_size:u32 point_count:u32
//! label_count:u32 { len:u32 utf8 }*
//! per bundle: label_id:u32 provenance(len:u32 utf8) group_size*point_count*3 f64
//! ```
//! Coordinates are stored streamline by streamline, point by point, xyz.

use std::collections::BTreeMap;
use std::path::Path;

use super::binio::{read_file, write_file, Reader, Writer};
use crate::curves::{Bundle, Streamline};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BND1";
const VERSION: u32 = 1;

/// Bundles that all share one group size and point count.
#[derive(Clone, Debug, PartialEq)]
pub struct BndDataset {
    pub group_size: usize,
    pub point_count: usize,
    pub bundles: Vec<Bundle>,
}

impl BndDataset {
    /// Infers the shape from the first bundle; empty input needs it spelled out.
    pub fn from_bundles(bundles: Vec<Bundle>) -> Result<Self> {
        let Some(first) = bundles.first() else {
            return Err(Error::InvalidArgument("cannot infer dataset shape from zero bundles".into()));
        };
        let ds = BndDataset {
            group_size: first.streamlines.len(),
            point_count: first.point_count()?,
            bundles,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.bundles.iter().enumerate() {
            if b.streamlines.len() != self.group_size || b.streamlines.iter().any(|s| s.len() != self.point_count) {
                return Err(Error::InvalidArgument(format!(
                    "bundle {i} is not {} streamlines of {} points",
                    self.group_size, self.point_count
                )));
            }
        }
        Ok(())
    }

    /// Distinct labels in sorted order; ids in the file index this table.
    pub fn labels(&self) -> Vec<String> {
        let mut l: Vec<String> = self.bundles.iter().map(|b| b.label.clone()).collect();
        l.sort();
        l.dedup();
        l
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let labels = self.labels();
        let ids: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut w = Writer::default();
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.len32(self.bundles.len())?;
        w.len32(self.group_size)?;
        w.len32(self.point_count)?;
        w.len32(labels.len())?;
        for l in &labels {
            w.str(l)?;
        }
        for b in &self.bundles {
            w.len32(ids[b.label.as_str()])?;
            w.str(&b.provenance)?;
            for s in &b.streamlines {
                for p in s.points() {
                    w.f64s(p);
                }
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "BND1 payload");
        r.header(MAGIC, VERSION)?;
        let (n, group_size, point_count) = (r.count()?, r.count()?, r.count()?);
        if n > 0 && (group_size == 0 || point_count < 2) {
            return Err(Error::Format(format!("BND1: invalid shape {group_size} x {point_count}")));
        }
        let label_count = r.count()?;
        let mut labels = Vec::new();
        for _ in 0..label_count {
            labels.push(r.str()?);
        }
        let mut bundles = Vec::new();
        for _ in 0..n {
            let id = r.count()?;
            let label = labels
                .get(id)
                .ok_or_else(|| Error::Format(format!("BND1: label id {id} outside table of {label_count}")))?
                .clone();
            let provenance = r.str()?;
            let per = group_size
                .checked_mul(point_count)
                .and_then(|v| v.checked_mul(3))
                .ok_or_else(|| Error::Format("BND1: bundle size overflow".into()))?;
            let coords = r.f64s(per)?;
            let streamlines = coords
                .chunks_exact(point_count * 3)
                .map(|c| Streamline::new(c.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect()))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Format(format!("BND1: {e}")))?;
            bundles.push(Bundle { streamlines, label, provenance });
        }
        r.finish()?;
        Ok(BndDataset { group_size, point_count, bundles })
    }
}

pub fn write_bnd(ds: &BndDataset, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &ds.to_bytes()?)
}

pub fn read_bnd(path: impl AsRef<Path>) -> Result<BndDataset> {
    BndDataset::from_bytes(&read_file(path.as_ref())?)
}
