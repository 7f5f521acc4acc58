//! Read-only subset of the classic `.trk` tractography layout.
//!
//! 1000-byte little-endian header, then per track an `i32` point count and
//! that many float32 xyz triples. Per-point scalars and per-track properties
//! are not supported.

use std::path::Path;

use super::binio::read_file;
use crate::curves::{Point, Streamline};
use crate::error::{Error, Result};

pub const TRK_HEADER_SIZE: usize = 1000;
const OFF_N_SCALARS: usize = 36;
const OFF_N_PROPERTIES: usize = 238;
const OFF_N_COUNT: usize = 988;
const OFF_VERSION: usize = 992;
const OFF_HDR_SIZE: usize = 996;

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(format!("trackvis: {}", msg.into()))
}

/// Parses a track file held in memory. Tracks with fewer than two points are
/// skipped with a warning.
pub fn parse_trackvis(bytes: &[u8]) -> Result<Vec<Streamline>> {
    if bytes.len() < 6 || &bytes[..5] != b"TRACK" {
        return Err(bad("missing TRACK magic"));
    }
    if bytes.len() < TRK_HEADER_SIZE {
        return Err(Error::Truncated {
            what: "trackvis header",
            expected: TRK_HEADER_SIZE as u64,
            actual: bytes.len() as u64,
        });
    }
    let hdr_size = i32_at(bytes, OFF_HDR_SIZE);
    if hdr_size != TRK_HEADER_SIZE as i32 {
        return Err(bad(format!("header size field is {hdr_size}, expected 1000 (big-endian files are not supported)")));
    }
    let (ns, np) = (i16_at(bytes, OFF_N_SCALARS), i16_at(bytes, OFF_N_PROPERTIES));
    if ns != 0 || np != 0 {
        return Err(bad(format!("unsupported: {ns} per-point scalars and {np} per-track properties (both must be 0)")));
    }
    let declared = i32_at(bytes, OFF_N_COUNT);
    if declared < 0 {
        return Err(bad(format!("negative track count {declared}")));
    }

    let mut out = Vec::new();
    let mut pos = TRK_HEADER_SIZE;
    let mut seen = 0usize;
    // a count of 0 means "unknown": read to the end of the file
    while if declared == 0 { pos < bytes.len() } else { seen < declared as usize } {
        let truncated = |pos: usize, need: usize| Error::Truncated {
            what: "trackvis track",
            expected: (pos + need) as u64,
            actual: bytes.len() as u64,
        };
        if bytes.len() - pos < 4 {
            return Err(truncated(pos, 4));
        }
        let n = i32_at(bytes, pos);
        pos += 4;
        if n < 0 {
            return Err(bad(format!("track {seen} has negative point count {n}")));
        }
        let need = n as usize * 12;
        if bytes.len() - pos < need {
            return Err(truncated(pos, need));
        }
        let pts: Vec<Point> = bytes[pos..pos + need]
            .chunks_exact(12)
            .map(|c| {
                let f = |i: usize| f32::from_le_bytes(c[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
                [f(0), f(1), f(2)]
            })
            .collect();
        pos += need;
        if pts.len() < 2 {
            log::warn!("trackvis: skipping track {seen} with {} point(s)", pts.len());
        } else {
            out.push(Streamline::new(pts).map_err(|e| bad(format!("track {seen}: {e}")))?);
        }
        seen += 1;
    }
    if pos != bytes.len() {
        return Err(bad(format!("{} bytes after the {declared} declared tracks", bytes.len() - pos)));
    }
    Ok(out)
}

/// Reads a `.trk` file; each streamline carries the file stem as provenance.
pub fn import_trackvis(path: impl AsRef<Path>) -> Result<Vec<(Streamline, String)>> {
    let path = path.as_ref();
    let prov = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tracks = parse_trackvis(&read_file(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok(tracks.into_iter().map(|s| (s, prov.clone())).collect())
}

/// Minimal writer for the same subset, used for fixtures and round trips.
/// Coordinates are narrowed to float32.
pub fn encode_trackvis(tracks: &[Vec<[f32; 3]>]) -> Vec<u8> {
    let mut b = vec![0u8; TRK_HEADER_SIZE];
    b[..6].copy_from_slice(b"TRACK\0");
    for (i, d) in [1i16, 1, 1].iter().enumerate() {
        b[6 + 2 * i..8 + 2 * i].copy_from_slice(&d.to_le_bytes());
    }
    for i in 0..3 {
        b[12 + 4 * i..16 + 4 * i].copy_from_slice(&1f32.to_le_bytes());
    }
    b[948..952].copy_from_slice(b"RAS\0");
    b[OFF_N_COUNT..OFF_N_COUNT + 4].copy_from_slice(&(tracks.len() as i32).to_le_bytes());
    b[OFF_VERSION..OFF_VERSION + 4].copy_from_slice(&2i32.to_le_bytes());
    b[OFF_HDR_SIZE..OFF_HDR_SIZE + 4].copy_from_slice(&(TRK_HEADER_SIZE as i32).to_le_bytes());
    for t in tracks {
        b.extend_from_slice(&(t.len() as i32).to_le_bytes());
        for p in t {
            for v in p {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    b
}
