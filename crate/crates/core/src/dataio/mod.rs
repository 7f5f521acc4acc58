//! On-disk formats and dataset preparation.
//!
//! Native formats (`BND1` datasets, `BNL1` latents, `BNC1` checkpoints) are
//! little-endian, magic-prefixed and versioned; readers take byte slices and
//! reject anything whose declared counts disagree with the payload length.

mod binio;
mod bnd;
mod checkpoint;
mod latents;
mod split;
mod trackvis;

pub use bnd::{read_bnd, write_bnd, BndDataset};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use latents::{
    append_latents, decode_latents, encode_latents, export_latents, read_latents, write_latents, LatentRecord,
};
pub use split::{balance_and_split, Split, SplitSpec};
pub use trackvis::{encode_trackvis, import_trackvis, parse_trackvis, TRK_HEADER_SIZE};

#[cfg(test)]
mod tests;
