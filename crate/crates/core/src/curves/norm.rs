use serde::{Deserialize, Serialize};

use super::Bundle;
use crate::error::{Error, Result};

/// Affine map `x -> (x - centroid) / scale` fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub centroid: [f64; 3],
    pub scale: f64,
}

impl NormStats {
    /// Centroid of every training point, then the largest absolute centred
    /// coordinate.
    pub fn fit(train: &[Bundle]) -> Result<Self> {
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for p in train.iter().flat_map(|b| &b.streamlines).flat_map(|s| s.points()) {
            for c in 0..3 {
                sum[c] += p[c];
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::InvalidArgument("cannot normalize an empty training set".into()));
        }
        let centroid = sum.map(|s| s / n as f64);
        let scale = train
            .iter()
            .flat_map(|b| &b.streamlines)
            .flat_map(|s| s.points())
            .flat_map(|p| (0..3).map(move |c| (p[c] - centroid[c]).abs()))
            .fold(0.0, f64::max);
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument("training coordinates have no spread".into()));
        }
        Ok(NormStats { centroid, scale })
    }

    pub fn apply(&self, bundles: &mut [Bundle]) {
        self.map(bundles, |v, c| (v - self.centroid[c]) / self.scale);
    }

    pub fn invert(&self, bundles: &mut [Bundle]) {
        self.map(bundles, |v, c| v * self.scale + self.centroid[c]);
    }

    fn map(&self, bundles: &mut [Bundle], f: impl Fn(f64, usize) -> f64) {
        for s in bundles.iter_mut().flat_map(|b| b.streamlines.iter_mut()) {
            for p in s.points_mut() {
                for c in 0..3 {
                    p[c] = f(p[c], c);
                }
            }
        }
    }
}

/// Fits [`NormStats`] on `train` and applies them to `train` and, unchanged,
/// to `others`. Other splits may land outside `[-1, 1]`.
pub fn normalize_bundles(train: &mut [Bundle], others: &mut [Bundle]) -> Result<NormStats> {
    let stats = NormStats::fit(train)?;
    stats.apply(train);
    stats.apply(others);
    Ok(stats)
}
