//! Streamline distance, bundle adjacency and reconstruction reports.

mod report;

pub use report::{recon_report, Reconstruct, ReconReport, ReportRow};

use serde::{Deserialize, Serialize};

use crate::curves::{Bundle, Point, Streamline};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuanConfig {
    /// Coverage threshold on the MDF distance, in normalized units.
    pub theta: f64,
}

impl Default for BuanConfig {
    fn default() -> Self {
        BuanConfig { theta: 0.05 }
    }
}

impl BuanConfig {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidArgument(format!("theta must be positive, got {theta}")));
        }
        Ok(BuanConfig { theta })
    }
}

fn norm_diff(a: &Point, b: &Point) -> f64 {
    let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    (x * x + y * y + z * z).sqrt()
}

/// Sum of `dist(a_i, b_{map(i)})`, accumulated in mirrored pairs
/// `(t_i + t_{P-1-i})` so that swapping or flipping the arguments permutes
/// terms only within a pair and the result is bit-identical.
fn paired_sum(a: &[Point], b: &[Point], flipped: bool, stop_above: f64) -> f64 {
    let p = a.len();
    let idx = |i: usize| if flipped { p - 1 - i } else { i };
    let mut acc = 0.0;
    for i in 0..p / 2 {
        let j = p - 1 - i;
        acc += norm_diff(&a[i], &b[idx(i)]) + norm_diff(&a[j], &b[idx(j)]);
        if acc > stop_above {
            return acc;
        }
    }
    if p % 2 == 1 {
        acc += norm_diff(&a[p / 2], &b[p / 2]);
    }
    acc
}

fn check_points(a: &Streamline, b: &Streamline) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("MDF needs equal point counts, got {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// Minimum average direct-flip distance.
pub fn mdf_distance(a: &Streamline, b: &Streamline) -> Result<f64> {
    check_points(a, b)?;
    let p = a.len() as f64;
    let direct = paired_sum(a.points(), b.points(), false, f64::INFINITY) / p;
    let flipped = paired_sum(a.points(), b.points(), true, f64::INFINITY) / p;
    Ok(direct.min(flipped))
}

/// Whether `mdf(a, b) <= theta`, abandoning each orientation once its partial
/// sum clears the threshold with margin. Partial sums of nonnegative terms
/// never exceed the full sum, so the answer matches the full computation.
fn within(a: &[Point], b: &[Point], theta: f64) -> bool {
    let p = a.len() as f64;
    let stop = theta * p * (1.0 + 1e-9);
    [false, true].into_iter().any(|flip| {
        let s = paired_sum(a, b, flip, stop);
        s <= stop && s / p <= theta
    })
}

fn check_bundles(a: &Bundle, b: &Bundle) -> Result<()> {
    if a.streamlines.is_empty() || b.streamlines.is_empty() {
        return Err(Error::InvalidArgument("bundle adjacency of an empty bundle".into()));
    }
    let p = a.streamlines[0].len();
    if a.streamlines.iter().chain(&b.streamlines).any(|s| s.len() != p) {
        return Err(Error::InvalidArgument("bundle adjacency needs a common point count".into()));
    }
    Ok(())
}

/// Symmetric coverage: the mean of the fraction of `A` within `theta` of some
/// streamline of `B` and the fraction of `B` within `theta` of `A`.
pub fn bundle_adjacency(a: &Bundle, b: &Bundle, cfg: &BuanConfig) -> Result<f64> {
    check_bundles(a, b)?;
    let (na, nb) = (a.streamlines.len(), b.streamlines.len());
    let mut cov_a = vec![false; na];
    let mut cov_b = vec![false; nb];
    for (i, sa) in a.streamlines.iter().enumerate() {
        for (j, sb) in b.streamlines.iter().enumerate() {
            if cov_a[i] && cov_b[j] {
                continue;
            }
            if within(sa.points(), sb.points(), cfg.theta) {
                cov_a[i] = true;
                cov_b[j] = true;
            }
        }
    }
    Ok(coverage(&cov_a, &cov_b))
}

pub(crate) fn coverage(cov_a: &[bool], cov_b: &[bool]) -> f64 {
    let frac = |c: &[bool]| c.iter().filter(|&&x| x).count() as f64 / c.len() as f64;
    0.5 * (frac(cov_a) + frac(cov_b))
}

#[cfg(test)]
mod tests;
