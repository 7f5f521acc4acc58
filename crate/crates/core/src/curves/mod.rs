//! Streamline geometry: arc-length resampling, normalization, grouping and a
//! synthetic bundle generator.

mod norm;
mod synth;

pub use norm::{normalize_bundles, NormStats};
pub use synth::{synth_bundle, SynthFamily};

use crate::diffnum::{Rng, Tensor};
use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// A polyline of at least two finite points.
#[derive(Clone, Debug, PartialEq)]
pub struct Streamline {
    points: Vec<Point>,
}

impl Streamline {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a streamline needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("streamline has non-finite coordinates".into()));
        }
        Ok(Streamline { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn reversed(&self) -> Streamline {
        let mut points = self.points.clone();
        points.reverse();
        Streamline { points }
    }

    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| dist(&w[0], &w[1])).sum()
    }

    pub(crate) fn points_mut(&mut self) -> &mut [Point] {
        &mut self.points
    }
}

pub(crate) fn dist(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// An ordered set of equal-length streamlines with a class label.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub streamlines: Vec<Streamline>,
    pub label: String,
    pub provenance: String,
}

impl Bundle {
    /// Checks that the bundle is non-empty and every streamline has the same
    /// point count, which is returned.
    pub fn point_count(&self) -> Result<usize> {
        let p = self
            .streamlines
            .first()
            .ok_or_else(|| Error::InvalidArgument(format!("bundle '{}' is empty", self.provenance)))?
            .len();
        if self.streamlines.iter().any(|s| s.len() != p) {
            return Err(Error::InvalidArgument(format!(
                "bundle '{}' mixes streamline lengths",
                self.provenance
            )));
        }
        Ok(p)
    }

    /// `[S, 3, P]` tensor with one xyz channel triple per streamline.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let p = self.point_count()?;
        let s = self.streamlines.len();
        let mut data = vec![0.0; s * 3 * p];
        for (i, sl) in self.streamlines.iter().enumerate() {
            for (j, pt) in sl.points().iter().enumerate() {
                for c in 0..3 {
                    data[(i * 3 + c) * p + j] = pt[c];
                }
            }
        }
        Tensor::new(vec![s, 3, p], data)
    }

    /// Inverse of [`Bundle::to_tensor`].
    pub fn from_tensor(t: &Tensor, label: impl Into<String>, provenance: impl Into<String>) -> Result<Self> {
        let (s, p) = match *t.shape() {
            [s, 3, p] if p >= 2 => (s, p),
            ref shape => return Err(Error::shape("bundle", format!("expected [S, 3, P>=2], got {shape:?}"))),
        };
        let d = t.data();
        let streamlines = (0..s)
            .map(|i| {
                let pts = (0..p)
                    .map(|j| [d[(i * 3) * p + j], d[(i * 3 + 1) * p + j], d[(i * 3 + 2) * p + j]])
                    .collect();
                Streamline::new(pts)
            })
            .collect::<Result<_>>()?;
        Ok(Bundle { streamlines, label: label.into(), provenance: provenance.into() })
    }
}

/// Result of [`resample_arclength`].
#[derive(Clone, Debug, PartialEq)]
pub struct Resampled {
    pub streamline: Streamline,
    /// The input had zero length; its first point was replicated.
    pub degenerate: bool,
}

/// `p` points at equal arc-length fractions `0, 1/(p-1), ..., 1` along the
/// piecewise-linear curve through `s`. Endpoints are copied exactly.
pub fn resample_arclength(s: &Streamline, p: usize) -> Result<Resampled> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!("resampling needs at least 2 points, got {p}")));
    }
    let pts = s.points();
    let mut cum = Vec::with_capacity(pts.len());
    cum.push(0.0);
    for w in pts.windows(2) {
        cum.push(cum.last().unwrap() + dist(&w[0], &w[1]));
    }
    let total = *cum.last().unwrap();
    if total == 0.0 {
        log::warn!("zero-length streamline; replicating its point {p} times");
        return Ok(Resampled { streamline: Streamline { points: vec![pts[0]; p] }, degenerate: true });
    }
    let mut out = Vec::with_capacity(p);
    out.push(pts[0]);
    let mut seg = 0;
    for k in 1..p - 1 {
        let target = total * k as f64 / (p - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let f = if len > 0.0 { ((target - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (pts[seg], pts[seg + 1]);
        out.push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])]);
    }
    out.push(*pts.last().unwrap());
    Ok(Resampled { streamline: Streamline { points: out }, degenerate: false })
}

/// Shuffles `streamlines` with `rng` and cuts them into consecutive bundles
/// of exactly `group_size`, dropping the remainder.
pub fn make_groups(
    mut streamlines: Vec<Streamline>,
    group_size: usize,
    label: &str,
    provenance: &str,
    rng: &mut Rng,
) -> Result<Vec<Bundle>> {
    if group_size == 0 {
        return Err(Error::InvalidArgument("group size must be >= 1".into()));
    }
    if streamlines.len() < group_size {
        log::warn!(
            "{provenance}: {} streamlines cannot fill a group of {group_size}",
            streamlines.len()
        );
        return Ok(Vec::new());
    }
    rng.shuffle(&mut streamlines);
    let full = streamlines.len() / group_size * group_size;
    streamlines.truncate(full);
    let mut out = Vec::new();
    let mut it = streamlines.into_iter();
    while out.len() * group_size < full {
        out.push(Bundle {
            streamlines: it.by_ref().take(group_size).collect(),
            label: label.to_string(),
            provenance: provenance.to_string(),
        });
    }
    Ok(out)
}
