use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{resample_arclength, Bundle, Point, Streamline};
use crate::diffnum::Rng;
use crate::error::{Error, Result};

/// Overall template size in raw units; displacement amplitudes are relative to it.
const SCALE: f64 = 40.0;
/// Dense sampling of templates before resampling.
const DENSE: usize = 256;

/// Parametric template curves, each placed in its own region of space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthFamily {
    Arc,
    UShape,
    Helix,
    SCurve,
    Fan,
}

impl SynthFamily {
    pub const ALL: [SynthFamily; 5] = [
        SynthFamily::Arc,
        SynthFamily::UShape,
        SynthFamily::Helix,
        SynthFamily::SCurve,
        SynthFamily::Fan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthFamily::Arc => "arc",
            SynthFamily::UShape => "u-shape",
            SynthFamily::Helix => "helix",
            SynthFamily::SCurve => "s-curve",
            SynthFamily::Fan => "fan",
        }
    }

    /// Template point at parameter `t` in `[0, 1]`.
    pub fn template_point(self, t: f64) -> Point {
        let u = 2.0 * t - 1.0;
        match self {
            SynthFamily::Arc => [-30.0 + 20.0 * (PI * t).cos(), 20.0 * (PI * t).sin(), 0.0],
            SynthFamily::UShape => [30.0 + 12.0 * u, -10.0 + 24.0 * u * u, 5.0 * u],
            SynthFamily::Helix => [8.0 * (3.0 * PI * t).cos(), 30.0 + 8.0 * (3.0 * PI * t).sin(), 40.0 * t - 20.0],
            SynthFamily::SCurve => [10.0 * (PI * u).sin(), -30.0 + 20.0 * u, 10.0 + 5.0 * (PI * t).sin()],
            SynthFamily::Fan => [20.0 * u, 0.0, 30.0],
        }
    }

    pub fn template(self, p: usize) -> Result<Streamline> {
        let dense = Streamline::new((0..DENSE).map(|i| self.template_point(i as f64 / (DENSE - 1) as f64)).collect())?;
        Ok(resample_arclength(&dense, p)?.streamline)
    }
}

impl std::str::FromStr for SynthFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown family '{s}'")))
    }
}

fn rotation(ax: f64, ay: f64, az: f64) -> [[f64; 3]; 3] {
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    // Rz * Ry * Rx
    [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]
}

/// `s` streamlines of `p` points around the family template.
///
/// Each streamline adds a smooth displacement (three random-phase sinusoids
/// per axis along the curve parameter) of amplitude `noise * 40` raw units;
/// the fan family also spreads linearly towards its far end. The whole bundle
/// then receives one small rigid rotation and translation, also scaled by
/// `noise`. With `noise == 0` every streamline equals the template.
pub fn synth_bundle(family: SynthFamily, s: usize, p: usize, noise: f64, rng: &mut Rng) -> Result<Bundle> {
    if s < 2 || p < 2 {
        return Err(Error::InvalidArgument(format!("need S, P >= 2, got S={s} P={p}")));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise must be >= 0, got {noise}")));
    }
    let amp = noise * SCALE;
    let rot = rotation(noise * rng.normal(), noise * rng.normal(), noise * rng.normal());
    let shift = [0.5 * amp * rng.normal(), 0.5 * amp * rng.normal(), 0.5 * amp * rng.normal()];
    let centre = {
        let mid = family.template_point(0.5);
        let (a, b) = (family.template_point(0.0), family.template_point(1.0));
        [(a[0] + b[0] + mid[0]) / 3.0, (a[1] + b[1] + mid[1]) / 3.0, (a[2] + b[2] + mid[2]) / 3.0]
    };
    let mut streamlines = Vec::with_capacity(s);
    for _ in 0..s {
        let mut waves = [[(0.0, 0.0); 3]; 3];
        for axis in waves.iter_mut() {
            for (k, w) in axis.iter_mut().enumerate() {
                *w = (amp * rng.normal() / (k as f64 + 1.0), 2.0 * PI * rng.uniform());
            }
        }
        let spread = [amp * rng.normal(), amp * rng.normal(), amp * rng.normal()];
        let dense: Vec<Point> = (0..DENSE)
            .map(|i| {
                let t = i as f64 / (DENSE - 1) as f64;
                let mut q = family.template_point(t);
                for c in 0..3 {
                    q[c] += waves[c]
                        .iter()
                        .enumerate()
                        .map(|(k, (a, ph))| a * ((k as f64 + 1.0) * PI * t + ph).sin())
                        .sum::<f64>();
                    if family == SynthFamily::Fan {
                        q[c] += spread[c] * t;
                    }
                }
                if noise > 0.0 {
                    let d = [q[0] - centre[0], q[1] - centre[1], q[2] - centre[2]];
                    for c in 0..3 {
                        q[c] = centre[c] + rot[c][0] * d[0] + rot[c][1] * d[1] + rot[c][2] * d[2] + shift[c];
                    }
                }
                q
            })
            .collect();
        streamlines.push(resample_arclength(&Streamline::new(dense)?, p)?.streamline);
    }
    Ok(Bundle { streamlines, label: family.name().to_string(), provenance: String::new() })
}
