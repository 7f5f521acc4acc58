//! Residual 1-D convolutional encoder and its mirrored decoder.
//!
//! Each streamline is a `[3, P]` signal (xyz channels over P points); a bundle
//! of S streamlines is a batch `[S, 3, P]`, so every streamline is encoded
//! independently with shared weights.
//!
//! Encoder: stem conv (3 -> C, K=3), two stride-2 convs (P -> P/4), two
//! residual blocks at the reduced length, flatten, affine to `d`. Decoder runs
//! the same stack backwards with transposed convs for upsampling.
//!
//! A linear skip spans each trunk: `z = proj(features) + skip(x)` and
//! `y = head(...) + skip(s)`, so the affine part of the map never has to be
//! learned through the ReLU stack.

use super::params::{init_normal, ParamSet};
use crate::diffnum::{Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub(crate) const DOWNSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: usize,
    b: usize,
    stride: usize,
    padding: usize,
    transposed: bool,
}

impl Conv {
    fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let b = Some(vars[self.b]);
        if self.transposed {
            tape.conv_transpose1d_bias(x, vars[self.w], b, self.stride, self.padding)
        } else {
            tape.conv1d_bias(x, vars[self.w], b, self.stride, self.padding)
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        tape.affine(x, vars[self.w], vars[self.b])
    }
}

#[derive(Clone, Copy, Debug)]
struct Residual {
    first: Conv,
    second: Conv,
}

impl Residual {
    /// `relu(x + conv(relu(conv(x))))`
    fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let h = self.first.apply(tape, vars, x)?;
        let h = tape.relu(h)?;
        let h = self.second.apply(tape, vars, h)?;
        let y = tape.add(x, h)?;
        tape.relu(y)
    }
}

/// Parameter layout for the shared encoder/decoder.
#[derive(Clone, Debug)]
pub(crate) struct Network {
    channels: usize,
    points: usize,
    latent_dim: usize,
    stem: Conv,
    enc_res: [Residual; 2],
    down: [Conv; 2],
    proj: Linear,
    enc_skip: Linear,
    logvar: Option<Linear>,
    dec_proj: Linear,
    dec_skip: Linear,
    up: [Conv; 2],
    dec_res: [Residual; 2],
    head: Conv,
}

struct Builder<'a> {
    params: &'a mut ParamSet,
    rng: &'a mut Rng,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, taps: usize, stride: usize, gain: f64) -> Conv {
        let w = init_normal(self.rng, &[cout, cin, taps], cin * taps, gain);
        Conv {
            w: self.params.push(format!("{name}.weight"), w),
            b: self.params.push(format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride,
            padding: if taps == 4 { 1 } else { taps / 2 },
            transposed: false,
        }
    }

    fn conv_t(&mut self, name: &str, cin: usize, cout: usize, taps: usize, stride: usize) -> Conv {
        // each output position receives taps/stride contributions per input channel
        let fan_in = cin * taps / stride;
        let w = init_normal(self.rng, &[cin, cout, taps], fan_in, 2.0);
        Conv {
            w: self.params.push(format!("{name}.weight"), w),
            b: self.params.push(format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride,
            padding: 1,
            transposed: true,
        }
    }

    fn linear(&mut self, name: &str, fin: usize, fout: usize, gain: f64) -> Linear {
        let w = init_normal(self.rng, &[fout, fin], fin, gain);
        Linear {
            w: self.params.push(format!("{name}.weight"), w),
            b: self.params.push(format!("{name}.bias"), Tensor::zeros(&[fout])),
        }
    }

    fn residual(&mut self, name: &str, c: usize) -> Residual {
        Residual {
            first: self.conv(&format!("{name}.conv1"), c, c, 3, 1, 2.0),
            second: self.conv(&format!("{name}.conv2"), c, c, 3, 1, 1.0),
        }
    }
}

impl Network {
    /// Builds the layout and appends freshly initialized parameters to `params`.
    pub fn init(
        params: &mut ParamSet,
        rng: &mut Rng,
        channels: usize,
        points: usize,
        latent_dim: usize,
        with_logvar: bool,
    ) -> Result<Self> {
        if points < DOWNSAMPLE || points % DOWNSAMPLE != 0 {
            return Err(Error::InvalidArgument(format!(
                "point count {points} must be a positive multiple of {DOWNSAMPLE}"
            )));
        }
        if channels == 0 || latent_dim == 0 {
            return Err(Error::InvalidArgument("channels and latent_dim must be >= 1".into()));
        }
        let flat = channels * points / DOWNSAMPLE;
        let mut b = Builder { params, rng };
        let stem = b.conv("enc.stem", 3, channels, 3, 1, 2.0);
        let down = [
            b.conv("enc.down1", channels, channels, 4, 2, 2.0),
            b.conv("enc.down2", channels, channels, 4, 2, 2.0),
        ];
        let enc_res = [b.residual("enc.res1", channels), b.residual("enc.res2", channels)];
        let proj = b.linear("enc.proj", flat, latent_dim, 1.0);
        let enc_skip = b.linear("enc.skip", 3 * points, latent_dim, 0.0);
        let logvar = with_logvar.then(|| b.linear("enc.logvar", flat, latent_dim, 0.01));
        let dec_proj = b.linear("dec.proj", latent_dim, flat, 2.0);
        let dec_skip = b.linear("dec.skip", latent_dim, 3 * points, 0.0);
        let dec_res = [b.residual("dec.res1", channels), b.residual("dec.res2", channels)];
        let up = [
            b.conv_t("dec.up1", channels, channels, 4, 2),
            b.conv_t("dec.up2", channels, channels, 4, 2),
        ];
        let head = b.conv("dec.head", channels, 3, 3, 1, 1.0);
        Ok(Network {
            channels,
            points,
            latent_dim,
            stem,
            enc_res,
            down,
            proj,
            enc_skip,
            logvar,
            dec_proj,
            dec_skip,
            up,
            dec_res,
            head,
        })
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<usize> {
        match *tape.shape(x) {
            [s, 3, p] if p == self.points => Ok(s),
            ref shape => Err(Error::shape(
                "encode",
                format!("expected [S, 3, {}], got {shape:?}", self.points),
            )),
        }
    }

    /// Shared trunk; returns flattened features `[S, C * P / 4]`.
    fn features(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let s = self.check_input(tape, x)?;
        let h = self.stem.apply(tape, vars, x)?;
        let mut h = tape.relu(h)?;
        for d in &self.down {
            let y = d.apply(tape, vars, h)?;
            h = tape.relu(y)?;
        }
        for r in &self.enc_res {
            h = r.apply(tape, vars, h)?;
        }
        tape.reshape(h, &[s, self.channels * self.points / DOWNSAMPLE])
    }

    /// `[S, 3, P] -> [S, d]`, plus the log-variance head when present.
    pub fn encode(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<(Var, Option<Var>)> {
        let f = self.features(tape, vars, x)?;
        let z = self.proj.apply(tape, vars, f)?;
        let s = tape.shape(x)[0];
        let flat = tape.reshape(x, &[s, 3 * self.points])?;
        let skip = self.enc_skip.apply(tape, vars, flat)?;
        let z = tape.add(z, skip)?;
        let lv = match &self.logvar {
            Some(head) => Some(head.apply(tape, vars, f)?),
            None => None,
        };
        Ok((z, lv))
    }

    /// `[S, d] -> [S, 3, P]`.
    pub fn decode(&self, tape: &mut Tape, vars: &[Var], s: Var) -> Result<Var> {
        let n = match *tape.shape(s) {
            [n, d] if d == self.latent_dim => n,
            ref shape => {
                return Err(Error::shape(
                    "decode",
                    format!("expected [S, {}], got {shape:?}", self.latent_dim),
                ))
            }
        };
        let h = self.dec_proj.apply(tape, vars, s)?;
        let h = tape.reshape(h, &[n, self.channels, self.points / DOWNSAMPLE])?;
        let mut h = tape.relu(h)?;
        for r in &self.dec_res {
            h = r.apply(tape, vars, h)?;
        }
        for u in &self.up {
            let y = u.apply(tape, vars, h)?;
            h = tape.relu(y)?;
        }
        let y = self.head.apply(tape, vars, h)?;
        let skip = self.dec_skip.apply(tape, vars, s)?;
        let skip = tape.reshape(skip, &[n, 3, self.points])?;
        tape.add(y, skip)
    }
}
