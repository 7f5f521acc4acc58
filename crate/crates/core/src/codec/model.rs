use serde::{Deserialize, Serialize};

use super::network::Network;
use super::params::ParamSet;
use super::quantize::{
    bottleneck_vae, quantize_vqdiff, quantize_vqema_update, quantize_vqvae, EmaState, FrozenQuantization,
};
use crate::diffnum::{Gradients, Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BottleneckKind {
    Ae,
    Vae,
    VqVae,
    VqEma,
    VqDiff,
}

impl BottleneckKind {
    pub const ALL: [BottleneckKind; 5] = [
        BottleneckKind::Ae,
        BottleneckKind::Vae,
        BottleneckKind::VqVae,
        BottleneckKind::VqEma,
        BottleneckKind::VqDiff,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BottleneckKind::Ae => "ae",
            BottleneckKind::Vae => "vae",
            BottleneckKind::VqVae => "vqvae",
            BottleneckKind::VqEma => "vqema",
            BottleneckKind::VqDiff => "vqdiff",
        }
    }

    pub fn uses_codebook(self) -> bool {
        matches!(self, BottleneckKind::VqVae | BottleneckKind::VqEma | BottleneckKind::VqDiff)
    }

    fn code(self) -> u32 {
        self as u32
    }
}

impl std::fmt::Display for BottleneckKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BottleneckKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown architecture '{s}' (expected ae|vae|vqvae|vqema|vqdiff)")))
    }
}

impl From<BottleneckKind> for u32 {
    fn from(k: BottleneckKind) -> u32 {
        k.code()
    }
}

/// Architecture and bottleneck hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: BottleneckKind,
    pub points: usize,
    pub channels: usize,
    pub latent_dim: usize,
    pub codebook_size: usize,
    /// Softmax temperature.
    pub beta_temp: f64,
    /// Gumbel noise is multiplied by this before the temperature division.
    pub gumbel_scale: f64,
    /// Standard deviation of the codebook initialization.
    pub sigma_codebook: f64,
    pub kl_weight: f64,
    pub commitment: f64,
    pub ema_decay: f64,
    pub ema_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: BottleneckKind::VqDiff,
            points: 64,
            channels: 32,
            latent_dim: 32,
            codebook_size: 128,
            beta_temp: 10.0,
            gumbel_scale: 1.0,
            sigma_codebook: 2.0,
            kl_weight: 1.0,
            commitment: 0.25,
            ema_decay: 0.99,
            ema_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.kind.uses_codebook() && self.codebook_size < 2 {
            return bad(format!("codebook_size must be >= 2, got {}", self.codebook_size));
        }
        if !(self.beta_temp > 0.0) {
            return bad(format!("beta_temp must be > 0, got {}", self.beta_temp));
        }
        if !(self.gumbel_scale >= 0.0 && self.gumbel_scale.is_finite()) {
            return bad(format!("gumbel_scale must be finite and >= 0, got {}", self.gumbel_scale));
        }
        if !(self.sigma_codebook > 0.0) {
            return bad(format!("sigma_codebook must be > 0, got {}", self.sigma_codebook));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad(format!("ema_decay must lie in (0, 1), got {}", self.ema_decay));
        }
        if self.kl_weight < 0.0 || self.commitment < 0.0 || self.ema_eps < 0.0 {
            return bad("loss weights must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Stochastic bottlenecks draw noise.
    Train,
    /// Deterministic: no Gumbel or Gaussian noise.
    Eval,
}

/// Parameters of a model bound as leaves on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    pub params: Vec<Var>,
    pub codebook: Option<Var>,
}

/// Everything a forward pass produced.
#[derive(Clone, Debug)]
pub struct Forward {
    pub input: Var,
    /// Pre-bottleneck latent (the VAE mean for the VAE).
    pub z: Var,
    /// Bottleneck output fed to the decoder.
    pub s: Var,
    pub recon: Var,
    pub recon_loss: Var,
    pub loss: Var,
    pub logvar: Option<Var>,
    pub kl: Option<Var>,
    pub weights: Option<Var>,
    pub indices: Option<Vec<usize>>,
    pub frozen: Option<FrozenQuantization>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub codebook: Option<Tensor>,
    pub ema: Option<EmaState>,
    net: Network,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut init_rng = rng.fork(0x6e6574);
        let net = Network::init(
            &mut params,
            &mut init_rng,
            config.channels,
            config.points,
            config.latent_dim,
            config.kind == BottleneckKind::Vae,
        )?;
        let codebook = config.kind.uses_codebook().then(|| {
            let mut cb_rng = rng.fork(0x636f6465);
            Tensor::from_fn(&[config.codebook_size, config.latent_dim], |_| {
                config.sigma_codebook * cb_rng.normal()
            })
        });
        let ema = match (&codebook, config.kind) {
            (Some(cb), BottleneckKind::VqEma) => Some(EmaState::new(cb)),
            _ => None,
        };
        Ok(Model { config, params, codebook, ema, net })
    }

    /// Rebuilds a model from stored tensors; names and shapes must match the
    /// layout implied by `config`.
    pub fn from_parts(
        config: ModelConfig,
        params: ParamSet,
        codebook: Option<Tensor>,
        ema: Option<EmaState>,
    ) -> Result<Self> {
        let mut template = Model::new(config, &mut Rng::new(0))?;
        if template.params.len() != params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} parameter tensors, architecture needs {}",
                params.len(),
                template.params.len()
            )));
        }
        for ((n1, t1), (n2, t2)) in template.params.iter().zip(params.iter()) {
            if n1 != n2 || t1.shape() != t2.shape() {
                return Err(Error::Format(format!(
                    "parameter mismatch: expected {n1} {:?}, found {n2} {:?}",
                    t1.shape(),
                    t2.shape()
                )));
            }
        }
        match (&template.codebook, &codebook) {
            (None, None) => {}
            (Some(a), Some(b)) if a.shape() == b.shape() => {}
            _ => return Err(Error::Format("codebook missing or misshapen for this architecture".into())),
        }
        if template.ema.is_some() != ema.is_some() {
            return Err(Error::Format("EMA state presence does not match architecture".into()));
        }
        template.params = params;
        template.codebook = codebook;
        template.ema = ema;
        Ok(template)
    }

    pub fn kind(&self) -> BottleneckKind {
        self.config.kind
    }

    /// Bind parameters as tape leaves. The codebook is a trainable leaf only
    /// for the gradient-updated quantizers.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let params = self.params.bind(tape, trainable);
        let codebook = self.codebook.as_ref().map(|cb| {
            let learn = trainable && self.config.kind != BottleneckKind::VqEma;
            tape.leaf(cb.clone(), learn)
        });
        Bound { params, codebook }
    }

    pub fn encode(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<(Var, Option<Var>)> {
        self.net.encode(tape, &bound.params, x)
    }

    pub fn decode(&self, tape: &mut Tape, bound: &Bound, s: Var) -> Result<Var> {
        self.net.decode(tape, &bound.params, s)
    }

    /// Applies this architecture's bottleneck to `z`.
    pub fn bottleneck(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        z: Var,
        logvar: Option<Var>,
        mode: Mode,
        rng: Option<&mut Rng>,
        frozen: Option<&FrozenQuantization>,
    ) -> Result<BottleneckOut> {
        let noise = match mode {
            Mode::Train => rng,
            Mode::Eval => None,
        };
        let mut out = BottleneckOut { s: z, kl: None, weights: None, vq: None, frozen: None };
        match self.config.kind {
            BottleneckKind::Ae => {}
            BottleneckKind::Vae => {
                let lv = logvar.ok_or_else(|| Error::InvalidArgument("VAE bottleneck needs a log-variance".into()))?;
                let (s, kl) = bottleneck_vae(tape, z, lv, noise)?;
                out.s = s;
                out.kl = Some(kl);
            }
            BottleneckKind::VqDiff => {
                let cb = bound.codebook.expect("vqdiff codebook");
                let (s, w) = quantize_vqdiff(tape, z, cb, self.config.beta_temp, self.config.gumbel_scale, noise)?;
                out.s = s;
                out.weights = Some(w);
            }
            BottleneckKind::VqVae | BottleneckKind::VqEma => {
                let cb = bound.codebook.expect("vq codebook");
                let vq = quantize_vqvae(tape, z, cb, frozen)?;
                out.frozen = Some(FrozenQuantization::capture(tape, z, &vq));
                out.s = vq.s;
                out.vq = Some(vq);
            }
        }
        Ok(out)
    }

    /// Full forward pass and architecture-specific loss on `x [S, 3, P]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        mode: Mode,
        rng: Option<&mut Rng>,
        frozen: Option<&FrozenQuantization>,
    ) -> Result<Forward> {
        let (z, logvar) = self.encode(tape, bound, x)?;
        let b = self.bottleneck(tape, bound, z, logvar, mode, rng, frozen)?;
        let recon = self.decode(tape, bound, b.s)?;
        let recon_loss = tape.mse_loss(recon, x)?;
        let loss = self.model_loss(tape, recon_loss, z, &b)?;
        Ok(Forward {
            input: x,
            z,
            s: b.s,
            recon,
            recon_loss,
            loss,
            logvar,
            kl: b.kl,
            weights: b.weights,
            indices: b.vq.as_ref().map(|v| v.indices.clone()),
            frozen: b.frozen,
        })
    }

    /// AE: mse. VAE: mse + kl_weight * KL. VQ-VAE: mse + |sg(z) - e|^2 +
    /// c |z - sg(e)|^2. VQ-EMA: mse + c |z - sg(e)|^2. VQ-Diff: mse alone.
    pub fn model_loss(&self, tape: &mut Tape, recon_loss: Var, z: Var, b: &BottleneckOut) -> Result<Var> {
        let c = self.config.commitment;
        match self.config.kind {
            BottleneckKind::Ae | BottleneckKind::VqDiff => Ok(recon_loss),
            BottleneckKind::Vae => {
                let kl = tape.scale(b.kl.expect("kl term"), self.config.kl_weight)?;
                tape.add(recon_loss, kl)
            }
            BottleneckKind::VqVae | BottleneckKind::VqEma => {
                let vq = b.vq.as_ref().expect("vq output");
                let commit = tape.mse_loss(z, vq.codes_sg)?;
                let commit = tape.scale(commit, c)?;
                let loss = tape.add(recon_loss, commit)?;
                if self.config.kind == BottleneckKind::VqVae {
                    let cb_loss = tape.mse_loss(vq.z_sg, vq.codes)?;
                    tape.add(loss, cb_loss)
                } else {
                    Ok(loss)
                }
            }
        }
    }

    /// Trainable tensors in a fixed order: network parameters, then the
    /// codebook when it is gradient-updated.
    pub fn trainable(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.params.tensors().collect();
        if self.config.kind != BottleneckKind::VqEma {
            out.extend(self.codebook.as_ref());
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let kind = self.config.kind;
        let mut out: Vec<&mut Tensor> = self.params.tensors_mut().collect();
        if kind != BottleneckKind::VqEma {
            out.extend(self.codebook.as_mut());
        }
        out
    }

    /// Gradient buffers matching [`Model::trainable`].
    pub fn trainable_grads(&self, bound: &Bound, grads: &mut Gradients) -> Vec<Vec<f64>> {
        let mut vars = bound.params.clone();
        if self.config.kind != BottleneckKind::VqEma {
            vars.extend(bound.codebook);
        }
        vars.into_iter()
            .map(|v| grads.take(v).expect("leaf gradient"))
            .collect()
    }

    /// EMA codebook refresh from a forward pass (VQ-EMA only; no-op otherwise).
    pub fn ema_update(&mut self, tape: &Tape, fwd: &Forward) -> Result<()> {
        if self.config.kind != BottleneckKind::VqEma {
            return Ok(());
        }
        let idx = fwd.indices.as_ref().expect("assignments");
        let (decay, eps) = (self.config.ema_decay, self.config.ema_eps);
        let cb = self.codebook.as_mut().expect("codebook");
        let st = self.ema.as_mut().expect("ema state");
        quantize_vqema_update(tape.value(fwd.z), idx, cb, st, decay, eps)
    }

    fn eval_tape() -> Tape {
        Tape::new().with_finite_checks(false)
    }

    /// Pre-bottleneck latents `[S, d]` for a bundle tensor `[S, 3, P]`.
    pub fn encode_values(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Self::eval_tape();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let (z, _) = self.encode(&mut tape, &bound, xv)?;
        Ok(tape.value(z).clone())
    }

    /// Eval-mode bottleneck output for latents `z` (the VAE uses `z` as its mean).
    pub fn bottleneck_values(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Self::eval_tape();
        let bound = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let lv = (self.config.kind == BottleneckKind::Vae).then(|| tape.constant(Tensor::zeros(z.shape())));
        let b = self.bottleneck(&mut tape, &bound, zv, lv, Mode::Eval, None, None)?;
        Ok(tape.value(b.s).clone())
    }

    pub fn decode_values(&self, s: &Tensor) -> Result<Tensor> {
        let mut tape = Self::eval_tape();
        let bound = self.bind(&mut tape, false);
        let sv = tape.constant(s.clone());
        let r = self.decode(&mut tape, &bound, sv)?;
        Ok(tape.value(r).clone())
    }

    /// Eval-mode latents: `(z, bottleneck output)`.
    pub fn latents(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let z = self.encode_values(x)?;
        let s = self.bottleneck_values(&z)?;
        Ok((z, s))
    }

    /// Eval-mode reconstruction of `[S, 3, P]`.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let (_, s) = self.latents(x)?;
        self.decode_values(&s)
    }
}

#[derive(Clone, Debug)]
pub struct BottleneckOut {
    pub s: Var,
    pub kl: Option<Var>,
    pub weights: Option<Var>,
    pub vq: Option<super::quantize::VqOutput>,
    pub frozen: Option<FrozenQuantization>,
}
