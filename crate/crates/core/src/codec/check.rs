//! Whole-model gradient diagnostics.

use super::model::{BottleneckKind, Bound, Model, ModelConfig, Mode};
use super::quantize::FrozenQuantization;
use crate::diffnum::{grad_check, GradCheckReport, Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Toy architecture used for end-to-end finite-difference checks: a
/// 2-streamline bundle of 8 points, `d = 4`, `k = 4`.
pub fn toy_config(kind: BottleneckKind) -> ModelConfig {
    ModelConfig {
        kind,
        points: 8,
        channels: 3,
        latent_dim: 4,
        codebook_size: 4,
        ..ModelConfig::default()
    }
}

/// Smallest distance from any ReLU input to its kink accepted for a gradient
/// check point; a finite-difference step of `1e-5` stays on one side.
pub const KINK_MARGIN: f64 = 1e-3;

/// A toy model, bundle and fixed noise seed where the loss is smooth within
/// [`KINK_MARGIN`] of every ReLU input.
pub struct ToyProblem {
    pub model: Model,
    pub bundle: Tensor,
    pub noise_seed: u64,
    pub frozen: Option<FrozenQuantization>,
    pub attempts: usize,
}

impl ToyProblem {
    /// Draws candidate points from `seed` until one is far enough from every
    /// ReLU kink. Biases are randomized because zero biases on dead channels
    /// put inputs exactly on the kink.
    pub fn new(kind: BottleneckKind, seed: u64) -> Result<Self> {
        let base = Rng::new(seed);
        for attempt in 0..1000 {
            let mut rng = base.fork(attempt);
            let mut model = Model::new(toy_config(kind), &mut rng)?;
            let mut bias_rng = rng.fork(3);
            for t in model.params.tensors_mut().filter(|t| t.shape().len() == 1) {
                t.data_mut().iter_mut().for_each(|v| *v = bias_rng.uniform_range(-0.1, 0.1));
            }
            let mut data_rng = rng.fork(1);
            let bundle = Tensor::from_fn(&[2, 3, 8], |_| data_rng.uniform_range(-1.0, 1.0));
            let noise_seed = rng.fork(2).next_u64();
            let mut tape = Tape::new().with_finite_checks(false);
            let bound = model.bind(&mut tape, false);
            let xv = tape.constant(bundle.clone());
            let fwd = model.forward(&mut tape, &bound, xv, Mode::Train, Some(&mut Rng::new(noise_seed)), None)?;
            if tape.relu_margin().unwrap_or(f64::INFINITY) >= KINK_MARGIN {
                let frozen = if kind == BottleneckKind::VqVae || kind == BottleneckKind::VqEma {
                    fwd.frozen
                } else {
                    None
                };
                return Ok(ToyProblem { model, bundle, noise_seed, frozen, attempts: attempt as usize + 1 });
            }
        }
        Err(Error::InvalidArgument("no smooth toy point found".into()))
    }

    /// Central-difference check of the full training loss with respect to
    /// every trainable tensor. Noise is redrawn from the same seed on every
    /// evaluation, and the nearest-code quantizers keep their assignments
    /// frozen at the base point so the oracle sees the same surrogate the
    /// straight-through rule differentiates.
    pub fn check(&self, step: f64, tol: f64) -> Result<GradCheckReport> {
        let model = &self.model;
        let n = model.params.len();
        let fixed_codebook = (model.kind() == BottleneckKind::VqEma).then(|| model.codebook.clone()).flatten();
        let point: Vec<Tensor> = model.trainable().into_iter().cloned().collect();
        let f = |tape: &mut Tape, vars: &[Var]| {
            let codebook = match &fixed_codebook {
                Some(cb) => Some(tape.constant(cb.clone())),
                None => vars.get(n).copied(),
            };
            let bound = Bound { params: vars[..n].to_vec(), codebook };
            let xv = tape.constant(self.bundle.clone());
            let mut noise = Rng::new(self.noise_seed);
            let fwd = model.forward(tape, &bound, xv, Mode::Train, Some(&mut noise), self.frozen.as_ref())?;
            Ok(fwd.loss)
        };
        grad_check(f, &point, step, tol)
    }
}

/// [`ToyProblem::check`] for a freshly drawn toy problem.
pub fn check_model_gradients(kind: BottleneckKind, seed: u64, step: f64, tol: f64) -> Result<GradCheckReport> {
    ToyProblem::new(kind, seed)?.check(step, tol)
}

/// Codebook gradient norms for one training-mode forward pass on `x`, with
/// noise drawn from `noise_seed`:
/// `(through the full loss, through the reconstruction term alone)`.
/// `None` for architectures without a gradient-trained codebook.
pub fn codebook_gradient_norms(model: &Model, x: &Tensor, noise_seed: u64) -> Result<Option<(f64, f64)>> {
    if !model.kind().uses_codebook() || model.kind() == BottleneckKind::VqEma {
        return Ok(None);
    }
    let mut norms = [0.0; 2];
    for (slot, recon_only) in norms.iter_mut().zip([false, true]) {
        let mut noise = Rng::new(noise_seed);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let xv = tape.constant(x.clone());
        let fwd = model.forward(&mut tape, &bound, xv, Mode::Train, Some(&mut noise), None)?;
        let target = if recon_only { fwd.recon_loss } else { fwd.loss };
        let grads = tape.backward(target)?;
        let cb = bound.codebook.expect("codebook bound");
        *slot = grads.wrt(cb, &tape).norm();
    }
    Ok(Some((norms[0], norms[1])))
}
