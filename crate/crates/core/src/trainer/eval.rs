use std::cell::RefCell;

use super::run::model_from_checkpoint;
use crate::codec::{BottleneckKind, Model, Mode};
use crate::curves::Bundle;
use crate::dataio::Checkpoint;
use crate::diffnum::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::metrics::{recon_report, BuanConfig, ReconReport, Reconstruct};

/// Eval-mode forward passes that remember each bundle's model loss.
struct Recorder<'a> {
    model: &'a Model,
    losses: RefCell<Vec<f64>>,
}

impl Reconstruct for Recorder<'_> {
    fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new().with_finite_checks(false);
        let bound = self.model.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let fwd = self.model.forward(&mut tape, &bound, xv, Mode::Eval, None, None)?;
        self.losses.borrow_mut().push(tape.value(fwd.loss).item());
        Ok(tape.value(fwd.recon).clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: ReconReport,
    /// Mean eval-mode model loss over the split.
    pub mean_loss: f64,
}

pub fn evaluate_model(model: &Model, bundles: &[Bundle], buan: &BuanConfig) -> Result<Evaluation> {
    if bundles.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let rec = Recorder { model, losses: RefCell::new(Vec::new()) };
    let report = recon_report(&rec, bundles, buan)?;
    let losses = rec.losses.into_inner();
    let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok(Evaluation { report, mean_loss })
}

/// Loads a checkpoint and evaluates it; `expect` guards against pointing an
/// evaluation at the wrong architecture.
pub fn evaluate_split(
    ckpt: &Checkpoint,
    bundles: &[Bundle],
    expect: Option<BottleneckKind>,
    buan: &BuanConfig,
) -> Result<Evaluation> {
    let (cfg, model) = model_from_checkpoint(ckpt)?;
    if let Some(k) = expect {
        if k != cfg.arch {
            return Err(Error::Config(format!("checkpoint holds a {} model, expected {k}", cfg.arch)));
        }
    }
    if let Some(b) = bundles.first() {
        let p = b.point_count()?;
        if p != cfg.points {
            return Err(Error::Config(format!("data has {p} points per streamline, model expects {}", cfg.points)));
        }
    }
    evaluate_model(&model, bundles, buan)
}
