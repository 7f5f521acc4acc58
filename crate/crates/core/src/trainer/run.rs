use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::time::Instant;

use super::TrainConfig;
use crate::codec::{Model, Mode};
use crate::curves::Bundle;
use crate::dataio::{write_checkpoint, Checkpoint};
use crate::diffnum::{AdamState, Rng, Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossEntry {
    pub iteration: u64,
    pub loss: f64,
    /// Reconstruction MSE part of `loss`.
    pub recon: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossEntry>,
}

impl TrainOutcome {
    pub fn model(&self) -> Result<Model> {
        model_from_checkpoint(&self.checkpoint).map(|(_, m)| m)
    }
}

/// Rebuilds the configuration and model stored in a checkpoint.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<(TrainConfig, Model)> {
    let cfg = TrainConfig::from_json(&ckpt.config)?;
    let model = Model::from_parts(cfg.model_config(), ckpt.params.clone(), ckpt.codebook.clone(), ckpt.ema.clone())?;
    Ok((cfg, model))
}

/// Stacks bundle tensors `[S, 3, P]` along the streamline axis.
pub(crate) fn stack(parts: &[&Tensor]) -> Result<Tensor> {
    let inner = &parts[0].shape()[1..];
    let rows: usize = parts.iter().map(|t| t.shape()[0]).sum();
    let mut data = Vec::with_capacity(parts.iter().map(|t| t.numel()).sum());
    for t in parts {
        if &t.shape()[1..] != inner {
            return Err(Error::shape("stack", format!("{:?} vs {inner:?}", t.shape())));
        }
        data.extend_from_slice(t.data());
    }
    let mut shape = vec![rows];
    shape.extend_from_slice(inner);
    Tensor::new(shape, data)
}

struct LossLog {
    out: Option<BufWriter<File>>,
}

impl LossLog {
    fn open(cfg: &TrainConfig, resuming: bool) -> Result<Self> {
        let Some(path) = &cfg.log_path else { return Ok(LossLog { out: None }) };
        let append = resuming && path.exists();
        let f = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(f);
        if !append {
            writeln!(out, "iteration,loss,wall_ms").map_err(|e| Error::io(path, e))?;
        }
        Ok(LossLog { out: Some(out) })
    }

    fn push(&mut self, cfg: &TrainConfig, e: &LossEntry) -> Result<()> {
        if let Some(out) = &mut self.out {
            writeln!(out, "{},{},{:.3}", e.iteration, e.loss, e.wall_ms)
                .map_err(|err| Error::io(cfg.log_path.clone().unwrap_or_default(), err))?;
        }
        Ok(())
    }

    fn flush(&mut self, cfg: &TrainConfig) -> Result<()> {
        if let Some(out) = &mut self.out {
            out.flush().map_err(|e| Error::io(cfg.log_path.clone().unwrap_or_default(), e))?;
        }
        Ok(())
    }
}

/// Fresh run from the configured seed.
pub fn train_run(cfg: &TrainConfig, train: &[Bundle]) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Model::new(cfg.model_config(), &mut Rng::new(cfg.seed))?;
    let adam = AdamState::new(cfg.adam(), &model.trainable());
    run(cfg, model, adam, 0, train)
}

/// Continues a checkpointed run up to `cfg.iterations`. The result is bitwise
/// identical to an uninterrupted run of the same length.
pub fn resume_run(cfg: &TrainConfig, ckpt: &Checkpoint, train: &[Bundle]) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (old, model) = model_from_checkpoint(ckpt)?;
    if old.model_config() != cfg.model_config() || old.seed != cfg.seed || old.batch_size != cfg.batch_size {
        return Err(Error::Config("checkpoint was trained with a different architecture, seed or batch size".into()));
    }
    let adam = ckpt.adam.clone().ok_or_else(|| Error::Format("checkpoint has no optimizer state".into()))?;
    if adam.config != cfg.adam() {
        return Err(Error::Config("checkpoint optimizer settings differ from the config".into()));
    }
    if ckpt.iteration as usize > cfg.iterations {
        return Err(Error::Config(format!(
            "checkpoint is at iteration {}, beyond the configured {}",
            ckpt.iteration, cfg.iterations
        )));
    }
    run(cfg, model, adam, ckpt.iteration, train)
}

fn snapshot(cfg: &TrainConfig, model: &Model, adam: &AdamState, iteration: u64) -> Checkpoint {
    Checkpoint {
        config: serde_json::to_string(cfg).expect("config serializes"),
        seed: cfg.seed,
        iteration,
        params: model.params.clone(),
        codebook: model.codebook.clone(),
        ema: model.ema.clone(),
        adam: Some(adam.clone()),
    }
}

fn run(cfg: &TrainConfig, mut model: Model, mut adam: AdamState, start: u64, train: &[Bundle]) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let tensors = train.iter().map(Bundle::to_tensor).collect::<Result<Vec<_>>>()?;
    let master = Rng::new(cfg.seed);
    let mut log = Vec::with_capacity(cfg.iterations.saturating_sub(start as usize));
    let mut sink = LossLog::open(cfg, start > 0)?;
    let mut last_finite = f64::NAN;
    let t0 = Instant::now();

    for it in start + 1..=cfg.iterations as u64 {
        let mut rng = master.fork(it);
        let picks: Vec<&Tensor> = (0..cfg.batch_size).map(|_| &tensors[rng.below(tensors.len())]).collect();
        let x = stack(&picks)?;

        let mut tape = Tape::new().with_finite_checks(false);
        let bound = model.bind(&mut tape, true);
        let xv = tape.constant(x);
        let fwd = model.forward(&mut tape, &bound, xv, Mode::Train, Some(&mut rng), None)?;
        let loss = tape.value(fwd.loss).item();
        if !loss.is_finite() {
            sink.flush(cfg)?;
            return Err(Error::Diverged { iteration: it as usize, last_finite });
        }
        last_finite = loss;
        let mut grads = tape.backward(fwd.loss)?;
        let g = model.trainable_grads(&bound, &mut grads);
        let refs: Vec<&[f64]> = g.iter().map(Vec::as_slice).collect();
        adam.step(&mut model.trainable_mut(), &refs)?;
        model.ema_update(&tape, &fwd)?;

        let entry = LossEntry {
            iteration: it,
            loss,
            recon: tape.value(fwd.recon_loss).item(),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        sink.push(cfg, &entry)?;
        log.push(entry);
        if cfg.eval_every > 0 && it % cfg.eval_every as u64 == 0 && it < cfg.iterations as u64 {
            if let Some(path) = &cfg.checkpoint_path {
                write_checkpoint(&snapshot(cfg, &model, &adam, it), path)?;
            }
            sink.flush(cfg)?;
            log::info!("{}: iteration {it}, loss {loss:.6}", cfg.arch);
        }
    }
    sink.flush(cfg)?;
    let checkpoint = snapshot(cfg, &model, &adam, cfg.iterations as u64);
    if let Some(path) = &cfg.checkpoint_path {
        write_checkpoint(&checkpoint, path)?;
    }
    Ok(TrainOutcome { checkpoint, log })
}
