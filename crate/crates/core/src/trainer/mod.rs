//! Seeded training and evaluation loops.
//!
//! Iteration `i` draws its batch indices and all bottleneck noise from
//! `Rng::new(seed).fork(i)`, so a run resumed from a checkpoint at iteration
//! `i` replays exactly what an uninterrupted run would have done.

mod config;
mod eval;
mod parallel;
mod run;

pub use config::TrainConfig;
pub use eval::{evaluate_model, evaluate_split, Evaluation};
pub use parallel::{for_each_parallel, thread_count};
pub use run::{model_from_checkpoint, resume_run, train_run, LossEntry, TrainOutcome};

#[cfg(test)]
mod tests;
