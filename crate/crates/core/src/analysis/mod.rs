//! Latent-space probing: perturbation sweeps and 2-D projections.

mod pca;
mod perturb;
mod plots;

pub use pca::{pca_project, silhouette, Projection};
pub use perturb::{perturb_sweep, PerturbSpec, SweepRow, SweepTable};
pub use plots::{emit_plots, LabelledProjection};
