use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::{bundle_adjacency, BuanConfig};
use crate::codec::Model;
use crate::curves::Bundle;
use crate::diffnum::Tensor;
use crate::error::Result;

/// Anything that maps a bundle tensor `[S, 3, P]` to a reconstruction.
pub trait Reconstruct {
    fn reconstruct(&self, x: &Tensor) -> Result<Tensor>;
}

impl Reconstruct for Model {
    fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        Model::reconstruct(self, x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub class: String,
    pub bundles: usize,
    pub mean_buan: f64,
    /// Population standard deviation over the class's bundles.
    pub std_buan: f64,
    pub mean_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconReport {
    pub theta: f64,
    pub rows: Vec<ReportRow>,
    /// Per-bundle `(class, buan, mse)` in input order.
    pub per_bundle: Vec<(String, f64, f64)>,
}

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    let n = a.numel() as f64;
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// Eval-mode reconstruction of every bundle, summarized per class in label
/// order. Means are reduced in input order.
pub fn recon_report(model: &dyn Reconstruct, bundles: &[Bundle], cfg: &BuanConfig) -> Result<ReconReport> {
    let mut per_bundle = Vec::with_capacity(bundles.len());
    for b in bundles {
        if b.streamlines.is_empty() {
            log::warn!("skipping empty bundle of class {}", b.label);
            continue;
        }
        let x = b.to_tensor()?;
        let r = model.reconstruct(&x)?;
        let rb = Bundle::from_tensor(&r, b.label.clone(), b.provenance.clone())?;
        per_bundle.push((b.label.clone(), bundle_adjacency(b, &rb, cfg)?, mse(&x, &r)));
    }
    let mut by_class: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for (c, ba, m) in &per_bundle {
        by_class.entry(c.as_str()).or_default().push((*ba, *m));
    }
    let rows = by_class
        .into_iter()
        .map(|(class, v)| {
            let n = v.len() as f64;
            let mean = v.iter().map(|x| x.0).sum::<f64>() / n;
            let var = v.iter().map(|x| (x.0 - mean) * (x.0 - mean)).sum::<f64>() / n;
            ReportRow {
                class: class.to_string(),
                bundles: v.len(),
                mean_buan: mean,
                std_buan: var.sqrt(),
                mean_mse: v.iter().map(|x| x.1).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(ReconReport { theta: cfg.theta, rows, per_bundle })
}

impl ReconReport {
    /// Mean BUAN over all bundles, in input order.
    pub fn mean_buan(&self) -> f64 {
        self.per_bundle.iter().map(|x| x.1).sum::<f64>() / self.per_bundle.len() as f64
    }

    pub fn mean_mse(&self) -> f64 {
        self.per_bundle.iter().map(|x| x.2).sum::<f64>() / self.per_bundle.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,mean_buan,std_buan,mean_mse\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.class, r.mean_buan, r.std_buan, r.mean_mse);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let w = self.rows.iter().map(|r| r.class.len()).chain([5]).max().unwrap();
        let mut s = format!("{:<w$}  {:>7}  {:>9}  {:>9}  {:>11}\n", "class", "bundles", "mean_buan", "std_buan", "mean_mse");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<w$}  {:>7}  {:>9.4}  {:>9.4}  {:>11.4e}",
                r.class, r.bundles, r.mean_buan, r.std_buan, r.mean_mse
            );
        }
        if !self.per_bundle.is_empty() {
            let _ = writeln!(s, "{:<w$}  {:>7}  {:>9.4}  {:>9}  {:>11.4e}", "all", self.per_bundle.len(), self.mean_buan(), "", self.mean_mse());
        }
        s
    }
}
