use serde::{Deserialize, Serialize};

use crate::codec::Model;
use crate::curves::Bundle;
use crate::diffnum::{Rng, Tensor};
use crate::error::{Error, Result};
use crate::metrics::{bundle_adjacency, BuanConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSpec {
    /// Perturbation magnitudes, ascending, including 0.
    pub eps: Vec<f64>,
    pub seed: u64,
    pub trials: usize,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        PerturbSpec { eps: vec![0.0, 0.1, 0.25, 0.5, 1.0], seed: 0, trials: 10 }
    }
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.eps.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return Err(Error::InvalidArgument(format!("perturbation size must be >= 0, got {e}")));
        }
        if self.eps.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("perturbation grid must be sorted ascending".into()));
        }
        if !self.eps.contains(&0.0) {
            return Err(Error::InvalidArgument("perturbation grid must contain 0".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub mean_buan: f64,
    pub mean_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn at(&self, eps: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.eps == eps)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,mean_buan,mean_mse\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.eps, r.mean_buan, r.mean_mse));
        }
        s
    }
}

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.numel() as f64
}

/// Adds `eps * eta` to every pre-bottleneck latent of each bundle, runs the
/// model's own eval-mode bottleneck and decoder, and averages BUAN and MSE
/// against the original over bundles and trials.
///
/// `eta ~ N(0, I)` of shape `[S, d]` is drawn from `Rng::new(seed).fork(b).fork(t)`
/// for bundle `b` and trial `t`, independently of `eps`, so every grid point
/// shares the same noise directions.
pub fn perturb_sweep(model: &Model, bundles: &[Bundle], spec: &PerturbSpec, buan: &BuanConfig) -> Result<SweepTable> {
    spec.validate()?;
    if bundles.is_empty() {
        return Err(Error::InvalidArgument("perturbation sweep needs at least one bundle".into()));
    }
    let mut sums = vec![(0.0, 0.0); spec.eps.len()];
    let base = Rng::new(spec.seed);
    for (bi, b) in bundles.iter().enumerate() {
        let x = b.to_tensor()?;
        let z = model.encode_values(&x)?;
        let per_bundle = base.fork(bi as u64);
        for t in 0..spec.trials {
            let mut rng = per_bundle.fork(t as u64);
            let eta: Vec<f64> = (0..z.numel()).map(|_| rng.normal()).collect();
            for (k, &e) in spec.eps.iter().enumerate() {
                let zp = Tensor::new(z.shape().to_vec(), z.data().iter().zip(&eta).map(|(a, n)| a + e * n).collect())?;
                let r = model.decode_values(&model.bottleneck_values(&zp)?)?;
                let rb = Bundle::from_tensor(&r, b.label.clone(), b.provenance.clone())?;
                sums[k].0 += bundle_adjacency(b, &rb, buan)?;
                sums[k].1 += mse(&x, &r);
            }
        }
    }
    let n = (bundles.len() * spec.trials) as f64;
    Ok(SweepTable {
        rows: spec
            .eps
            .iter()
            .zip(sums)
            .map(|(&eps, (ba, m))| SweepRow { eps, mean_buan: ba / n, mean_mse: m / n })
            .collect(),
    })
}
