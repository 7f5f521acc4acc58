use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::curves::Bundle;
use crate::diffnum::Rng;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    /// Down-sample every class to the smallest class count.
    pub balance: bool,
    /// Classes that must be present; empty means "whatever the data holds".
    pub classes: Vec<String>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: 0.9, seed: 0, balance: true, classes: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<Bundle>,
    pub val: Vec<Bundle>,
}

/// Total order on bundle contents, so ties in (label, provenance) do not
/// depend on input order.
fn cmp_contents(a: &Bundle, b: &Bundle) -> Ordering {
    let flat = |b: &Bundle| -> Vec<f64> {
        b.streamlines.iter().flat_map(|s| s.points().iter().flatten().copied()).collect()
    };
    let (fa, fb) = (flat(a), flat(b));
    fa.len().cmp(&fb.len()).then_with(|| {
        fa.iter().zip(&fb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    })
}

/// Per-class balancing followed by a stratified train/validation split.
///
/// Bundles are first put in canonical order (label, provenance, contents),
/// then each class, in label order, is shuffled with one seeded stream,
/// truncated to the minimum class count and cut at `round(f * n)`. With
/// `f < 1`, classes of two or more bundles always put one on each side.
pub fn balance_and_split(mut bundles: Vec<Bundle>, spec: &SplitSpec) -> Result<Split> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction must lie in (0, 1], got {}", spec.train_fraction)));
    }
    bundles.sort_by(|a, b| {
        a.label.cmp(&b.label).then_with(|| a.provenance.cmp(&b.provenance)).then_with(|| cmp_contents(a, b))
    });
    let mut classes: BTreeMap<String, Vec<Bundle>> = spec.classes.iter().map(|c| (c.clone(), Vec::new())).collect();
    for b in bundles {
        classes.entry(b.label.clone()).or_default().push(b);
    }
    let empty: Vec<&str> = classes.iter().filter(|(_, v)| v.is_empty()).map(|(k, _)| k.as_str()).collect();
    if !empty.is_empty() {
        return Err(Error::InvalidArgument(format!("classes with no bundles: {}", empty.join(", "))));
    }
    if classes.is_empty() {
        return Err(Error::InvalidArgument("no bundles to split".into()));
    }
    let keep = if spec.balance { classes.values().map(Vec::len).min().unwrap() } else { usize::MAX };

    let mut rng = Rng::new(spec.seed);
    let mut out = Split { train: Vec::new(), val: Vec::new() };
    for (label, mut members) in classes {
        rng.shuffle(&mut members);
        members.truncate(keep);
        let n = members.len();
        let mut n_train = (spec.train_fraction * n as f64).round() as usize;
        if n >= 2 && spec.train_fraction < 1.0 {
            n_train = n_train.clamp(1, n - 1);
        } else if n < 2 {
            n_train = n;
            log::warn!("class {label} has a single bundle; it goes to training only");
        }
        let val = members.split_off(n_train);
        out.train.extend(members);
        out.val.extend(val);
    }
    Ok(out)
}
