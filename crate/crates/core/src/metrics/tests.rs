use proptest::prelude::*;

use super::*;
use crate::curves::{synth_bundle, SynthFamily};
use crate::diffnum::{Rng, Tensor};

fn sl(points: Vec<Point>) -> Streamline {
    Streamline::new(points).unwrap()
}

fn bundle(streamlines: Vec<Streamline>) -> Bundle {
    Bundle { streamlines, label: "c".into(), provenance: String::new() }
}

/// Brute-force oracle: full MDF matrix by direct sequential sums.
fn naive_mdf(a: &Streamline, b: &Streamline) -> f64 {
    let p = a.len();
    let d = |x: &Point, y: &Point| ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
    let direct: f64 = (0..p).map(|i| d(&a.points()[i], &b.points()[i])).sum::<f64>() / p as f64;
    let flip: f64 = (0..p).map(|i| d(&a.points()[i], &b.points()[p - 1 - i])).sum::<f64>() / p as f64;
    direct.min(flip)
}

fn naive_ba(a: &Bundle, b: &Bundle, theta: f64) -> f64 {
    let m: Vec<Vec<f64>> = a.streamlines.iter().map(|x| b.streamlines.iter().map(|y| mdf_distance(x, y).unwrap()).collect()).collect();
    let fa = m.iter().filter(|row| row.iter().any(|&v| v <= theta)).count() as f64 / m.len() as f64;
    let fb = (0..b.streamlines.len()).filter(|&j| m.iter().any(|row| row[j] <= theta)).count() as f64
        / b.streamlines.len() as f64;
    0.5 * (fa + fb)
}

#[test]
fn mdf_examples() {
    let a = sl(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    let b = sl(vec![[0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]);
    assert_eq!(mdf_distance(&a, &a).unwrap(), 0.0);
    assert_eq!(mdf_distance(&a, &b).unwrap(), 1.0);
    assert_eq!(mdf_distance(&a, &b.reversed()).unwrap(), 1.0);
    let c = sl(vec![[0.0; 3], [1.0; 3], [2.0; 3]]);
    assert!(mdf_distance(&a, &c).is_err());
}

#[test]
fn mdf_agrees_with_sequential_oracle() {
    let mut rng = Rng::new(3);
    for _ in 0..200 {
        let p = 2 + rng.below(20);
        let mut pts = || sl((0..p).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect());
        let (a, b) = (pts(), pts());
        let got = mdf_distance(&a, &b).unwrap();
        assert!((got - naive_mdf(&a, &b)).abs() <= 1e-12 * (1.0 + got));
    }
}

#[test]
fn adjacency_examples() {
    let u = sl(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    let v = sl(vec![[0.0, 5.0, 0.0], [1.0, 5.0, 0.0]]);
    let w = sl(vec![[0.0, -5.0, 0.0], [1.0, -5.0, 0.0]]);
    let cfg = BuanConfig::default();
    let a = bundle(vec![u.clone(), v]);
    let b = bundle(vec![u, w]);
    assert_eq!(bundle_adjacency(&a, &a, &cfg).unwrap(), 1.0);
    assert_eq!(bundle_adjacency(&a, &b, &cfg).unwrap(), 0.5);
    let far = bundle(a.streamlines.iter().map(|s| sl(s.points().iter().map(|p| [p[0], p[1], p[2] + 1.0]).collect())).collect());
    assert_eq!(bundle_adjacency(&a, &far, &cfg).unwrap(), 0.0);
    assert!(bundle_adjacency(&a, &bundle(vec![]), &cfg).is_err());
    assert!(BuanConfig::new(0.0).is_err());
}

#[test]
fn synthetic_self_and_cross_family_adjacency() {
    let mut rng = Rng::new(12);
    let cfg = BuanConfig::default();
    let fams: Vec<Bundle> = SynthFamily::ALL.iter().map(|&f| synth_bundle(f, 16, 32, 0.05, &mut rng).unwrap()).collect();
    // templates are tens of units apart, far beyond 10 theta even before normalization
    for (i, a) in fams.iter().enumerate() {
        assert_eq!(bundle_adjacency(a, a, &BuanConfig::new(1e-9).unwrap()).unwrap(), 1.0);
        for b in &fams[i + 1..] {
            let closest = a
                .streamlines
                .iter()
                .flat_map(|x| b.streamlines.iter().map(move |y| naive_mdf(x, y)))
                .fold(f64::INFINITY, f64::min);
            assert!(closest > 10.0 * cfg.theta);
            assert_eq!(bundle_adjacency(a, b, &cfg).unwrap(), 0.0);
        }
    }
}

fn random_pair(seed: u64) -> (Bundle, Bundle) {
    let mut rng = Rng::new(seed);
    let p = 2 + rng.below(15);
    let (sa, sb) = (1 + rng.below(8), 1 + rng.below(8));
    let base: Vec<Point> = (0..p).map(|i| [i as f64 * 0.02, 0.0, 0.0]).collect();
    let mut make = |n: usize| {
        bundle(
            (0..n)
                .map(|_| {
                    let spread = 0.05 * rng.uniform();
                    sl(base.iter().map(|q| [q[0] + spread * rng.normal(), q[1] + spread * rng.normal(), q[2]]).collect())
                })
                .collect(),
        )
    };
    (make(sa), make(sb))
}

#[test]
fn optimized_adjacency_equals_brute_force_on_random_pairs() {
    for seed in 0..50 {
        let (a, b) = random_pair(seed);
        for theta in [0.005, 0.02, 0.05, 0.1] {
            let cfg = BuanConfig::new(theta).unwrap();
            let fast = bundle_adjacency(&a, &b, &cfg).unwrap();
            assert_eq!(fast.to_bits(), naive_ba(&a, &b, theta).to_bits(), "seed {seed} theta {theta}");
            assert_eq!(fast.to_bits(), bundle_adjacency(&b, &a, &cfg).unwrap().to_bits());
        }
    }
}

proptest! {
    #[test]
    fn adjacency_is_symmetric_and_monotone(seed in any::<u64>(), t1 in 0.001f64..0.2, t2 in 0.001f64..0.2) {
        let (a, b) = random_pair(seed);
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let ba = |x: &Bundle, y: &Bundle, t: f64| bundle_adjacency(x, y, &BuanConfig::new(t).unwrap()).unwrap();
        prop_assert_eq!(ba(&a, &b, lo).to_bits(), ba(&b, &a, lo).to_bits());
        prop_assert!(ba(&a, &b, lo) <= ba(&a, &b, hi));
        prop_assert_eq!(ba(&a, &a, lo), 1.0);
        for (x, y) in a.streamlines.iter().zip(&b.streamlines) {
            prop_assert_eq!(mdf_distance(x, y).unwrap().to_bits(), mdf_distance(y, x).unwrap().to_bits());
            prop_assert_eq!(mdf_distance(x, y).unwrap().to_bits(), mdf_distance(x, &y.reversed()).unwrap().to_bits());
        }
    }
}

struct Identity;

impl Reconstruct for Identity {
    fn reconstruct(&self, x: &Tensor) -> crate::error::Result<Tensor> {
        Ok(x.clone())
    }
}

struct Zeros;

impl Reconstruct for Zeros {
    fn reconstruct(&self, x: &Tensor) -> crate::error::Result<Tensor> {
        Ok(Tensor::zeros(x.shape()))
    }
}

fn classes() -> Vec<Bundle> {
    let mut rng = Rng::new(1);
    let mut out = Vec::new();
    for f in [SynthFamily::Arc, SynthFamily::Helix, SynthFamily::Fan] {
        for _ in 0..3 {
            out.push(synth_bundle(f, 6, 16, 0.05, &mut rng).unwrap());
        }
    }
    out
}

#[test]
fn identity_and_constant_reports() {
    let data = classes();
    let cfg = BuanConfig::default();
    let id = recon_report(&Identity, &data, &cfg).unwrap();
    assert_eq!(id.rows.len(), 3);
    assert!(id.rows.iter().all(|r| r.mean_buan == 1.0 && r.std_buan == 0.0 && r.mean_mse == 0.0 && r.bundles == 3));
    let z = recon_report(&Zeros, &data, &cfg).unwrap();
    assert!(z.rows.iter().all(|r| r.mean_buan == 0.0 && r.mean_mse > 1.0));
    assert_eq!(z, recon_report(&Zeros, &data, &cfg).unwrap());
    let csv = id.to_csv();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("class,mean_buan,std_buan,mean_mse\n"));
    assert!(id.to_table().contains("helix"));
}
