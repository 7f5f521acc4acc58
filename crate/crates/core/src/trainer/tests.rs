use super::*;
use crate::codec::{codebook_gradient_norms, BottleneckKind, Model};
use crate::curves::{normalize_bundles, synth_bundle, Bundle, SynthFamily};
use crate::diffnum::Rng;
use crate::error::Error;
use crate::metrics::BuanConfig;

fn data(per_family: usize, s: usize, p: usize, seed: u64) -> Vec<Bundle> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    for f in [SynthFamily::Arc, SynthFamily::Helix, SynthFamily::UShape] {
        for _ in 0..per_family {
            out.push(synth_bundle(f, s, p, 0.05, &mut rng).unwrap());
        }
    }
    normalize_bundles(&mut out, &mut []).unwrap();
    out
}

fn small(arch: BottleneckKind, iterations: usize) -> TrainConfig {
    TrainConfig {
        arch,
        iterations,
        batch_size: 2,
        seed: 5,
        channels: 4,
        points: 16,
        latent_dim: 4,
        codebook_size: 8,
        ..Default::default()
    }
}

#[test]
fn config_json_uses_field_names() {
    let cfg = small(BottleneckKind::VqEma, 3);
    let json = cfg.to_json();
    for key in [
        "arch", "iterations", "batch_size", "learning_rate", "seed", "beta_temp", "gumbel_scale", "sigma_codebook", "latent_dim",
        "codebook_size", "checkpoint_path", "log_path", "eval_every",
    ] {
        assert!(json.contains(&format!("\"{key}\"")), "{key} missing from {json}");
    }
    assert_eq!(TrainConfig::from_json(&json).unwrap(), cfg);
    assert_eq!(TrainConfig::from_json(r#"{"arch": "ae"}"#).unwrap().iterations, 2000);
    assert!(TrainConfig::from_json(r#"{"arch": "ae", "bogus": 1}"#).is_err());
    assert!(TrainConfig::from_json(r#"{"iterations": 0}"#).is_err());
    assert!(TrainConfig::from_json(r#"{"arch": "gan"}"#).is_err());
}

#[test]
fn equal_seeds_give_identical_checkpoints() {
    let d = data(2, 4, 16, 1);
    for arch in BottleneckKind::ALL {
        let a = train_run(&small(arch, 2), &d).unwrap();
        let b = train_run(&small(arch, 2), &d).unwrap();
        assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap(), "{arch}");
        let c = train_run(&TrainConfig { seed: 6, ..small(arch, 2) }, &d).unwrap();
        assert_ne!(a.checkpoint.params, c.checkpoint.params);
        assert!(a.log.iter().all(|e| e.loss.is_finite()));
    }
}

#[test]
fn vqdiff_logs_pure_reconstruction_loss() {
    let d = data(2, 4, 16, 2);
    let out = train_run(&small(BottleneckKind::VqDiff, 5), &d).unwrap();
    assert_eq!(out.log.len(), 5);
    assert!(out.log.iter().all(|e| e.loss == e.recon));
    let vq = train_run(&small(BottleneckKind::VqVae, 5), &d).unwrap();
    assert!(vq.log.iter().any(|e| e.loss > e.recon));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let d = data(2, 4, 16, 3);
    let dir = tempfile::tempdir().unwrap();
    for arch in [BottleneckKind::VqEma, BottleneckKind::VqDiff, BottleneckKind::Vae] {
        let full = train_run(&small(arch, 6), &d).unwrap();
        let ck = dir.path().join(format!("{arch}.bnc"));
        let log = dir.path().join(format!("{arch}.csv"));
        let first = TrainConfig { eval_every: 2, checkpoint_path: Some(ck.clone()), log_path: Some(log.clone()), ..small(arch, 6) };
        // stop after the mid-run checkpoint at iteration 4 by training only 4
        let part = train_run(&TrainConfig { iterations: 4, ..first.clone() }, &d).unwrap();
        assert_eq!(part.checkpoint.iteration, 4);
        let stored = crate::dataio::read_checkpoint(&ck).unwrap();
        assert_eq!(stored, part.checkpoint);
        let resumed = resume_run(&TrainConfig { checkpoint_path: None, log_path: Some(log.clone()), ..small(arch, 6) }, &stored, &d).unwrap();
        assert_eq!(resumed.log.len(), 2);
        assert_eq!(resumed.checkpoint.params, full.checkpoint.params, "{arch}");
        // the config echoes differ only in the log path
        let strip = |c: &crate::dataio::Checkpoint| crate::dataio::Checkpoint { config: String::new(), ..c.clone() }.to_bytes().unwrap();
        assert_eq!(strip(&resumed.checkpoint), strip(&full.checkpoint));
        let csv = std::fs::read_to_string(&log).unwrap();
        assert_eq!(csv.lines().count(), 1 + 6);
        assert!(csv.starts_with("iteration,loss,wall_ms\n"));
    }
}

#[test]
fn resume_rejects_mismatched_config() {
    let d = data(1, 4, 16, 3);
    let out = train_run(&small(BottleneckKind::Ae, 1), &d).unwrap();
    assert!(resume_run(&small(BottleneckKind::Vae, 3), &out.checkpoint, &d).is_err());
    assert!(resume_run(&TrainConfig { seed: 9, ..small(BottleneckKind::Ae, 3) }, &out.checkpoint, &d).is_err());
}

#[test]
fn divergence_aborts_with_iteration() {
    let d = data(1, 4, 16, 4);
    let cfg = TrainConfig { learning_rate: 1e200, ..small(BottleneckKind::Ae, 20) };
    match train_run(&cfg, &d) {
        Err(Error::Diverged { iteration, last_finite }) => {
            assert!(iteration >= 2);
            assert!(last_finite.is_finite());
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log.len())),
    }
}

#[test]
fn overfits_a_single_bundle() {
    let d = data(2, 64, 16, 7);
    let one = &d[..1];
    for arch in [BottleneckKind::Ae, BottleneckKind::VqDiff] {
        let cfg = TrainConfig {
            batch_size: 1,
            channels: 8,
            latent_dim: 8,
            learning_rate: 3e-3,
            ..small(arch, 500)
        };
        let out = train_run(&cfg, one).unwrap();
        let last = out.log.last().unwrap().recon;
        assert!(last < 1e-3, "{arch}: final training MSE {last}");
    }
}

#[test]
fn evaluation_is_deterministic_and_covers_classes() {
    let d = data(2, 4, 16, 8);
    let out = train_run(&small(BottleneckKind::VqDiff, 3), &d).unwrap();
    let buan = BuanConfig::default();
    let a = evaluate_split(&out.checkpoint, &d, Some(BottleneckKind::VqDiff), &buan).unwrap();
    let b = evaluate_split(&out.checkpoint, &d, None, &buan).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.report.rows.len(), 3);
    assert!(evaluate_split(&out.checkpoint, &d, Some(BottleneckKind::Ae), &buan).is_err());
    assert!(evaluate_split(&out.checkpoint, &[], None, &buan).is_err());
}

#[test]
fn untrained_model_scores_near_zero() {
    let d = data(2, 8, 16, 9);
    let model = Model::new(small(BottleneckKind::Ae, 1).model_config(), &mut Rng::new(0)).unwrap();
    let ev = evaluate_model(&model, &d, &BuanConfig::default()).unwrap();
    assert!(ev.report.mean_buan() < 0.05, "{}", ev.report.mean_buan());
}

#[test]
fn codebook_gradient_contrast_at_first_iteration() {
    let d = data(1, 4, 16, 10);
    let x = crate::trainer::run::stack(&[&d[0].to_tensor().unwrap(), &d[1].to_tensor().unwrap()]).unwrap();
    let mk = |arch| Model::new(small(arch, 1).model_config(), &mut Rng::new(1)).unwrap();
    let (full, through) = codebook_gradient_norms(&mk(BottleneckKind::VqDiff), &x, 3).unwrap().unwrap();
    assert!(full > 0.0 && through > 0.0);
    let (_, through) = codebook_gradient_norms(&mk(BottleneckKind::VqVae), &x, 3).unwrap().unwrap();
    assert_eq!(through, 0.0);
}

#[test]
fn parallel_map_keeps_order() {
    let items: Vec<u64> = (0..37).collect();
    for t in [1, 2, 5, 64] {
        assert_eq!(for_each_parallel(&items, t, |x| x * x), items.iter().map(|x| x * x).collect::<Vec<_>>());
    }
    assert!(thread_count() >= 1);
}
