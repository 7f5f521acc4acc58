use std::path::Path;
use std::process::{Command, Output};

use bundlecodec::dataio::{encode_trackvis, read_bnd, read_checkpoint, read_latents};

const COMMANDS: [&str; 10] =
    ["synth", "import", "prep", "train", "eval", "latents", "perturb", "project", "klcheck", "gradcheck"];

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bundlecodec"))
        .args(args)
        .current_dir(dir)
        .env_remove("BUNDLECODEC_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = run(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_dataset(dir: &Path) {
    ok(
        &["synth", "--families", "3", "--bundles-per-family", "6", "--group-size", "8", "--points", "16",
          "--seed", "5", "--out", "d.bnd"],
        dir,
    );
    ok(&["prep", "--data", "d.bnd", "--out", "prep", "--seed", "2"], dir);
}

fn train_small(dir: &Path, out: &str, extra: &[&str]) {
    let iterations = if extra.contains(&"--iterations") { vec![] } else { vec!["--iterations", "6"] };
    let mut args = vec![
        "train", "--arch", "vqdiff", "--data", "prep/train.bnd", "--out", out, "--batch-size", "2", "--channels", "4",
        "--seed", "9",
    ];
    args.extend(iterations);
    args.extend_from_slice(extra);
    ok(&args, dir);
}

#[test]
fn synth_writes_requested_bundles() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &["synth", "--families", "4", "--bundles-per-family", "50", "--group-size", "64", "--points", "64",
          "--noise", "0.05", "--seed", "7", "--out", "data.bnd"],
        dir.path(),
    );
    let ds = read_bnd(dir.path().join("data.bnd")).unwrap();
    assert_eq!(ds.bundles.len(), 200);
    assert_eq!((ds.group_size, ds.point_count), (64, 64));
    assert_eq!(ds.labels().len(), 4);
}

#[test]
fn synth_is_reproducible_from_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out| ["synth", "--bundles-per-family", "3", "--group-size", "4", "--points", "8", "--seed", "1", "--out", out];
    ok(&args("a.bnd"), dir.path());
    ok(&args("b.bnd"), dir.path());
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.bnd"), read("b.bnd"));
}

#[test]
fn klcheck_prints_matching_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["klcheck", "--sigma", "2.0", "--beta", "10.0"], dir.path());
    let fields = |prefix: &str| -> Vec<String> {
        let line = out.lines().find(|l| l.starts_with(prefix)).unwrap_or_else(|| panic!("no {prefix} in {out}"));
        line.split_whitespace().map(str::to_string).collect()
    };
    let closed: f64 = fields("closed form")[2].parse().unwrap();
    assert!((closed - 1.2107).abs() < 1e-4, "{out}");
    let quad = fields("quadrature");
    let diff: f64 = quad[3].parse().unwrap();
    assert!(diff < 1e-8, "{out}");
    assert!(out.contains("monte carlo"));
}

#[test]
fn missing_data_is_a_runtime_failure_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--arch", "vqdiff", "--data", "missing.bnd", "--out", "m.bnc"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.bnd"));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["train", "--bogus"][..],
        &["nonsense"],
        &["klcheck", "--sigma", "abc"],
        &["train", "--arch", "gan", "--data", "d", "--out", "o"],
        &[],
    ] {
        assert_eq!(run(args, dir.path()).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn every_command_has_help_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in COMMANDS {
        let out = run(&[cmd, "--help"], dir.path());
        assert_eq!(out.status.code(), Some(0), "{cmd}");
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("--seed"), "{cmd}");
        // every option line carries a description
        for line in text.lines().filter(|l| l.trim_start().starts_with("--")) {
            let words = line.split_whitespace().count();
            let next_described = text
                .lines()
                .skip_while(|l| *l != line)
                .nth(1)
                .is_some_and(|l| l.starts_with("          ") && !l.trim().is_empty());
            assert!(words > 2 || next_described, "{cmd}: undocumented {line}");
        }
    }
}

#[test]
fn invalid_runtime_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["klcheck", "--sigma=-1"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["synth", "--families", "9", "--out", "x.bnd"], dir.path()).status.code(), Some(2));
}

#[test]
fn prep_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d);
    for f in ["train.bnd", "val.bnd", "norm.json"] {
        assert!(d.join("prep").join(f).exists(), "{f}");
    }
    let norm: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("prep/norm.json")).unwrap()).unwrap();
    assert!(norm["normalization"]["scale"].as_f64().unwrap() > 0.0);

    std::fs::write(d.join("cfg.json"), r#"{"arch": "ae", "iterations": 100, "latent_dim": 4, "codebook_size": 8, "points": 16}"#).unwrap();
    train_small(d, "m.bnc", &["--config", "cfg.json", "--val", "prep/val.bnd"]);
    let ckpt = read_checkpoint(d.join("m.bnc")).unwrap();
    // flags win over the file
    assert_eq!(ckpt.iteration, 6);
    assert!(ckpt.config.contains("\"vqdiff\"") && ckpt.config.contains("\"latent_dim\":4"));
    let log = std::fs::read_to_string(d.join("m.loss.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("iteration,loss,wall_ms"));
    assert_eq!(log.lines().count(), 7);

    let report = ok(&["eval", "--ckpt", "m.bnc", "--data", "prep/val.bnd", "--out", "r.csv"], d);
    assert!(report.contains("mean_buan"));
    let csv = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("class,mean_buan,std_buan,mean_mse"));
    assert_eq!(csv.lines().count(), 4);
    let wrong = run(&["eval", "--ckpt", "m.bnc", "--data", "prep/val.bnd", "--arch", "ae"], d);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn training_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d);
    train_small(d, "a.bnc", &[]);
    train_small(d, "b.bnc", &[]);
    let strip = |f: &str| {
        let mut c = read_checkpoint(d.join(f)).unwrap();
        c.config.clear();
        c.to_bytes().unwrap()
    };
    assert_eq!(strip("a.bnc"), strip("b.bnc"));

    train_small(d, "half.bnc", &["--iterations", "3"]);
    let args = ["--resume", "half.bnc"];
    train_small(d, "resumed.bnc", &args);
    assert_eq!(strip("a.bnc"), strip("resumed.bnc"));
}

#[test]
fn latents_perturb_project() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d);
    train_small(d, "m.bnc", &[]);
    ok(&["latents", "--ckpt", "m.bnc", "--data", "prep/train.bnd", "--out", "z.bnl"], d);
    ok(&["latents", "--ckpt", "m.bnc", "--data", "prep/val.bnd", "--out", "z.bnl", "--append", "--tag", "val"], d);
    let records = read_latents(d.join("z.bnl")).unwrap();
    let n_train = read_bnd(d.join("prep/train.bnd")).unwrap().bundles.len();
    assert_eq!(records.iter().filter(|r| r.tag == "vqdiff").count(), n_train);
    assert!(records.iter().any(|r| r.tag == "val"));

    let text = ok(&["project", "--latents", "z.bnl", "--out", "proj"], d);
    assert!(text.contains("explained"));
    for f in ["projection_vqdiff.csv", "projection_vqdiff.svg", "projection_val.csv"] {
        assert!(d.join("proj").join(f).exists(), "{f}");
    }

    let sweep = |out: &str| {
        ok(
            &["perturb", "--ckpt", "m.bnc", "--data", "prep/val.bnd", "--bundle-index", "0", "--eps", "0,0.5",
              "--trials", "2", "--seed", "3", "--out", out],
            d,
        );
        std::fs::read(d.join(out).join("perturb_vqdiff.csv")).unwrap()
    };
    let a = sweep("p1");
    assert_eq!(a, sweep("p2"));
    assert!(String::from_utf8(a).unwrap().starts_with("eps,mean_buan,mean_mse"));
    let bad = run(&["perturb", "--ckpt", "m.bnc", "--data", "prep/val.bnd", "--bundle-index", "999", "--out", "p3"], d);
    assert_eq!(bad.status.code(), Some(2));
    let neg = run(&["perturb", "--ckpt", "m.bnc", "--data", "prep/val.bnd", "--eps", "0,-1", "--out", "p4"], d);
    assert_eq!(neg.status.code(), Some(2));
}

#[test]
fn import_groups_tractography() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tracks: Vec<Vec<[f32; 3]>> = (0..10)
        .map(|i| (0..5).map(|j| [i as f32, j as f32, (i * j) as f32 * 0.5]).collect())
        .collect();
    std::fs::write(d.join("cst.trk"), encode_trackvis(&tracks)).unwrap();
    std::fs::write(d.join("af.trk"), encode_trackvis(&tracks[..4])).unwrap();
    let args = |f, label, append: bool| {
        let mut v = vec!["import", f, "--label", label, "--group-size", "4", "--points", "8", "--seed", "1", "--out", "t.bnd"];
        if append {
            v.push("--append");
        }
        v
    };
    ok(&args("cst.trk", "CST", false), d);
    ok(&args("af.trk", "AF", true), d);
    let ds = read_bnd(d.join("t.bnd")).unwrap();
    assert_eq!(ds.bundles.len(), 3);
    assert_eq!(ds.labels(), vec!["AF".to_string(), "CST".to_string()]);
    assert!(ds.bundles.iter().any(|b| b.provenance == "cst"));
    assert_eq!(ds.point_count, 8);
}

#[test]
fn gradcheck_passes_for_one_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["gradcheck", "--arch", "vqdiff", "--trials", "1", "--seed", "4"], dir.path());
    assert!(out.contains("vqdiff") && !out.contains("FAIL"), "{out}");
}
