use proptest::prelude::*;

use super::*;
use crate::codec::{BottleneckKind, EmaState, Model, ModelConfig};
use crate::curves::{synth_bundle, Bundle, Streamline, SynthFamily};
use crate::diffnum::{AdamConfig, AdamState, Rng, Tensor};
use crate::error::Error;

fn bundles(n: usize, seed: u64) -> Vec<Bundle> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|i| {
            let mut b = synth_bundle(SynthFamily::ALL[i % 5], 4, 8, 0.1, &mut rng).unwrap();
            b.provenance = format!("subj{}", i % 3);
            b
        })
        .collect()
}

fn bits(ds: &BndDataset) -> Vec<u64> {
    ds.bundles.iter().flat_map(|b| &b.streamlines).flat_map(|s| s.points().iter().flatten().map(|v| v.to_bits())).collect()
}

#[test]
fn empty_dataset_round_trips() {
    let ds = BndDataset { group_size: 64, point_count: 64, bundles: vec![] };
    let bytes = ds.to_bytes().unwrap();
    assert_eq!(BndDataset::from_bytes(&bytes).unwrap(), ds);
}

#[test]
fn random_dataset_round_trips_bitwise() {
    let ds = BndDataset::from_bundles(bundles(3, 11)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bnd");
    write_bnd(&ds, &path).unwrap();
    let back = read_bnd(&path).unwrap();
    assert_eq!(bits(&back), bits(&ds));
    assert_eq!(back, ds);
    assert_eq!(back.to_bytes().unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn truncation_and_bad_magic_are_reported() {
    let bytes = BndDataset::from_bundles(bundles(3, 1)).unwrap().to_bytes().unwrap();
    match BndDataset::from_bytes(&bytes[..bytes.len() - 1]) {
        Err(Error::Truncated { expected, actual, .. }) => {
            assert_eq!((expected, actual), (bytes.len() as u64, bytes.len() as u64 - 1));
        }
        other => panic!("expected truncation error, got {other:?}"),
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(BndDataset::from_bytes(&bad).unwrap_err().to_string().contains("not a BND1 file"));
    let mut long = bytes.clone();
    long.push(0);
    assert!(BndDataset::from_bytes(&long).is_err());
    let mut version = bytes;
    version[4] = 9;
    assert!(BndDataset::from_bytes(&version).unwrap_err().to_string().contains("version"));
}

#[test]
fn ragged_datasets_are_refused() {
    let mut b = bundles(2, 3);
    b[1].streamlines.pop();
    assert!(BndDataset::from_bundles(b).is_err());
}

#[test]
fn trackvis_fixture_round_trips_exactly() {
    let tracks = vec![
        vec![[0.5f32, -1.25, 3.0], [1.0, 2.0, 3.0], [1.1, 2.2, 3.3]],
        vec![[1e-3f32, 7.0, -9.5], [100.25, 0.0, 1.0]],
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("subj07.trk");
    std::fs::write(&path, encode_trackvis(&tracks)).unwrap();
    let got = import_trackvis(&path).unwrap();
    assert_eq!(got.len(), 2);
    for ((s, prov), t) in got.iter().zip(&tracks) {
        assert_eq!(prov, "subj07");
        let want: Vec<[f64; 3]> = t.iter().map(|p| p.map(f64::from)).collect();
        assert_eq!(s.points(), want.as_slice());
    }
}

#[test]
fn trackvis_edge_cases() {
    assert!(parse_trackvis(&encode_trackvis(&[])).unwrap().is_empty());

    let mut scalars = encode_trackvis(&[]);
    scalars[36] = 1;
    assert!(parse_trackvis(&scalars).unwrap_err().to_string().contains("unsupported"));

    let mut hdr = encode_trackvis(&[]);
    hdr[996..1000].copy_from_slice(&1001i32.to_le_bytes());
    assert!(parse_trackvis(&hdr).unwrap_err().to_string().contains("header size"));

    assert!(parse_trackvis(b"TRACX\0").is_err());
    let two = encode_trackvis(&[vec![[0.0; 3], [1.0; 3]]]);
    assert!(matches!(parse_trackvis(&two[..two.len() - 2]), Err(Error::Truncated { .. })));
    assert!(matches!(parse_trackvis(&two[..500]), Err(Error::Truncated { .. })));

    // count 0 means "read to end of file"
    let mut open = two.clone();
    open[988..992].copy_from_slice(&0i32.to_le_bytes());
    assert_eq!(parse_trackvis(&open).unwrap().len(), 1);

    // single-point tracks cannot form streamlines and are skipped
    let short = encode_trackvis(&[vec![[0.0; 3]], vec![[0.0; 3], [1.0; 3]]]);
    assert_eq!(parse_trackvis(&short).unwrap().len(), 1);
}

fn labelled(counts: &[(&str, usize)]) -> Vec<Bundle> {
    let mut k = 0.0;
    let mut out = Vec::new();
    for &(label, n) in counts {
        for _ in 0..n {
            k += 1.0;
            let s = Streamline::new(vec![[k, 0.0, 0.0], [k, 1.0, 0.0]]).unwrap();
            out.push(Bundle { streamlines: vec![s], label: label.into(), provenance: "p".into() });
        }
    }
    out
}

fn class_count(b: &[Bundle], label: &str) -> usize {
    b.iter().filter(|x| x.label == label).count()
}

#[test]
fn stratified_split_counts() {
    let spec = SplitSpec { seed: 4, ..Default::default() };
    let s = balance_and_split(labelled(&[("A", 10), ("B", 10)]), &spec).unwrap();
    assert_eq!((class_count(&s.train, "A"), class_count(&s.train, "B")), (9, 9));
    assert_eq!((class_count(&s.val, "A"), class_count(&s.val, "B")), (1, 1));

    let s = balance_and_split(labelled(&[("A", 20), ("B", 10)]), &spec).unwrap();
    assert_eq!(class_count(&s.train, "A") + class_count(&s.val, "A"), 10);
    assert_eq!(class_count(&s.val, "A"), 1);

    let again = balance_and_split(labelled(&[("A", 20), ("B", 10)]), &spec).unwrap();
    assert_eq!(s, again);
    let other = balance_and_split(labelled(&[("A", 20), ("B", 10)]), &SplitSpec { seed: 5, ..spec.clone() }).unwrap();
    assert_ne!(s, other);
}

#[test]
fn split_errors_name_missing_classes() {
    let spec = SplitSpec { classes: vec!["A".into(), "ghost".into()], ..Default::default() };
    let err = balance_and_split(labelled(&[("A", 3)]), &spec).unwrap_err();
    assert!(err.to_string().contains("ghost"));
    assert!(balance_and_split(vec![], &SplitSpec::default()).is_err());
    let bad = SplitSpec { train_fraction: 0.0, ..Default::default() };
    assert!(balance_and_split(labelled(&[("A", 3)]), &bad).is_err());
}

proptest! {
    #[test]
    fn split_is_order_invariant_disjoint_and_exhaustive(
        a in 1usize..15, b in 1usize..15, seed in any::<u64>(), perm_seed in any::<u64>()
    ) {
        let data = labelled(&[("A", a), ("B", b)]);
        let mut shuffled = data.clone();
        Rng::new(perm_seed).shuffle(&mut shuffled);
        let spec = SplitSpec { seed, ..Default::default() };
        let s1 = balance_and_split(data, &spec).unwrap();
        let s2 = balance_and_split(shuffled, &spec).unwrap();
        prop_assert_eq!(&s1, &s2);
        let m = a.min(b);
        prop_assert_eq!(s1.train.len() + s1.val.len(), 2 * m);
        let mut keys: Vec<u64> = s1.train.iter().chain(&s1.val).map(|b| b.streamlines[0].points()[0][0] as u64).collect();
        keys.sort_unstable();
        keys.dedup();
        prop_assert_eq!(keys.len(), 2 * m);
        if m >= 2 {
            prop_assert!(class_count(&s1.val, "A") >= 1 && class_count(&s1.val, "B") >= 1);
        }
    }
}

fn tiny_model(kind: BottleneckKind) -> Model {
    let cfg = ModelConfig { kind, points: 8, channels: 3, latent_dim: 5, codebook_size: 4, ..Default::default() };
    Model::new(cfg, &mut Rng::new(2)).unwrap()
}

#[test]
fn latents_round_trip_and_match_encoder() {
    let data = bundles(4, 8);
    let ae = tiny_model(BottleneckKind::Ae);
    let recs = export_latents(&ae, &data, "ae").unwrap();
    assert_eq!(recs.len(), data.len());
    for (r, b) in recs.iter().zip(&data) {
        assert_eq!(r.z, ae.encode_values(&b.to_tensor().unwrap()).unwrap());
        assert!(r.s.is_none());
        assert_eq!(r.z.shape(), &[4, 5]);
    }
    let vq = export_latents(&tiny_model(BottleneckKind::VqDiff), &data, "vqdiff").unwrap();
    assert!(vq.iter().all(|r| r.s.is_some()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("z.bnl");
    write_latents(&recs, &path).unwrap();
    append_latents(&vq, &path).unwrap();
    let back = read_latents(&path).unwrap();
    assert_eq!(back.len(), 8);
    assert_eq!(back[..4], recs[..]);
    assert_eq!(back[4..], vq[..]);

    let mut wrong = vq[0].clone();
    wrong.z = Tensor::zeros(&[4, 6]);
    wrong.s = None;
    assert!(append_latents(&[wrong], &path).unwrap_err().to_string().contains("dimension mismatch"));
    assert_eq!(decode_latents(&encode_latents(&[]).unwrap()).unwrap(), vec![]);
}

fn sample_checkpoint() -> Checkpoint {
    let m = tiny_model(BottleneckKind::VqEma);
    let tensors: Vec<&Tensor> = m.trainable();
    let mut adam = AdamState::new(AdamConfig::default(), &tensors);
    adam.t = 17;
    adam.m[0][0] = 0.25;
    adam.v[1][0] = f64::MIN_POSITIVE;
    Checkpoint {
        config: r#"{"arch":"vqema"}"#.into(),
        seed: u64::MAX - 3,
        iteration: 17,
        params: m.params.clone(),
        codebook: m.codebook.clone(),
        ema: Some(EmaState { counts: vec![1.5, 0.0, -0.0, 2.0], sums: m.codebook.clone().unwrap() }),
        adam: Some(adam),
    }
}

#[test]
fn checkpoint_round_trips_bitwise() {
    let c = sample_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bnc");
    write_checkpoint(&c, &path).unwrap();
    let back = read_checkpoint(&path).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.to_bytes().unwrap(), std::fs::read(&path).unwrap());
    assert!(!dir.path().join("c.bnc.partial").exists());
    let bare = Checkpoint { codebook: None, ema: None, adam: None, ..c };
    assert_eq!(Checkpoint::from_bytes(&bare.to_bytes().unwrap()).unwrap(), bare);
}

type Decoder = fn(&[u8]) -> bool;

fn decoders() -> [(&'static str, Decoder); 4] {
    [
        ("BND1", |b| BndDataset::from_bytes(b).is_ok()),
        ("BNL1", |b| decode_latents(b).is_ok()),
        ("BNC1", |b| Checkpoint::from_bytes(b).is_ok()),
        ("TRACK", |b| parse_trackvis(b).is_ok()),
    ]
}

proptest! {
    #[test]
    fn readers_reject_random_prefixes(bytes in prop::collection::vec(any::<u8>(), 64), with_magic in any::<bool>()) {
        for (magic, decode) in decoders() {
            let mut b = bytes.clone();
            if with_magic {
                b[..magic.len()].copy_from_slice(magic.as_bytes());
                b[4..8].copy_from_slice(&1u32.to_le_bytes());
            }
            prop_assert!(!decode(&b));
        }
    }

    #[test]
    fn readers_reject_truncated_valid_files(cut in 0usize..1000) {
        let files: Vec<Vec<u8>> = vec![
            BndDataset::from_bundles(bundles(2, 5)).unwrap().to_bytes().unwrap(),
            encode_latents(&export_latents(&tiny_model(BottleneckKind::Ae), &bundles(2, 5), "t").unwrap()).unwrap(),
            sample_checkpoint().to_bytes().unwrap(),
        ];
        for (f, (_, decode)) in files.iter().zip(decoders()) {
            let cut = cut % f.len();
            prop_assert!(!decode(&f[..cut]));
        }
    }
}
