use hydra_core::codec::Codec;
use hydra_core::data::{build_examples, decode_prediction, prepare_example, to_model_range, DataConfig};
use hydra_core::io::*;
use hydra_core::sim::{generate_scenario, render, Crop, RenderedClip, SimConfig};
use hydra_core::{rng, Error, Tensor};

fn clips(n: u64) -> Vec<RenderedClip> {
    let cfg = SimConfig::default();
    (0..n).map(|s| render(&generate_scenario(s, &cfg).unwrap(), cfg.num_frames).unwrap()).collect()
}

#[test]
fn tensor_header_layout() {
    let t = Tensor::new(vec![2, 1], vec![1.5, -2.0]).unwrap();
    let b = tensor_to_bytes(&t);
    assert_eq!(&b[..8], b"HYTENSOR");
    assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
    assert_eq!((b[12], b[13], b[14], b[15]), (1, 2, 0, 0));
    assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 2);
    assert_eq!(u64::from_le_bytes(b[24..32].try_into().unwrap()), 1);
    assert_eq!(f64::from_le_bytes(b[32..40].try_into().unwrap()), 1.5);
    assert_eq!(b.len(), 48);
    let mut wrong = b.clone();
    wrong[12] = 7;
    assert!(matches!(tensor_from_bytes(&wrong), Err(Error::Format(_))));
    assert!(matches!(tensor_from_bytes(b"nope"), Err(Error::Format(_))));
}

#[test]
fn dataset_roundtrip_is_lossless_and_stable() {
    let dir = tempfile::tempdir().unwrap();
    let set = clips(3);
    let entries = set
        .iter()
        .enumerate()
        .map(|(i, c)| write_clip(dir.path(), &clip_id(i), c, "abc").unwrap())
        .collect();
    write_manifest(dir.path(), &Manifest { format_version: DATASET_VERSION, config_hash: "abc".into(), clips: entries }).unwrap();
    let (manifest, loaded) = load_dataset(dir.path()).unwrap();
    assert_eq!(manifest.clips.len(), 3);
    assert_eq!(manifest.clips[1].id, "clip_00001");
    assert_eq!(loaded, set);

    let again = tempfile::tempdir().unwrap();
    for (i, c) in loaded.iter().enumerate() {
        write_clip(again.path(), &clip_id(i), c, "abc").unwrap();
    }
    for i in 0..3 {
        for ext in ["tensor", "json"] {
            let name = format!("{}.{ext}", clip_id(i));
            assert_eq!(std::fs::read(dir.path().join(&name)).unwrap(), std::fs::read(again.path().join(&name)).unwrap());
        }
    }
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_manifest(dir.path()), Err(Error::Io { .. })));
}

#[test]
fn examples_encode_context_and_target() {
    let set = clips(20);
    let codec = Codec::default();
    let cfg = DataConfig::default();
    let named: Vec<(String, RenderedClip)> = set.iter().enumerate().map(|(i, c)| (format!("c{i}"), c.clone())).collect();
    let exs = build_examples(named.iter().map(|(i, c)| (i.as_str(), c)), &cfg, &codec).unwrap();
    assert!(!exs.is_empty());
    for ex in &exs {
        let clip = &named.iter().find(|(i, _)| *i == ex.id).unwrap().1;
        let Crop { n_ctx, end } = ex.crop;
        assert_eq!(ex.target.shape(), &[48, (end - n_ctx) / 4, 8, 8]);
        assert_eq!(ex.cond.memory_frames(), n_ctx / 4);
        assert_eq!(ex.cond.poses.len(), end / 4);
        let gt = clip.frames.narrow(1, n_ctx, end - n_ctx).unwrap();
        assert_eq!(decode_prediction(&codec, &ex.target).unwrap().max_abs_diff(&gt) < 1e-12, true);
        assert_eq!(ex.target, to_model_range(&codec.encode(&gt).unwrap().values));
    }
    let limited = prepare_example("x", &set[0], Crop { n_ctx: 24, end: 32 }, &codec, Some(2)).unwrap();
    assert_eq!(limited.cond.memory_frames(), 2);
    assert_eq!(limited.cond.poses.len(), 4);
    let full = prepare_example("x", &set[0], Crop { n_ctx: 24, end: 32 }, &codec, None).unwrap();
    let mem = full.cond.memory.as_ref().unwrap();
    assert_eq!(limited.cond.memory.as_ref().unwrap(), &mem.narrow(1, 4, 2).unwrap());
    assert_eq!(limited.cond.poses[..], full.cond.poses[4..]);
    assert!(prepare_example("x", &set[0], Crop { n_ctx: 0, end: 8 }, &codec, None).is_err());
}

#[test]
fn json_roundtrip_keeps_floats_exact() {
    let dir = tempfile::tempdir().unwrap();
    let v: Vec<f64> = (0..50).map(|_| Tensor::randn(&[1], 1.0, &mut rng::seeded(3)).item() / 7.0).collect();
    let p = dir.path().join("v.json");
    write_json(&p, &v).unwrap();
    let back: Vec<f64> = read_json(&p).unwrap();
    assert_eq!(back, v);
}
