mod common;

use chlorocast::autodiff::Tensor;
use chlorocast::checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, FORMAT_VERSION};
use chlorocast::data::{Column, NormalizationStats, TimeSeriesFrame};
use chlorocast::evaluation::AblationVariant;
use chlorocast::model::{predict, prepare_batch, ModelConfig, ModelParams};
use chlorocast::Error;
use common::rng;

fn sample(variant: AblationVariant) -> Checkpoint {
    let config = ModelConfig {
        modules: variant.flags(),
        seed: 11,
        ..ModelConfig::default()
    };
    let mut params = ModelParams::init(&config, 3).unwrap();
    // move every value off its initial draw so loading cannot pass by re-initialising
    let mut r = rng(2);
    params.for_each_mut(&mut |_, t| {
        let noise = Tensor::randn(t.shape(), 0.05, &mut r);
        for (a, b) in t.data_mut().iter_mut().zip(noise.data()) {
            *a += b;
        }
    });
    let features: Vec<String> = ["Chl", "DO", "Temp"].map(String::from).to_vec();
    let t0 = chlorocast::data::parse_timestamp("2021-01-01 00:00:00").unwrap();
    let frame = TimeSeriesFrame::new(
        "time",
        vec![t0, t0 + chrono::Duration::hours(1)],
        features.iter().enumerate().map(|(i, n)| Column::new(n.clone(), vec![i as f64, 1.0 + 2.0 * i as f64])).collect(),
    )
    .unwrap();
    Checkpoint {
        meta: CheckpointMeta {
            config,
            features,
            target: "Chl".into(),
            split: chlorocast::data::DEFAULT_SPLIT,
        },
        stats: NormalizationStats::fit(&frame).unwrap(),
        params,
    }
}

#[test]
fn roundtrip_gives_bitwise_identical_predictions() {
    let dir = tempfile::tempdir().unwrap();
    for v in AblationVariant::ALL {
        let ckpt = sample(v);
        let path = dir.path().join(format!("{}.ckpt", v.id()));
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.meta, ckpt.meta);
        assert_eq!(back.stats, ckpt.stats);

        let x = Tensor::randn(&[5, 72, 3], 1.0, &mut rng(4));
        let batch = prepare_batch(&x, &ckpt.meta.config).unwrap();
        let a = predict(&ckpt.params, &ckpt.meta.config, &batch).unwrap();
        let b = predict(&back.params, &back.meta.config, &batch).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b), "{}", v.id());
        assert_eq!(encode(&back).unwrap(), encode(&ckpt).unwrap());
    }
}

#[test]
fn other_format_versions_are_refused() {
    let mut bytes = encode(&sample(AblationVariant::Model6)).unwrap();
    bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    match decode(&bytes) {
        Err(Error::VersionMismatch { expected, found }) => {
            assert_eq!((expected, found), (FORMAT_VERSION, FORMAT_VERSION + 1));
        }
        other => panic!("expected a version mismatch, got {other:?}"),
    }
}

#[test]
fn truncated_or_padded_files_are_corrupt() {
    let bytes = encode(&sample(AblationVariant::Model3)).unwrap();
    for cut in [0, 4, 11, 12, 19, 40, bytes.len() / 2, bytes.len() - 8, bytes.len() - 1] {
        assert!(
            matches!(decode(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))),
            "cut at {cut}"
        );
    }
    let mut padded = bytes.clone();
    padded.push(0);
    assert!(matches!(decode(&padded), Err(Error::CorruptCheckpoint(_))));
    let mut bad_magic = bytes;
    bad_magic[0] = b'X';
    assert!(matches!(decode(&bad_magic), Err(Error::CorruptCheckpoint(_))));
}

#[test]
fn arrays_must_match_the_stored_configuration() {
    let mut ckpt = sample(AblationVariant::Model6);
    let bytes = encode(&ckpt).unwrap();
    // same arrays, but metadata claiming a different architecture
    ckpt.meta.config.node_channels = 5;
    let mut other = encode(&ckpt).unwrap();
    let original = encode(&sample(AblationVariant::Model6)).unwrap();
    assert_ne!(other, original);
    let meta_len = u64::from_le_bytes(other[12..20].try_into().unwrap()) as usize;
    let old_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let mut spliced = other[..20 + meta_len].to_vec();
    spliced.extend_from_slice(&bytes[20 + old_len..]);
    other = spliced;
    assert!(matches!(decode(&other), Err(Error::CorruptCheckpoint(_))));
}

#[test]
fn missing_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_checkpoint(&dir.path().join("absent.ckpt")),
        Err(Error::MissingFile(_))
    ));
}
