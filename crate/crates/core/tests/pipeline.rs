use std::fs;
use std::ops::ControlFlow;

use rand::Rng;

use tgocr::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use tgocr::data::synth::{write_dataset, write_flat_dataset};
use tgocr::data::{load_dataset, SplitRule};
use tgocr::model::{build_cnn, build_mlp};
use tgocr::optim::AdadeltaConfig;
use tgocr::train::{evaluate, read_metrics, train, train_with, TrainConfig};
use tgocr::{seed, Error, Tensor};

fn random_images(n: usize, s: u64) -> Tensor<f32> {
    let mut rng = seed::rng(s);
    Tensor::from_vec(&[n, 1, 32, 32], (0..n * 1024).map(|_| rng.gen::<f32>()).collect()).unwrap()
}

#[test]
fn both_dataset_layouts_load_and_split_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let nested = dir.path().join("nested");
    let flat = dir.path().join("flat");
    write_dataset(&nested, 6, 3).unwrap();
    write_flat_dataset(&flat, 6, 3).unwrap();

    let a = load_dataset(&nested, SplitRule::Lexicographic).unwrap();
    let b = load_dataset(&flat, SplitRule::Lexicographic).unwrap();
    assert_eq!(a.train_histogram(), [4; 10]);
    assert_eq!(a.test_histogram(), [2; 10]);
    assert_eq!(a.train.len(), b.train.len());
    for (x, y) in a.train.iter().zip(&b.train) {
        assert_eq!(x.label, y.label);
        assert_eq!(x.image, y.image);
    }

    let shuffled = load_dataset(&nested, SplitRule::Shuffled(9)).unwrap();
    assert_eq!(shuffled.train_histogram(), [4; 10]);
    let names = |s: &tgocr::data::SplitDataset| s.test.iter().map(|x| x.source.clone()).collect::<Vec<_>>();
    assert_ne!(names(&a), names(&shuffled));
    assert_eq!(names(&shuffled), names(&load_dataset(&nested, SplitRule::Shuffled(9)).unwrap()));
}

#[test]
fn dataset_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_dataset(&dir.path().join("absent"), SplitRule::Lexicographic),
        Err(Error::Dataset(_))
    ));
    assert!(matches!(load_dataset(dir.path(), SplitRule::Lexicographic), Err(Error::Dataset(_))));

    write_dataset(dir.path(), 2, 1).unwrap();
    fs::write(dir.path().join("3").join("3_bad.bmp"), b"BM not really").unwrap();
    assert!(matches!(
        load_dataset(dir.path(), SplitRule::Lexicographic),
        Err(Error::Decode { .. })
    ));
}

#[test]
fn checkpoint_round_trip_is_bit_exact_on_100_inputs() {
    for model in [build_cnn::<f32>(17), build_mlp::<f32>(17)] {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path, &AdadeltaConfig::default()).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let x = random_images(100, 5);
        let a = model.predict_proba(&x).unwrap();
        let b = loaded.predict_proba(&x).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}

#[test]
fn corrupted_checkpoints_never_load() {
    let model = build_cnn::<f32>(2);
    let bytes = encode_checkpoint(&model, &AdadeltaConfig::default()).unwrap();
    let mut rng = seed::rng(77);
    for _ in 0..200 {
        let mut bad = bytes.clone();
        let i = rng.gen_range(0..bad.len());
        bad[i] ^= 1 << rng.gen_range(0..8);
        assert!(decode_checkpoint(&bad).is_err(), "flip at byte {i} loaded");
    }
    for cut in [0, 4, 8, 11, 12, 200, bytes.len() / 2, bytes.len() - 1] {
        let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint { .. }), "cut {cut}: {err}");
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(decode_checkpoint(&longer).is_err());
}

#[test]
fn training_improves_on_synthetic_digits() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 12, 4).unwrap();
    let data = load_dataset(dir.path(), SplitRule::Lexicographic).unwrap();
    let mut model = build_cnn::<f32>(1);
    let config = TrainConfig {
        epochs: 15,
        batch_size: 16,
        record_timing: false,
        ..TrainConfig::default()
    };
    let history = train(&mut model, &data, &config).unwrap();
    assert_eq!(history.len(), 15);
    assert!(history[14].train_loss < 0.5 * history[0].train_loss, "{history:?}");
    assert_eq!(history[14].train_acc, evaluate(&model, &data.train).unwrap().accuracy);
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    write_dataset(&data_dir, 6, 8).unwrap();
    let data = load_dataset(&data_dir, SplitRule::Lexicographic).unwrap();
    let config = |name: &str, epochs| TrainConfig {
        epochs,
        batch_size: 8,
        seed: 3,
        metrics_path: Some(dir.path().join(format!("{name}.csv"))),
        checkpoint_path: Some(dir.path().join(format!("{name}.ckpt"))),
        checkpoint_every: 0,
        record_timing: false,
        ..TrainConfig::default()
    };

    let mut straight = build_cnn::<f32>(6);
    train(&mut straight, &data, &config("straight", 4)).unwrap();

    let mut first = build_cnn::<f32>(6);
    let stop_after_two = |m: &tgocr::train::EpochMetrics| {
        if m.epoch == 2 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    };
    train_with(&mut first, &data, &config("resumed", 4), stop_after_two).unwrap();
    let mut resumed = load_checkpoint(&dir.path().join("resumed.ckpt")).unwrap();
    assert_eq!(resumed.epochs_completed, 2);
    train(&mut resumed, &data, &config("resumed", 4)).unwrap();

    let read = |name: &str| fs::read(dir.path().join(name)).unwrap();
    assert_eq!(read("straight.csv"), read("resumed.csv"));
    assert_eq!(read("straight.ckpt"), read("resumed.ckpt"));
    assert_eq!(read_metrics(&dir.path().join("resumed.csv")).unwrap().len(), 4);
}
