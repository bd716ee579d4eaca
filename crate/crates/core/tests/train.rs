use fpnr_core::cascade::*;
use fpnr_core::scenes::bundled_images;
use fpnr_core::sim::{gen_patch_dataset, PatchDataset, PatchDatasetConfig};
use fpnr_core::{FpnrError, Image};

fn dataset(count: usize, seed: u64) -> PatchDataset<f32> {
    let srcs: Vec<Image<f32>> = bundled_images().iter().map(|im| im.cast()).collect();
    let cfg = PatchDatasetConfig {
        patch_size: 16,
        ..PatchDatasetConfig::training(count, seed)
    };
    gen_patch_dataset(&srcs, &cfg).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 8,
        lr0: 1e-3,
        lr_decay_epochs: 1,
        seed: 4,
        ..TrainConfig::default()
    }
}

fn model() -> CascadeModel<f32> {
    CascadeModel::new("1/8".parse().unwrap(), 2)
}

#[test]
fn zero_epochs_leaves_model_unchanged() {
    let ds = dataset(8, 1);
    let mut m = model();
    let before = encode_checkpoint(&m);
    let hist = train_model(
        &mut m,
        &ds,
        &TrainConfig {
            epochs: 0,
            ..small_config()
        },
    )
    .unwrap();
    assert!(hist.is_empty());
    assert_eq!(encode_checkpoint(&m), before);
}

#[test]
fn training_is_reproducible() {
    let ds = dataset(24, 2);
    let cfg = small_config();
    let run = |threads| {
        let mut m = model();
        let hist = train_model(
            &mut m,
            &ds,
            &TrainConfig {
                threads,
                ..cfg.clone()
            },
        )
        .unwrap();
        (hist, encode_checkpoint(&m))
    };
    let (h1, c1) = run(1);
    let (h2, c2) = run(1);
    assert_eq!(h1, h2);
    assert_eq!(c1, c2);
    assert_eq!(h1.len(), 6);
    assert_eq!(h1[3].epoch, 1);
    assert!((h1[3].lr - 1e-4).abs() < 1e-18);
    let (t1, d1) = run(2);
    let (t2, d2) = run(2);
    assert_eq!(t1, t2);
    assert_eq!(d1, d2);
    for (a, b) in h1.iter().zip(&t1) {
        assert!(
            (a.loss - b.loss).abs() <= 1e-3 * a.loss.abs(),
            "{} vs {}",
            a.loss,
            b.loss
        );
    }
}

#[test]
fn loss_decreases_on_a_short_run() {
    let ds = dataset(64, 3);
    let mut m = model();
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 8,
        lr0: 2e-3,
        lr_decay_epochs: 100,
        seed: 1,
        ..TrainConfig::default()
    };
    let hist = train_model(&mut m, &ds, &cfg).unwrap();
    let k = hist.len() / 10;
    let mean = |s: &[StepRecord]| s.iter().map(|r| r.loss).sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&hist[..k]), mean(&hist[hist.len() - k..]));
    assert!(last < first, "first {first}, last {last}");
}

#[test]
fn max_steps_caps_history() {
    let ds = dataset(40, 5);
    let mut m = model();
    let hist = train_model(
        &mut m,
        &ds,
        &TrainConfig {
            max_steps: Some(3),
            ..small_config()
        },
    )
    .unwrap();
    assert_eq!(
        hist.iter().map(|r| r.step).collect::<Vec<_>>(),
        vec![0, 1, 2]
    );
    let csv = history_csv(&hist);
    assert!(csv.starts_with("step,epoch,lr,loss\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn non_finite_loss_is_reported() {
    let mut ds = dataset(8, 6);
    ds.pairs[0].corrupted.data_mut()[0] = f32::NAN;
    let mut m = model();
    let err = train_model(&mut m, &ds, &small_config()).unwrap_err();
    assert!(
        matches!(err, FpnrError::NonFiniteLoss { batch: 0, .. }),
        "{err}"
    );
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = dataset(8, 7);
    let mut m = model();
    for cfg in [
        TrainConfig {
            batch_size: 0,
            ..small_config()
        },
        TrainConfig {
            lr0: -1.0,
            ..small_config()
        },
        TrainConfig {
            threads: 0,
            ..small_config()
        },
    ] {
        assert!(train_model(&mut m, &ds, &cfg).is_err());
    }
    let bad: Result<TrainConfig, _> = serde_json::from_str(r#"{"epoch": 3}"#);
    assert!(bad.is_err());
    let ok: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
    assert_eq!(ok.batch_size, 128);
}

#[test]
fn evaluation_of_identity_model_matches_inputs() {
    let ds = dataset(6, 8);
    let s = evaluate(&model(), &ds.pairs).unwrap();
    assert_eq!(s.count, 6);
    assert!((s.corrupted_psnr - s.corrected_psnr).abs() < 1e-9);
    assert!((s.corrupted_roughness - s.corrected_roughness).abs() < 1e-9);
}
