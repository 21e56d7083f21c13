mod common;

use d2fel::harness::{checkpoint, extract, load_dataset, restore, save_dataset, train, Reducer};
use d2fel::io::{load_bank, load_container, read_bank, save_bank, save_container, write_bank};
use d2fel::layers::Mode;
use d2fel::reduce::{fit_autoencoder, fit_pca, fit_random_projector, AutoEncoderConfig, FeatureBank, Split};
use d2fel::synth::{generate_dataset, make_protocol};
use d2fel::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = common::tiny(4);
    let ds = generate_dataset(&data).unwrap();
    let mut out = train(&ds, &cfg).unwrap();
    let path = dir.path().join("m.d2ck");
    save_container(&path, &checkpoint(&mut out.model, &cfg, cfg.epochs)).unwrap();
    let (mut back, cfg_back) = restore(&load_container(&path).unwrap()).unwrap();
    assert_eq!(cfg_back, cfg);
    let x = Tensor::<f32>::randn(&[3, 3, 16, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(0));
    let a = out.model.forward_all(&x, Mode::Eval).unwrap();
    let b = back.forward_all(&x, Mode::Eval).unwrap();
    assert_eq!(a, b);
    // Saving the restored model gives the same bytes.
    let again = dir.path().join("again.d2ck");
    save_container(&again, &checkpoint(&mut back, &cfg, cfg.epochs)).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn truncated_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = common::tiny(0);
    let ds = generate_dataset(&data).unwrap();
    let mut out = train(&ds, &cfg).unwrap();
    let path = dir.path().join("m.d2ck");
    save_container(&path, &checkpoint(&mut out.model, &cfg, 2)).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    assert_eq!(load_container(&path).unwrap_err().exit_code(), 3);
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = common::tiny(5);
    let ds = generate_dataset(&data).unwrap();
    save_dataset(dir.path(), &ds).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.manifest, ds.manifest);
    assert_eq!(back.images, ds.images);
}

fn trained_bank() -> FeatureBank {
    let (data, cfg) = common::tiny(6);
    let ds = generate_dataset(&data).unwrap();
    let mut out = train(&ds, &cfg).unwrap();
    let p = make_protocol(&ds.manifest, cfg.protocol).unwrap();
    extract(&mut out.model, &ds, &p.train).unwrap()
}

#[test]
fn bank_round_trip() {
    let bank = trained_bank();
    let mut bytes = Vec::new();
    write_bank(&mut bytes, &bank).unwrap();
    assert_eq!(read_bank(&mut bytes.as_slice()).unwrap(), bank);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.d2fb");
    save_bank(&path, &bank).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(load_bank(&path).unwrap(), bank);
    assert!(bank.labels().iter().all(|l| l.split == Split::Train));
    bytes[0] = b'X';
    assert_eq!(read_bank(&mut bytes.as_slice()).unwrap_err().exit_code(), 3);
}

#[test]
fn reducers_round_trip() {
    let bank = trained_bank();
    let dir = tempfile::tempdir().unwrap();
    let ae = AutoEncoderConfig {
        epochs: 3,
        ..Default::default()
    };
    let reducers = [
        Reducer::Pca(fit_pca(&bank, 8).unwrap()),
        Reducer::Projection(fit_random_projector(bank.dim(), 8, 1).unwrap()),
        Reducer::AutoEncoder(fit_autoencoder(&bank, 8, &ae).unwrap()),
    ];
    for r in reducers {
        let path = dir.path().join(format!("{}.d2ck", r.name()));
        r.save(&path).unwrap();
        let back = Reducer::load(&path).unwrap();
        assert_eq!(back.name(), r.name());
        assert_eq!(back.output_dim(), 8);
        assert_eq!(back.apply(&bank).unwrap(), r.apply(&bank).unwrap());
    }
}
