use helmdiff::config::RunConfig;
use helmdiff::diffusion::{train, train_regressor, TrainConfig};
use helmdiff::pipeline::{generate_dataset, training_data};
use helmdiff::store::{self, Splits};
use helmdiff::Error;

fn small() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.splits = Splits { train: 12, val: 4, test: 4 };
    cfg
}

fn tiny_train() -> TrainConfig {
    TrainConfig { epochs: 1, batch_size: 4, width: 4, blocks: 1, ..Default::default() }
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let cfg = small();
    let (records, manifest) = generate_dataset(&cfg, cfg.data.frequency()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.hdld");
    let written = store::write_dataset(&records, &manifest, &path).unwrap();
    let (back, m) = store::read_dataset(&path).unwrap();
    assert_eq!(back, records);
    assert_eq!(m, written);
    assert_eq!(m.records, 20);
    assert_eq!(m.frequency_hz, cfg.data.frequency());
}

#[test]
fn corrupted_dataset_is_rejected() {
    let cfg = small();
    let (records, manifest) = generate_dataset(&cfg, cfg.data.frequency()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.hdld");
    store::write_dataset(&records, &manifest, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[100] ^= 1;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(store::read_dataset(&path), Err(Error::CorruptDataset { .. })));
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(store::read_dataset(&path), Err(Error::CorruptDataset { .. })));
    std::fs::write(&path, b"NOTADATASET").unwrap();
    assert!(matches!(store::read_dataset(&path), Err(Error::UnsupportedFormat { .. })));
}

#[test]
fn checkpoints_round_trip_and_detect_corruption() {
    let cfg = small();
    let (records, manifest) = generate_dataset(&cfg, cfg.data.frequency()).unwrap();
    let data = training_data(&records, &manifest).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for ckpt in [train(&data, &tiny_train(), 0).unwrap(), train_regressor(&data, &tiny_train(), 0).unwrap()] {
        let path = dir.path().join("m.ckpt");
        store::write_checkpoint(&ckpt, &path).unwrap();
        let back = store::read_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.params, ckpt.params);

        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(store::decode_checkpoint(&bytes, &path), Err(Error::CorruptCheckpoint { .. })));
        assert!(matches!(store::decode_checkpoint(&bytes[..20], &path), Err(Error::CorruptCheckpoint { .. })));
        assert!(matches!(store::decode_checkpoint(b"HDLD0001xxxxxxxx", &path), Err(Error::UnsupportedFormat { .. })));
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = small();
    let (records, manifest) = generate_dataset(&cfg, cfg.data.frequency()).unwrap();
    let data = training_data(&records, &manifest).unwrap();
    let a = train(&data, &tiny_train(), 3).unwrap();
    let b = train(&data, &tiny_train(), 3).unwrap();
    assert_eq!(store::encode_checkpoint(&a).unwrap(), store::encode_checkpoint(&b).unwrap());
    let c = train(&data, &TrainConfig { seed: 1, ..tiny_train() }, 3).unwrap();
    assert_ne!(a.params, c.params);
}
