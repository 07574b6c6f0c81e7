use qpde::datagen::{dataset_from_bytes, dataset_to_bytes, generate_dataset, read_dataset, write_dataset, Pde, SolverConfig};
use qpde::models::{build_model, ModelSpec};
use qpde::quant::{attach_quantizers, QuantRegime};
use qpde::train::{Adam, Checkpoint, EpochRecord};
use qpde::{Error, Tensor};

fn offset(e: Error) -> u64 {
    match e {
        Error::Format { offset, .. } => offset,
        other => panic!("expected a format error, got {other}"),
    }
}

#[test]
fn dataset_roundtrip_through_disk() {
    let ds = generate_dataset(&SolverConfig { nt: 5, ..SolverConfig::new(Pde::DiffSorp, 16) }, 3, 4, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.qpds");
    write_dataset(&ds, &path).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), ds);

    let bytes = dataset_to_bytes(&ds).unwrap();
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert_eq!(offset(dataset_from_bytes(&bad).unwrap_err()), 0);
    for cut in [4, bytes.len() / 2, bytes.len() - 1] {
        assert!(dataset_from_bytes(&bytes[..cut]).is_err(), "accepted {cut} bytes");
    }
}

#[test]
fn quantized_checkpoint_roundtrip() {
    let spec = ModelSpec { layers: 2, width: 4, modes: 4, projection: 8, ..ModelSpec::fno1d(1, 2, 2, 16) };
    let model = build_model(&spec, 9).unwrap();
    let calib = Tensor::new((0..64).map(|i| (i as f64 * 0.37).sin()).collect(), &[2, 2, 16]).unwrap();
    let q = attach_quantizers(&model, QuantRegime::W4A8, &calib).unwrap();
    let mut opt = Adam::new(1e-4);
    opt.begin_step();
    for p in q.params() {
        opt.update(&p.name, &p.data, &vec![0.5; p.data.len()], 1e-3);
    }
    let ck = Checkpoint {
        model: q,
        history: vec![EpochRecord { epoch: 1, train_loss: 0.5, val_loss: 0.25, lr: 1e-3 }],
        optimizer: Some(opt),
        regime: Some(QuantRegime::W4A8),
        seed: 17,
    };
    let bytes = ck.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes().unwrap(), bytes);

    let mut bad = bytes.clone();
    bad[8] = 0xee;
    assert_eq!(offset(Checkpoint::from_bytes(&bad).unwrap_err()), 8);
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}
