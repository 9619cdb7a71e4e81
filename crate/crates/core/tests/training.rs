mod common;

use flowsvc::dsp::read_wav;
use flowsvc::nn::checkpoint::{opt_path, read_tensors};
use flowsvc::pipeline::convert::{convert, load_model};
use flowsvc::pipeline::embeddings::write_csv;
use flowsvc::pipeline::train::{checkpoint_name, load_discriminator, METRICS_HEADER};
use flowsvc::pipeline::{export_embeddings, extract_features, train, train_records, TrainOptions};
use flowsvc::Error;

#[test]
fn training_writes_metrics_and_checkpoints_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    common::tiny_dataset(&data);
    let cfg = common::small_config();

    let a = train(&cfg, &data, &tmp.path().join("a")).unwrap();
    let b = train(&cfg, &data, &tmp.path().join("b")).unwrap();
    let log = std::fs::read_to_string(&a.metrics_path).unwrap();
    assert_eq!(log, std::fs::read_to_string(&b.metrics_path).unwrap());
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("1,"));
    // The flow starts as a permutation, so the first step has zero logdet.
    assert!(lines[1].ends_with(",0"));

    let names: Vec<String> = a
        .checkpoints
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, [checkpoint_name(2), checkpoint_name(4)]);
    let (step, moments) = read_tensors(&opt_path(a.final_checkpoint())).unwrap();
    assert_eq!(step, 4);
    assert!(moments.iter().any(|(n, _)| n.starts_with("g/m/")));
    assert!(moments.iter().any(|(n, _)| n.starts_with("d/v/disc.")));
}

#[test]
fn non_finite_loss_aborts_and_keeps_last_good_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    common::tiny_dataset(&data);
    let cfg = common::small_config();
    let records = extract_features(&cfg, &data).unwrap().records;
    let out = tmp.path().join("run");
    let opts = TrainOptions { inject_nan_at: Some(3) };
    let err = train_records(&cfg, &records, &out, &opts).unwrap_err();
    assert!(matches!(err, Error::Numerical { .. }));
    assert_eq!(err.exit_code(), 3);

    let last_good = out.join("last_good.ckpt");
    let (_, step) = load_model(&cfg, &last_good).unwrap();
    assert_eq!(step, 2);
    let (_, at_two) = load_model(&cfg, &out.join(checkpoint_name(2))).unwrap();
    assert_eq!(at_two, 2);
    assert_eq!(std::fs::read(&last_good).unwrap(), std::fs::read(out.join(checkpoint_name(2))).unwrap());
    assert_eq!(std::fs::read_to_string(out.join("metrics.csv")).unwrap().lines().count(), 3);
}

#[test]
fn conversion_and_embedding_export_from_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let files = common::tiny_dataset(&data);
    let cfg = common::small_config();
    let summary = train(&cfg, &data, &tmp.path().join("run")).unwrap();
    let ckpt = summary.final_checkpoint();

    let out = tmp.path().join("converted.wav");
    let conv = convert(&cfg, ckpt, &files[0], files.last().unwrap(), &out).unwrap();
    let written = read_wav(&out).unwrap();
    assert_eq!(written.len(), read_wav(&files[0]).unwrap().len());
    assert!(written.peak() <= 1.0);
    assert_eq!(conv.audio.len(), written.len());
    assert!((conv.target_speaker.norm() - 1.0).abs() < 1e-9);

    std::fs::write(data.join("broken.wav"), b"RIFF").unwrap();
    let (model, _) = load_model(&cfg, ckpt).unwrap();
    let export = export_embeddings(&cfg, &model, &data).unwrap();
    assert_eq!(export.rows.len(), files.len());
    assert_eq!(export.errors.len(), 1);
    let csv_path = tmp.path().join("emb.csv");
    write_csv(&export, &csv_path).unwrap();
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    for line in csv.lines() {
        let values: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert_eq!(values.len(), 256);
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
}

#[test]
fn discriminator_can_start_from_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    common::tiny_dataset(&data);
    let cfg = common::small_config();
    let first = train(&cfg, &data, &tmp.path().join("a")).unwrap();

    let (trained, _) = load_model(&cfg, first.final_checkpoint()).unwrap();
    let mut fresh = flowsvc::model::Model::<f32>::new(cfg.model_config(), cfg.seed).unwrap();
    let n = load_discriminator(first.final_checkpoint(), &mut fresh).unwrap();
    assert!(n > 0);
    let same = |name: &str| trained.store.get(name).unwrap() == fresh.store.get(name).unwrap();
    assert!(trained.store.names().filter(|n| n.starts_with("disc.")).all(same));
    assert!(!trained.store.names().filter(|n| !n.starts_with("disc.")).all(same));

    let mut warm = cfg.clone();
    warm.paths.discriminator = first.final_checkpoint().to_string_lossy().into_owned();
    let second = train(&warm, &data, &tmp.path().join("b")).unwrap();
    assert_ne!(first.metrics[0].disc, second.metrics[0].disc);
    assert_eq!(first.metrics[0].recon, second.metrics[0].recon);
}
