use std::path::Path;
use std::process::Command;

use geoforget::autodiff::Tensor;
use geoforget::data::{generate_dataset, write_dataset, DatasetFile};
use geoforget::harness::{
    build_report, check_records, Diagnostics, evaluate, gain_percent, matrix_configs, prepare, relative_l2,
    run_experiment, run_matrix, train, write_report, Axis, ExperimentConfig, MetricsRecord,
    PreparedData, TrainOptions, CONFIG_KEYS, METRICS_FILE, RUN_ARTIFACTS,
};
use geoforget::operators::{Backbone, EncoderKind, InjectionKind, OperatorModel, PolicyName};
use geoforget::Error;
use sha2::{Digest, Sha256};

fn small_config(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        dataset: dir.join("data.gfds"),
        output: dir.join("runs"),
        resolution: 16,
        train_samples: 6,
        val_samples: 2,
        test_samples: 2,
        data_seed: 1,
        width: 8,
        modes: 4,
        epochs: 2,
        batch_size: 4,
        ..ExperimentConfig::default()
    }
}

fn small_data(cfg: &ExperimentConfig) -> (DatasetFile, PreparedData) {
    let file = generate_dataset(&cfg.split()).unwrap();
    let data = prepare(&file, &cfg.split()).unwrap();
    (file, data)
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let mut cfg = ExperimentConfig::default();
    assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    cfg.backbone = Backbone::Attention;
    cfg.injection = InjectionKind::Concat;
    cfg.policy = PolicyName::Single(2);
    cfg.encoder = EncoderKind::BranchTrunk;
    cfg.lr = 3.7e-4;
    cfg.jitter = 0.123;
    cfg.seed = 99;
    assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    let text = cfg.to_text();
    assert_eq!(text.lines().count(), CONFIG_KEYS.len());

    let commented = "# desk run\nbackbone = lno   # control\n\nepochs=3\n";
    let parsed = ExperimentConfig::parse(commented).unwrap();
    assert_eq!(parsed.backbone, Backbone::Lno);
    assert_eq!(parsed.epochs, 3);

    for bad in [
        "colour = blue\n",
        "epochs = 3\nepochs = 4\n",
        "epochs = many\n",
        "epochs\n",
        "epochs = 0\n",
        "lr = -1\n",
        "injection = film\n",
        "policy = L7\ninjection = film\nencoder = conv\n",
        "backbone = fno\nmodes = 17\n",
    ] {
        let err = ExperimentConfig::parse(bad).err().unwrap_or_else(|| panic!("accepted {bad:?}"));
        assert!(matches!(err, Error::Config(_)), "{bad:?}: {err}");
    }
}

#[test]
fn relative_l2_examples() {
    let truth = Tensor::from_fn(&[1, 4, 4], |i| (i as f32 + 1.0) * 0.1);
    let mask = Tensor::from_fn(&[1, 4, 4], |i| if i % 3 == 0 { 0.0 } else { 1.0 });
    assert_eq!(relative_l2(&truth, &truth, &mask).unwrap(), 0.0);
    let zero = Tensor::zeros(&[1, 4, 4]);
    assert!((relative_l2(&zero, &truth, &mask).unwrap() - 1.0).abs() < 1e-12);
    let double = truth.map(|x| 2.0 * x);
    assert!((relative_l2(&double, &truth, &mask).unwrap() - 1.0).abs() < 1e-12);
    // values outside the mask do not count
    let mut off = truth.clone();
    off.data_mut()[0] = 100.0;
    assert_eq!(relative_l2(&off, &truth, &mask).unwrap(), 0.0);
    assert!(matches!(relative_l2(&truth, &zero, &mask), Err(Error::Degenerate(_))));
    assert!(relative_l2(&truth, &Tensor::zeros(&[1, 2, 2]), &mask).is_err());
}

#[test]
fn metrics_contract() {
    let rec = |epoch, loss: f64| MetricsRecord {
        epoch,
        train_loss: loss,
        val_rel_l2: 0.5,
        test_rel_l2: None,
        seconds: 0.0,
    };
    assert!(check_records(&[rec(1, 1.0), rec(2, 0.5)]).is_ok());
    assert!(check_records(&[rec(2, 1.0), rec(2, 0.5)]).is_err());
    assert!(matches!(check_records(&[rec(1, f64::NAN)]), Err(Error::NonFinite(_))));
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (_, data) = small_data(&cfg);
    let model = OperatorModel::new(cfg.model().unwrap()).unwrap();
    let options = TrainOptions {
        epochs: 3,
        batch_size: 4,
        lr: 0.0,
        seed: 0,
    };
    let out = train(model, &data, &options, None).unwrap();
    let first = out.metrics[0].train_loss;
    for m in &out.metrics {
        assert!((m.train_loss - first).abs() < 1e-6);
        assert_eq!(m.val_rel_l2, out.metrics[0].val_rel_l2);
    }
    assert_eq!(out.best_epoch, 1);
}

#[test]
fn training_is_deterministic_and_keeps_best_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.epochs = 4;
    cfg.lr = 1e-2;
    let (_, data) = small_data(&cfg);
    let run = || {
        let model = OperatorModel::new(cfg.model().unwrap()).unwrap();
        train(model, &data, &geoforget::harness::options(&cfg), None).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.steps, 4 * 2);
    for (x, y) in a.metrics.iter().zip(&b.metrics) {
        assert_eq!(x.epoch, y.epoch);
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        assert_eq!(x.val_rel_l2.to_bits(), y.val_rel_l2.to_bits());
    }
    assert_eq!(a.test_rel_l2.to_bits(), b.test_rel_l2.to_bits());
    check_records(&a.metrics).unwrap();
    let epochs: Vec<usize> = a.metrics.iter().map(|m| m.epoch).collect();
    assert_eq!(epochs, vec![1, 2, 3, 4]);
    assert!(a.metrics[..3].iter().all(|m| m.test_rel_l2.is_none()));
    assert_eq!(a.metrics[3].test_rel_l2, Some(a.test_rel_l2));

    let best = a
        .metrics
        .iter()
        .min_by(|x, y| x.val_rel_l2.partial_cmp(&y.val_rel_l2).unwrap())
        .unwrap();
    assert_eq!(a.best_epoch, best.epoch);
    let val = evaluate(&a.model, &data.val).unwrap();
    assert_eq!(val.to_bits(), best.val_rel_l2.to_bits());
    assert_eq!(evaluate(&a.model, &data.test).unwrap().to_bits(), a.test_rel_l2.to_bits());
}

#[test]
fn non_finite_loss_aborts_with_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (_, mut data) = small_data(&cfg);
    data.train[3].input.data_mut()[0] = f32::NAN;
    let model = OperatorModel::new(cfg.model().unwrap()).unwrap();
    let options = TrainOptions {
        epochs: 2,
        batch_size: 1,
        lr: 1e-3,
        seed: 0,
    };
    match train(model, &data, &options, None) {
        Err(Error::NonFinite(msg)) => assert!(msg.contains("at step"), "{msg}"),
        other => panic!("expected a non-finite error, got {:?}", other.err()),
    }
}

#[test]
fn coefficient_channel_is_standardized_by_train_mean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (file, data) = small_data(&cfg);
    let n = 16 * 16;
    let mean: f64 = file.samples[..6]
        .iter()
        .flat_map(|s| s.coefficient().iter().map(|&v| v as f64))
        .sum::<f64>()
        / (6 * n) as f64;
    assert!((data.coefficient_scale as f64 - mean).abs() < 1e-5);
    let standardized: f64 = data
        .train
        .iter()
        .flat_map(|e| e.input.data()[..n].iter().map(|&v| v as f64))
        .sum::<f64>()
        / (6 * n) as f64;
    assert!((standardized - 1.0).abs() < 1e-5);
    // other channels untouched
    assert_eq!(&data.test[0].input.data()[n..], &file.samples[8].input[n..]);
    assert_eq!(data.test[0].target.data(), &file.samples[8].target[..]);
    let mut wrong = cfg.split();
    wrong.train += 1;
    assert!(matches!(prepare(&file, &wrong), Err(Error::Config(_))));
}

#[test]
fn policy_matrix_rows_and_failure_recording() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.epochs = 1;
    let labels: Vec<String> = matrix_configs(&cfg, Axis::Policy).into_iter().map(|(l, _)| l).collect();
    assert_eq!(labels, ["none", "L0", "L1", "L2", "L3", "early", "late", "full"]);
    let inj: Vec<String> = matrix_configs(&cfg, Axis::Injection).into_iter().map(|(l, _)| l).collect();
    assert_eq!(inj, ["film", "additive", "concat"]);
    let enc = matrix_configs(&cfg, Axis::Encoder);
    assert_eq!(enc.len(), 2);
    assert!(enc.iter().all(|(_, c)| c.policy == PolicyName::Full));

    let (file, data) = small_data(&cfg);
    let hash = file.content_hash();
    // a plain file where one run directory should go makes that run fail
    std::fs::create_dir_all(&cfg.output).unwrap();
    std::fs::write(cfg.output.join("L1"), b"occupied").unwrap();
    let result = run_matrix(&cfg, Axis::Policy, &data, &hash).unwrap();
    assert_eq!(result.rows.len(), 8);
    for row in &result.rows {
        assert_eq!(row.result.is_err(), row.label == "L1", "{}", row.label);
    }
    let csv = std::fs::read_to_string(cfg.output.join("matrix.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), format!("# dataset_sha256 = {hash}"));
    assert_eq!(csv.lines().count(), 2 + 8);
    assert!(csv.contains("L1,fno,film,L1,conv,0,,,,failed"));
    for row in result.rows.iter().filter_map(|r| r.result.as_ref().ok()) {
        assert_eq!(row.dataset_sha256, hash);
    }
}

#[test]
fn report_gains_missing_artifacts_and_determinism() {
    assert_eq!(gain_percent(0.25, 0.25), 0.0);
    // table inputs are rounded to three digits; compare at the table's one decimal
    let g = (gain_percent(3.61e-1, 1.21e-1) * 10.0).round() / 10.0;
    assert!((66.5..=66.6).contains(&g), "{g}");

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.epochs = 1;
    let (file, data) = small_data(&cfg);
    let hash = file.content_hash();
    let runs = dir.path().join("runs");
    let mut none = cfg.clone();
    none.output = runs.join("none");
    let (_, s_none) = run_experiment(&none, &data, &hash).unwrap();
    let mut mem = cfg.clone();
    mem.injection = InjectionKind::Film;
    mem.policy = PolicyName::Full;
    mem.encoder = EncoderKind::Conv;
    mem.output = runs.join("film");
    let (_, s_mem) = run_experiment(&mem, &data, &hash).unwrap();
    for f in RUN_ARTIFACTS {
        assert!(runs.join("film").join(f).is_file(), "{f}");
    }
    std::fs::remove_file(runs.join("film").join(METRICS_FILE)).unwrap();
    std::fs::write(runs.join("film/probe_mse.csv"), "layer,eps\nlifting,0.5\nL0,0.25\n").unwrap();
    std::fs::write(
        runs.join("film/grad_ratios.csv"),
        "step,R_0,R_1,R_encoder\n0,0.5,0.5,0.1\n20,0.75,0.25,0.2\n",
    )
    .unwrap();
    std::fs::create_dir_all(runs.join("empty")).unwrap();

    let report = write_report(&runs).unwrap();
    assert_eq!(report.missing, vec![format!("film/{METRICS_FILE}")]);
    assert_eq!(report.runs.len(), 2);
    let film = report.runs.iter().find(|r| r.run == "film").unwrap();
    let expected = gain_percent(s_none.test_rel_l2, s_mem.test_rel_l2);
    assert_eq!(film.gain_percent, Some(expected));
    let plain = report.runs.iter().find(|r| r.run == "none").unwrap();
    assert_eq!(plain.gain_percent, None);
    assert_eq!(plain.diagnostics, Diagnostics::default());
    assert_eq!(
        film.diagnostics.probe_mse,
        vec![("lifting".to_string(), 0.5), ("L0".to_string(), 0.25)]
    );
    assert_eq!(film.diagnostics.final_gradient_ratios, Some((20, vec![0.75, 0.25, 0.2])));
    let config_bytes = std::fs::read(runs.join("film/config.txt")).unwrap();
    let digest: String = Sha256::digest(&config_bytes).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(film.config_sha256, digest);
    assert_ne!(film.config_sha256, plain.config_sha256);

    let json = std::fs::read(runs.join("report.json")).unwrap();
    let csv = std::fs::read(runs.join("report.csv")).unwrap();
    write_report(&runs).unwrap();
    assert_eq!(std::fs::read(runs.join("report.json")).unwrap(), json);
    assert_eq!(std::fs::read(runs.join("report.csv")).unwrap(), csv);
    assert_eq!(build_report(&runs).unwrap(), report);
    let text = String::from_utf8(csv).unwrap();
    assert!(text.contains(&format!("# missing film/{METRICS_FILE}")));
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_geoforget")).args(args).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned()
        + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

#[test]
fn cli_pipeline_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.epochs = 1;
    cfg.probe_steps = 5;
    cfg.grad_every = 1;
    let path = dir.path().join("exp.cfg");
    cfg.save(&path).unwrap();
    let p = path.to_str().unwrap();

    let (code, out) = cli(&["train", "--config", p]);
    assert_eq!(code, 2, "missing dataset is a runtime failure: {out}");
    assert_eq!(cli(&["gen-data", "--config", p]).0, 0);
    let file = geoforget::data::read_dataset(&cfg.dataset).unwrap();
    assert!(file.bit_eq(&generate_dataset(&cfg.split()).unwrap()));

    let (code, out) = cli(&["train", "--config", p]);
    assert_eq!(code, 0, "{out}");
    for f in RUN_ARTIFACTS {
        assert!(cfg.output.join(f).is_file(), "{f}");
    }
    assert_eq!(cli(&["probe", "--config", p]).0, 0);
    assert!(cfg.output.join("probe_mse.csv").is_file());
    assert!(cfg.output.join("spectra_layer0.csv").is_file());
    assert_eq!(cli(&["spectra", "--config", p, "--set", "output=".to_string().as_str()]).0, 1);
    let (code, out) = cli(&["grads", "--config", p, "--set", "injection=film", "--set", "policy=L3", "--set", "encoder=conv"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("R_encoder"));
    assert!(cfg.output.join("grad_ratios.csv").is_file());

    let matrix_out = dir.path().join("matrix");
    let set_out = format!("output={}", matrix_out.display());
    let (code, out) = cli(&["matrix", "--config", p, "--axis", "encoder", "--set", &set_out]);
    assert_eq!(code, 0, "{out}");
    assert!(matrix_out.join("matrix.csv").is_file());
    let (code, out) = cli(&["report", "--dir", matrix_out.to_str().unwrap()]);
    assert_eq!(code, 0, "{out}");
    assert!(matrix_out.join("report.json").is_file());

    std::fs::write(&path, "colour = blue\n").unwrap();
    assert_eq!(cli(&["train", "--config", p]).0, 1);
    assert_eq!(cli(&["matrix", "--axis", "bogus"]).0, 1);
    assert_eq!(cli(&["train", "--set", "epochs=0"]).0, 1);
    assert_eq!(cli(&["no-such-command"]).0, 1);
}

#[test]
fn dataset_file_is_shared_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let file = generate_dataset(&cfg.split()).unwrap();
    write_dataset(&file, &cfg.dataset).unwrap();
    let (data, hash) = geoforget::harness::load_data(&cfg).unwrap();
    assert_eq!(hash, file.content_hash());
    assert_eq!(data.train.len(), 6);
}
