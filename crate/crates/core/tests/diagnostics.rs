use std::f64::consts::PI;

use geoforget::autodiff::Tensor;
use geoforget::data::{generate_dataset, SplitConfig};
use geoforget::diagnostics::{
    gradient_csv, gradient_ratio, probe_csv, run_forgetting_study, run_shortcut_study,
    spectral_profile, spectrum_csv, train_probe, write_forgetting, write_gradients,
    GradientReport, ProbeConfig,
};
use geoforget::geometry::{encode_geometry, sample_polygon, Family};
use geoforget::harness::{prepare, PreparedData, TrainOptions};
use geoforget::operators::{
    make_policy, Backbone, EncoderKind, Group, InjectionKind, ModelConfig, OperatorModel,
    PolicyName,
};
use geoforget::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn masks(n: usize, s: usize) -> Vec<Tensor<f32>> {
    (0..n)
        .map(|i| {
            let family = [Family::Pentagon, Family::Hexagon, Family::Octagon][i % 3];
            let poly = sample_polygon(family, 0.25, 100 + i as u64).unwrap();
            let enc = encode_geometry(&poly, s).unwrap();
            Tensor::new(&[1, s, s], enc.mask.iter().map(|&m| m as f32).collect()).unwrap()
        })
        .collect()
}

fn naive_profile(field: &[f64], s: usize) -> Vec<f64> {
    let mut rho = vec![0.0; s / 2 + 1];
    let freq = |k: usize| if k <= s / 2 { k as f64 } else { k as f64 - s as f64 };
    for kr in 0..s {
        for kc in 0..s {
            let (mut re, mut im) = (0.0, 0.0);
            for r in 0..s {
                for c in 0..s {
                    let th = -2.0 * PI * ((kr * r + kc * c) as f64) / s as f64;
                    re += field[r * s + c] * th.cos();
                    im += field[r * s + c] * th.sin();
                }
            }
            let bin = (freq(kr).hypot(freq(kc)).floor() as usize).min(s / 2);
            rho[bin] += re.hypot(im);
        }
    }
    let total: f64 = rho.iter().sum();
    rho.iter().map(|x| x / total).collect()
}

fn mask_plus_noise(ms: &[Tensor<f32>], seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ms.iter()
        .map(|m| {
            let mut data = m.data().to_vec();
            data.extend((0..3 * m.len()).map(|_| rng.gen_range(-1.0f32..1.0)));
            let s = m.shape()[1];
            Tensor::new(&[4, s, s], data).unwrap()
        })
        .collect()
}

#[test]
fn probe_recovers_mask_carried_as_channel() {
    let ms = masks(24, 16);
    let fields = mask_plus_noise(&ms, 3);
    // 300 steps at lr 1e-3 stop near 1e-2 (sigmoid saturation is slow), so
    // copying is demonstrated with a larger step size
    let fast = ProbeConfig {
        lr: 1e-2,
        ..ProbeConfig::default()
    };
    let out = train_probe(&fields, &ms, &fast).unwrap();
    assert!(out.eps < 1e-3, "eps {}", out.eps);
    let slow = train_probe(&fields, &ms, &ProbeConfig::default()).unwrap();
    assert!(slow.eps > out.eps);
}

#[test]
fn probe_cannot_beat_prior_on_noise() {
    let s = 16;
    let ms = masks(12, s);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let fields: Vec<Tensor<f32>> = (0..ms.len())
        .map(|_| Tensor::from_fn(&[4, s, s], |_| rng.gen_range(-1.0f32..1.0)))
        .collect();
    let out = train_probe(&fields, &ms, &ProbeConfig::default()).unwrap();
    // held-out masks are the last quarter
    let held = &ms[9..];
    let p = held.iter().map(|m| m.sum() as f64).sum::<f64>() / (held.len() * s * s) as f64;
    assert!(out.eps >= 0.5 * p * (1.0 - p), "eps {} vs p {p}", out.eps);
}

#[test]
fn probe_training_loss_decreases_over_windows() {
    let s = 16;
    let ms = masks(8, s);
    let fields: Vec<Tensor<f32>> = ms
        .iter()
        .map(|m| Tensor::from_fn(&[2, s, s], |i| m.data()[i % (s * s)] * 0.5 + 0.1))
        .collect();
    let out = train_probe(&fields, &ms, &ProbeConfig::default()).unwrap();
    assert_eq!(out.train_curve.len(), 301);
    let windows: Vec<f64> = out.train_curve[..300]
        .chunks(10)
        .map(|w| w.iter().sum::<f64>() / 10.0)
        .collect();
    for pair in windows.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-6, "{windows:?}");
    }
}

#[test]
fn probe_rejects_empty_and_misaligned_inputs() {
    let err = train_probe(&[], &[], &ProbeConfig::default()).err().unwrap();
    assert!(matches!(err, Error::Contract(_)));
    let ms = masks(2, 8);
    let err = train_probe(&ms[..1], &ms, &ProbeConfig::default()).err().unwrap();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn probe_is_deterministic() {
    let s = 8;
    let ms = masks(4, s);
    let cfg = ProbeConfig {
        steps: 20,
        ..Default::default()
    };
    let a = train_probe(&ms, &ms, &cfg).unwrap();
    let b = train_probe(&ms, &ms, &cfg).unwrap();
    assert_eq!(a.eps.to_bits(), b.eps.to_bits());
    assert_eq!(a.train_curve, b.train_curve);
}

#[test]
fn spectrum_examples() {
    let s = 32;
    let constant = Tensor::full(&[3, s, s], 2.5f32);
    let p = spectral_profile(&constant).unwrap();
    assert!((p.rho[0] - 1.0).abs() < 1e-12);
    assert_eq!(p.rho.len(), s / 2 + 1);

    let wave = Tensor::from_fn(&[1, s, s], |i| {
        let x = ((i % s) as f64 + 0.5) / s as f64;
        (2.0 * PI * 8.0 * x).cos() as f32
    });
    let p = spectral_profile(&wave).unwrap();
    assert!(p.rho[8] > 1.0 - 1e-5, "{:?}", p.rho);

    let err = spectral_profile(&Tensor::zeros(&[2, s, s])).err().unwrap();
    assert!(matches!(err, Error::Degenerate(_)));
    assert!(spectral_profile(&Tensor::<f32>::zeros(&[s, s])).is_err());
}

#[test]
fn spectrum_matches_direct_dft_binning() {
    let s = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let field: Vec<f64> = (0..s * s).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let t = Tensor::new(&[1, s, s], field.iter().map(|&v| v as f32).collect()).unwrap();
    let got = spectral_profile(&t).unwrap().rho;
    let field32: Vec<f64> = t.data().iter().map(|&v| v as f64).collect();
    let want = naive_profile(&field32, s);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-9, "{got:?} vs {want:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spectrum_is_a_distribution(seed in any::<u64>(), c in 1usize..4, log_s in 3u32..6) {
        let s = 1usize << log_s;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::from_fn(&[c, s, s], |_| rng.gen_range(-3.0f32..3.0));
        let p = spectral_profile(&t).unwrap();
        prop_assert!((p.rho.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        prop_assert!(p.rho.iter().all(|&r| r >= 0.0));
        // the profile ignores overall amplitude
        let q = spectral_profile(&t.map(|x| x * 7.0)).unwrap();
        for (a, b) in p.rho.iter().zip(&q.rho) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_ratios_are_scale_invariant(
        norms in proptest::collection::vec(0.0f64..10.0, 1..8),
        enc in 0.0f64..5.0,
        c in 1e-3f64..1e3,
    ) {
        prop_assume!(norms.iter().sum::<f64>() > 1e-9);
        let a = GradientReport::from_norms(0, &norms, enc).unwrap();
        let scaled: Vec<f64> = norms.iter().map(|n| n * c).collect();
        let b = GradientReport::from_norms(0, &scaled, enc * c).unwrap();
        prop_assert!((a.ratios.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        for (x, y) in a.ratios.iter().zip(&b.ratios) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert!((a.encoder - b.encoder).abs() < 1e-9);
    }
}

#[test]
fn gradient_ratio_examples() {
    let r = GradientReport::from_norms(0, &[4.2], 0.0).unwrap();
    assert_eq!(r.ratios, vec![1.0]);
    let r = GradientReport::from_norms(0, &[3.0, 1.0], 2.0).unwrap();
    assert_eq!(r.ratios, vec![0.75, 0.25]);
    assert_eq!(r.encoder, 0.5);
    let err = GradientReport::from_norms(5, &[0.0, 0.0], 1.0).err().unwrap();
    assert!(matches!(err, Error::Degenerate(_)));
}

#[test]
fn gradient_ratio_groups_model_parameters() {
    let cfg = ModelConfig {
        width: 4,
        modes: 2,
        layers: 2,
        policy: make_policy(PolicyName::None, 2).unwrap(),
        ..ModelConfig::new(Backbone::Fno, 8)
    };
    let model = OperatorModel::new(cfg).unwrap();
    let store = model.params();
    // gradient 1 for layer 0 entries, 2 for layer 1, 5 for everything else
    let grads: Vec<Option<Tensor<f32>>> = store
        .params()
        .iter()
        .map(|p| {
            let v = match p.group {
                Group::Layer(0) => 1.0,
                Group::Layer(1) => 2.0,
                _ => 5.0,
            };
            Some(Tensor::full(p.value.shape(), v))
        })
        .collect();
    let count = |l: usize| -> f64 {
        store
            .params()
            .iter()
            .filter(|p| p.group == Group::Layer(l))
            .map(|p| p.value.len() as f64)
            .sum()
    };
    let (n0, n1) = (count(0).sqrt(), 2.0 * count(1).sqrt());
    let r = gradient_ratio(store, 2, &grads, 7).unwrap();
    assert_eq!(r.step, 7);
    assert!((r.ratios[0] - n0 / (n0 + n1)).abs() < 1e-12);
    assert!((r.ratios[1] - n1 / (n0 + n1)).abs() < 1e-12);
    assert_eq!(r.encoder, 0.0);
    let none: Vec<Option<Tensor<f32>>> = vec![None; grads.len()];
    assert!(matches!(gradient_ratio(store, 2, &none, 0), Err(Error::Degenerate(_))));
}

fn tiny_data() -> PreparedData {
    let split = SplitConfig {
        train: 8,
        val: 2,
        test: 8,
        resolution: 16,
        seed: 5,
        jitter: 0.2,
    };
    prepare(&generate_dataset(&split).unwrap(), &split).unwrap()
}

fn tiny_model(memory: bool) -> ModelConfig {
    let cfg = ModelConfig {
        width: 8,
        modes: 4,
        ..ModelConfig::new(Backbone::Fno, 16)
    };
    if memory {
        cfg.with_memory(InjectionKind::Film, EncoderKind::Conv, PolicyName::Full)
            .unwrap()
    } else {
        cfg
    }
}

#[test]
fn forgetting_study_reports_each_representation() {
    let data = tiny_data();
    let probe = ProbeConfig {
        steps: 30,
        ..Default::default()
    };
    let plain = OperatorModel::new(tiny_model(false)).unwrap();
    let report = run_forgetting_study(&plain, &data.test, &probe).unwrap();
    assert_eq!(report.labels, vec!["lifting", "L0", "L1", "L2"]);
    assert_eq!(report.eps.len(), 4);
    assert_eq!(report.spectra.len(), 4);
    assert!(report.eps.iter().all(|e| e.is_finite() && *e >= 0.0));

    let again = run_forgetting_study(&plain, &data.test, &probe).unwrap();
    assert_eq!(report, again);

    // identity-initialized film leaves every representation bit-unchanged
    let film = OperatorModel::new(tiny_model(true)).unwrap();
    let with_film = run_forgetting_study(&film, &data.test, &probe).unwrap();
    assert_eq!(report.eps, with_film.eps);

    let dir = tempfile::tempdir().unwrap();
    write_forgetting(dir.path(), &report).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("probe_mse.csv")).unwrap();
    assert_eq!(csv, probe_csv(&report));
    assert!(csv.starts_with("layer,eps\nlifting,"));
    assert_eq!(csv.lines().count(), 5);
    for l in 0..4 {
        let spec = std::fs::read_to_string(dir.path().join(format!("spectra_layer{l}.csv"))).unwrap();
        assert_eq!(spec, spectrum_csv(&report.spectra[l]));
        assert_eq!(spec.lines().count(), 1 + 9);
    }
    assert!(matches!(
        run_forgetting_study(&plain, &[], &probe),
        Err(Error::Contract(_))
    ));
}

#[test]
fn shortcut_study_logs_on_schedule() {
    let data = tiny_data();
    let model = OperatorModel::new(tiny_model(true)).unwrap();
    let options = TrainOptions {
        epochs: 6,
        batch_size: 2,
        lr: 1e-3,
        seed: 0,
    };
    let study = run_shortcut_study(model, &data, &options, 5).unwrap();
    // 4 steps per epoch, 24 steps, logged at 0, 5, …, 20
    assert_eq!(study.outcome.steps, 24);
    let steps: Vec<usize> = study.reports.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![0, 5, 10, 15, 20]);
    for r in &study.reports {
        assert!((r.ratios.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    }
    // film starts at the identity, so the encoder first receives gradient after one update
    assert_eq!(study.reports[0].encoder, 0.0);
    assert!(study.reports[1..].iter().all(|r| r.encoder > 0.0));
    // final quarter of 5 logs is the last 2
    let tail = &study.reports[3..];
    for l in 0..4 {
        let mean = (tail[0].ratios[l] + tail[1].ratios[l]) / 2.0;
        assert!((study.final_quarter[l] - mean).abs() < 1e-12);
    }
    let dir = tempfile::tempdir().unwrap();
    write_gradients(dir.path(), &study.reports).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("grad_ratios.csv")).unwrap();
    assert_eq!(csv, gradient_csv(&study.reports));
    assert!(csv.starts_with("step,R_0,R_1,R_2,R_3,R_encoder\n0,"));
    assert_eq!(csv.lines().count(), 6);
}
