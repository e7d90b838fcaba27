use std::f64::consts::PI;

use geoforget::autodiff::{
    gradient_check, transfer_function, transient_response, Graph, Tensor, Var,
};
use geoforget::operators::{
    make_policy, Backbone, Binder, Checkpoint, EncoderKind, Group, Injection, InjectionKind,
    Layer, ModelConfig, OperatorModel, ParamStore, PolicyName,
};
use geoforget::Error;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(backbone: Backbone, s: usize) -> ModelConfig {
    ModelConfig {
        width: 8,
        modes: 3,
        heads: 2,
        poles: 2,
        ..ModelConfig::new(backbone, s)
    }
}

fn random_input(s: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poly = geoforget::geometry::sample_polygon(geoforget::geometry::Family::Pentagon, 0.1, seed)
        .unwrap();
    let geo = geoforget::geometry::encode_geometry(&poly, s).unwrap();
    let mut data: Vec<f32> = (0..s * s).map(|_| rng.gen_range(0.5..2.0)).collect();
    data.extend(geo.to_tensor().data());
    Tensor::new(&[5, s, s], data).unwrap()
}

fn zero_param(model: &mut OperatorModel, name: &str) {
    let id = model.params().find(name).unwrap_or_else(|| panic!("no {name}"));
    let shape = model.params().get(id).value.shape().to_vec();
    model.params_mut().set(id, Tensor::zeros(&shape)).unwrap();
}

fn set_param(model: &mut OperatorModel, name: &str, f: impl Fn(usize) -> f32) {
    let id = model.params().find(name).unwrap();
    let shape = model.params().get(id).value.shape().to_vec();
    model.params_mut().set(id, Tensor::from_fn(&shape, f)).unwrap();
}

/// Relative gradient error of `build` w.r.t. every parameter and the input.
fn model_grad_check<F>(store: &ParamStore, input: Tensor<f64>, build: F) -> f64
where
    F: Fn(&Binder<f64>, Var) -> geoforget::Result<Var>,
{
    let mut inputs: Vec<Tensor<f64>> = store.params().iter().map(|p| p.value.cast()).collect();
    inputs.push(input);
    let n = store.len();
    gradient_check(&inputs, 1e-3, |g, vars| {
        let b = Binder::with_vars(g, store, &vars[..n]);
        let out = build(&b, vars[n])?;
        // fixed random projection to a scalar
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let w = g.constant(Tensor::from_fn(&g.shape(out), |_| rng.gen_range(-1.0..1.0)));
        Ok(g.sum(g.mul(out, w)?))
    })
    .unwrap()
}

#[test]
fn lift_contract_and_gradient() {
    let mut model = OperatorModel::new(small(Backbone::Fno, 8)).unwrap();
    let g = Graph::<f32>::new();
    let p = Binder::new(&g, model.params(), false);
    let x = g.constant(random_input(8, 1));
    assert_eq!(g.shape(model.lift(&p, x).unwrap()), [8, 8, 8]);
    let bad = g.constant(Tensor::zeros(&[4, 8, 8]));
    assert!(matches!(model.lift(&p, bad), Err(Error::Shape { .. })));
    drop(p);

    let zero = g.constant(Tensor::zeros(&[5, 8, 8]));
    let p = Binder::new(&g, model.params(), false);
    assert!(g.value(model.lift(&p, zero).unwrap()).data().iter().all(|&v| v == 0.0));
    drop(p);

    set_param(&mut model, "lift.bias", |i| 0.1 * i as f32 - 0.3);
    let input = random_input(8, 2).cast::<f64>();
    let err = model_grad_check(model.params(), input, |b, x| model.lift(b, x));
    assert!(err < 1e-3, "{err}");
}

fn fno_layer(model: &OperatorModel) -> &geoforget::operators::FnoLayer {
    match &model.layers()[0] {
        Layer::Fno(l) => l,
        _ => unreachable!(),
    }
}

#[test]
fn fno_layer_reduces_to_gelu_without_spectral_path() {
    let mut model = OperatorModel::new(small(Backbone::Fno, 8)).unwrap();
    zero_param(&mut model, "layer0.spectral_re");
    zero_param(&mut model, "layer0.spectral_im");
    set_param(&mut model, "layer0.skip.weight", |i| (i / 8 == i % 8) as u8 as f32);
    let g = Graph::<f32>::new();
    let p = Binder::new(&g, model.params(), false);
    let v = g.constant(Tensor::from_fn(&[8, 8, 8], |i| ((i * 7) % 13) as f32 / 6.0 - 1.0));
    let y = g.value(fno_layer(&model).forward(&p, v).unwrap());
    let expect = g.value(g.gelu(v));
    assert!(y.max_abs_diff(&expect) < 1e-6);
}

#[test]
fn fno_layer_keeps_constant_fields_constant() {
    let mut model = OperatorModel::new(small(Backbone::Fno, 8)).unwrap();
    // identity on the (0,0) frequency of the first corner only
    set_param(&mut model, "layer0.spectral_re", |i| {
        let (corner_ab, o, c) = (i / 64, (i / 8) % 8, i % 8);
        (corner_ab == 0 && o == c) as u8 as f32
    });
    zero_param(&mut model, "layer0.spectral_im");
    zero_param(&mut model, "layer0.skip.weight");
    let g = Graph::<f32>::new();
    let p = Binder::new(&g, model.params(), false);
    let v = g.constant(Tensor::from_fn(&[8, 8, 8], |i| (i / 64) as f32 * 0.3 - 1.0));
    let y = g.value(fno_layer(&model).forward(&p, v).unwrap());
    for c in 0..8 {
        let plane = &y.data()[c * 64..(c + 1) * 64];
        assert!(plane.iter().all(|&x| (x - plane[0]).abs() < 1e-6));
        let expect = g.value(g.gelu(g.constant(Tensor::scalar(c as f32 * 0.3 - 1.0)))).item();
        assert!((plane[0] - expect).abs() < 1e-5);
    }
}

/// Direct O(S⁴) evaluation of the truncated spectral multiplier.
fn fno_oracle(v: &[f64], wr: &[f64], wi: &[f64], skip_w: &[f64], skip_b: &[f64], c: usize, s: usize, m: usize) -> Vec<f64> {
    let plane = s * s;
    let mut spec = vec![Complex::new(0.0, 0.0); c * plane];
    for ch in 0..c {
        for k1 in 0..s {
            for k2 in 0..s {
                let mut acc = Complex::new(0.0, 0.0);
                for n1 in 0..s {
                    for n2 in 0..s {
                        let ang = -2.0 * PI * ((k1 * n1 + k2 * n2) % s) as f64 / s as f64;
                        acc += v[ch * plane + n1 * s + n2] * Complex::from_polar(1.0, ang);
                    }
                }
                spec[ch * plane + k1 * s + k2] = acc;
            }
        }
    }
    let block = |k: usize| if k < m { Some((0, k)) } else if k >= s - m { Some((1, k - (s - m))) } else { None };
    let mut mixed = vec![Complex::new(0.0, 0.0); c * plane];
    for k1 in 0..s {
        for k2 in 0..s {
            let (Some((r, a)), Some((q, b))) = (block(k1), block(k2)) else { continue };
            let corner = r + 2 * q;
            for o in 0..c {
                let mut acc = Complex::new(0.0, 0.0);
                for i in 0..c {
                    let idx = (((corner * m + a) * m + b) * c + o) * c + i;
                    acc += Complex::new(wr[idx], wi[idx]) * spec[i * plane + k1 * s + k2];
                }
                mixed[o * plane + k1 * s + k2] = acc;
            }
        }
    }
    let mut out = vec![0.0; c * plane];
    for o in 0..c {
        for n1 in 0..s {
            for n2 in 0..s {
                let mut acc = Complex::new(0.0, 0.0);
                for k1 in 0..s {
                    for k2 in 0..s {
                        let ang = 2.0 * PI * ((k1 * n1 + k2 * n2) % s) as f64 / s as f64;
                        acc += mixed[o * plane + k1 * s + k2] * Complex::from_polar(1.0, ang);
                    }
                }
                let mut pre = acc.re / plane as f64 + skip_b[o];
                for i in 0..c {
                    pre += skip_w[o * c + i] * v[i * plane + n1 * s + n2];
                }
                out[o * plane + n1 * s + n2] = 0.5 * pre * (1.0 + libm::erf(pre / 2f64.sqrt()));
            }
        }
    }
    out
}

#[test]
fn fno_layer_matches_direct_dft() {
    let mut model = OperatorModel::new(small(Backbone::Fno, 8)).unwrap();
    set_param(&mut model, "layer0.skip.bias", |i| 0.05 * i as f32);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v = Tensor::from_fn(&[8, 8, 8], |_| rng.gen_range(-1.0f32..1.0));
    let g = Graph::<f32>::new();
    let p = Binder::new(&g, model.params(), false);
    let y = g.value(fno_layer(&model).forward(&p, g.constant(v.clone())).unwrap());
    let get = |n: &str| -> Vec<f64> {
        let id = model.params().find(n).unwrap();
        model.params().get(id).value.data().iter().map(|&x| x as f64).collect()
    };
    let vd: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    let oracle = fno_oracle(
        &vd,
        &get("layer0.spectral_re"),
        &get("layer0.spectral_im"),
        &get("layer0.skip.weight"),
        &get("layer0.skip.bias"),
        8,
        8,
        3,
    );
    let diff = y.data().iter().zip(&oracle).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-4, "{diff}");
}

#[test]
fn fno_modes_limit() {
    let cfg = ModelConfig { modes: 5, ..small(Backbone::Fno, 8) };
    assert!(matches!(OperatorModel::new(cfg), Err(Error::Config(_))));
}

#[test]
fn layer_gradients() {
    for backbone in [Backbone::Fno, Backbone::Attention, Backbone::Lno] {
        let model = OperatorModel::new(small(backbone, 8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = Tensor::from_fn(&[8, 8, 8], |_| rng.gen_range(-1.0f64..1.0));
        let layer = &model.layers()[0];
        let err = model_grad_check(model.params(), v, |b, x| layer.forward(b, x));
        assert!(err < 1e-3, "{backbone}: {err}");
    }
}

fn attention(model: &OperatorModel) -> &geoforget::operators::AttentionLayer {
    match &model.layers()[0] {
        Layer::Attention(l) => l,
        _ => unreachable!(),
    }
}

#[test]
fn attention_identity_when_branches_zeroed() {
    let mut model = OperatorModel::new(small(Backbone::Attention, 8)).unwrap();
    for n in ["attn_out.weight", "attn_out.bias", "mlp_out.weight", "mlp_out.bias"] {
        zero_param(&mut model, &format!("layer0.{n}"));
    }
    let g = Graph::<f32>::new();
    let p = Binder::new(&g, model.params(), false);
    let v = g.constant(random_input(8, 3).reshape(&[5, 8, 8]).unwrap());
    let lifted = model.lift(&p, v).unwrap();
    let y = attention(&model).forward(&p, lifted).unwrap();
    assert!(g.value(y).bit_eq(&g.value(lifted)));
}

#[test]
fn attention_rows_are_distributions() {
    let model = OperatorModel::new(small(Backbone::Attention, 8)).unwrap();
    let g = Graph::<f32>::new();
    let p = Binder::new(&g, model.params(), false);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = g.constant(Tensor::from_fn(&[8, 64], |_| rng.gen_range(-2.0f32..2.0)));
    for a in attention(&model).attention_maps(&p, x).unwrap() {
        let a = g.value(a);
        for row in a.data().chunks(64) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn attention_is_permutation_equivariant() {
    let model = OperatorModel::new(small(Backbone::Attention, 8)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (w, s) = (8, 4);
    let n = s * s;
    let v = Tensor::from_fn(&[w, s, s], |_| rng.gen_range(-1.0f32..1.0));
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let permuted = Tensor::from_fn(&[w, s, s], |k| v.data()[(k / n) * n + perm[k % n]]);
    let run = |x: &Tensor<f32>| {
        let g = Graph::<f32>::new();
        let p = Binder::new(&g, model.params(), false);
        g.value(attention(&model).forward(&p, g.constant(x.clone())).unwrap())
    };
    let (y, yp) = (run(&v), run(&permuted));
    for c in 0..w {
        for t in 0..n {
            let a = y.data()[c * n + perm[t]];
            let b = yp.data()[c * n + t];
            assert!((a - b).abs() < 1e-5);
        }
    }
}

#[test]
fn attention_rejects_bad_head_count() {
    let cfg = ModelConfig { heads: 3, ..small(Backbone::Attention, 8) };
    assert!(matches!(OperatorModel::new(cfg), Err(Error::Config(_))));
}

fn lno(model: &OperatorModel) -> &geoforget::operators::LnoLayer {
    match &model.layers()[0] {
        Layer::Lno(l) => l,
        _ => unreachable!(),
    }
}

#[test]
fn lno_without_residues_is_gelu_skip() {
    let mut model = OperatorModel::new(small(Backbone::Lno, 8)).unwrap();
    for ax in ["x", "y"] {
        zero_param(&mut model, &format!("layer0.{ax}.residue_re"));
        zero_param(&mut model, &format!("layer0.{ax}.residue_im"));
    }
    let g = Graph::<f32>::new();
    let p = Binder::new(&g, model.params(), false);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = g.constant(Tensor::from_fn(&[8, 8, 8], |_| rng.gen_range(-1.0f32..1.0)));
    let layer = lno(&model);
    let y = g.value(layer.forward(&p, v).unwrap());
    let expect = g.value(g.gelu(layer.skip.apply(&p, v).unwrap()));
    assert!(y.max_abs_diff(&expect) < 1e-6);
}

#[test]
fn lno_poles_stay_stable() {
    let mut model = OperatorModel::new(small(Backbone::Lno, 8)).unwrap();
    set_param(&mut model, "layer0.x.pole_raw", |i| [-30.0, 5.0][i]);
    let g = Graph::<f32>::new();
    let p = Binder::new(&g, model.params(), false);
    let (re, _) = geoforget::operators::LnoLayer::poles(&p, &lno(&model).axes[0]);
    assert!(g.value(re).data().iter().all(|&r| r <= -0.01));
}

#[test]
fn transfer_function_and_transient_examples() {
    let one = [Complex::new(1.0f64, 0.0)];
    let mu = [Complex::new(-1.0f64, 0.0)];
    for f in 0..4 {
        let w = 2.0 * PI * f as f64;
        let h = transfer_function(&one, &mu, Complex::new(0.0, w));
        let expect = Complex::new(1.0, 0.0) / Complex::new(1.0, w);
        assert!((h - expect).norm() < 1e-12);
    }
    let times: Vec<f64> = (0..8).map(|j| j as f64 / 8.0).collect();
    let tr = transient_response(&one, &mu, &times);
    for (v, t) in tr.iter().zip(&times) {
        assert!((v.re - (-t).exp()).abs() < 1e-6 && v.im.abs() < 1e-12);
    }
}

#[test]
fn laplace_single_pole_response_to_cosine() {
    // one channel, one row, one pole μ = −1 with residue 1, input cos(2π f t)
    let (len, f, modes) = (16usize, 2usize, 4usize);
    let w = 2.0 * PI * f as f64;
    let t: Vec<f64> = (0..len).map(|j| j as f64 / len as f64).collect();
    let g = Graph::<f64>::new();
    let v = g.constant(Tensor::new(&[1, 1, len], t.iter().map(|&t| (w * t).cos()).collect()).unwrap());
    let c = |x: f64| g.constant(Tensor::new(&[1, 1, 1], vec![x]).unwrap());
    let p = |x: f64| g.constant(Tensor::new(&[1], vec![x]).unwrap());
    let y = g.value(g.laplace_axis(v, (c(1.0), c(0.0)), (p(-1.0), p(0.0)), modes).unwrap());
    let mu = Complex::new(-1.0, 0.0);
    let h = Complex::new(1.0, 0.0) / (Complex::new(0.0, w) - mu);
    // both ±f carry coefficient 1/2
    let gamma = 0.5 / (mu - Complex::new(0.0, w)) + 0.5 / (mu + Complex::new(0.0, w));
    for (j, &tj) in t.iter().enumerate() {
        let steady = (h * Complex::from_polar(1.0, w * tj)).re;
        let transient = (gamma * (mu * tj).exp()).re;
        assert!((y.data()[j] - steady - transient).abs() < 1e-12);
    }
}

#[test]
fn encoders_preserve_extent() {
    for kind in [EncoderKind::Conv, EncoderKind::BranchTrunk] {
        let cfg = small(Backbone::Fno, 16)
            .with_memory(InjectionKind::Film, kind, PolicyName::Full)
            .unwrap();
        let model = OperatorModel::new(cfg).unwrap();
        let g = Graph::<f32>::new();
        let p = Binder::new(&g, model.params(), false);
        let x = g.constant(random_input(16, 5));
        let m = model.memory(&p, x).unwrap().unwrap();
        assert_eq!(g.shape(m), [8, 16, 16]);
    }
}

#[test]
fn branch_trunk_zero_code_gives_bias_only() {
    let cfg = small(Backbone::Fno, 8)
        .with_memory(InjectionKind::Additive, EncoderKind::BranchTrunk, PolicyName::Full)
        .unwrap();
    let mut model = OperatorModel::new(cfg).unwrap();
    zero_param(&mut model, "encoder.branch.out.weight");
    zero_param(&mut model, "encoder.branch.out.bias");
    set_param(&mut model, "encoder.head.bias", |i| i as f32);
    let g = Graph::<f32>::new();
    let p = Binder::new(&g, model.params(), false);
    let x = g.constant(random_input(8, 6));
    let m = g.value(model.memory(&p, x).unwrap().unwrap());
    for (k, v) in m.data().iter().enumerate() {
        assert_eq!(*v, (k / 64) as f32);
    }
}

#[test]
fn encoder_gradients() {
    for kind in [EncoderKind::Conv, EncoderKind::BranchTrunk] {
        let cfg = small(Backbone::Fno, 16)
            .with_memory(InjectionKind::Film, kind, PolicyName::Full)
            .unwrap();
        let model = OperatorModel::new(cfg).unwrap();
        // the gradient check perturbs every parameter; keep only the encoder in the store
        let mut store = ParamStore::new(0);
        let encoder = geoforget::operators::Encoder::new(kind, &mut store, 16, 8).unwrap();
        assert!(store.params().iter().all(|p| p.group == Group::Encoder));
        assert!(model.encoder().is_some());
        let geo = random_input(16, 7).cast::<f64>();
        let geo = Tensor::new(&[4, 16, 16], geo.data()[256..].to_vec()).unwrap();
        let err = model_grad_check(&store, geo, |b, x| encoder.forward(b, x));
        assert!(err < 1e-3, "{kind}: {err}");
    }
}

#[test]
fn injections_start_as_identity() {
    for kind in [InjectionKind::Film, InjectionKind::Additive, InjectionKind::Concat] {
        let mut store = ParamStore::new(3);
        let inj = Injection::new(kind, &mut store, 0, 8).unwrap();
        let g = Graph::<f32>::new();
        let p = Binder::new(&g, &store, true);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = g.constant(Tensor::from_fn(&[8, 4, 4], |_| rng.gen_range(0.1f32..1.0)));
        let m = g.constant(Tensor::from_fn(&[8, 4, 4], |_| rng.gen_range(-1.0f32..1.0)));
        let out = inj.apply(&p, z, m).unwrap();
        assert!(g.value(out).bit_eq(&g.value(z)), "{kind}");
        let bad = g.constant(Tensor::zeros(&[8, 2, 2]));
        assert!(matches!(inj.apply(&p, z, bad), Err(Error::Shape { .. })));
    }
}

#[test]
fn injection_gradients() {
    for kind in [InjectionKind::Film, InjectionKind::Additive, InjectionKind::Concat] {
        let mut store = ParamStore::new(3);
        let inj = Injection::new(kind, &mut store, 0, 4).unwrap();
        // move away from the identity so every weight path is exercised
        let vals: Vec<_> = store
            .params()
            .iter()
            .enumerate()
            .map(|(k, p)| Tensor::from_fn(p.value.shape(), |i| ((i * 31 + k * 7) % 11) as f32 / 10.0 - 0.5))
            .collect();
        store.set_values(vals).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let zm = Tensor::from_fn(&[8, 4, 4], |_| rng.gen_range(-1.0f64..1.0));
        let err = model_grad_check(&store, zm, |b, x| {
            let g = b.graph();
            inj.apply(b, g.narrow(x, 0, 4)?, g.narrow(x, 4, 4)?)
        });
        assert!(err < 1e-3, "{kind}: {err}");
    }
}

#[test]
fn policy_none_never_runs_encoder() {
    let cfg = ModelConfig {
        encoder: EncoderKind::Conv,
        ..small(Backbone::Fno, 16)
    };
    let model = OperatorModel::new(cfg).unwrap();
    let g = Graph::<f32>::new();
    let p = Binder::new(&g, model.params(), true);
    let x = g.constant(random_input(16, 1));
    let out = model.forward(&p, x, false).unwrap();
    assert_eq!(model.encoder_evaluations(), 0);
    let loss = g.sum(out.prediction);
    let grads = p.gradients(&g.backward(loss).unwrap());
    for (param, grad) in model.params().params().iter().zip(&grads) {
        assert_eq!(grad.is_some(), param.group != Group::Encoder, "{}", param.name);
    }
}

#[test]
fn encoder_runs_once_per_forward() {
    let cfg = small(Backbone::Fno, 16)
        .with_memory(InjectionKind::Film, EncoderKind::Conv, PolicyName::Full)
        .unwrap();
    let model = OperatorModel::new(cfg).unwrap();
    model.predict(&random_input(16, 2)).unwrap();
    assert_eq!(model.encoder_evaluations(), 1);
}

#[test]
fn identity_film_matches_plain_forward() {
    for backbone in [Backbone::Fno, Backbone::Attention, Backbone::Lno] {
        let plain = OperatorModel::new(small(backbone, 16)).unwrap();
        let cfg = small(backbone, 16)
            .with_memory(InjectionKind::Film, EncoderKind::Conv, PolicyName::Full)
            .unwrap();
        let film = OperatorModel::new(cfg).unwrap();
        let x = random_input(16, 3);
        assert!(plain.predict(&x).unwrap().bit_eq(&film.predict(&x).unwrap()), "{backbone}");
    }
}

#[test]
fn capture_returns_every_layer() {
    let model = OperatorModel::new(small(Backbone::Lno, 16)).unwrap();
    let (pred, acts) = model.capture(&random_input(16, 4)).unwrap();
    assert_eq!(acts.len(), 5);
    assert!(acts.iter().all(|a| a.shape() == [8, 16, 16]));
    assert_eq!(pred.shape(), [1, 16, 16]);
    let input = random_input(16, 4);
    let mask = &input.data()[256..512];
    for (p, m) in pred.data().iter().zip(mask) {
        if *m == 0.0 {
            assert_eq!(*p, 0.0);
        }
    }
}

#[test]
fn groups_partition_parameters() {
    let cfg = small(Backbone::Attention, 16)
        .with_memory(InjectionKind::Concat, EncoderKind::BranchTrunk, PolicyName::Late)
        .unwrap();
    let model = OperatorModel::new(cfg).unwrap();
    let groups = model.params().groups();
    assert_eq!(
        groups,
        [Group::Lift, Group::Layer(0), Group::Layer(1), Group::Layer(2), Group::Layer(3), Group::Projection, Group::Encoder]
    );
    let total: usize = groups
        .iter()
        .map(|g| model.params().params().iter().filter(|p| p.group == *g).map(|p| p.value.len()).sum::<usize>())
        .sum();
    assert_eq!(total, model.params().count());
}

#[test]
fn shared_parameters_initialize_identically() {
    let a = OperatorModel::new(small(Backbone::Fno, 16)).unwrap();
    let cfg = small(Backbone::Fno, 16)
        .with_memory(InjectionKind::Additive, EncoderKind::Conv, PolicyName::Single(2))
        .unwrap();
    let b = OperatorModel::new(cfg).unwrap();
    for p in a.params().params() {
        let q = b.params().get(b.params().find(&p.name).unwrap());
        assert!(p.value.bit_eq(&q.value), "{}", p.name);
    }
}

#[test]
fn checkpoint_round_trip() {
    let cfg = ModelConfig {
        policy: make_policy(PolicyName::Early, 4).unwrap(),
        injection: InjectionKind::Film,
        encoder: EncoderKind::BranchTrunk,
        ..small(Backbone::Lno, 16)
    };
    let model = OperatorModel::new(cfg).unwrap();
    let bytes = Checkpoint::to_bytes(&model);
    assert_eq!(&bytes[..4], b"GFMC");
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.config().policy, model.config().policy);
    assert_eq!(Checkpoint::to_bytes(&back), bytes);
    let x = random_input(16, 8);
    assert!(back.predict(&x).unwrap().bit_eq(&model.predict(&x).unwrap()));

    let mut bad = bytes.clone();
    bad[1] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 1]),
        Err(Error::Format { .. })
    ));
}
