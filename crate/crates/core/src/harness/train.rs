use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, Graph, Tensor};
use crate::data::{DatasetFile, Split, SplitConfig, IN_CHANNELS};
use crate::operators::{Binder, OperatorModel};
use crate::{Error, Result};

use super::metrics::{relative_l2, MetricsRecord};

/// One sample ready for the model.
#[derive(Clone, Debug)]
pub struct Example {
    /// `[5, s, s]` with `a` standardized
    pub input: Tensor<f32>,
    /// `[1, s, s]`
    pub target: Tensor<f32>,
    /// `[1, s, s]`
    pub mask: Tensor<f32>,
}

#[derive(Clone, Debug)]
pub struct PreparedData {
    pub resolution: usize,
    /// train-set mean of `a`; every input's coefficient channel is divided by it
    pub coefficient_scale: f32,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

/// Splits a dataset file as laid out by `split` and standardizes `a`.
pub fn prepare(file: &DatasetFile, split: &SplitConfig) -> Result<PreparedData> {
    if file.samples.len() != split.total() {
        return Err(Error::Config(format!(
            "dataset holds {} samples, split expects {}",
            file.samples.len(),
            split.total()
        )));
    }
    if file.resolution != split.resolution {
        return Err(Error::Config(format!(
            "dataset resolution {} differs from configured {}",
            file.resolution, split.resolution
        )));
    }
    let s = file.resolution;
    let n = s * s;
    let train_range = 0..split.train;
    let mut sum = 0.0f64;
    for rec in &file.samples[train_range] {
        sum += rec.coefficient().iter().map(|&v| v as f64).sum::<f64>();
    }
    let scale = (sum / (split.train * n) as f64) as f32;
    let to_example = |i: usize| -> Result<Example> {
        let rec = &file.samples[i];
        let mut input = rec.input.clone();
        input[..n].iter_mut().for_each(|v| *v /= scale);
        Ok(Example {
            input: Tensor::new(&[IN_CHANNELS, s, s], input)?,
            target: Tensor::new(&[1, s, s], rec.target.clone())?,
            mask: Tensor::new(&[1, s, s], rec.mask().to_vec())?,
        })
    };
    let collect = |r: std::ops::Range<usize>| r.map(to_example).collect::<Result<Vec<_>>>();
    Ok(PreparedData {
        resolution: s,
        coefficient_scale: scale,
        train: collect(split.range(Split::Train))?,
        val: collect(split.range(Split::Val))?,
        test: collect(split.range(Split::Test))?,
    })
}

/// Mean per-sample relative L2 error of `model` on `examples`.
pub fn evaluate(model: &OperatorModel, examples: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        total += relative_l2(&model.predict(&ex.input)?, &ex.target, &ex.mask)?;
    }
    Ok(total / examples.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// drives the per-epoch sample order
    pub seed: u64,
}

/// State handed to a step observer after gradients are formed and before
/// the optimizer update.
pub struct StepInfo<'a> {
    /// zero-based optimizer step
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub model: &'a OperatorModel,
    /// batch-mean gradient per parameter, aligned with the store
    pub gradients: &'a [Option<Tensor<f32>>],
}

pub type Observer<'o> = &'o mut dyn FnMut(&StepInfo) -> Result<()>;

pub struct TrainOutcome {
    /// parameters from the epoch with the lowest validation error
    pub model: OperatorModel,
    pub metrics: Vec<MetricsRecord>,
    pub best_epoch: usize,
    pub test_rel_l2: f64,
    pub steps: usize,
}

/// Masked mean squared error of one sample with its gradients.
fn sample_loss(
    model: &OperatorModel,
    ex: &Example,
) -> Result<(f64, Vec<Option<Tensor<f32>>>)> {
    let g = Graph::new();
    let p = Binder::new(&g, model.params(), true);
    let out = model.forward(&p, g.constant(ex.input.clone()), false)?;
    let target = g.constant(ex.target.clone());
    let diff = g.sub(out.prediction, target)?;
    let interior = ex.mask.data().iter().filter(|&&m| m > 0.5).count().max(1);
    let loss = g.scale(g.sum(g.mul(diff, diff)?), 1.0 / interior as f32);
    let value = g.value(loss).item() as f64;
    let grads = p.gradients(&g.backward(loss)?);
    Ok((value, grads))
}

/// Adam on the masked MSE with per-epoch validation; keeps the best epoch.
pub fn train(
    mut model: OperatorModel,
    data: &PreparedData,
    options: &TrainOptions,
    mut observer: Option<Observer>,
) -> Result<TrainOutcome> {
    if data.train.is_empty() || data.val.is_empty() || data.test.is_empty() {
        return Err(Error::Config("training needs non-empty train, val and test splits".into()));
    }
    if options.epochs == 0 || options.batch_size == 0 {
        return Err(Error::Config("epochs and batch size must be positive".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    rng.set_stream(7);
    let mut adam = AdamState::new(options.lr);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut metrics = Vec::with_capacity(options.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor<f32>>)> = None;
    let mut step = 0;
    let mut per_sample = vec![0.0f64; data.train.len()];
    for epoch in 1..=options.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(options.batch_size) {
            let mut acc: Vec<Tensor<f32>> = model
                .params()
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect();
            let mut reached = vec![false; acc.len()];
            let mut batch_loss = 0.0;
            for &i in batch {
                let (loss, grads) = sample_loss(&model, &data.train[i])?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("training loss {loss} at step {step}")));
                }
                per_sample[i] = loss;
                batch_loss += loss;
                for ((a, g), r) in acc.iter_mut().zip(grads).zip(reached.iter_mut()) {
                    if let Some(g) = g {
                        *r = true;
                        a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                    }
                }
            }
            let inv = 1.0 / batch.len() as f32;
            acc.iter_mut().for_each(|a| a.data_mut().iter_mut().for_each(|x| *x *= inv));
            if acc.iter().any(|a| !a.all_finite()) {
                return Err(Error::NonFinite(format!("gradient at step {step}")));
            }
            if let Some(obs) = observer.as_mut() {
                let shown: Vec<Option<Tensor<f32>>> = acc
                    .iter()
                    .zip(&reached)
                    .map(|(a, &r)| r.then(|| a.clone()))
                    .collect();
                obs(&StepInfo {
                    step,
                    epoch,
                    loss: batch_loss / batch.len() as f64,
                    model: &model,
                    gradients: &shown,
                })?;
            }
            let mut values = model.params().values();
            adam.step(&mut values, &acc)?;
            model.params_mut().set_values(values)?;
            step += 1;
        }
        let train_loss = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        let val = evaluate(&model, &data.val)?;
        if !val.is_finite() {
            return Err(Error::NonFinite(format!("validation error {val} after step {step}")));
        }
        if best.as_ref().is_none_or(|(b, _, _)| val < *b) {
            best = Some((val, epoch, model.params().values()));
        }
        metrics.push(MetricsRecord {
            epoch,
            train_loss,
            val_rel_l2: val,
            test_rel_l2: None,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let (_, best_epoch, values) = best.expect("at least one epoch");
    model.params_mut().set_values(values)?;
    let test = evaluate(&model, &data.test)?;
    let last = metrics.last_mut().unwrap();
    last.test_rel_l2 = Some(test);
    last.seconds = start.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        model,
        metrics,
        best_epoch,
        test_rel_l2: test,
        steps: step,
    })
}
