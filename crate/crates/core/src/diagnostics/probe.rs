use crate::autodiff::{AdamState, Graph, Tensor};
use crate::operators::{Binder, Conv, Group, ParamStore};
use crate::{Error, Result};

pub const PROBE_HIDDEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub steps: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// `Sigmoid(Conv(GELU(Conv(v))))` with 3×3 kernels, `W → 16 → 1` channels.
#[derive(Clone, Debug)]
pub struct ProbeDecoder {
    store: ParamStore,
    conv1: Conv,
    conv2: Conv,
}

impl ProbeDecoder {
    pub fn new(width: usize, seed: u64) -> Self {
        let mut store = ParamStore::new(seed);
        let conv1 = Conv::new(&mut store, "probe.conv1", Group::Projection, width, PROBE_HIDDEN, 3);
        let conv2 = Conv::new(&mut store, "probe.conv2", Group::Projection, PROBE_HIDDEN, 1, 3);
        Self { store, conv1, conv2 }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    fn forward(&self, p: &Binder<f32>, v: crate::autodiff::Var) -> Result<crate::autodiff::Var> {
        let g = p.graph();
        let h = g.gelu(self.conv1.apply(p, v, 1)?);
        Ok(g.sigmoid(self.conv2.apply(p, h, 1)?))
    }

    /// Mask estimate `[1, s, s]` for one activation field.
    pub fn decode(&self, v: &Tensor<f32>) -> Result<Tensor<f32>> {
        let g = Graph::new();
        let p = Binder::new(&g, &self.store, false);
        let out = self.forward(&p, g.constant(v.clone()))?;
        Ok(g.value(out))
    }

    /// Mean over samples of the per-cell squared error against the masks.
    pub fn mse(&self, fields: &[Tensor<f32>], masks: &[Tensor<f32>]) -> Result<f64> {
        let mut total = 0.0;
        for (v, m) in fields.iter().zip(masks) {
            let d = self.decode(v)?;
            total += d
                .data()
                .iter()
                .zip(m.data())
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                / m.len() as f64;
        }
        Ok(total / fields.len() as f64)
    }
}

pub struct ProbeOutcome {
    pub decoder: ProbeDecoder,
    /// full-batch training loss before each step and after the last
    pub train_curve: Vec<f64>,
    /// held-out mean squared error
    pub eps: f64,
}

/// Trains a fresh decoder on detached activations of one layer.
///
/// The last quarter of the samples (at least one) is held out for `eps`;
/// with a single sample the decoder is evaluated on its training sample.
pub fn train_probe(
    fields: &[Tensor<f32>],
    masks: &[Tensor<f32>],
    config: &ProbeConfig,
) -> Result<ProbeOutcome> {
    if fields.is_empty() {
        return Err(Error::Contract("probe needs at least one activation field".into()));
    }
    if fields.len() != masks.len() {
        return Err(Error::Contract(format!(
            "{} activation fields for {} masks",
            fields.len(),
            masks.len()
        )));
    }
    let width = fields[0].shape()[0];
    let n = fields.len();
    let held = if n == 1 { 0 } else { (n / 4).max(1) };
    let fit = n - held;
    let mut decoder = ProbeDecoder::new(width, config.seed);
    let mut adam = AdamState::new(config.lr);
    let mut train_curve = Vec::with_capacity(config.steps + 1);
    for _ in 0..config.steps {
        let g = Graph::new();
        let p = Binder::new(&g, &decoder.store, true);
        let mut losses = Vec::with_capacity(fit);
        for (v, m) in fields[..fit].iter().zip(masks) {
            let pred = decoder.forward(&p, g.constant(v.clone()))?;
            let target = g.constant(m.reshape(&g.shape(pred))?);
            let diff = g.sub(pred, target)?;
            losses.push(g.mean(g.mul(diff, diff)?));
        }
        let total = g.concat(
            &losses
                .iter()
                .map(|&l| g.reshape(l, &[1]))
                .collect::<Result<Vec<_>>>()?,
        )?;
        let loss = g.mean(total);
        let value = g.value(loss).item() as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("probe loss {value} at step {}", train_curve.len())));
        }
        train_curve.push(value);
        let grads = p.gradients(&g.backward(loss)?);
        let grads: Vec<Tensor<f32>> = grads
            .into_iter()
            .zip(decoder.store.params())
            .map(|(gr, param)| gr.unwrap_or_else(|| Tensor::zeros(param.value.shape())))
            .collect();
        let mut values = decoder.store.values();
        adam.step(&mut values, &grads)?;
        decoder.store.set_values(values)?;
    }
    train_curve.push(decoder.mse(&fields[..fit], &masks[..fit])?);
    let eps = if held == 0 {
        decoder.mse(fields, masks)?
    } else {
        decoder.mse(&fields[fit..], &masks[fit..])?
    };
    Ok(ProbeOutcome {
        decoder,
        train_curve,
        eps,
    })
}
