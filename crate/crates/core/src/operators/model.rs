use std::sync::atomic::{AtomicUsize, Ordering};

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::data::IN_CHANNELS;
use crate::{Error, Result};

use super::config::{Backbone, ModelConfig};
use super::encoder::Encoder;
use super::inject::Injection;
use super::layers::{AttentionLayer, FnoLayer, Layer, Linear, LnoLayer};
use super::params::{Binder, Group, ParamStore};

/// Neural operator with optional geometry memory injection.
#[derive(Debug)]
pub struct OperatorModel {
    config: ModelConfig,
    store: ParamStore,
    pub(crate) lift: Linear,
    pub(crate) layers: Vec<Layer>,
    pub(crate) injections: Vec<Option<Injection>>,
    pub(crate) encoder: Option<Encoder>,
    pub(crate) projection: Linear,
    encoder_evaluations: AtomicUsize,
}

impl Clone for OperatorModel {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            store: self.store.clone(),
            lift: self.lift.clone(),
            layers: self.layers.clone(),
            injections: self.injections.clone(),
            encoder: self.encoder.clone(),
            projection: self.projection.clone(),
            encoder_evaluations: AtomicUsize::new(0),
        }
    }
}

/// Result of one forward pass.
pub struct ForwardOutput {
    /// `[1, s, s]`, zero outside the mask
    pub prediction: Var,
    /// `V_0..V_L` when capture was requested, detached
    pub activations: Vec<Var>,
}

impl OperatorModel {
    /// Builds the layer stack and initializes every parameter from
    /// `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(config.seed);
        let w = config.width;
        let lift = Linear::new(&mut store, "lift", Group::Lift, IN_CHANNELS, w);
        let mut layers = Vec::with_capacity(config.layers);
        let mut injections = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            layers.push(match config.backbone {
                Backbone::Fno => Layer::Fno(FnoLayer::new(&mut store, l, w, config.modes)),
                Backbone::Attention => {
                    Layer::Attention(AttentionLayer::new(&mut store, l, w, config.heads))
                }
                Backbone::Lno => {
                    Layer::Lno(LnoLayer::new(&mut store, l, w, config.modes, config.poles))
                }
            });
            injections.push(if config.policy.is_active(l) {
                Injection::new(config.injection, &mut store, l, w)
            } else {
                None
            });
        }
        let projection = Linear::new(&mut store, "projection", Group::Projection, w, 1);
        let encoder = Encoder::new(config.encoder, &mut store, config.resolution, w);
        Ok(Self {
            config,
            store,
            lift,
            layers,
            injections,
            encoder,
            projection,
            encoder_evaluations: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn encoder(&self) -> Option<&Encoder> {
        self.encoder.as_ref()
    }

    pub fn injection(&self, l: usize) -> Option<&Injection> {
        self.injections.get(l).and_then(Option::as_ref)
    }

    /// Number of encoder evaluations since construction.
    pub fn encoder_evaluations(&self) -> usize {
        self.encoder_evaluations.load(Ordering::Relaxed)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let s = self.config.resolution;
        if shape != [IN_CHANNELS, s, s] {
            return Err(Error::shape(
                "forward",
                format!("expected input [{IN_CHANNELS}, {s}, {s}], got {shape:?}"),
            ));
        }
        Ok(())
    }

    /// `V_0 = GELU(lift(input))`.
    pub fn lift<T: Real>(&self, p: &Binder<T>, input: Var) -> Result<Var> {
        let g = p.graph();
        let shape = g.shape(input);
        if shape.first() != Some(&IN_CHANNELS) {
            return Err(Error::shape(
                "lift",
                format!("expected {IN_CHANNELS} input channels, got {shape:?}"),
            ));
        }
        Ok(g.gelu(self.lift.apply(p, input)?))
    }

    /// Geometry memory from channels 1..5 (mask, sdf, x, y) of the input.
    pub fn memory<T: Real>(&self, p: &Binder<T>, input: Var) -> Result<Option<Var>> {
        let Some(encoder) = &self.encoder else {
            return Ok(None);
        };
        self.encoder_evaluations.fetch_add(1, Ordering::Relaxed);
        let geometry = p.graph().narrow(input, 1, 4)?;
        encoder.forward(p, geometry).map(Some)
    }

    /// Full forward pass on one `[5, s, s]` input (`a`, mask, sdf, x, y).
    ///
    /// The encoder runs once, and only if some layer injects.
    pub fn forward<T: Real>(&self, p: &Binder<T>, input: Var, capture: bool) -> Result<ForwardOutput> {
        let g = p.graph();
        self.check_input(&g.shape(input))?;
        let memory = if self.config.policy.any() {
            self.memory(p, input)?
        } else {
            None
        };
        let mut v = self.lift(p, input)?;
        let mut activations = Vec::new();
        if capture {
            activations.push(g.constant(g.value(v)));
        }
        for (layer, inj) in self.layers.iter().zip(&self.injections) {
            let z = layer.forward(p, v)?;
            v = match (inj, memory) {
                (Some(inj), Some(m)) => inj.apply(p, z, m)?,
                _ => z,
            };
            if capture {
                activations.push(g.constant(g.value(v)));
            }
        }
        let out = self.projection.apply(p, v)?;
        let mask = g.narrow(input, 1, 1)?;
        let mask = g.constant(g.value(mask));
        Ok(ForwardOutput {
            prediction: g.mul(out, mask)?,
            activations,
        })
    }

    /// Inference on an f32 input; returns the masked `[1, s, s]` prediction.
    pub fn predict(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        let g = Graph::new();
        let p = Binder::new(&g, &self.store, false);
        let x = g.constant(input.clone());
        let out = self.forward(&p, x, false)?;
        Ok(g.value(out.prediction))
    }

    /// Prediction plus detached activations `V_0..V_L`.
    pub fn capture(&self, input: &Tensor<f32>) -> Result<(Tensor<f32>, Vec<Tensor<f32>>)> {
        let g = Graph::new();
        let p = Binder::new(&g, &self.store, false);
        let x = g.constant(input.clone());
        let out = self.forward(&p, x, true)?;
        Ok((
            g.value(out.prediction),
            out.activations.iter().map(|&v| g.value(v)).collect(),
        ))
    }
}
