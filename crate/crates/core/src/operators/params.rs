use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Graph, Real, Tensor, Var};
use crate::{Error, Result};

/// Partition of the parameters used for per-layer gradient accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Lift,
    Layer(usize),
    Projection,
    Encoder,
}

impl Group {
    pub fn label(self) -> String {
        match self {
            Group::Lift => "lift".into(),
            Group::Layer(l) => format!("layer{l}"),
            Group::Projection => "projection".into(),
            Group::Encoder => "encoder".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Tensor<f32>,
}

/// How a fresh parameter is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// uniform in ±sqrt(1/fan_in)
    Uniform { fan_in: usize },
    /// uniform in [lo, hi)
    Range(f32, f32),
    Zeros,
    Ones,
    /// identity in the leading `n×n` block of a 2-D weight, zero elsewhere
    Eye(usize),
}

/// Named parameters in declaration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    seed: u64,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            seed,
        }
    }

    /// Adds a parameter. Its random stream depends only on the store seed and
    /// the name, so identically named parameters initialize identically
    /// regardless of what else the model contains.
    pub fn add(&mut self, name: &str, group: Group, shape: &[usize], init: Init) -> ParamId {
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter {name}"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name));
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match init {
            Init::Uniform { fan_in } => {
                let bound = (1.0 / fan_in as f64).sqrt() as f32;
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
            Init::Range(lo, hi) => (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Eye(k) => {
                let cols = shape[shape.len() - 1];
                (0..n)
                    .map(|i| if i / cols == i % cols && i / cols < k { 1.0 } else { 0.0 })
                    .collect()
            }
        };
        self.params.push(Param {
            name: name.to_string(),
            group,
            value: Tensor::new(shape, data).expect("positive parameter shape"),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn values(&self) -> Vec<Tensor<f32>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Replaces every value; shapes must match.
    pub fn set_values(&mut self, values: Vec<Tensor<f32>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} values for {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter().zip(&values) {
            if p.value.shape() != v.shape() {
                return Err(Error::Contract(format!(
                    "parameter {} has shape {:?}, got {:?}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                )));
            }
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<f32>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::Contract(format!(
                "parameter {} has shape {:?}, got {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn groups(&self) -> Vec<Group> {
        let mut g: Vec<Group> = self.params.iter().map(|p| p.group).collect();
        g.sort();
        g.dedup();
        g
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Lazily materializes parameters as leaves of one graph.
///
/// A parameter becomes a leaf the first time a forward pass asks for it, so
/// parameters that the computation never touches have no leaf and hence no
/// gradient at all.
pub struct Binder<'a, T: Real = f32> {
    graph: &'a Graph<T>,
    store: &'a ParamStore,
    slots: RefCell<Vec<Option<Var>>>,
    trainable: bool,
}

impl<'a, T: Real> Binder<'a, T> {
    pub fn new(graph: &'a Graph<T>, store: &'a ParamStore, trainable: bool) -> Self {
        Self {
            graph,
            store,
            slots: RefCell::new(vec![None; store.len()]),
            trainable,
        }
    }

    /// Binder whose parameters are the given leaves, one per store entry.
    pub fn with_vars(graph: &'a Graph<T>, store: &'a ParamStore, vars: &[Var]) -> Self {
        assert_eq!(vars.len(), store.len());
        Self {
            graph,
            store,
            slots: RefCell::new(vars.iter().copied().map(Some).collect()),
            trainable: true,
        }
    }

    pub fn graph(&self) -> &'a Graph<T> {
        self.graph
    }

    pub fn var(&self, id: ParamId) -> Var {
        if let Some(v) = self.slots.borrow()[id.0] {
            return v;
        }
        let value = self.store.get(id).value.cast::<T>();
        let v = self.graph.leaf(value, self.trainable);
        self.slots.borrow_mut()[id.0] = Some(v);
        v
    }

    pub fn is_bound(&self, id: ParamId) -> bool {
        self.slots.borrow()[id.0].is_some()
    }

    /// Gradient per parameter, `None` for parameters never bound.
    pub fn gradients(&self, grads: &Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.slots
            .borrow()
            .iter()
            .map(|s| s.and_then(|v| grads.get(v).cloned()))
            .collect()
    }
}
