use crate::autodiff::{Real, Var};
use crate::Result;

use super::config::InjectionKind;
use super::layers::Linear;
use super::params::{Binder, Group, Init, ParamStore};

/// Memory integration map of one layer. All kinds start as the identity in
/// `z`: FiLM and additive maps are zero-initialized, the concat projection
/// starts as `[I | 0]`.
#[derive(Clone, Debug)]
pub enum Injection {
    /// `z ⊙ (1 + γ̂(m)) + β(m)`
    Film { gamma: Linear, beta: Linear },
    /// `z + W m`
    Additive { map: Linear },
    /// `P [z; m]`
    Concat { proj: Linear },
}

impl Injection {
    pub fn new(kind: InjectionKind, store: &mut ParamStore, l: usize, width: usize) -> Option<Self> {
        let g = Group::Layer(l);
        let name = |what: &str| format!("layer{l}.inject.{what}");
        let zero = |store: &mut ParamStore, what: &str, c_in: usize| {
            Linear::with_init(store, &name(what), g, c_in, width, Init::Zeros, true)
        };
        match kind {
            InjectionKind::Film => Some(Injection::Film {
                gamma: zero(store, "gamma", width),
                beta: zero(store, "beta", width),
            }),
            InjectionKind::Additive => Some(Injection::Additive {
                map: zero(store, "additive", width),
            }),
            InjectionKind::Concat => Some(Injection::Concat {
                proj: Linear::with_init(store, &name("concat"), g, 2 * width, width, Init::Eye(width), true),
            }),
            InjectionKind::None => None,
        }
    }

    pub fn apply<T: Real>(&self, p: &Binder<T>, z: Var, m: Var) -> Result<Var> {
        let g = p.graph();
        if g.shape(z) != g.shape(m) {
            return Err(crate::Error::shape(
                "inject",
                format!("latent {:?} vs memory {:?}", g.shape(z), g.shape(m)),
            ));
        }
        match self {
            Injection::Film { gamma, beta } => {
                let scale = g.add_scalar(gamma.apply(p, m)?, T::one());
                g.add(g.mul(z, scale)?, beta.apply(p, m)?)
            }
            Injection::Additive { map } => g.add(z, map.apply(p, m)?),
            Injection::Concat { proj } => proj.apply(p, g.concat(&[z, m])?),
        }
    }
}
