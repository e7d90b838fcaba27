use crate::autodiff::Tensor;
use crate::operators::{Group, ParamStore};
use crate::{Error, Result};

/// Share of the backbone gradient norm carried by each layer group.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub step: usize,
    /// `R_l` for l = 0..L−1; sums to one
    pub ratios: Vec<f64>,
    /// encoder gradient norm over the same backbone total
    pub encoder: f64,
}

impl GradientReport {
    pub fn from_norms(step: usize, layer_norms: &[f64], encoder_norm: f64) -> Result<Self> {
        let total: f64 = layer_norms.iter().sum();
        if total == 0.0 || !total.is_finite() {
            return Err(Error::Degenerate(format!(
                "backbone gradient norms sum to {total} at step {step}"
            )));
        }
        Ok(Self {
            step,
            ratios: layer_norms.iter().map(|n| n / total).collect(),
            encoder: encoder_norm / total,
        })
    }
}

/// Euclidean norm of the concatenated gradients of each group.
pub fn group_norms(store: &ParamStore, grads: &[Option<Tensor<f32>>]) -> Vec<(Group, f64)> {
    let mut out: Vec<(Group, f64)> = store.groups().into_iter().map(|g| (g, 0.0)).collect();
    for (p, g) in store.params().iter().zip(grads) {
        if let Some(g) = g {
            let sq: f64 = g.data().iter().map(|&v| (v as f64).powi(2)).sum();
            let slot = out.iter_mut().find(|(grp, _)| *grp == p.group).unwrap();
            slot.1 += sq;
        }
    }
    out.iter_mut().for_each(|(_, v)| *v = v.sqrt());
    out
}

/// `R_l = ‖∇θ_l‖ / Σ_k ‖∇θ_k‖` over the `layers` backbone groups.
pub fn gradient_ratio(
    store: &ParamStore,
    layers: usize,
    grads: &[Option<Tensor<f32>>],
    step: usize,
) -> Result<GradientReport> {
    let norms = group_norms(store, grads);
    let norm_of = |grp: Group| {
        norms
            .iter()
            .find(|(g, _)| *g == grp)
            .map(|(_, n)| *n)
            .unwrap_or(0.0)
    };
    let layer_norms: Vec<f64> = (0..layers).map(|l| norm_of(Group::Layer(l))).collect();
    GradientReport::from_norms(step, &layer_norms, norm_of(Group::Encoder))
}
