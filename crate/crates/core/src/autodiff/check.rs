//! Central finite-difference gradient checking in double precision.

use super::{Graph, Tensor, Var};
use crate::Result;

/// Gradient norms below this are indistinguishable from zero for a central
/// difference at the default step (its truncation error alone is ~step²).
pub const ZERO_GRADIENT: f64 = 1e-6;

/// Maximum over inputs of `‖g_reverse − g_fd‖ / max(‖g_reverse‖, ‖g_fd‖, ZERO_GRADIENT)`.
///
/// `build` receives a fresh graph and one parameter leaf per input and must
/// return a scalar loss.
pub fn gradient_check<F>(inputs: &[Tensor<f64>], step: f64, build: F) -> Result<f64>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|v| g.param(v.clone())).collect();
        let loss = build(&g, &vars)?;
        Ok(g.value(loss).item())
    };
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|v| g.param(v.clone())).collect();
    let loss = build(&g, &vars)?;
    let grads = g.backward(loss)?;
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).expect("parameter leaf").clone();
        let mut numeric = vec![0.0; input.len()];
        let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
        for (j, slot) in numeric.iter_mut().enumerate() {
            let base = input.data()[j];
            probe[k].data_mut()[j] = base + step;
            let plus = eval(&probe)?;
            probe[k].data_mut()[j] = base - step;
            let minus = eval(&probe)?;
            probe[k].data_mut()[j] = base;
            *slot = (plus - minus) / (2.0 * step);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic.norm();
        let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = na.max(nn);
        worst = worst.max(diff / scale.max(ZERO_GRADIENT));
    }
    Ok(worst)
}
