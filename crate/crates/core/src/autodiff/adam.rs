use super::{Real, Tensor};
use crate::{Error, Result};

/// Adam optimizer with bias correction.
///
/// Moments are allocated on the first step from the parameter shapes and the
/// same parameter order must be used on every subsequent step.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real = f32> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(lr: T) -> Self {
        Self::with_betas(lr, T::lit(0.9), T::lit(0.999), T::lit(1e-8))
    }

    pub fn with_betas(lr: T, beta1: T, beta2: T, eps: T) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, i: usize) -> Option<&[T]> {
        self.m.get(i).map(Vec::as_slice)
    }

    pub fn second_moment(&self, i: usize) -> Option<&[T]> {
        self.v.get(i).map(Vec::as_slice)
    }

    /// One update of every parameter in place.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "adam: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "adam: state holds {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].len() != p.len() {
                return Err(Error::Contract(format!(
                    "adam: parameter {i} has shape {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            let (c1, c2) = (T::one() - b1, T::one() - b2);
            for (((x, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mj = b1 * *mj + c1 * gj;
                *vj = b2 * *vj + c2 * gj * gj;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
