use crate::autodiff::{ComplexPair, Real, Tensor, Var};
use crate::Result;

use super::params::{Binder, Group, Init, ParamId, ParamStore};

/// Pointwise (1×1) channel map on a `[c, h, w]` field.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, group: Group, c_in: usize, c_out: usize) -> Self {
        Self::with_init(store, name, group, c_in, c_out, Init::Uniform { fan_in: c_in }, true)
    }

    pub fn with_init(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        c_in: usize,
        c_out: usize,
        init: Init,
        bias: bool,
    ) -> Self {
        let w = store.add(&format!("{name}.weight"), group, &[c_out, c_in], init);
        let b = bias.then(|| store.add(&format!("{name}.bias"), group, &[c_out], Init::Zeros));
        Self { w, b }
    }

    /// Applies the map to a `[c_in, ...]` field, keeping the trailing shape.
    pub fn apply<T: Real>(&self, p: &Binder<T>, x: Var) -> Result<Var> {
        let g = p.graph();
        let shape = g.shape(x);
        let spatial: usize = shape[1..].iter().product();
        let flat = g.reshape(x, &[shape[0], spatial])?;
        let mut y = g.matmul(p.var(self.w), flat)?;
        if let Some(b) = self.b {
            y = g.add_row_bias(y, p.var(b))?;
        }
        let mut out_shape = shape;
        out_shape[0] = g.shape(y)[0];
        g.reshape(y, &out_shape)
    }
}

/// Spectral convolution layer: truncated Fourier multiplier plus skip.
#[derive(Clone, Debug)]
pub struct FnoLayer {
    pub w_re: ParamId,
    pub w_im: ParamId,
    pub skip: Linear,
    pub modes: usize,
}

impl FnoLayer {
    pub fn new(store: &mut ParamStore, l: usize, width: usize, modes: usize) -> Self {
        let group = Group::Layer(l);
        let shape = [4, modes, modes, width, width];
        let init = Init::Uniform { fan_in: width };
        Self {
            w_re: store.add(&format!("layer{l}.spectral_re"), group, &shape, init),
            w_im: store.add(&format!("layer{l}.spectral_im"), group, &shape, init),
            skip: Linear::new(store, &format!("layer{l}.skip"), group, width, width),
            modes,
        }
    }

    /// Pre-activation `K(v) + skip(v)`.
    pub fn linear_part<T: Real>(&self, p: &Binder<T>, v: Var) -> Result<Var> {
        let g = p.graph();
        let zeros = g.constant(Tensor::zeros(&g.shape(v)));
        let spec = g.fft2(ComplexPair { re: v, im: zeros })?;
        let mixed = g.spectral_mix(spec, p.var(self.w_re), p.var(self.w_im), self.modes)?;
        let back = g.ifft2(mixed)?;
        g.add(back.re, self.skip.apply(p, v)?)
    }

    pub fn forward<T: Real>(&self, p: &Binder<T>, v: Var) -> Result<Var> {
        Ok(p.graph().gelu(self.linear_part(p, v)?))
    }
}

/// Pre-norm transformer block over the `S²` grid cells as tokens.
#[derive(Clone, Debug)]
pub struct AttentionLayer {
    pub ln1: (ParamId, ParamId),
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub ln2: (ParamId, ParamId),
    pub mlp_in: Linear,
    pub mlp_out: Linear,
    pub heads: usize,
}

const LN_EPS: f64 = 1e-5;

impl AttentionLayer {
    pub fn new(store: &mut ParamStore, l: usize, width: usize, heads: usize) -> Self {
        let group = Group::Layer(l);
        let ln = |store: &mut ParamStore, name: &str| {
            (
                store.add(&format!("layer{l}.{name}.gain"), group, &[width], Init::Ones),
                store.add(&format!("layer{l}.{name}.bias"), group, &[width], Init::Zeros),
            )
        };
        let ln1 = ln(store, "ln1");
        let q = Linear::new(store, &format!("layer{l}.query"), group, width, width);
        let k = Linear::new(store, &format!("layer{l}.key"), group, width, width);
        let v = Linear::new(store, &format!("layer{l}.value"), group, width, width);
        let out = Linear::new(store, &format!("layer{l}.attn_out"), group, width, width);
        let ln2 = ln(store, "ln2");
        let mlp_in = Linear::new(store, &format!("layer{l}.mlp_in"), group, width, 2 * width);
        let mlp_out = Linear::new(store, &format!("layer{l}.mlp_out"), group, 2 * width, width);
        Self {
            ln1,
            q,
            k,
            v,
            out,
            ln2,
            mlp_in,
            mlp_out,
            heads,
        }
    }

    /// Row-stochastic attention matrices `[tokens, tokens]`, one per head.
    pub fn attention_maps<T: Real>(&self, p: &Binder<T>, x: Var) -> Result<Vec<Var>> {
        let g = p.graph();
        let h = g.layer_norm_cols(x, p.var(self.ln1.0), p.var(self.ln1.1), T::lit(LN_EPS))?;
        let (q, k) = (self.q.apply(p, h)?, self.k.apply(p, h)?);
        let d = g.shape(x)[0] / self.heads;
        let scale = T::lit(1.0 / (d as f64).sqrt());
        (0..self.heads)
            .map(|head| {
                let qh = g.narrow(q, head * d, d)?;
                let kh = g.narrow(k, head * d, d)?;
                let scores = g.scale(g.matmul_t(qh, true, kh, false)?, scale);
                g.softmax_rows(scores)
            })
            .collect()
    }

    pub fn forward<T: Real>(&self, p: &Binder<T>, v: Var) -> Result<Var> {
        let g = p.graph();
        let shape = g.shape(v);
        let width = shape[0];
        let tokens: usize = shape[1..].iter().product();
        let x = g.reshape(v, &[width, tokens])?;
        let h = g.layer_norm_cols(x, p.var(self.ln1.0), p.var(self.ln1.1), T::lit(LN_EPS))?;
        let (q, k, val) = (self.q.apply(p, h)?, self.k.apply(p, h)?, self.v.apply(p, h)?);
        let d = width / self.heads;
        let scale = T::lit(1.0 / (d as f64).sqrt());
        let mut heads = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let qh = g.narrow(q, head * d, d)?;
            let kh = g.narrow(k, head * d, d)?;
            let vh = g.narrow(val, head * d, d)?;
            // scores[i, j] = <q_i, k_j> / sqrt(d)
            let scores = g.scale(g.matmul_t(qh, true, kh, false)?, scale);
            let attn = g.softmax_rows(scores)?;
            heads.push(g.matmul_t(vh, false, attn, true)?);
        }
        let mixed = self.out.apply(p, g.concat(&heads)?)?;
        let x = g.add(x, mixed)?;
        let h = g.layer_norm_cols(x, p.var(self.ln2.0), p.var(self.ln2.1), T::lit(LN_EPS))?;
        let mlp = self.mlp_out.apply(p, g.gelu(self.mlp_in.apply(p, h)?))?;
        let x = g.add(x, mlp)?;
        g.reshape(x, &shape)
    }
}

/// Separable pole-residue (Laplace) layer with skip.
#[derive(Clone, Debug)]
pub struct LnoLayer {
    /// per axis: residues (re, im), raw pole decay, pole frequency
    pub axes: [LaplaceParams; 2],
    pub skip: Linear,
    pub modes: usize,
}

#[derive(Clone, Debug)]
pub struct LaplaceParams {
    pub beta_re: ParamId,
    pub beta_im: ParamId,
    pub pole_raw: ParamId,
    pub pole_imag: ParamId,
}

/// Upper bound on pole real parts.
pub const POLE_CEILING: f64 = -0.01;

impl LnoLayer {
    pub fn new(store: &mut ParamStore, l: usize, width: usize, modes: usize, poles: usize) -> Self {
        let group = Group::Layer(l);
        let axis = |store: &mut ParamStore, ax: &str| {
            let name = |what: &str| format!("layer{l}.{ax}.{what}");
            let init = Init::Uniform {
                fan_in: width * poles,
            };
            let shape = [poles, width, width];
            LaplaceParams {
                beta_re: store.add(&name("residue_re"), group, &shape, init),
                beta_im: store.add(&name("residue_im"), group, &shape, init),
                pole_raw: store.add(&name("pole_raw"), group, &[poles], Init::Range(0.0, 2.0)),
                pole_imag: store.add(
                    &name("pole_imag"),
                    group,
                    &[poles],
                    Init::Range(-std::f32::consts::PI, std::f32::consts::PI),
                ),
            }
        };
        Self {
            axes: [axis(store, "x"), axis(store, "y")],
            skip: Linear::new(store, &format!("layer{l}.skip"), group, width, width),
            modes,
        }
    }

    /// Poles `μ = −0.01 − softplus(raw) + i·imag` as (re, im) nodes.
    pub fn poles<T: Real>(p: &Binder<T>, ax: &LaplaceParams) -> (Var, Var) {
        let g = p.graph();
        let decay = g.softplus(p.var(ax.pole_raw));
        let re = g.add_scalar(g.scale(decay, -T::one()), T::lit(POLE_CEILING));
        (re, p.var(ax.pole_imag))
    }

    fn axis_transform<T: Real>(&self, p: &Binder<T>, ax: &LaplaceParams, v: Var) -> Result<Var> {
        let g = p.graph();
        let mu = Self::poles(p, ax);
        g.laplace_axis(v, (p.var(ax.beta_re), p.var(ax.beta_im)), mu, self.modes)
    }

    pub fn linear_part<T: Real>(&self, p: &Binder<T>, v: Var) -> Result<Var> {
        let g = p.graph();
        let along_x = self.axis_transform(p, &self.axes[0], v)?;
        let t = g.swap_last(along_x)?;
        let along_y = g.swap_last(self.axis_transform(p, &self.axes[1], t)?)?;
        g.add(along_y, self.skip.apply(p, v)?)
    }

    pub fn forward<T: Real>(&self, p: &Binder<T>, v: Var) -> Result<Var> {
        Ok(p.graph().gelu(self.linear_part(p, v)?))
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Fno(FnoLayer),
    Attention(AttentionLayer),
    Lno(LnoLayer),
}

impl Layer {
    pub fn forward<T: Real>(&self, p: &Binder<T>, v: Var) -> Result<Var> {
        match self {
            Layer::Fno(l) => l.forward(p, v),
            Layer::Attention(l) => l.forward(p, v),
            Layer::Lno(l) => l.forward(p, v),
        }
    }
}
