use crate::autodiff::{Real, Var};
use crate::Result;

use super::config::{EncoderKind, BRANCH_HIDDEN, BRANCH_LATENT};
use super::layers::Linear;
use super::params::{Binder, Group, Init, ParamId, ParamStore};

/// 3×3 convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv {
    pub fn new(store: &mut ParamStore, name: &str, group: Group, c_in: usize, c_out: usize, k: usize) -> Self {
        Self {
            w: store.add(
                &format!("{name}.weight"),
                group,
                &[c_out, c_in, k, k],
                Init::Uniform { fan_in: c_in * k * k },
            ),
            b: store.add(&format!("{name}.bias"), group, &[c_out], Init::Zeros),
        }
    }

    pub fn apply<T: Real>(&self, p: &Binder<T>, x: Var, stride: usize) -> Result<Var> {
        p.graph().conv2d(x, p.var(self.w), Some(p.var(self.b)), stride)
    }
}

/// Small U-shaped convolutional encoder.
///
/// Two stride-2 stages (C/2 then C channels) followed by two
/// upsample-and-convolve stages; the first upsampled stage is added to the
/// first downsampling stage.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    down1: Conv,
    down2: Conv,
    up1: Conv,
    up2: Conv,
}

impl ConvEncoder {
    pub fn new(store: &mut ParamStore, in_channels: usize, width: usize) -> Self {
        let g = Group::Encoder;
        let half = (width / 2).max(1);
        Self {
            down1: Conv::new(store, "encoder.down1", g, in_channels, half, 3),
            down2: Conv::new(store, "encoder.down2", g, half, width, 3),
            up1: Conv::new(store, "encoder.up1", g, width, half, 3),
            up2: Conv::new(store, "encoder.up2", g, half, width, 3),
        }
    }

    pub fn forward<T: Real>(&self, p: &Binder<T>, geometry: Var) -> Result<Var> {
        let g = p.graph();
        let e1 = g.gelu(self.down1.apply(p, geometry, 2)?);
        let e2 = g.gelu(self.down2.apply(p, e1, 2)?);
        let d1 = g.gelu(self.up1.apply(p, g.upsample2(e2)?, 1)?);
        let d1 = g.add(d1, e1)?;
        self.up2.apply(p, g.upsample2(d1)?, 1)
    }
}

/// Two-layer GELU perceptron acting on the columns of a `[c_in, n]` matrix.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, group: Group, c_in: usize, hidden: usize, c_out: usize) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), group, c_in, hidden),
            out: Linear::new(store, &format!("{name}.out"), group, hidden, c_out),
        }
    }

    pub fn apply<T: Real>(&self, p: &Binder<T>, x: Var) -> Result<Var> {
        let h = p.graph().gelu(self.hidden.apply(p, x)?);
        self.out.apply(p, h)
    }
}

/// Branch/trunk factorization: the branch net sees the flattened mask and
/// signed distance, the trunk net each coordinate pair; their elementwise
/// product (`p` channels per cell) is mapped to `W` channels.
#[derive(Clone, Debug)]
pub struct BranchTrunkEncoder {
    pub branch: Mlp,
    pub trunk: Mlp,
    pub head: Linear,
}

impl BranchTrunkEncoder {
    pub fn new(store: &mut ParamStore, resolution: usize, width: usize) -> Self {
        let g = Group::Encoder;
        let cells = resolution * resolution;
        Self {
            branch: Mlp::new(store, "encoder.branch", g, 2 * cells, BRANCH_HIDDEN, BRANCH_LATENT),
            trunk: Mlp::new(store, "encoder.trunk", g, 2, BRANCH_HIDDEN, BRANCH_LATENT),
            head: Linear::new(store, "encoder.head", g, BRANCH_LATENT, width),
        }
    }

    /// Branch coefficients `[p, 1]` for a `[4, s, s]` geometry block.
    pub fn branch_code<T: Real>(&self, p: &Binder<T>, geometry: Var) -> Result<Var> {
        let g = p.graph();
        let s = g.shape(geometry)[1];
        let shape_channels = g.narrow(geometry, 0, 2)?;
        let flat = g.reshape(shape_channels, &[2 * s * s, 1])?;
        self.branch.apply(p, flat)
    }

    /// Product field `[p, s, s]` before the output map.
    pub fn latent<T: Real>(&self, p: &Binder<T>, geometry: Var, code: Var) -> Result<Var> {
        let g = p.graph();
        let s = g.shape(geometry)[1];
        let coords = g.narrow(geometry, 2, 2)?;
        let basis = self.trunk.apply(p, g.reshape(coords, &[2, s * s])?)?;
        let code = g.reshape(code, &[BRANCH_LATENT])?;
        let prod = g.scale_rows(basis, code)?;
        g.reshape(prod, &[BRANCH_LATENT, s, s])
    }

    pub fn forward<T: Real>(&self, p: &Binder<T>, geometry: Var) -> Result<Var> {
        let code = self.branch_code(p, geometry)?;
        let latent = self.latent(p, geometry, code)?;
        self.head.apply(p, latent)
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Conv(ConvEncoder),
    BranchTrunk(BranchTrunkEncoder),
}

impl Encoder {
    pub fn new(kind: EncoderKind, store: &mut ParamStore, resolution: usize, width: usize) -> Option<Self> {
        match kind {
            EncoderKind::Conv => Some(Encoder::Conv(ConvEncoder::new(store, 4, width))),
            EncoderKind::BranchTrunk => Some(Encoder::BranchTrunk(BranchTrunkEncoder::new(
                store, resolution, width,
            ))),
            EncoderKind::None => None,
        }
    }

    /// Memory field `[W, s, s]` from a `[4, s, s]` geometry block.
    pub fn forward<T: Real>(&self, p: &Binder<T>, geometry: Var) -> Result<Var> {
        match self {
            Encoder::Conv(e) => e.forward(p, geometry),
            Encoder::BranchTrunk(e) => e.forward(p, geometry),
        }
    }
}
