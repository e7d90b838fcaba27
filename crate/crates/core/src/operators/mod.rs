//! Operator backbones, geometry encoders and memory injection.

mod checkpoint;
mod config;
mod encoder;
mod inject;
mod layers;
mod model;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use config::{
    make_policy, Backbone, EncoderKind, InjectionKind, InjectionPolicy, ModelConfig, PolicyName,
    BRANCH_HIDDEN, BRANCH_LATENT,
};
pub use encoder::{BranchTrunkEncoder, Conv, ConvEncoder, Encoder, Mlp};
pub use inject::Injection;
pub use layers::{AttentionLayer, FnoLayer, LaplaceParams, Layer, Linear, LnoLayer, POLE_CEILING};
pub use model::{ForwardOutput, OperatorModel};
pub use params::{Binder, Group, Init, Param, ParamId, ParamStore};
