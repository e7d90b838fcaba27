use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Backbone {
    Fno,
    Attention,
    Lno,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InjectionKind {
    Film,
    Additive,
    Concat,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    Conv,
    BranchTrunk,
    None,
}

macro_rules! named_enum {
    ($ty:ident, $what:literal, $($variant:ident => $name:literal = $id:literal),+ $(,)?) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }

            /// Stable numeric id used in checkpoints.
            pub fn id(self) -> u32 {
                match self { $($ty::$variant => $id),+ }
            }

            pub fn from_id(id: u32) -> Option<Self> {
                match id { $($id => Some($ty::$variant),)+ _ => None }
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s { $($name => Ok($ty::$variant),)+
                    _ => Err(Error::Config(format!(concat!("unknown ", $what, " {:?}"), s))) }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

named_enum!(Backbone, "backbone", Fno => "fno" = 0, Attention => "attention" = 1, Lno => "lno" = 2);
named_enum!(InjectionKind, "injection", Film => "film" = 0, Additive => "additive" = 1, Concat => "concat" = 2, None => "none" = 3);
named_enum!(EncoderKind, "encoder", Conv => "conv" = 0, BranchTrunk => "branch_trunk" = 1, None => "none" = 2);

/// Named injection schedules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PolicyName {
    Early,
    Late,
    Single(usize),
    Full,
    None,
}

impl FromStr for PolicyName {
    type Err = Error;

    /// `early`, `late`, `full`, `none`, or `single(k)` / `Lk`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown policy {s:?}"));
        match s {
            "early" => Ok(PolicyName::Early),
            "late" => Ok(PolicyName::Late),
            "full" => Ok(PolicyName::Full),
            "none" => Ok(PolicyName::None),
            _ => {
                let k = if let Some(rest) = s.strip_prefix("single(") {
                    rest.strip_suffix(')').ok_or_else(bad)?
                } else if let Some(rest) = s.strip_prefix('L') {
                    rest
                } else {
                    return Err(bad());
                };
                k.parse().map(PolicyName::Single).map_err(|_| bad())
            }
        }
    }
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyName::Early => f.write_str("early"),
            PolicyName::Late => f.write_str("late"),
            PolicyName::Single(k) => write!(f, "L{k}"),
            PolicyName::Full => f.write_str("full"),
            PolicyName::None => f.write_str("none"),
        }
    }
}

/// Per-layer injection switches `S_0..S_{L-1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InjectionPolicy {
    bits: Vec<bool>,
}

impl InjectionPolicy {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_active(&self, l: usize) -> bool {
        self.bits.get(l).copied().unwrap_or(false)
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    pub fn or(&self, other: &Self) -> Self {
        Self::from_bits(self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect())
    }

    pub fn and(&self, other: &Self) -> Self {
        Self::from_bits(self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect())
    }

    /// Bit `l` set for layer `l`.
    pub fn to_mask(&self) -> u32 {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(l, _)| 1u32 << l)
            .sum()
    }

    pub fn from_mask(mask: u32, layers: usize) -> Self {
        Self::from_bits((0..layers).map(|l| mask >> l & 1 == 1).collect())
    }
}

/// Early covers `l < ⌈L/2⌉`, late the remaining layers.
pub fn make_policy(name: PolicyName, layers: usize) -> Result<InjectionPolicy> {
    let half = layers.div_ceil(2);
    let bits = match name {
        PolicyName::Early => (0..layers).map(|l| l < half).collect(),
        PolicyName::Late => (0..layers).map(|l| l >= half).collect(),
        PolicyName::Full => vec![true; layers],
        PolicyName::None => vec![false; layers],
        PolicyName::Single(k) => {
            if k >= layers {
                return Err(Error::Config(format!(
                    "single({k}) out of range for {layers} layers"
                )));
            }
            (0..layers).map(|l| l == k).collect()
        }
    };
    Ok(InjectionPolicy { bits })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub layers: usize,
    pub width: usize,
    pub modes: usize,
    pub heads: usize,
    pub poles: usize,
    pub policy: InjectionPolicy,
    pub injection: InjectionKind,
    pub encoder: EncoderKind,
    /// Grid size the model runs on; sizes the branch network input.
    pub resolution: usize,
    pub seed: u64,
}

/// Hidden width of the branch/trunk MLPs.
pub const BRANCH_HIDDEN: usize = 64;
/// Latent dimension `p` shared by branch and trunk outputs.
pub const BRANCH_LATENT: usize = 32;

impl ModelConfig {
    /// Defaults: L=4, W=32, 12 modes, 4 heads, 8 poles, no injection.
    pub fn new(backbone: Backbone, resolution: usize) -> Self {
        Self {
            backbone,
            layers: 4,
            width: 32,
            modes: 12,
            heads: 4,
            poles: 8,
            policy: make_policy(PolicyName::None, 4).unwrap(),
            injection: InjectionKind::None,
            encoder: EncoderKind::None,
            resolution,
            seed: 0,
        }
    }

    /// Sets injection kind, encoder and policy together.
    pub fn with_memory(
        mut self,
        injection: InjectionKind,
        encoder: EncoderKind,
        policy: PolicyName,
    ) -> Result<Self> {
        self.injection = injection;
        self.encoder = encoder;
        self.policy = make_policy(policy, self.layers)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.layers == 0 || self.layers > 32 {
            return cfg(format!("layer count {} must be in 1..=32", self.layers));
        }
        if self.width == 0 {
            return cfg("width must be positive".into());
        }
        let s = self.resolution;
        if s < 8 || !s.is_power_of_two() {
            return cfg(format!("resolution {s} must be a power of two ≥ 8"));
        }
        if self.policy.len() != self.layers {
            return cfg(format!(
                "policy has {} entries for {} layers",
                self.policy.len(),
                self.layers
            ));
        }
        if (self.injection == InjectionKind::None) != !self.policy.any() {
            return cfg(format!(
                "injection {} is inconsistent with policy {:?}",
                self.injection,
                self.policy.bits()
            ));
        }
        if self.policy.any() && self.encoder == EncoderKind::None {
            return cfg("injection requires an encoder".into());
        }
        match self.backbone {
            Backbone::Fno | Backbone::Lno => {
                if self.modes == 0 || 2 * self.modes > s {
                    return cfg(format!("modes {} must be in 1..={}", self.modes, s / 2));
                }
            }
            Backbone::Attention => {}
        }
        if self.backbone == Backbone::Attention && (self.heads == 0 || self.width % self.heads != 0)
        {
            return cfg(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            ));
        }
        if self.backbone == Backbone::Lno && (self.poles == 0 || self.poles > self.modes) {
            return cfg(format!(
                "pole count {} must be in 1..={} (modes)",
                self.poles, self.modes
            ));
        }
        if self.encoder == EncoderKind::Conv && self.width < 2 {
            return cfg("conv encoder needs width ≥ 2".into());
        }
        Ok(())
    }
}
