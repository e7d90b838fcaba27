//! Little-endian model checkpoint.
//!
//! ```text
//! "GFMC", u32 version (1)
//! config: u32 backbone, L, W, modes, heads, poles, policy bits,
//!         injection, encoder, resolution
//! per parameter in declaration order:
//!         u32 name length, UTF-8 name, u32 element count, f32 data
//! ```

use std::path::Path;

use crate::autodiff::Tensor;
use crate::{Error, Result};

use super::config::{Backbone, EncoderKind, InjectionKind, InjectionPolicy, ModelConfig};
use super::model::OperatorModel;

pub const MAGIC: &[u8; 4] = b"GFMC";
pub const VERSION: u32 = 1;

pub struct Checkpoint;

impl Checkpoint {
    pub fn to_bytes(model: &OperatorModel) -> Vec<u8> {
        let c = model.config();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            c.backbone.id(),
            c.layers as u32,
            c.width as u32,
            c.modes as u32,
            c.heads as u32,
            c.poles as u32,
            c.policy.to_mask(),
            c.injection.id(),
            c.encoder.id(),
            c.resolution as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in model.params().params() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.value.len() as u32).to_le_bytes());
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<OperatorModel> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: "bad magic, expected \"GFMC\"".into(),
            });
        }
        r.pos = 4;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                detail: format!("unsupported version {version}"),
            });
        }
        let at = r.pos;
        let backbone = Backbone::from_id(r.u32("backbone")?).ok_or_else(|| r.err(at, "unknown backbone id"))?;
        let layers = r.u32("layer count")? as usize;
        let width = r.u32("width")? as usize;
        let modes = r.u32("modes")? as usize;
        let heads = r.u32("heads")? as usize;
        let poles = r.u32("poles")? as usize;
        let policy = InjectionPolicy::from_mask(r.u32("policy")?, layers);
        let at = r.pos;
        let injection =
            InjectionKind::from_id(r.u32("injection")?).ok_or_else(|| r.err(at, "unknown injection id"))?;
        let at = r.pos;
        let encoder = EncoderKind::from_id(r.u32("encoder")?).ok_or_else(|| r.err(at, "unknown encoder id"))?;
        let resolution = r.u32("resolution")? as usize;
        let config = ModelConfig {
            backbone,
            layers,
            width,
            modes,
            heads,
            poles,
            policy,
            injection,
            encoder,
            resolution,
            seed: 0,
        };
        let config_end = r.pos;
        let mut model = OperatorModel::new(config).map_err(|e| Error::Format {
            offset: config_end as u64,
            detail: format!("invalid config block: {e}"),
        })?;
        let mut values = Vec::with_capacity(model.params().len());
        for p in model.params().params() {
            let at = r.pos;
            let len = r.u32("name length")? as usize;
            let name = r.take(len, "name")?;
            if name != p.name.as_bytes() {
                return Err(r.err(
                    at,
                    &format!("expected parameter {:?}, found {:?}", p.name, String::from_utf8_lossy(name)),
                ));
            }
            let at = r.pos;
            let count = r.u32("element count")? as usize;
            if count != p.value.len() {
                return Err(r.err(
                    at,
                    &format!("parameter {} has {} elements, file declares {count}", p.name, p.value.len()),
                ));
            }
            let data = r.take(4 * count, "parameter data")?;
            let data = data
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            values.push(Tensor::new(p.value.shape(), data)?);
        }
        if r.pos != bytes.len() {
            return Err(r.err(r.pos, "trailing bytes after last parameter"));
        }
        model.params_mut().set_values(values)?;
        Ok(model)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, detail: &str) -> Error {
        Error::Format {
            offset: offset as u64,
            detail: detail.to_string(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let bytes: &'a [u8] = self.bytes;
        let out = bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| self.err(self.bytes.len(), &format!("truncated while reading {what}")))?;
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn write_checkpoint(model: &OperatorModel, path: &Path) -> Result<()> {
    std::fs::write(path, Checkpoint::to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<OperatorModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
