//! Little-endian dataset container.
//!
//! ```text
//! 0   "GFDS"
//! 4   u32 version (1)
//! 8   u32 sample count
//! 12  u32 resolution S
//! 16  u32 input channels (5: a, mask, sdf, x, y)
//! 20  u32 output channels (1: u)
//! 24  per sample: input then output channels, each S×S row-major f32
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GFDS";
pub const VERSION: u32 = 1;
pub const IN_CHANNELS: usize = 5;
pub const OUT_CHANNELS: usize = 1;
const HEADER_LEN: usize = 24;

/// Input and target fields of one sample in storage precision.
#[derive(Clone, Debug)]
pub struct SampleRecord {
    /// `[a, mask, sdf, x, y]`, each `S×S`
    pub input: Vec<f32>,
    /// `u`, `S×S`
    pub target: Vec<f32>,
}

impl SampleRecord {
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.target.len();
        &self.input[c * plane..(c + 1) * plane]
    }

    pub fn coefficient(&self) -> &[f32] {
        self.channel(0)
    }

    pub fn mask(&self) -> &[f32] {
        self.channel(1)
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        let eq = |a: &[f32], b: &[f32]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        };
        eq(&self.input, &other.input) && eq(&self.target, &other.target)
    }
}

#[derive(Clone, Debug)]
pub struct DatasetFile {
    pub resolution: usize,
    pub samples: Vec<SampleRecord>,
}

impl DatasetFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let plane = self.resolution * self.resolution;
        let mut out =
            Vec::with_capacity(HEADER_LEN + self.samples.len() * (IN_CHANNELS + OUT_CHANNELS) * plane * 4);
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.samples.len() as u32,
            self.resolution as u32,
            IN_CHANNELS as u32,
            OUT_CHANNELS as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for s in &self.samples {
            debug_assert_eq!(s.input.len(), IN_CHANNELS * plane);
            debug_assert_eq!(s.target.len(), OUT_CHANNELS * plane);
            for v in s.input.iter().chain(&s.target) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let u32_at = |off: usize, what: &str| -> Result<u32> {
            bytes
                .get(off..off + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| Error::Format {
                    offset: bytes.len() as u64,
                    detail: format!("truncated header while reading {what}"),
                })
        };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: "bad magic, expected \"GFDS\"".into(),
            });
        }
        let version = u32_at(4, "version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                detail: format!("unsupported version {version}"),
            });
        }
        let n = u32_at(8, "sample count")? as usize;
        let s = u32_at(12, "resolution")? as usize;
        let cin = u32_at(16, "input channels")? as usize;
        let cout = u32_at(20, "output channels")? as usize;
        if s == 0 {
            return Err(Error::Format {
                offset: 12,
                detail: "zero resolution".into(),
            });
        }
        if cin != IN_CHANNELS {
            return Err(Error::Format {
                offset: 16,
                detail: format!("expected {IN_CHANNELS} input channels, found {cin}"),
            });
        }
        if cout != OUT_CHANNELS {
            return Err(Error::Format {
                offset: 20,
                detail: format!("expected {OUT_CHANNELS} output channels, found {cout}"),
            });
        }
        let plane = s * s;
        let per_sample = (cin + cout) * plane * 4;
        let expected = HEADER_LEN + n * per_sample;
        if bytes.len() < expected {
            let complete = (bytes.len() - HEADER_LEN) / per_sample;
            return Err(Error::Format {
                offset: (HEADER_LEN + complete * per_sample) as u64,
                detail: format!(
                    "truncated payload: header declares {n} samples, data ends inside sample {complete}"
                ),
            });
        }
        if bytes.len() > expected {
            return Err(Error::Format {
                offset: expected as u64,
                detail: format!("{} trailing bytes after {n} samples", bytes.len() - expected),
            });
        }
        let floats = |range: std::ops::Range<usize>| -> Vec<f32> {
            bytes[range]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect()
        };
        let samples = (0..n)
            .map(|i| {
                let start = HEADER_LEN + i * per_sample;
                let mid = start + cin * plane * 4;
                SampleRecord {
                    input: floats(start..mid),
                    target: floats(mid..start + per_sample),
                }
            })
            .collect();
        Ok(Self {
            resolution: s,
            samples,
        })
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.resolution == other.resolution
            && self.samples.len() == other.samples.len()
            && self.samples.iter().zip(&other.samples).all(|(a, b)| a.bit_eq(b))
    }

    /// Hex SHA-256 of the serialized bytes.
    pub fn content_hash(&self) -> String {
        hex_digest(&self.to_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_dataset(file: &DatasetFile, path: &Path) -> Result<()> {
    std::fs::write(path, file.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    DatasetFile::from_bytes(&bytes)
}
