//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `MCVC`, version `u16`, config JSON length
//! `u32` and bytes, SHA-256 of the config JSON (32 bytes), step `u64`,
//! tensor count `u32`, then for each of parameters, first moments and second
//! moments: `rows u32, cols u32, rows·cols f64`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::model::ModelParams;
use super::optim::AdamState;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MCVC";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub adam: AdamState,
}

pub fn config_hash(cfg: &TrainConfig) -> Result<String> {
    Ok(hex::encode(Sha256::digest(cfg.to_json()?.as_bytes())))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format {
                offset: self.pos,
                message: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let at = self.pos;
        let r = self.u32("tensor rows")? as usize;
        let c = self.u32("tensor cols")? as usize;
        let n = r.checked_mul(c).and_then(|n| n.checked_mul(8)).ok_or(Error::Format {
            offset: at,
            message: "tensor size overflows".into(),
        })?;
        let data = self
            .take(n, "tensor data")?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Tensor::new(vec![r, c], data).map_err(|e| Error::Format {
            offset: at,
            message: e.to_string(),
        })
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.extend((t.rows() as u32).to_le_bytes());
    out.extend((t.cols() as u32).to_le_bytes());
    for v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

impl Checkpoint {
    /// Fresh parameters and optimizer state for `config`.
    pub fn init(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(&config.model, &mut rng)?;
        let adam = AdamState::new(&params.tensors());
        Ok(Checkpoint {
            config,
            params,
            adam,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = self.config.to_json()?;
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend((json.len() as u32).to_le_bytes());
        out.extend(json.as_bytes());
        out.extend(Sha256::digest(json.as_bytes()));
        out.extend(self.adam.step.to_le_bytes());
        let params = self.params.tensors();
        out.extend((params.len() as u32).to_le_bytes());
        for t in params.iter().copied().chain(&self.adam.m).chain(&self.adam.v) {
            put_tensor(&mut out, t);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "not a checkpoint (bad magic)".into(),
            });
        }
        let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported checkpoint version {version}"),
            });
        }
        let len = r.u32("config length")? as usize;
        let at = r.pos;
        let json = r.take(len, "config")?;
        let hash = r.take(32, "config hash")?;
        if Sha256::digest(json).as_slice() != hash {
            return Err(Error::Format {
                offset: at + len,
                message: "config hash mismatch".into(),
            });
        }
        let config: TrainConfig = serde_json::from_slice(json).map_err(|e| Error::Format {
            offset: at,
            message: format!("config: {e}"),
        })?;
        let step = r.u64("step")?;
        let count = r.u32("tensor count")? as usize;

        let mut ck = Checkpoint::init(config)?;
        let expected = ck.params.tensors().len();
        if count != expected {
            return Err(Error::Format {
                offset: r.pos - 4,
                message: format!("expected {expected} tensors, found {count}"),
            });
        }
        let read_into = |dst: Vec<&mut Tensor>, r: &mut Reader| -> Result<()> {
            for d in dst {
                let at = r.pos;
                let t = r.tensor()?;
                if t.shape() != d.shape() {
                    return Err(Error::Format {
                        offset: at,
                        message: format!(
                            "tensor shape {:?} does not match config shape {:?}",
                            t.shape(),
                            d.shape()
                        ),
                    });
                }
                *d = t;
            }
            Ok(())
        };
        read_into(ck.params.tensors_mut(), &mut r)?;
        read_into(ck.adam.m.iter_mut().collect(), &mut r)?;
        read_into(ck.adam.v.iter_mut().collect(), &mut r)?;
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos,
                message: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        ck.adam.step = step;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
