//! Versioned binary checkpoint: magic, version, config hash, embedded
//! config text, shapes, then every parameter tensor as little-endian f64.

use std::io::{Read, Write};
use std::path::Path;

use super::config::RunConfig;
use crate::error::{PapoError, Result};
use crate::policy::PolicyParams;

const MAGIC: &[u8; 8] = b"PAPOCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub config_toml: String,
    pub params: PolicyParams,
}

impl Checkpoint {
    pub fn new(config: &RunConfig, params: &PolicyParams) -> Self {
        Self {
            config_hash: config.checkpoint_hash(),
            config_toml: config.to_toml(),
            params: params.clone(),
        }
    }

    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::from_toml_str(&self.config_toml, &[])
    }

    /// Fails when `config` would build a different environment or policy.
    pub fn check_config(&self, config: &RunConfig) -> Result<()> {
        if config.checkpoint_hash() != self.config_hash {
            return Err(PapoError::Config(format!(
                "checkpoint was written under config hash {:016x}, current config hashes to {:016x}",
                self.config_hash,
                config.checkpoint_hash()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&(self.config_toml.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_toml.as_bytes());
        let p = &self.params;
        for dim in [p.input_dim(), p.hidden(), p.action_dim()] {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for tensor in p.tensors() {
            out.extend_from_slice(&(tensor.len() as u64).to_le_bytes());
            for v in tensor {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let corrupt = |what: &str| PapoError::Serde(format!("corrupt checkpoint: {what}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = read_u32(&mut r).ok_or_else(|| corrupt("truncated version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(PapoError::Serde(format!("unsupported checkpoint version {version}")));
        }
        let config_hash = read_u64(&mut r).ok_or_else(|| corrupt("truncated hash"))?;
        let text_len = read_u64(&mut r).ok_or_else(|| corrupt("truncated config length"))? as usize;
        if text_len > r.len() {
            return Err(corrupt("config text overruns file"));
        }
        let config_toml = String::from_utf8(r[..text_len].to_vec()).map_err(|_| corrupt("config is not utf-8"))?;
        r = &r[text_len..];
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = read_u64(&mut r).ok_or_else(|| corrupt("truncated shape"))? as usize;
        }
        let mut params = PolicyParams::zeros(dims[0], dims[1], dims[2]);
        for tensor in params.tensors_mut() {
            let len = read_u64(&mut r).ok_or_else(|| corrupt("truncated tensor length"))? as usize;
            if len != tensor.len() {
                return Err(corrupt("tensor length disagrees with shape"));
            }
            for v in tensor.iter_mut() {
                *v = f64::from_le_bytes(read_array(&mut r).ok_or_else(|| corrupt("truncated tensor"))?);
            }
        }
        if !r.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            config_hash,
            config_toml,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_array<const N: usize>(r: &mut &[u8]) -> Option<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).ok()?;
    Some(buf)
}

fn read_u32(r: &mut &[u8]) -> Option<u32> {
    read_array(r).map(u32::from_le_bytes)
}

fn read_u64(r: &mut &[u8]) -> Option<u64> {
    read_array(r).map(u64::from_le_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip_and_corruption() {
        let config = RunConfig::default();
        let mut rng = crate::rng::stream(&[4]);
        let params = PolicyParams::init(9, 6, 3, -0.4, &mut rng);
        let ck = Checkpoint::new(&config, &params);
        let bytes = ck.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut other = config.clone();
        other.env.step_size = 0.05;
        assert!(ck.check_config(&other).is_err());
        assert!(ck.check_config(&config).is_ok());
    }
}
