//! Binary checkpoint, little-endian:
//! `"TDCK" | u32 version | u64 P | u32 len + architecture descriptor |
//! P x f64 params | P x f64 EMA params | u64 step`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::model::{Architecture, DenoiserModel};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"TDCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DenoiserModel,
    pub ema: Vec<f64>,
    pub step: u64,
}

impl Checkpoint {
    pub fn ema_model(&self) -> DenoiserModel {
        DenoiserModel::from_params(self.model.architecture().clone(), self.ema.clone())
            .expect("EMA parameters share the model layout")
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let desc = self.model.architecture().to_string();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.model.param_count() as u64).to_le_bytes())?;
        w.write_all(&(desc.len() as u32).to_le_bytes())?;
        w.write_all(desc.as_bytes())?;
        for v in self.model.params().iter().chain(&self.ema) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.step.to_le_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let corrupt = |detail: &str| Error::Format { what: "checkpoint", detail: detail.to_string() };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = read_u32(&mut r).map_err(|_| corrupt("truncated header"))?;
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let p = read_u64(&mut r).map_err(|_| corrupt("truncated header"))? as usize;
        let len = read_u32(&mut r).map_err(|_| corrupt("truncated header"))? as usize;
        if len > 4096 {
            return Err(corrupt("descriptor too long"));
        }
        let mut desc = vec![0u8; len];
        r.read_exact(&mut desc).map_err(|_| corrupt("truncated descriptor"))?;
        let desc = String::from_utf8(desc).map_err(|_| corrupt("descriptor is not UTF-8"))?;
        let arch = Architecture::parse(&desc)?;
        if arch.param_count() != p {
            return Err(corrupt("parameter count does not match architecture"));
        }
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes).map_err(|_| corrupt("truncated parameters"))?;
            Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let params = read_vec(p)?;
        let ema = read_vec(p)?;
        let step = read_u64(&mut r).map_err(|_| corrupt("missing step counter"))?;
        let model = DenoiserModel::from_params(arch, params).map_err(|_| corrupt("non-finite parameters"))?;
        if ema.iter().any(|v| !v.is_finite()) {
            return Err(corrupt("non-finite EMA parameters"));
        }
        Ok(Self { model, ema, step })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
