//! Model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! "MDL1"            magic
//! u32               version (1)
//! u32, bytes        model spec as JSON
//! u32               epochs completed
//! u64               optimizer steps taken
//! u64, f32 * n      parameters in canonical order
//! f64 * 3           Adam beta1, beta2, eps
//! u64               Adam timestep
//! f32 * n, f32 * n  Adam first and second moments
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::adam::{Adam, AdamConfig};
use super::model::{Model, ModelSpec};
use super::NnError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MDL1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub epoch: u32,
    pub step: u64,
    pub params: Vec<f32>,
    pub adam: Adam<f32>,
}

impl Checkpoint {
    pub fn new(model: &Model<f32>, adam: &Adam<f32>, epoch: u32, step: u64) -> Self {
        Self {
            spec: model.spec().clone(),
            epoch,
            step,
            params: model.params().to_vec(),
            adam: adam.clone(),
        }
    }

    pub fn model(&self) -> Result<Model<f32>, NnError> {
        Model::from_params(&self.spec, self.params.clone())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        let spec =
            serde_json::to_vec(&self.spec).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(spec.len() as u32).to_le_bytes())?;
        w.write_all(&spec)?;
        w.write_all(&self.epoch.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        write_f32s(&mut w, &self.params)?;
        let c = self.adam.config;
        for v in [c.beta1, c.beta2, c.eps] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.adam.t.to_le_bytes())?;
        write_f32s(&mut w, &self.adam.m)?;
        write_f32s(&mut w, &self.adam.v)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NnError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NnError::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let spec_len = read_u32(&mut r)? as usize;
        let mut spec = Vec::new();
        r.by_ref().take(spec_len as u64).read_to_end(&mut spec)?;
        if spec.len() != spec_len {
            return Err(NnError::Checkpoint("truncated spec".into()));
        }
        let spec: ModelSpec =
            serde_json::from_slice(&spec).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let epoch = read_u32(&mut r)?;
        let step = read_u64(&mut r)?;
        let n = read_u64(&mut r)? as usize;
        let params = read_f32s(&mut r, n)?;
        let config = AdamConfig {
            beta1: read_f64(&mut r)?,
            beta2: read_f64(&mut r)?,
            eps: read_f64(&mut r)?,
        };
        let t = read_u64(&mut r)?;
        let m = read_f32s(&mut r, n)?;
        let v = read_f32s(&mut r, n)?;
        let ck = Self {
            spec,
            epoch,
            step,
            params,
            adam: Adam { config, t, m, v },
        };
        // the spec must describe exactly this many parameters
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn write_f32s<W: Write>(w: &mut W, v: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(v.len() * 4);
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>, NnError> {
    let mut bytes = Vec::new();
    r.take(n as u64 * 4).read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(NnError::Checkpoint("truncated parameter block".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}
