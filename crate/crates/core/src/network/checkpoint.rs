//! Checkpoint layout: 8-byte magic, `u32` format version, `u32` header
//! length, a JSON header, then every parameter as a little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Denoiser};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PTSDNET\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    layer_sizes: Vec<usize>,
    sigma_data: f64,
    seed: u64,
    activation: Activation,
    num_params: usize,
}

impl Denoiser {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            layer_sizes: self.sizes.clone(),
            sigma_data: self.sigma_data,
            seed: self.seed,
            activation: self.activation,
            num_params: self.params.len(),
        })?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let mut blob = Vec::with_capacity(8 * self.params.len());
        for p in &self.params {
            blob.extend_from_slice(&p.to_le_bytes());
        }
        w.write_all(&blob)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a denoiser checkpoint".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        r.read_exact(&mut word)?;
        let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        let mut blob = vec![0u8; 8 * header.num_params];
        r.read_exact(&mut blob)?;
        let params = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Denoiser::from_parts(header.layer_sizes, params, header.sigma_data, header.seed, header.activation)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
