use std::io::{Read, Write};

use super::{EmbedderHyper, EmbedderParams};
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &[u8; 8] = b"POIVEMB\0";
pub const PARAMS_VERSION: u32 = 1;

impl EmbedderParams {
    /// Little-endian blob: magic, version (u32), l and d (u32), γ (f64),
    /// then every tensor in [`super::PARAM_BLOCKS`] order as f32.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PARAMS_MAGIC)?;
        w.write_all(&PARAMS_VERSION.to_le_bytes())?;
        w.write_all(&(self.hyper.l as u32).to_le_bytes())?;
        w.write_all(&(self.hyper.d as u32).to_le_bytes())?;
        w.write_all(&self.hyper.gamma.to_le_bytes())?;
        let mut buf = Vec::new();
        for block in self.blocks() {
            for &x in block {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("parameter blob too short".into()))?;
        if &magic != PARAMS_MAGIC {
            return Err(Error::Format("not an embedder parameter blob".into()));
        }
        let mut word = [0u8; 4];
        let mut u32_field = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut word)
                .map_err(|_| Error::Format("truncated parameter header".into()))?;
            Ok(u32::from_le_bytes(word))
        };
        let version = u32_field(&mut r)?;
        if version != PARAMS_VERSION {
            return Err(Error::Version {
                what: "embedder parameters",
                found: version,
                expected: PARAMS_VERSION,
            });
        }
        let l = u32_field(&mut r)? as usize;
        let d = u32_field(&mut r)? as usize;
        let mut g = [0u8; 8];
        r.read_exact(&mut g)
            .map_err(|_| Error::Format("truncated parameter header".into()))?;
        let hyper = EmbedderHyper {
            l,
            d,
            gamma: f64::from_le_bytes(g),
        };
        let mut params =
            EmbedderParams::zeros(hyper).map_err(|e| Error::Format(format!("bad header: {e}")))?;
        for block in params.blocks_mut() {
            let mut bytes = vec![0u8; block.len() * 4];
            r.read_exact(&mut bytes)
                .map_err(|_| Error::Format("truncated parameter tensors".into()))?;
            for (x, c) in block.iter_mut().zip(bytes.chunks_exact(4)) {
                *x = f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64;
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format(
                "trailing bytes after parameter tensors".into(),
            ));
        }
        if !params.is_finite() {
            return Err(Error::Integrity("non-finite parameter values".into()));
        }
        Ok(params)
    }
}
