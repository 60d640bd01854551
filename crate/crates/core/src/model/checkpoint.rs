//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! "HITR" | u32 version | u64 len | config JSON (sorted keys)
//! per parameter, in model order:
//!   u32 name_len | name | u32 rank | u64 dims[rank] | f32 payload
//! ```
//! The parameter list is implied by the config, so loading rebuilds the
//! model from the header and checks every tensor against it.

use std::fs;
use std::path::Path;

use hitter_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use super::{Hitter, HitterConfig};
use crate::error::{io_err, CoreError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HITR";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: HitterConfig,
    num_entities: usize,
    num_relations: usize,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(CoreError::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| CoreError::Checkpoint(format!("{what} overflows")))
    }
}

impl<T: Scalar> Hitter<T> {
    fn header_json(&self) -> Result<String> {
        let header = Header {
            model: self.config.clone(),
            num_entities: self.num_entities,
            num_relations: self.num_relations,
        };
        // serde_json maps keep keys sorted, which makes the blob canonical
        Ok(serde_json::to_string(&serde_json::to_value(header)?)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = self.header_json()?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        for (_, p) in self.store.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            let shape = p.value().shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in p.value().data() {
                out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Write to a sibling temp file, then rename into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("partial");
        fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let header = read_header(&mut r)?;
        let mut model = Self::new(header.model, header.num_entities, header.num_relations, 0)?;
        model.read_params(&mut r)?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes)
    }

    /// Overwrite this model's weights; the checkpoint must describe the
    /// same tensors. Nothing changes on error.
    pub fn load_weights(&mut self, bytes: &[u8]) -> Result<()> {
        let mut r = Reader { buf: bytes, pos: 0 };
        read_header(&mut r)?;
        self.read_params(&mut r)
    }

    fn read_params(&mut self, r: &mut Reader<'_>) -> Result<()> {
        let mut values = Vec::with_capacity(self.store.len());
        for (_, p) in self.store.iter() {
            let name_len = r.u32("parameter name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
                .map_err(|_| CoreError::Checkpoint("parameter name is not UTF-8".into()))?;
            let rank = r.u32("rank")? as usize;
            let dims = (0..rank).map(|_| r.len("dimension")).collect::<Result<Vec<_>>>()?;
            if name != p.name || dims != p.value().shape() {
                return Err(CoreError::Checkpoint(format!(
                    "parameter `{}` {:?} does not match checkpoint entry `{name}` {dims:?}",
                    p.name,
                    p.value().shape()
                )));
            }
            let n = p.value().len();
            let raw = r.take(4 * n, &p.name)?;
            let data: Vec<T> = raw
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect();
            values.push(Tensor::new(dims, data)?);
        }
        if r.pos != r.buf.len() {
            return Err(CoreError::Checkpoint(format!(
                "{} trailing bytes after the last parameter",
                r.buf.len() - r.pos
            )));
        }
        self.store.load_values(values)?;
        Ok(())
    }
}

fn read_header(r: &mut Reader<'_>) -> Result<Header> {
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(CoreError::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let len = r.len("config length")?;
    let blob = r.take(len, "config")?;
    serde_json::from_slice(blob).map_err(|e| CoreError::Checkpoint(format!("bad config blob: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(d: usize) -> HitterConfig {
        HitterConfig {
            d_model: d,
            ffn_dim: 2 * d,
            heads: 2,
            entity_layers: 1,
            context_layers: 1,
            ..HitterConfig::default()
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = Hitter::<f32>::new(cfg(8), 6, 4, 11).unwrap();
        let back = Hitter::<f32>::from_bytes(&m.to_bytes().unwrap()).unwrap();
        assert_eq!(back.config(), m.config());
        for ((_, a), (_, b)) in m.store().iter().zip(back.store().iter()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.value()), bits(b.value()));
        }
    }

    #[test]
    fn truncation_leaves_the_target_untouched() {
        let src = Hitter::<f32>::new(cfg(8), 6, 4, 1).unwrap();
        let bytes = src.to_bytes().unwrap();
        let mut dst = Hitter::<f32>::new(cfg(8), 6, 4, 2).unwrap();
        let before = dst.store().values();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            let err = dst.load_weights(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, CoreError::Checkpoint(_)), "{err}");
            assert_eq!(dst.store().values(), before);
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(dst.load_weights(&extra).is_err());
    }

    #[test]
    fn mismatched_config_names_the_first_bad_tensor() {
        let src = Hitter::<f32>::new(cfg(8), 6, 4, 1).unwrap();
        let mut dst = Hitter::<f32>::new(cfg(8), 7, 4, 1).unwrap();
        let err = dst.load_weights(&src.to_bytes().unwrap()).unwrap_err().to_string();
        assert!(err.contains("`entity_embeddings`"), "{err}");
        let mut dst = Hitter::<f32>::new(cfg(4), 6, 4, 1).unwrap();
        let err = dst.load_weights(&src.to_bytes().unwrap()).unwrap_err().to_string();
        assert!(err.contains("`entity_embeddings`"), "{err}");
    }

    #[test]
    fn bad_magic_and_version() {
        let m = Hitter::<f32>::new(cfg(8), 3, 2, 1).unwrap();
        let mut bytes = m.to_bytes().unwrap();
        bytes[4] = 9;
        assert!(Hitter::<f32>::from_bytes(&bytes).unwrap_err().to_string().contains("version"));
        bytes[0] = b'X';
        assert!(Hitter::<f32>::from_bytes(&bytes).unwrap_err().to_string().contains("magic"));
    }
}
