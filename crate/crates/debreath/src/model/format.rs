//! Binary model file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            4 bytes  "BRNM"
//! version          u16
//! depth            u32
//! base_filters     u32
//! dropout_rate     f32
//! use_batch_norm   u32 (0 or 1)
//! out_classes      u32
//! input_frames     u32
//! input_bins       u32
//! tensor_count     u32
//! per tensor:      name_len u16, name UTF-8,
//!                  rank u8, extents u32 x rank,
//!                  values f32 row-major
//! ```
//!
//! Tensors are written in the architecture's canonical layer order, so a
//! given (config, params) pair always serializes to identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, ModelFormatError, Result};
use crate::tensor::Tensor;

use super::params::layer_specs;
use super::{ModelParams, UNetConfig};

pub const MODEL_MAGIC: [u8; 4] = *b"BRNM";
pub const MODEL_VERSION: u16 = 1;

pub fn save_model_bytes(config: &UNetConfig, params: &ModelParams) -> Result<Vec<u8>> {
    config.validate()?;
    params.validate(config)?;
    let specs = layer_specs(config);

    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.depth as u32).to_le_bytes());
    out.extend_from_slice(&(config.base_filters as u32).to_le_bytes());
    out.extend_from_slice(&(config.dropout_rate as f32).to_le_bytes());
    out.extend_from_slice(&(config.use_batch_norm as u32).to_le_bytes());
    out.extend_from_slice(&(config.out_classes as u32).to_le_bytes());
    out.extend_from_slice(&(config.input_frames as u32).to_le_bytes());
    out.extend_from_slice(&(config.input_bins as u32).to_le_bytes());
    out.extend_from_slice(&(specs.len() as u32).to_le_bytes());

    for spec in &specs {
        let tensor = params.get(&spec.name)?;
        let name = spec.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(tensor.shape().len() as u8);
        for &extent in tensor.shape() {
            out.extend_from_slice(&(extent as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_model(path: &Path, config: &UNetConfig, params: &ModelParams) -> Result<()> {
    let bytes = save_model_bytes(config, params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], ModelFormatError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelFormatError::Corrupt(format!(
                "unexpected end of file at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> std::result::Result<u16, ModelFormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, ModelFormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> std::result::Result<f32, ModelFormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> std::result::Result<u8, ModelFormatError> {
        Ok(self.take(1)?[0])
    }
}

pub fn load_model_bytes(bytes: &[u8]) -> Result<(UNetConfig, ModelParams)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MODEL_MAGIC {
        return Err(ModelFormatError::BadMagic.into());
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(ModelFormatError::UnsupportedVersion(version).into());
    }

    let config = UNetConfig {
        depth: r.u32()? as usize,
        base_filters: r.u32()? as usize,
        dropout_rate: r.f32()? as f64,
        use_batch_norm: match r.u32()? {
            0 => false,
            1 => true,
            other => {
                return Err(
                    ModelFormatError::Corrupt(format!("use_batch_norm flag is {other}")).into(),
                )
            }
        },
        out_classes: r.u32()? as usize,
        input_frames: r.u32()? as usize,
        input_bins: r.u32()? as usize,
    };
    config
        .validate()
        .map_err(|e| ModelFormatError::Corrupt(format!("invalid stored config: {e}")))?;

    let count = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| ModelFormatError::Corrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(4 * n)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(
                ModelFormatError::Corrupt(format!("tensor {name} holds non-finite values")).into(),
            );
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| ModelFormatError::Corrupt(format!("tensor {name}: {e}")))?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(ModelFormatError::Corrupt(format!("duplicate tensor {name}")).into());
        }
    }
    if r.pos != bytes.len() {
        return Err(ModelFormatError::Corrupt(format!(
            "{} trailing bytes after tensor data",
            bytes.len() - r.pos
        ))
        .into());
    }

    let params = ModelParams::from_tensors(tensors);
    params
        .validate(&config)
        .map_err(|e| ModelFormatError::Corrupt(format!("tensor set mismatch: {e}")))?;
    Ok((config, params))
}

pub fn load_model(path: &Path) -> Result<(UNetConfig, ModelParams)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_model_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::super::init_params;
    use super::*;

    fn small_config() -> UNetConfig {
        UNetConfig {
            depth: 2,
            base_filters: 4,
            input_frames: 8,
            input_bins: 8,
            ..UNetConfig::default()
        }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let cfg = small_config();
        let params = init_params(&cfg, 5).unwrap();
        let bytes = save_model_bytes(&cfg, &params).unwrap();
        let (cfg2, params2) = load_model_bytes(&bytes).unwrap();
        // dropout_rate travels as f32, everything else is exact.
        assert_eq!(cfg2.dropout_rate, cfg.dropout_rate as f32 as f64);
        assert_eq!(UNetConfig { dropout_rate: cfg.dropout_rate, ..cfg2 }, cfg);
        assert_eq!(params, params2);
        // A second hop is bit-stable.
        let bytes2 = save_model_bytes(&cfg2, &params2).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn serialization_is_byte_deterministic() {
        let cfg = small_config();
        let params = init_params(&cfg, 5).unwrap();
        assert_eq!(
            save_model_bytes(&cfg, &params).unwrap(),
            save_model_bytes(&cfg, &params).unwrap()
        );
    }

    #[test]
    fn wrong_magic_is_distinct_from_wrong_version() {
        let cfg = small_config();
        let params = init_params(&cfg, 5).unwrap();
        let mut bytes = save_model_bytes(&cfg, &params).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        match load_model_bytes(&bad_magic).unwrap_err() {
            Error::ModelFormat(ModelFormatError::BadMagic) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }

        bytes[4] = 9; // version low byte
        match load_model_bytes(&bytes).unwrap_err() {
            Error::ModelFormat(ModelFormatError::UnsupportedVersion(9)) => {}
            other => panic!("expected UnsupportedVersion, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let cfg = small_config();
        let params = init_params(&cfg, 5).unwrap();
        let bytes = save_model_bytes(&cfg, &params).unwrap();
        let err = load_model_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(
            matches!(err, Error::ModelFormat(ModelFormatError::Corrupt(_))),
            "{err:?}"
        );
    }

    #[test]
    fn trailing_garbage_is_corrupt() {
        let cfg = small_config();
        let params = init_params(&cfg, 5).unwrap();
        let mut bytes = save_model_bytes(&cfg, &params).unwrap();
        bytes.extend_from_slice(&[0, 1, 2]);
        assert!(matches!(
            load_model_bytes(&bytes).unwrap_err(),
            Error::ModelFormat(ModelFormatError::Corrupt(_))
        ));
    }
}
