//! Binary checkpoint codec.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "RMNTCKPT"
//! version      u32       1
//! config       7 × u64   input_len, window_len, window_step, block_units,
//!                        summary_units, embed_units, num_classes
//!              6 × f64   dropout_concat, dropout_summary, dropout_embedding,
//!                        leaky_slope, bn_momentum, bn_epsilon
//! class names  u32 count, then per name: u32 byte length + UTF-8 bytes
//! arrays       u32 count, then per array: u64 element count + f64 values
//! ```
//!
//! Arrays follow [`RamanNet::all_arrays`] order. Values are stored as 8-byte
//! floats so a round trip is bit-exact.

use alloc::string::String;
use alloc::vec::Vec;

use super::{ModelConfig, RamanNet};
use crate::error::{CheckpointError, Result};

pub const MAGIC: &[u8; 8] = b"RMNTCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// A model together with the class-name table its output indices refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: RamanNet,
    pub class_names: Vec<String>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let cfg = self.model.config();
        let arrays = self.model.all_arrays();
        let mut out = Vec::with_capacity(
            128 + arrays.iter().map(|a| 8 + 8 * a.len()).sum::<usize>(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for v in [
            cfg.input_len,
            cfg.window_len,
            cfg.window_step,
            cfg.block_units,
            cfg.summary_units,
            cfg.embed_units,
            cfg.num_classes,
        ] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for v in [
            cfg.dropout_concat,
            cfg.dropout_summary,
            cfg.dropout_embedding,
            cfg.leaky_slope,
            cfg.bn_momentum,
            cfg.bn_epsilon,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.class_names.len() as u32).to_le_bytes());
        for name in &self.class_names {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
        for a in arrays {
            out.extend_from_slice(&(a.len() as u64).to_le_bytes());
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, offset: 0 };
        let magic = r.take(MAGIC.len())?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic {
                found: magic.to_vec(),
            }
            .into());
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            }
            .into());
        }
        let mut ints = [0usize; 7];
        for v in &mut ints {
            *v = usize::try_from(r.u64()?)
                .map_err(|_| malformed("config integer does not fit in usize"))?;
        }
        let mut floats = [0f64; 6];
        for v in &mut floats {
            *v = r.f64()?;
        }
        let config = ModelConfig {
            input_len: ints[0],
            window_len: ints[1],
            window_step: ints[2],
            block_units: ints[3],
            summary_units: ints[4],
            embed_units: ints[5],
            num_classes: ints[6],
            dropout_concat: floats[0],
            dropout_summary: floats[1],
            dropout_embedding: floats[2],
            leaky_slope: floats[3],
            bn_momentum: floats[4],
            bn_epsilon: floats[5],
        };
        config
            .validate()
            .map_err(|e| malformed(&alloc::format!("stored config is invalid: {e}")))?;

        let name_count = r.u32()? as usize;
        let mut class_names = Vec::with_capacity(name_count.min(1 << 16));
        for _ in 0..name_count {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            let name = core::str::from_utf8(raw).map_err(|_| malformed("class name is not UTF-8"))?;
            class_names.push(String::from(name));
        }
        if !class_names.is_empty() && class_names.len() != config.num_classes {
            return Err(malformed(&alloc::format!(
                "{} class names for {} classes",
                class_names.len(),
                config.num_classes
            ))
            .into());
        }

        // Size-check the whole payload against the config before allocating.
        let mut model = RamanNet::zeros(config)?;
        let array_count = r.u32()? as usize;
        let mut targets = model.all_arrays_mut();
        if array_count != targets.len() {
            return Err(malformed(&alloc::format!(
                "{array_count} arrays stored, config implies {}",
                targets.len()
            ))
            .into());
        }
        for (i, target) in targets.iter_mut().enumerate() {
            let len = r.u64()?;
            if len != target.len() as u64 {
                return Err(malformed(&alloc::format!(
                    "array {i} has {len} values, config implies {}",
                    target.len()
                ))
                .into());
            }
            let raw = r.take(target.len() * 8)?;
            for (t, chunk) in target.iter_mut().zip(raw.chunks_exact(8)) {
                *t = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }
        drop(targets);
        if r.offset != bytes.len() {
            return Err(malformed(&alloc::format!(
                "{} trailing bytes",
                bytes.len() - r.offset
            ))
            .into());
        }
        Ok(Self { model, class_names })
    }
}

fn malformed(msg: &str) -> CheckpointError {
    CheckpointError::Malformed(String::from(msg))
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let available = self.bytes.len() - self.offset;
        if n > available {
            return Err(CheckpointError::Truncated {
                offset: self.offset,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::numerics::{Matrix, Mode};
    use crate::rng::rng_from_seed;

    fn small() -> Checkpoint {
        let mut cfg = ModelConfig::new(60, 3);
        cfg.window_len = 20;
        cfg.window_step = 10;
        cfg.block_units = 3;
        cfg.summary_units = 5;
        cfg.embed_units = 4;
        let mut rng = rng_from_seed(11);
        let mut model = RamanNet::new(cfg, &mut rng).unwrap();
        // move running statistics off their defaults
        let x = Matrix::from_vec(4, 60, (0..240).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        model.forward(&x, Mode::Train, &mut rng).unwrap();
        Checkpoint {
            model,
            class_names: ["a", "b", "c"].map(String::from).to_vec(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = small();
        let bytes = ckpt.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        for (a, b) in ckpt.model.all_arrays().iter().zip(back.model.all_arrays()) {
            let a: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert_eq!(back, ckpt);
        assert_eq!(back.encode(), bytes);

        let x = Matrix::from_vec(2, 60, (0..120).map(|i| i as f64 / 120.0).collect()).unwrap();
        let (l1, e1) = ckpt.model.infer(&x).unwrap();
        let (l2, e2) = back.model.infer(&x).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(e1, e2);
    }

    #[test]
    fn every_truncation_is_reported_as_truncation() {
        let bytes = small().encode();
        for cut in [0, 4, 8, 11, 40, 100, bytes.len() / 2, bytes.len() - 1] {
            match Checkpoint::decode(&bytes[..cut]) {
                Err(Error::Checkpoint(CheckpointError::Truncated { .. })) => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn corrupt_magic_and_version_are_distinct_errors() {
        let mut bytes = small().encode();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::decode(&bytes),
            Err(Error::Checkpoint(CheckpointError::BadMagic { .. }))
        ));
        let mut bytes = small().encode();
        bytes[8] = 2;
        assert!(matches!(
            Checkpoint::decode(&bytes),
            Err(Error::Checkpoint(CheckpointError::VersionMismatch { found: 2, expected: 1 }))
        ));
        let mut bytes = small().encode();
        bytes.push(0);
        assert!(matches!(
            Checkpoint::decode(&bytes),
            Err(Error::Checkpoint(CheckpointError::Malformed(_)))
        ));
    }
}
