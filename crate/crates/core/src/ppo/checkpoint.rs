//! Flat named-tensor archive, little-endian, for parameters, optimizer state
//! and generator states.
//!
//! Layout: magic, `u32` entry count, then per entry `u32` name length, UTF-8
//! name, `u8` dtype (0 = f64, 1 = u8), `u32` rank, `u64` dims, raw data.

use std::io::{self, Read, Write};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"MMPCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed archive: {0}")]
    Format(String),
    #[error("archive has no entry named {0:?}")]
    Missing(String),
    #[error("entry {name:?} has {got} values, expected {expected}")]
    Size { name: String, expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    U8(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<u64>,
    pub data: TensorData,
}

impl Tensor {
    pub fn vector(values: Vec<f64>) -> Self {
        Self { shape: vec![values.len() as u64], data: TensorData::F64(values) }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: TensorData::F64(vec![value]) }
    }

    pub fn bytes(values: Vec<u8>) -> Self {
        Self { shape: vec![values.len() as u64], data: TensorData::U8(values) }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub entries: Vec<(String, Tensor)>,
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

impl Archive {
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, tensor));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t).ok_or_else(|| CheckpointError::Missing(name.into()))
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64], CheckpointError> {
        match &self.get(name)?.data {
            TensorData::F64(v) => Ok(v),
            TensorData::U8(_) => Err(CheckpointError::Format(format!("{name:?} is not a float tensor"))),
        }
    }

    /// Float entry of exactly `len` values.
    pub fn f64s_sized(&self, name: &str, len: usize) -> Result<&[f64], CheckpointError> {
        let v = self.f64s(name)?;
        if v.len() != len {
            return Err(CheckpointError::Size { name: name.into(), expected: len, got: v.len() });
        }
        Ok(v)
    }

    pub fn scalar(&self, name: &str) -> Result<f64, CheckpointError> {
        Ok(self.f64s_sized(name, 1)?[0])
    }

    pub fn u8s(&self, name: &str) -> Result<&[u8], CheckpointError> {
        match &self.get(name)?.data {
            TensorData::U8(v) => Ok(v),
            TensorData::F64(_) => Err(CheckpointError::Format(format!("{name:?} is not a byte tensor"))),
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let dtype: u8 = match t.data {
                TensorData::F64(_) => 0,
                TensorData::U8(_) => 1,
            };
            w.write_all(&[dtype])?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for d in &t.shape {
                w.write_all(&d.to_le_bytes())?;
            }
            match &t.data {
                TensorData::F64(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                TensorData::U8(v) => w.write_all(v)?,
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let count = read_u32(&mut r)?;
        let mut archive = Archive::default();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| CheckpointError::Format(e.to_string()))?;
            let mut dtype = [0u8; 1];
            r.read_exact(&mut dtype)?;
            let rank = read_u32(&mut r)? as usize;
            let shape = (0..rank).map(|_| read_u64(&mut r)).collect::<io::Result<Vec<_>>>()?;
            let n = shape.iter().product::<u64>() as usize;
            let data = match dtype[0] {
                0 => {
                    let mut raw = vec![0u8; 8 * n];
                    r.read_exact(&mut raw)?;
                    TensorData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
                }
                1 => {
                    let mut raw = vec![0u8; n];
                    r.read_exact(&mut raw)?;
                    TensorData::U8(raw)
                }
                other => return Err(CheckpointError::Format(format!("unknown dtype {other}"))),
            };
            archive.entries.push((name, Tensor { shape, data }));
        }
        Ok(archive)
    }
}

/// Seed, stream and word position of a generator.
pub fn rng_state(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = rng.get_seed().to_vec();
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

pub fn restore_rng(bytes: &[u8]) -> Result<ChaCha8Rng, CheckpointError> {
    use rand::SeedableRng;
    if bytes.len() != 56 {
        return Err(CheckpointError::Format(format!("generator state has {} bytes, expected 56", bytes.len())));
    }
    let mut rng = ChaCha8Rng::from_seed(bytes[..32].try_into().unwrap());
    rng.set_stream(u64::from_le_bytes(bytes[32..40].try_into().unwrap()));
    rng.set_word_pos(u128::from_le_bytes(bytes[40..56].try_into().unwrap()));
    Ok(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn round_trip() {
        let mut a = Archive::default();
        a.insert("w", Tensor { shape: vec![2, 2], data: TensorData::F64(vec![1.0, -2.5, f64::MIN_POSITIVE, 3e300]) });
        a.insert("s", Tensor::scalar(0.1));
        a.insert("b", Tensor::bytes(vec![1, 2, 3]));
        let mut buf = Vec::new();
        a.write(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(&buf[8..12], &3u32.to_le_bytes());
        let b = Archive::read(buf.as_slice()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.scalar("s").unwrap(), 0.1);
        assert!(matches!(b.f64s("nope"), Err(CheckpointError::Missing(_))));
    }

    #[test]
    fn generator_resumes_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..37 {
            rng.random::<u32>();
        }
        let mut restored = restore_rng(&rng_state(&rng)).unwrap();
        let a: Vec<f64> = (0..10).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..10).map(|_| restored.random()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_archive_is_an_error() {
        let mut a = Archive::default();
        a.insert("w", Tensor::vector(vec![1.0; 4]));
        let mut buf = Vec::new();
        a.write(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(Archive::read(buf.as_slice()).is_err());
    }
}
