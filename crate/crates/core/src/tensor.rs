//! DTEN: a minimal little-endian container for dense tensors.
//!
//! Layout: `b"DTEN"`, `u8` rank, `rank × u32` dims, `u8` dtype
//! (0 = u16 class ids, 1 = f32), then the row-major payload.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DTEN";

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::U16(v) => v.len(),
            TensorData::F32(v) => v.len(),
        }
    }

    fn tag(&self) -> u8 {
        match self {
            TensorData::U16(_) => 0,
            TensorData::F32(_) => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self> {
        if dims.len() > usize::from(u8::MAX) {
            return Err(Error::Format(format!("rank {} does not fit in a byte", dims.len())));
        }
        let expected = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        if expected != Some(data.len()) {
            return Err(Error::ShapeMismatch(format!("dims {dims:?} do not match {} elements", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(6 + 4 * self.dims.len() + 4 * self.data.len());
        buf.extend_from_slice(MAGIC);
        buf.push(self.dims.len() as u8);
        for d in &self.dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        buf.push(self.data.tag());
        match &self.data {
            TensorData::U16(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Format("truncated tensor".into());
        if bytes.len() < 5 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing DTEN magic".into()));
        }
        let rank = usize::from(bytes[4]);
        let mut pos = 5;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let raw = bytes.get(pos..pos + 4).ok_or_else(truncated)?;
            dims.push(u32::from_le_bytes(raw.try_into().expect("four bytes")));
            pos += 4;
        }
        let tag = *bytes.get(pos).ok_or_else(truncated)?;
        pos += 1;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        let payload = &bytes[pos..];
        let data = match tag {
            0 => {
                if payload.len() != count * 2 {
                    return Err(Error::Format(format!("expected {} payload bytes, found {}", count * 2, payload.len())));
                }
                TensorData::U16(payload.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
            }
            1 => {
                if payload.len() != count * 4 {
                    return Err(Error::Format(format!("expected {} payload bytes, found {}", count * 4, payload.len())));
                }
                TensorData::F32(
                    payload
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
                        .collect(),
                )
            }
            other => return Err(Error::Format(format!("unknown dtype tag {other}"))),
        };
        Ok(Self { dims, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 1], TensorData::U16(vec![3, 258])).unwrap();
        let mut bytes = Vec::new();
        t.write_to(&mut bytes).unwrap();
        assert_eq!(bytes, [b'D', b'T', b'E', b'N', 2, 2, 0, 0, 0, 1, 0, 0, 0, 0, 3, 0, 2, 1]);
        assert_eq!(Tensor::from_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn f32_round_trip() {
        let t = Tensor::new(vec![2, 2, 2], TensorData::F32(vec![0.5, -1.0, f32::MIN_POSITIVE, 3.25, 0.0, 1e9, -0.0, 7.0]))
            .unwrap();
        let mut bytes = Vec::new();
        t.write_to(&mut bytes).unwrap();
        assert_eq!(Tensor::read_from(bytes.as_slice()).unwrap(), t);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Tensor::new(vec![3], TensorData::U16(vec![1, 2])).is_err());
        assert!(Tensor::from_bytes(b"DTEX\x00\x00").is_err());
        assert!(Tensor::from_bytes(&[b'D', b'T', b'E', b'N', 1, 2, 0, 0, 0, 0, 1, 0]).is_err());
        assert!(Tensor::from_bytes(&[b'D', b'T', b'E', b'N', 0, 9]).is_err());
    }
}
