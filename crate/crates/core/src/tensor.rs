//! RAYTNSR1 tensor files.
//!
//! Layout: the 8 magic bytes `RAYTNSR1`, a little-endian `u32` header length,
//! a UTF-8 JSON header `{"dtype":"f32","shape":[...],"layout":"row-major"}`,
//! then the raw little-endian `f32` payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RAYTNSR1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
    layout: String,
}

/// A dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "tensor shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            dtype: "f32".into(),
            shape: self.shape.clone(),
            layout: "row-major".into(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Format("missing RAYTNSR1 magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() < hlen {
            return Err(Error::Format("truncated tensor header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| Error::Format(format!("tensor header: {e}")))?;
        if header.dtype != "f32" {
            return Err(Error::Format(format!("unsupported dtype {:?}", header.dtype)));
        }
        if header.layout != "row-major" {
            return Err(Error::Format(format!("unsupported layout {:?}", header.layout)));
        }
        let count: usize = header.shape.iter().product();
        let payload = &body[hlen..];
        if payload.len() != 4 * count {
            return Err(Error::Format(format!(
                "tensor payload has {} bytes, shape {:?} needs {}",
                payload.len(),
                header.shape,
                4 * count
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor {
            shape: header.shape,
            data,
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.encode())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Tensor::decode(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Tensor::decode(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_bit_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let bytes = t.encode();
        let header = br#"{"dtype":"f32","shape":[2,1],"layout":"row-major"}"#;
        assert_eq!(&bytes[..8], b"RAYTNSR1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, header.len());
        assert_eq!(&bytes[12..12 + header.len()], header);
        assert_eq!(&bytes[12 + header.len()..], &[0, 0, 0x80, 0x3f, 0, 0, 0x20, 0xc0]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(Tensor::decode(b"NOTATENSOR__").is_err());
        let mut bytes = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().encode();
        bytes.pop();
        assert!(matches!(Tensor::decode(&bytes), Err(Error::Format(_))));
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(shape in proptest::collection::vec(0usize..5, 0..4), seed in any::<u32>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|i| (i as f32) * 0.37 - seed as f32 * 1e-3).collect();
            let t = Tensor::new(shape, data).unwrap();
            prop_assert_eq!(Tensor::decode(&t.encode()).unwrap(), t);
        }
    }
}
