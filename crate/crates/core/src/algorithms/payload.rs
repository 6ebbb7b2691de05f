use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return config(format!("tensor shape {shape:?} needs {expected} values, got {}", data.len()));
        }
        Ok(Self { name: name.into(), shape, data })
    }
}

/// Everything a client and the server exchange in one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunicablePayload {
    pub tensors: Vec<Tensor>,
}

const MAGIC: &[u8; 4] = b"FPP1";

impl CommunicablePayload {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    /// Number of real parameters carried.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// True when names and shapes agree tensor by tensor.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    /// Bit-exact hash of the contents.
    pub fn fingerprint(&self) -> u64 {
        let bits: Vec<u64> = self.tensors.iter().flat_map(|t| t.data.iter().map(|v| v.to_bits())).collect();
        crate::rng::derive_seed(&bits)
    }

    /// Little-endian binary encoding; decodes bit-exactly.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.scalar_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u64).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u64).to_le_bytes());
            for s in &t.shape {
                out.extend_from_slice(&(*s as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = Reader { bytes, pos: 0 };
        if reader.take(4)? != MAGIC {
            return Err(Error::Data("payload: bad magic".into()));
        }
        let count = reader.u64()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = reader.u64()? as usize;
            let name =
                String::from_utf8(reader.take(name_len)?.to_vec()).map_err(|_| Error::Data("payload: tensor name is not utf-8".into()))?;
            let rank = reader.u64()? as usize;
            let shape = (0..rank).map(|_| reader.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data =
                (0..n).map(|_| reader.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor { name, shape, data });
        }
        if reader.pos != bytes.len() {
            return Err(Error::Data("payload: trailing bytes".into()));
        }
        Ok(Self { tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Data("payload: truncated".into()));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
