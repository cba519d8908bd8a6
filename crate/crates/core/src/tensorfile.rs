//! Flat binary tensor container.
//!
//! Layout:
//!
//! ```text
//! [u64 LE: header length N][N bytes: UTF-8 JSON header][f32 LE data…]
//! ```
//!
//! The header is `{"metadata": {...}, "tensors": {name: {"shape": [...], "offset": bytes}}}`
//! with offsets counted from the first data byte. Writers lay tensors out
//! contiguously in name order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EntryHeader {
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    metadata: Value,
    tensors: BTreeMap<String, EntryHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub metadata: Value,
    pub tensors: BTreeMap<String, NamedTensor>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::contract(format!(
                "tensor {name}: shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        self.tensors.insert(name, NamedTensor { shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::contract(format!("tensor {name} missing from file")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0usize;
        let mut entries = BTreeMap::new();
        for (name, t) in &self.tensors {
            entries.insert(
                name.clone(),
                EntryHeader {
                    shape: t.shape.clone(),
                    offset,
                },
            );
            offset += t.data.len() * 4;
        }
        let header = serde_json::to_vec(&Header {
            metadata: self.metadata.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(8 + header.len() + offset);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::malformed(0, "missing header length"))?;
        let header_len = u64::from_le_bytes(len_bytes);
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| n.checked_add(8))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::malformed(8, format!("header length {header_len} exceeds file")))?;
        let header: Header = serde_json::from_slice(&bytes[8..header_end])
            .map_err(|e| Error::malformed(8, format!("bad JSON header: {e}")))?;
        let data = &bytes[header_end..];

        let mut tensors = BTreeMap::new();
        for (name, entry) in header.tensors {
            let count = entry
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::malformed(8, format!("tensor {name}: shape overflows")))?;
            let at = header_end + entry.offset;
            if entry.offset % 4 != 0 {
                return Err(Error::malformed(at, format!("tensor {name}: misaligned offset")));
            }
            let end = count
                .checked_mul(4)
                .and_then(|n| n.checked_add(entry.offset))
                .filter(|&end| end <= data.len())
                .ok_or_else(|| Error::malformed(at, format!("tensor {name}: data runs past end of file")))?;
            let values = data[entry.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(
                name,
                NamedTensor {
                    shape: entry.shape,
                    data: values,
                },
            );
        }
        Ok(TensorFile {
            metadata: header.metadata,
            tensors,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_length_header_then_data() {
        let mut f = TensorFile::new();
        f.insert("b", vec![1], vec![2.0]).unwrap();
        f.insert("a", vec![2], vec![1.0, -1.0]).unwrap();
        let bytes = f.to_bytes().unwrap();
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: Value = serde_json::from_slice(&bytes[8..8 + n]).unwrap();
        assert_eq!(header["tensors"]["a"]["offset"], 0);
        assert_eq!(header["tensors"]["b"]["offset"], 8);
        assert_eq!(&bytes[8 + n..8 + n + 4], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 8 + n + 12);
    }

    #[test]
    fn rejects_truncated_and_garbage() {
        let mut f = TensorFile::new();
        f.insert("w", vec![2, 2], vec![1.0; 4]).unwrap();
        let bytes = f.to_bytes().unwrap();
        assert!(matches!(
            TensorFile::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::MalformedFile { .. })
        ));
        assert!(TensorFile::from_bytes(&[1, 2, 3]).is_err());
        assert!(TensorFile::from_bytes(&[255; 16]).is_err());
        assert!(f.insert("bad", vec![3], vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(vals in prop::collection::vec(prop::num::f32::NORMAL, 0..64), split in 0usize..64) {
            let split = split.min(vals.len());
            let mut f = TensorFile::new();
            f.metadata = serde_json::json!({"k": "v"});
            f.insert("x", vec![split], vals[..split].to_vec()).unwrap();
            f.insert("y", vec![1, vals.len() - split], vals[split..].to_vec()).unwrap();
            let back = TensorFile::from_bytes(&f.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
