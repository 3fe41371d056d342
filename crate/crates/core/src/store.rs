//! Named, ordered parameter storage and its binary container format.
//!
//! The same container holds model checkpoints and per-utterance feature
//! or frame dumps. Layout: magic "LIRA", version u16, entry count u32;
//! per entry: name (u16 length + UTF-8), dtype tag u8, rank u8, extents
//! (u32 each), raw little-endian values. Round trips are bit-exact.

use crate::error::{CoreError, Result};
use crate::tensor::{Dtype, Scalar, Tensor};
use indexmap::IndexMap;
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

pub const STORE_MAGIC: &[u8; 4] = b"LIRA";
pub const STORE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(t) => t.shape(),
            TensorData::F64(t) => t.shape(),
        }
    }

    pub fn numel(&self) -> usize {
        match self {
            TensorData::F32(t) => t.numel(),
            TensorData::F64(t) => t.numel(),
        }
    }

    /// Convert to the requested scalar type. f32 -> f64 is exact;
    /// f64 -> f32 rounds.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        match self {
            TensorData::F32(t) => t.cast(),
            TensorData::F64(t) => t.cast(),
        }
    }

    pub fn from_tensor<T: Scalar>(t: Tensor<T>) -> TensorData {
        match T::DTYPE {
            Dtype::F32 => TensorData::F32(t.cast()),
            Dtype::F64 => TensorData::F64(t.cast()),
        }
    }
}

/// Ordered map from hierarchical name to tensor value. Iteration order
/// is insertion order and therefore deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: IndexMap<String, TensorData>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: TensorData) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(CoreError::DuplicateParameter(name));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn insert_tensor<T: Scalar>(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        self.insert(name, TensorData::from_tensor(t))
    }

    /// Replace an existing entry's value (optimizer updates).
    pub fn set(&mut self, name: &str, value: TensorData) -> Result<()> {
        match self.entries.get_mut(name) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(CoreError::UnknownParameter(name.to_string())),
        }
    }

    pub fn get(&self, name: &str) -> Result<&TensorData> {
        self.entries
            .get(name)
            .ok_or_else(|| CoreError::UnknownParameter(name.to_string()))
    }

    pub fn get_tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        Ok(self.get(name)?.to_tensor())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Remove an entry, preserving the order of the rest.
    pub fn remove(&mut self, name: &str) -> Result<TensorData> {
        self.entries
            .shift_remove(name)
            .ok_or_else(|| CoreError::UnknownParameter(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TensorData)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|v| v.numel()).sum()
    }

    /// New store containing the entries under `prefix`, names unchanged.
    pub fn subtree(&self, prefix: &str) -> ParameterStore {
        let mut out = ParameterStore::new();
        for (name, value) in &self.entries {
            if name.starts_with(prefix) {
                out.entries.insert(name.clone(), value.clone());
            }
        }
        out
    }

    /// Copy every entry of `other` into matching names of `self`.
    /// Shapes must agree; missing names are an error.
    pub fn load_subtree(&mut self, other: &ParameterStore) -> Result<()> {
        for (name, value) in other.iter() {
            let existing = self.get(name)?;
            if existing.shape() != value.shape() {
                return Err(CoreError::shape(
                    "load_subtree",
                    format!("{name}: {:?} vs {:?}", existing.shape(), value.shape()),
                ));
            }
            self.set(name, value.clone())?;
        }
        Ok(())
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(STORE_MAGIC);
        buf.extend_from_slice(&STORE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, value) in &self.entries {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            buf.extend_from_slice(nb);
            buf.push(value.dtype().tag());
            let shape = value.shape();
            buf.push(shape.len() as u8);
            for &e in shape {
                buf.extend_from_slice(&(e as u32).to_le_bytes());
            }
            match value {
                TensorData::F32(t) => {
                    for v in t.data() {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
                TensorData::F64(t) => {
                    for v in t.data() {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        buf
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != STORE_MAGIC {
            return Err(CoreError::CorruptStore("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != STORE_VERSION {
            return Err(CoreError::CorruptStore(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|e| CoreError::CorruptStore(e.to_string()))?;
            let dtype = Dtype::from_tag(r.take(1)?[0])?;
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize);
            }
            let numel: usize = shape.iter().product();
            let value = match dtype {
                Dtype::F32 => {
                    let mut data = Vec::with_capacity(numel);
                    for _ in 0..numel {
                        data.push(f32::from_le_bytes(r.take(4)?.try_into().unwrap()));
                    }
                    TensorData::F32(Tensor::new(shape, data).map_err(corrupt)?)
                }
                Dtype::F64 => {
                    let mut data = Vec::with_capacity(numel);
                    for _ in 0..numel {
                        data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
                    }
                    TensorData::F64(Tensor::new(shape, data).map_err(corrupt)?)
                }
            };
            store.insert(name, value)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.serialize())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        Self::deserialize(&bytes)
    }

    /// SHA-256 of the serialized form; used to assert frozen parameters
    /// never move.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.serialize());
        let mut s = String::with_capacity(64);
        for b in digest {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }
}

fn corrupt(e: CoreError) -> CoreError {
    CoreError::CorruptStore(e.to_string())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CoreError::CorruptStore("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert_tensor("encoder/w", Tensor::new(vec![2, 3], vec![0.1f32, -0.5, 3.25, 0.0, 1.5, -2.0]).unwrap())
            .unwrap();
        s.insert_tensor("encoder/b", Tensor::new(vec![3], vec![1.0f64 / 3.0, -0.0, f64::MIN_POSITIVE]).unwrap())
            .unwrap();
        s.insert_tensor("head/w", Tensor::new(vec![1], vec![42.0f32]).unwrap()).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample_store();
        let bytes = s.serialize();
        assert_eq!(&bytes[0..4], STORE_MAGIC);
        let back = ParameterStore::deserialize(&bytes).unwrap();
        assert_eq!(s, back);
        assert_eq!(bytes, back.serialize());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParameterStore::new();
        s.insert_tensor("a", Tensor::<f32>::zeros(vec![1])).unwrap();
        assert!(s.insert_tensor("a", Tensor::<f32>::zeros(vec![1])).is_err());
    }

    #[test]
    fn subtree_selects_by_prefix() {
        let s = sample_store();
        let enc = s.subtree("encoder/");
        assert_eq!(enc.len(), 2);
        assert!(enc.contains("encoder/w"));
        assert!(!enc.contains("head/w"));
    }

    #[test]
    fn iteration_order_is_insertion_order() {
        let s = sample_store();
        let names: Vec<&str> = s.names().collect();
        assert_eq!(names, vec!["encoder/w", "encoder/b", "head/w"]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let s = sample_store();
        s.save(&path).unwrap();
        let back = ParameterStore::load(&path).unwrap();
        assert_eq!(s.content_hash(), back.content_hash());
        assert_eq!(s, back);
    }

    #[test]
    fn corrupt_magic_rejected() {
        let mut bytes = sample_store().serialize();
        bytes[0] = b'X';
        assert!(ParameterStore::deserialize(&bytes).is_err());
    }
}
