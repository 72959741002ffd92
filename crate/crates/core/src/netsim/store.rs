// SPDX-License-Identifier: Apache-2.0

//! Per-VM persistent key/value store.
//!
//! File format, all integers big-endian:
//! `count (4) || { key_len (2) || key || value_len (4) || value }*`,
//! entries in ascending key order.

use crate::crypto::Reader;
use std::collections::BTreeMap;
use std::io;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("malformed store file")]
    Malformed,
    #[error("key longer than 65535 bytes")]
    KeyTooLong,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VmStore {
    entries: BTreeMap<String, Vec<u8>>,
}

impl VmStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&[u8]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn put(&mut self, key: &str, value: Vec<u8>) {
        self.entries.insert(key.to_string(), value);
    }

    pub fn remove(&mut self, key: &str) -> Option<Vec<u8>> {
        self.entries.remove(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u8])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn encode(&self) -> Result<Vec<u8>, StoreError> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.entries.len() as u32).to_be_bytes());
        for (k, v) in &self.entries {
            let klen = u16::try_from(k.len()).map_err(|_| StoreError::KeyTooLong)?;
            out.extend_from_slice(&klen.to_be_bytes());
            out.extend_from_slice(k.as_bytes());
            out.extend_from_slice(&(v.len() as u32).to_be_bytes());
            out.extend_from_slice(v);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut r = Reader::new(bytes);
        let count = r.u32().ok_or(StoreError::Malformed)?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let klen = r.u16().ok_or(StoreError::Malformed)? as usize;
            let key = std::str::from_utf8(r.take(klen).ok_or(StoreError::Malformed)?)
                .map_err(|_| StoreError::Malformed)?
                .to_string();
            let vlen = r.u32().ok_or(StoreError::Malformed)? as usize;
            let value = r.take(vlen).ok_or(StoreError::Malformed)?.to_vec();
            if entries.insert(key, value).is_some() {
                return Err(StoreError::Malformed);
            }
        }
        if !r.is_empty() {
            return Err(StoreError::Malformed);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Self::decode(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_layout() {
        let mut s = VmStore::new();
        s.put("ab", vec![9, 8, 7]);
        let bytes = s.encode().unwrap();
        assert_eq!(bytes, vec![0, 0, 0, 1, 0, 2, b'a', b'b', 0, 0, 0, 3, 9, 8, 7]);
        assert_eq!(VmStore::decode(&bytes).unwrap(), s);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vm1.store");
        let mut s = VmStore::new();
        s.put("lib/app/internals", vec![1; 40]);
        s.put("app/app/state", vec![]);
        s.save(&path).unwrap();
        assert_eq!(VmStore::load(&path).unwrap(), s);
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let mut s = VmStore::new();
        s.put("k", vec![1, 2]);
        let bytes = s.encode().unwrap();
        assert!(VmStore::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(VmStore::decode(&extra).is_err());
    }
}
