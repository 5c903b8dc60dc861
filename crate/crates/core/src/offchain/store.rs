use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use super::keccak256;
use crate::ids::Hash32;

/// Append-only blob store addressed by the Keccak-256 of each blob.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContentStore {
    blobs: BTreeMap<Hash32, Vec<u8>>,
}

impl ContentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `blob` and returns its content id. Storing the same bytes twice
    /// is a no-op.
    pub fn put(&mut self, blob: &[u8]) -> Hash32 {
        let cid = keccak256(blob);
        self.blobs.entry(cid).or_insert_with(|| blob.to_vec());
        cid
    }

    pub fn get(&self, cid: &Hash32) -> Option<&[u8]> {
        self.blobs.get(cid).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    pub fn cids(&self) -> impl Iterator<Item = &Hash32> {
        self.blobs.keys()
    }

    /// Writes one file per blob, named by the hex content id.
    pub fn save(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for (cid, blob) in &self.blobs {
            fs::write(dir.join(hex::encode(cid)), blob)?;
        }
        Ok(())
    }

    /// Loads blobs from `dir` keyed by their file names, without re-hashing,
    /// so a blob edited on disk is detected at verification time rather than
    /// silently re-addressed.
    pub fn load(dir: &Path) -> io::Result<Self> {
        let mut blobs = BTreeMap::new();
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name();
            let Some(cid) = name.to_str().and_then(|n| hex::decode(n).ok()).and_then(|b| b.try_into().ok())
            else {
                log::warn!("ignoring non-blob file {:?} in {}", name, dir.display());
                continue;
            };
            blobs.insert(cid, fs::read(entry.path())?);
        }
        Ok(ContentStore { blobs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn get_returns_what_was_put() {
        let mut store = ContentStore::new();
        let cid = store.put(b"scores");
        assert_eq!(cid, keccak256(b"scores"));
        assert_eq!(store.get(&cid), Some(&b"scores"[..]));
        assert_eq!(store.put(b"scores"), cid);
        assert_eq!(store.len(), 1);
        assert_eq!(store.get(&[0; 32]), None);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ContentStore::new();
        store.put(b"");
        store.put(b"one");
        store.save(dir.path()).unwrap();
        fs::write(dir.path().join("README"), b"not a blob").unwrap();
        assert_eq!(ContentStore::load(dir.path()).unwrap(), store);
    }
}
