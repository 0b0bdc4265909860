//! Single-file key-value store of k-hop subgraph records.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FXSG" version:u8
//! repeated: len:u32 payload[len] crc32(payload):u32
//! index:    count:u32 then count × (id:u16-prefixed utf8, offset:u64)
//! trailer:  index_offset:u64 "FXSG"
//! ```
//!
//! The index is read once at open time; every `get` is a single positioned read.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::proximity::ProximityGraph;
use super::subgraph::{khop_subgraph, SubgraphRecord};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FXSG";
const VERSION: u8 = 1;
const TRAILER_LEN: u64 = 12;

pub struct SubgraphStore {
    path: PathBuf,
    ids: Vec<String>,
    index: HashMap<String, u64>,
    file: Mutex<File>,
}

impl std::fmt::Debug for SubgraphStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubgraphStore")
            .field("path", &self.path)
            .field("records", &self.ids.len())
            .finish()
    }
}

/// Extracts the `hops`-hop subgraph of every node and writes them to `path`.
pub fn build_store(graph: &ProximityGraph, hops: usize, path: &Path) -> Result<SubgraphStore> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&[VERSION])?;
    let mut offset = MAGIC.len() as u64 + 1;
    let mut entries = Vec::with_capacity(graph.len());
    for id in graph.ids() {
        let payload = khop_subgraph(graph, id, hops)?.encode()?;
        let len = u32::try_from(payload.len())
            .map_err(|_| Error::Input(format!("subgraph of {id} too large to store")))?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(&payload)?;
        out.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
        entries.push((id.clone(), offset));
        offset += 8 + payload.len() as u64;
    }
    let mut index = ByteWriter::new();
    index.u32(entries.len() as u32);
    for (id, off) in &entries {
        index.str(id)?;
        index.u64(*off);
    }
    out.write_all(&index.into_inner())?;
    out.write_all(&offset.to_le_bytes())?;
    out.write_all(MAGIC)?;
    out.flush()?;
    drop(out);
    SubgraphStore::open(path)
}

impl SubgraphStore {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path)?;
        let size = file.metadata()?.len();
        if size < MAGIC.len() as u64 + 1 + TRAILER_LEN {
            return Err(Error::Format(format!(
                "{} is too short for a store",
                path.display()
            )));
        }
        let mut header = [0u8; 5];
        file.read_exact(&mut header)?;
        if &header[..4] != MAGIC {
            return Err(Error::Format(format!(
                "{} is not a subgraph store",
                path.display()
            )));
        }
        if header[4] != VERSION {
            return Err(Error::Format(format!(
                "store version {} unsupported (expected {VERSION})",
                header[4]
            )));
        }
        file.seek(SeekFrom::Start(size - TRAILER_LEN))?;
        let mut trailer = [0u8; TRAILER_LEN as usize];
        file.read_exact(&mut trailer)?;
        if &trailer[8..] != MAGIC {
            return Err(Error::Format("store trailer missing".into()));
        }
        let index_offset = u64::from_le_bytes(trailer[..8].try_into().unwrap());
        if index_offset > size - TRAILER_LEN {
            return Err(Error::Format("store index offset out of range".into()));
        }
        file.seek(SeekFrom::Start(index_offset))?;
        let mut raw = vec![0u8; (size - TRAILER_LEN - index_offset) as usize];
        file.read_exact(&mut raw)?;
        let mut r = ByteReader::new(&raw);
        let count = r.u32()? as usize;
        let mut ids = Vec::with_capacity(count);
        let mut index = HashMap::with_capacity(count);
        for _ in 0..count {
            let id = r.str()?;
            let off = r.u64()?;
            index.insert(id.clone(), off);
            ids.push(id);
        }
        Ok(SubgraphStore {
            path: path.to_path_buf(),
            ids,
            index,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Station ids in the order they were written.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Result<SubgraphRecord> {
        let offset = *self
            .index
            .get(id)
            .ok_or_else(|| Error::Key(format!("no subgraph stored for station {id}")))?;
        let (payload, stored_crc) = {
            let mut file = self.file.lock().expect("store file lock poisoned");
            file.seek(SeekFrom::Start(offset))?;
            let mut len = [0u8; 4];
            file.read_exact(&mut len)?;
            let mut payload = vec![0u8; u32::from_le_bytes(len) as usize];
            file.read_exact(&mut payload)?;
            let mut crc = [0u8; 4];
            file.read_exact(&mut crc)?;
            (payload, u32::from_le_bytes(crc))
        };
        if crc32fast::hash(&payload) != stored_crc {
            return Err(Error::Integrity(format!(
                "checksum mismatch for station {id} in {}",
                self.path.display()
            )));
        }
        let record = SubgraphRecord::decode(&payload)?;
        if record.center_id != id {
            return Err(Error::Integrity(format!(
                "record at index entry {id} belongs to {}",
                record.center_id
            )));
        }
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_graph() -> ProximityGraph {
        ProximityGraph::from_edges(
            (0..6).map(|i| format!("n{i}")).collect(),
            &[
                (0, 1, 0.9),
                (1, 2, 0.8),
                (2, 3, 0.7),
                (3, 4, 0.6),
                (0, 5, 0.5),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_matches_fresh_extraction() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub.kv");
        let g = small_graph();
        let store = build_store(&g, 2, &path).unwrap();
        assert_eq!(store.len(), g.len());
        for id in g.ids() {
            assert_eq!(store.get(id).unwrap(), khop_subgraph(&g, id, 2).unwrap());
        }
        let reopened = SubgraphStore::open(&path).unwrap();
        assert_eq!(reopened.get("n3").unwrap(), store.get("n3").unwrap());
    }

    #[test]
    fn absent_id_is_key_error() {
        let dir = tempfile::tempdir().unwrap();
        let store = build_store(&small_graph(), 1, &dir.path().join("s.kv")).unwrap();
        assert!(matches!(store.get("zz"), Err(Error::Key(_))));
    }

    #[test]
    fn single_node_graph() {
        let dir = tempfile::tempdir().unwrap();
        let g = ProximityGraph::from_edges(vec!["only".into()], &[]).unwrap();
        let store = build_store(&g, 2, &dir.path().join("one.kv")).unwrap();
        assert_eq!(store.len(), 1);
        let rec = store.get("only").unwrap();
        assert_eq!(rec.node_ids, vec!["only"]);
        assert!(rec.edges.is_empty());
    }

    #[test]
    fn corrupted_payload_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.kv");
        build_store(&small_graph(), 2, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // First record payload starts after header (5) and length prefix (4).
        bytes[5 + 4 + 3] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        let store = SubgraphStore::open(&path).unwrap();
        assert!(matches!(store.get("n0"), Err(Error::Integrity(_))));
    }

    #[test]
    fn wrong_version_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.kv");
        build_store(&small_graph(), 2, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(SubgraphStore::open(&path), Err(Error::Format(_))));
    }
}
