//! Persisted page embeddings.
//!
//! ```text
//! magic   b"URAIDX\0\0"
//! u32     format version
//! u64     header length, then JSON
//!         {"checkpoint_hash": str, "dim": usize,
//!          "entries": [{"manual_id": str, "page_index": usize, "n_tokens": usize}, ...]}
//! per entry, in header order:
//!   n_tokens × dim little-endian f32, unit-normalized token rows
//!   dim little-endian f32, unit-normalized pooled vector
//! ```

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{encode_global, normalize_rows, page_states};
use crate::corpus::Manual;
use crate::error::{Error, Result};
use crate::featurize::Featurizer;
use crate::model::{content_hash, Model};

pub const INDEX_MAGIC: &[u8; 8] = b"URAIDX\0\0";
const INDEX_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PageRef {
    pub manual_id: String,
    pub page_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub page: PageRef,
    /// Unit-normalized token states, `n_tokens × dim`.
    pub rows: Array2<f64>,
    /// Unit-normalized mean-pooled state.
    pub global: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    manual_id: String,
    page_index: usize,
    n_tokens: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    checkpoint_hash: String,
    dim: usize,
    entries: Vec<HeaderEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PageIndex {
    checkpoint_hash: String,
    dim: usize,
    entries: Vec<IndexEntry>,
}

fn round_f32(m: &mut Array2<f64>) {
    m.mapv_inplace(|x| x as f32 as f64);
}

impl PageIndex {
    pub fn checkpoint_hash(&self) -> &str {
        &self.checkpoint_hash
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, manual_id: &str, page_index: usize) -> Option<&IndexEntry> {
        self.entries
            .binary_search_by(|e| (e.page.manual_id.as_str(), e.page.page_index).cmp(&(manual_id, page_index)))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Fails unless the index was built under `checkpoint_hash`.
    pub fn ensure_checkpoint(&self, checkpoint_hash: &str) -> Result<()> {
        if self.checkpoint_hash != checkpoint_hash {
            return Err(Error::HashMismatch {
                expected: checkpoint_hash.to_string(),
                found: self.checkpoint_hash.clone(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            checkpoint_hash: self.checkpoint_hash.clone(),
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .map(|e| HeaderEntry {
                    manual_id: e.page.manual_id.clone(),
                    page_index: e.page.page_index,
                    n_tokens: e.rows.nrows(),
                })
                .collect(),
        })?;
        let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
        let mut out = Vec::new();
        out.write_all(INDEX_MAGIC).map_err(io)?;
        out.write_u32::<LittleEndian>(INDEX_VERSION).map_err(io)?;
        out.write_u64::<LittleEndian>(header.len() as u64).map_err(io)?;
        out.write_all(&header).map_err(io)?;
        for e in &self.entries {
            for &x in e.rows.iter().chain(e.global.iter()) {
                out.write_f32::<LittleEndian>(x as f32).map_err(io)?;
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(format!("index: {m}"));
        let io = |e: std::io::Error| Error::Checkpoint(format!("index: truncated file: {e}"));
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != INDEX_MAGIC {
            return Err(bad("not an index file".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != INDEX_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let len = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        if len > bytes.len() {
            return Err(bad("header length exceeds file size".into()));
        }
        let mut header = vec![0u8; len];
        r.read_exact(&mut header).map_err(io)?;
        let header: Header = serde_json::from_slice(&header).map_err(|e| bad(e.to_string()))?;
        let dim = header.dim;
        let mut entries = Vec::with_capacity(header.entries.len());
        for h in header.entries {
            let mut rows = vec![0f32; h.n_tokens * dim];
            r.read_f32_into::<LittleEndian>(&mut rows).map_err(io)?;
            let mut global = vec![0f32; dim];
            r.read_f32_into::<LittleEndian>(&mut global).map_err(io)?;
            entries.push(IndexEntry {
                page: PageRef {
                    manual_id: h.manual_id,
                    page_index: h.page_index,
                },
                rows: Array2::from_shape_vec((h.n_tokens, dim), rows.into_iter().map(f64::from).collect())
                    .expect("sized above"),
                global: global.into_iter().map(f64::from).collect(),
            });
        }
        if r.position() as usize != bytes.len() {
            return Err(bad("trailing bytes".into()));
        }
        if entries.windows(2).any(|w| w[0].page >= w[1].page) {
            return Err(bad("entries are not sorted by page".into()));
        }
        Ok(PageIndex {
            checkpoint_hash: header.checkpoint_hash,
            dim,
            entries,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized index.
    pub fn hash(&self) -> Result<String> {
        Ok(content_hash(&self.to_bytes()?))
    }
}

/// Encodes every page of `manuals` under `model`. Stored values are
/// rounded to `f32` so a loaded index scores exactly like a fresh one.
pub fn build_index(model: &Model, featurizer: &Featurizer, manuals: &[&Manual], checkpoint_hash: &str) -> Result<PageIndex> {
    let mut pages: Vec<(&str, &crate::corpus::Page)> = manuals
        .iter()
        .flat_map(|m| m.pages.iter().map(move |p| (m.id.as_str(), p)))
        .collect();
    pages.sort_by(|a, b| (a.0, a.1.index).cmp(&(b.0, b.1.index)));
    if pages.windows(2).any(|w| (w[0].0, w[0].1.index) == (w[1].0, w[1].1.index)) {
        return Err(Error::InvalidArgument("duplicate page in index input".into()));
    }
    let entries = crate::par::try_map(&pages, |(manual_id, page)| -> Result<IndexEntry> {
        let feats = featurizer.page(page)?;
        let h = page_states(model, &feats)?;
        let mut rows = normalize_rows(&h)?;
        round_f32(&mut rows);
        let mut global = encode_global(&h)?;
        global.mapv_inplace(|x| x as f32 as f64);
        Ok(IndexEntry {
            page: PageRef {
                manual_id: manual_id.to_string(),
                page_index: page.index,
            },
            rows,
            global,
        })
    })?;
    Ok(PageIndex {
        checkpoint_hash: checkpoint_hash.to_string(),
        dim: model.config.hidden_dim,
        entries,
    })
}
