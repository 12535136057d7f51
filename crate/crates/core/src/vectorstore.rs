//! Exact cosine top-k index over embedded chunks.
//!
//! On-disk layout (little-endian throughout):
//!
//! ```text
//! "RGBV" | version: u8 = 1 | dim: u32 | count: u64
//! count x { ref_len: u32 | ref: "doc_id\0seq" | text_len: u32 | text | dim x f64 }
//! crc32: u32   (over every preceding byte)
//! ```

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{cosine_with_norms, norm, Vector};
use crate::error::{Error, Result};
use crate::exec::Execution;

pub const MAGIC: &[u8; 4] = b"RGBV";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChunkRef {
    pub doc_id: String,
    pub seq: usize,
}

impl ChunkRef {
    pub fn new(doc_id: impl Into<String>, seq: usize) -> Self {
        Self {
            doc_id: doc_id.into(),
            seq,
        }
    }
}

impl fmt::Display for ChunkRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.doc_id, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub chunk_ref: ChunkRef,
    pub vector: Vector,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub chunk_ref: ChunkRef,
    pub score: f64,
    pub rank: usize,
}

/// Score descending, then chunk ref ascending.
fn hit_order(a: &(f64, &ChunkRef), b: &(f64, &ChunkRef)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Immutable after [`Index::build`]; entries keep insertion order.
#[derive(Debug, Clone)]
pub struct Index {
    dim: usize,
    entries: Vec<IndexEntry>,
    norms: Vec<f64>,
    positions: HashMap<ChunkRef, usize>,
}

impl PartialEq for Index {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.entries == other.entries
    }
}

impl Index {
    pub fn build(entries: Vec<IndexEntry>) -> Result<Self> {
        let dim = entries.first().ok_or(Error::EmptyIndex)?.vector.dim();
        let mut positions = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.vector.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: e.vector.dim(),
                });
            }
            if positions.insert(e.chunk_ref.clone(), i).is_some() {
                return Err(Error::DuplicateRef(e.chunk_ref.to_string()));
            }
        }
        let norms = entries.iter().map(|e| e.vector.norm()).collect();
        Ok(Self {
            dim,
            entries,
            norms,
            positions,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, chunk_ref: &ChunkRef) -> Option<&IndexEntry> {
        self.positions.get(chunk_ref).map(|&i| &self.entries[i])
    }

    pub fn query_topk(&self, query: &Vector, k: usize) -> Result<Vec<Hit>> {
        self.query_topk_with(query, k, Execution::default())
    }

    /// Exact scan. Returns `min(k, len)` hits ordered by cosine descending,
    /// ties broken by chunk ref ascending.
    pub fn query_topk_with(&self, query: &Vector, k: usize, exec: Execution) -> Result<Vec<Hit>> {
        if query.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidConfig("top-k must be >= 1".into()));
        }
        let q = query.values();
        let q_norm = norm(q);
        let idx: Vec<usize> = (0..self.entries.len()).collect();
        let scores = exec.map(&idx, |&i| {
            cosine_with_norms(q, q_norm, self.entries[i].vector.values(), self.norms[i])
        });
        let mut scored: Vec<(f64, &ChunkRef)> = scores
            .into_iter()
            .zip(self.entries.iter().map(|e| &e.chunk_ref))
            .collect();
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, hit_order);
            scored.truncate(k);
        }
        scored.sort_by(hit_order);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(rank, (score, r))| Hit {
                chunk_ref: r.clone(),
                score,
                rank,
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.push(FORMAT_VERSION);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            let r = format!("{}\0{}", e.chunk_ref.doc_id, e.chunk_ref.seq);
            buf.extend_from_slice(&(r.len() as u32).to_le_bytes());
            buf.extend_from_slice(r.as_bytes());
            buf.extend_from_slice(&(e.text.len() as u32).to_le_bytes());
            buf.extend_from_slice(e.text.as_bytes());
            for v in e.vector.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 4 + 1 + 4 + 8;
        if bytes.len() < 5 || &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {}", bytes[4])));
        }
        if bytes.len() < HEADER + 4 {
            return Err(Error::Format("truncated header".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }

        let mut r = Reader { buf: body, pos: 5 };
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        if dim == 0 {
            return Err(Error::Format("dim is zero".into()));
        }
        let mut entries = Vec::new();
        for _ in 0..count {
            let ref_len = r.u32()? as usize;
            let raw_ref = r.str(ref_len)?;
            let (doc_id, seq) = raw_ref
                .rsplit_once('\0')
                .ok_or_else(|| Error::Format(format!("chunk ref without separator: {raw_ref:?}")))?;
            let seq = seq
                .parse()
                .map_err(|_| Error::Format(format!("bad chunk seq {seq:?}")))?;
            let chunk_ref = ChunkRef::new(doc_id, seq);
            let text_len = r.u32()? as usize;
            let text = r.str(text_len)?.to_string();
            let values = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let vector = Vector::new(values).map_err(|e| Error::Format(e.to_string()))?;
            entries.push(IndexEntry {
                chunk_ref,
                vector,
                text,
            });
        }
        if r.pos != body.len() {
            return Err(Error::Format(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Index::build(entries).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing index {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::PathNotFound(path.to_path_buf()),
            _ => Error::io(format!("reading index {}", path.display()), e),
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|e| Error::Format(format!("invalid UTF-8: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(doc: &str, seq: usize, xs: &[f64]) -> IndexEntry {
        IndexEntry {
            chunk_ref: ChunkRef::new(doc, seq),
            vector: Vector::new(xs.to_vec()).unwrap(),
            text: format!("{doc}-{seq}"),
        }
    }

    fn two() -> Index {
        Index::build(vec![entry("e1", 0, &[1.0, 0.0]), entry("e2", 0, &[0.0, 1.0])]).unwrap()
    }

    #[test]
    fn build_errors() {
        assert!(matches!(Index::build(vec![]), Err(Error::EmptyIndex)));
        assert!(matches!(
            Index::build(vec![entry("a", 0, &[1.0; 8]), entry("b", 0, &[1.0; 16])]),
            Err(Error::DimMismatch { expected: 8, got: 16 })
        ));
        assert!(matches!(
            Index::build(vec![entry("a", 0, &[1.0]), entry("a", 0, &[2.0])]),
            Err(Error::DuplicateRef(_))
        ));
        assert_eq!(two().len(), 2);
    }

    #[test]
    fn query_examples() {
        let idx = two();
        let q = Vector::new(vec![1.0, 0.0]).unwrap();
        let hits = idx.query_topk(&q, 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].chunk_ref, ChunkRef::new("e1", 0));
        assert_eq!(hits[0].score, 1.0);
        assert_eq!(idx.query_topk(&q, 5).unwrap().len(), 2);
        assert!(matches!(idx.query_topk(&q, 0), Err(Error::InvalidConfig(_))));
        let wrong = Vector::new(vec![1.0; 3]).unwrap();
        assert!(matches!(idx.query_topk(&wrong, 1), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn ties_break_by_ref() {
        let idx = Index::build(vec![
            entry("b", 1, &[1.0, 1.0]),
            entry("a", 2, &[2.0, 2.0]),
            entry("b", 0, &[4.0, 4.0]),
            entry("c", 0, &[0.0, 1.0]),
        ])
        .unwrap();
        let q = Vector::new(vec![1.0, 1.0]).unwrap();
        let hits = idx.query_topk_with(&q, 3, Execution::Sequential).unwrap();
        let refs: Vec<String> = hits.iter().map(|h| h.chunk_ref.to_string()).collect();
        assert_eq!(refs, ["a#2", "b#0", "b#1"]);
        assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), [0, 1, 2]);
    }

    #[test]
    fn bytes_round_trip() {
        let idx = Index::build(vec![entry("doc/é", 3, &[0.5, -0.25]), entry("x", 0, &[1.0, 2.0])]).unwrap();
        let bytes = idx.to_bytes();
        assert_eq!(&bytes[..5], b"RGBV\x01");
        assert_eq!(Index::from_bytes(&bytes).unwrap(), idx);
    }

    #[test]
    fn exact_layout() {
        let idx = Index::build(vec![IndexEntry {
            chunk_ref: ChunkRef::new("d", 7),
            vector: Vector::new(vec![1.0]).unwrap(),
            text: "hi".into(),
        }])
        .unwrap();
        let mut expected = b"RGBV\x01".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&3u32.to_le_bytes());
        expected.extend_from_slice(b"d\x007");
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(b"hi");
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        let crc = crc32fast::hash(&expected);
        expected.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(idx.to_bytes(), expected);
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = two().to_bytes();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(Index::from_bytes(&bad_magic), Err(Error::Format(_))));
        let mut bad_version = bytes.clone();
        bad_version[4] = 2;
        assert!(matches!(Index::from_bytes(&bad_version), Err(Error::Format(_))));
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                Index::from_bytes(&bytes[..cut]),
                Err(Error::Format(_) | Error::Checksum { .. })
            ));
        }
        let mut flipped = bytes.clone();
        flipped[30] ^= 0x40;
        assert!(matches!(Index::from_bytes(&flipped), Err(Error::Checksum { .. })));
    }
}
