//! Fixed-size codepoint chunking with optional overlap.

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    size: usize,
    overlap: usize,
}

impl ChunkConfig {
    /// Sizes and overlaps are in Unicode scalar values. Requires `0 <= overlap < size`.
    pub fn new(size: usize, overlap: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidConfig("chunk size must be > 0".into()));
        }
        if overlap >= size {
            return Err(Error::InvalidConfig(format!(
                "chunk overlap {overlap} must be smaller than chunk size {size}"
            )));
        }
        Ok(Self { size, overlap })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn stride(&self) -> usize {
        self.size - self.overlap
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub seq: usize,
    pub text: String,
    /// Codepoint offset into the document body, inclusive.
    pub char_start: usize,
    /// Codepoint offset into the document body, exclusive.
    pub char_end: usize,
}

/// Chunk `k` covers codepoints `[k*stride, min(k*stride + size, len))`.
/// Stops after the first chunk that reaches the end of the text.
pub fn chunk_text(text: &str, cfg: ChunkConfig) -> Vec<(usize, usize, &str)> {
    // Byte offset of every codepoint boundary, including the end.
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(text.len()))
        .collect();
    let len = bounds.len() - 1;
    let mut out = Vec::with_capacity(len.div_ceil(cfg.stride()));
    let mut start = 0;
    while start < len {
        let end = (start + cfg.size).min(len);
        out.push((start, end, &text[bounds[start]..bounds[end]]));
        if end == len {
            break;
        }
        start += cfg.stride();
    }
    out
}

pub fn chunk_document(doc: &Document, cfg: ChunkConfig) -> Vec<Chunk> {
    chunk_text(&doc.body, cfg)
        .into_iter()
        .enumerate()
        .map(|(seq, (char_start, char_end, text))| Chunk {
            doc_id: doc.id.clone(),
            seq,
            text: text.to_string(),
            char_start,
            char_end,
        })
        .collect()
}

pub fn chunk_corpus(docs: &[Document], cfg: ChunkConfig) -> Vec<Chunk> {
    chunk_corpus_with(docs, cfg, Execution::default())
}

/// Per-document chunks concatenated in document order.
pub fn chunk_corpus_with(docs: &[Document], cfg: ChunkConfig, exec: Execution) -> Vec<Chunk> {
    exec.map(docs, |d| chunk_document(d, cfg))
        .into_iter()
        .flatten()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(text: &str, size: usize, overlap: usize) -> Vec<&str> {
        chunk_text(text, ChunkConfig::new(size, overlap).unwrap())
            .into_iter()
            .map(|c| c.2)
            .collect()
    }

    fn doc(id: &str, body: String) -> Document {
        Document {
            id: id.into(),
            source: String::new(),
            title: String::new(),
            body,
            score: 0,
            created_at: 0,
        }
    }

    #[test]
    fn stride_examples() {
        assert_eq!(texts("abcdefghij", 4, 0), ["abcd", "efgh", "ij"]);
        assert_eq!(texts("abcdefghij", 4, 2), ["abcd", "cdef", "efgh", "ghij"]);
        assert_eq!(texts("héllo", 2, 0), ["hé", "ll", "o"]);
    }

    #[test]
    fn invalid_configs() {
        assert!(matches!(ChunkConfig::new(0, 0), Err(Error::InvalidConfig(_))));
        assert!(matches!(ChunkConfig::new(4, 4), Err(Error::InvalidConfig(_))));
        assert!(ChunkConfig::new(4, 3).is_ok());
    }

    #[test]
    fn corpus_examples() {
        let cfg = ChunkConfig::new(5, 0).unwrap();
        let docs = vec![doc("a", "12345".into()), doc("b", "abcde".into())];
        let chunks = chunk_corpus(&docs, cfg);
        assert_eq!(chunks.len(), 2);
        assert!(chunks.iter().all(|c| c.seq == 0));

        let big = vec![doc("big", "x".repeat(8000))];
        let chunks = chunk_corpus(&big, ChunkConfig::new(250, 0).unwrap());
        assert_eq!(chunks.len(), 32);
        assert_eq!(chunks, chunk_corpus(&big, ChunkConfig::new(250, 0).unwrap()));
        assert_eq!(
            chunks,
            chunk_corpus_with(&big, ChunkConfig::new(250, 0).unwrap(), Execution::Sequential)
        );
    }

    #[test]
    fn empty_text_has_no_chunks() {
        assert!(texts("", 3, 0).is_empty());
    }

    proptest! {
        #[test]
        fn chunk_count_monotone_in_size(text in "\\PC{1,200}", a in 1usize..60, b in 1usize..60, overlap in 0usize..5) {
            let (small, large) = (a.min(b), a.max(b));
            prop_assume!(overlap < small);
            let n_small = texts(&text, small, overlap).len();
            let n_large = texts(&text, large, overlap).len();
            prop_assert!(n_large <= n_small);
        }

        #[test]
        fn chunks_are_contiguous_slices(text in "\\PC{1,300}", size in 1usize..50, overlap_frac in 0.0f64..1.0) {
            let overlap = ((size as f64) * overlap_frac) as usize;
            let overlap = overlap.min(size - 1);
            let cfg = ChunkConfig::new(size, overlap).unwrap();
            let chars: Vec<char> = text.chars().collect();
            let chunks = chunk_text(&text, cfg);
            for (k, (start, end, t)) in chunks.iter().enumerate() {
                prop_assert_eq!(*start, k * cfg.stride());
                prop_assert!(end > start && end - start <= size);
                prop_assert_eq!(t.chars().count(), end - start);
                prop_assert_eq!(t.to_string(), chars[*start..*end].iter().collect::<String>());
                if k + 1 < chunks.len() {
                    prop_assert_eq!(end - start, size);
                }
            }
            prop_assert_eq!(chunks.last().unwrap().1, chars.len());
        }
    }
}
