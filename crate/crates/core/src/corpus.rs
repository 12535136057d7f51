//! Corpus ingestion: Reddit-style JSONL exports and plain-text/markdown
//! directory trees, normalized into a JSONL document store.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// One retrievable source item.
///
/// Field order is the on-disk order of the document store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub source: String,
    pub title: String,
    pub body: String,
    pub score: i64,
    pub created_at: i64,
}

/// Accounting for one ingestion step. `documents_kept + duplicates_removed
/// + lines_skipped == documents_in` always holds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub documents_in: usize,
    pub documents_kept: usize,
    pub duplicates_removed: usize,
    pub lines_skipped: usize,
}

impl CorpusStats {
    /// Folds a later dedup pass into parse statistics.
    pub fn then(self, dedup: CorpusStats) -> CorpusStats {
        CorpusStats {
            documents_in: self.documents_in,
            documents_kept: dedup.documents_kept,
            duplicates_removed: self.duplicates_removed + dedup.duplicates_removed,
            lines_skipped: self.lines_skipped + dedup.lines_skipped,
        }
    }
}

/// Line endings to LF, BOM stripped, outer whitespace trimmed.
pub fn normalize_text(s: &str) -> String {
    let s = s.strip_prefix('\u{feff}').unwrap_or(s);
    s.replace("\r\n", "\n").replace('\r', "\n").trim().to_string()
}

/// Joins non-empty segments with a blank line between them.
pub fn compose_body<'a>(segments: impl IntoIterator<Item = &'a str>) -> String {
    segments
        .into_iter()
        .map(normalize_text)
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn text_field(obj: &serde_json::Map<String, Value>, key: &str) -> std::result::Result<String, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(format!("field `{key}` is not a string")),
    }
}

fn int_field(obj: &serde_json::Map<String, Value>, key: &str) -> std::result::Result<i64, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(0),
        Some(Value::Number(n)) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.is_finite()).map(|f| f.trunc() as i64))
            .ok_or_else(|| format!("field `{key}` out of range")),
        Some(_) => Err(format!("field `{key}` is not a number")),
    }
}

fn parse_reddit_line(line: &str) -> std::result::Result<Document, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("not a JSON object")?;
    let id = match obj.get("id") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        _ => return Err("missing or empty `id`".into()),
    };
    let title = normalize_text(&text_field(obj, "title")?);
    let selftext = text_field(obj, "selftext")?;
    let top_comment = text_field(obj, "top_comment")?;
    let body = compose_body([title.as_str(), selftext.as_str(), top_comment.as_str()]);
    if body.is_empty() {
        return Err("no text content".into());
    }
    Ok(Document {
        id,
        source: text_field(obj, "subreddit")?,
        title,
        body,
        score: int_field(obj, "score")?,
        created_at: int_field(obj, "created_utc")?,
    })
}

/// Parses a Reddit-style JSONL export, one post plus its top answer per line.
///
/// Blank lines are ignored. A line is malformed if it is not a JSON object,
/// lacks an `id`, has no text at all, has mistyped fields, or repeats an
/// earlier id. Lenient mode skips and counts such lines; strict mode fails on
/// the first one.
pub fn parse_reddit_jsonl<R: BufRead>(reader: R, lenient: bool) -> Result<(Vec<Document>, CorpusStats)> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    let mut stats = CorpusStats::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(format!("reading line {line_no}"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        stats.documents_in += 1;
        let parsed = parse_reddit_line(&line).and_then(|doc| {
            if seen.insert(doc.id.clone()) {
                Ok(doc)
            } else {
                Err(format!("duplicate id `{}`", doc.id))
            }
        });
        match parsed {
            Ok(doc) => docs.push(doc),
            Err(_) if lenient => stats.lines_skipped += 1,
            Err(reason) => return Err(Error::MalformedLine { line: line_no, reason }),
        }
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    stats.documents_kept = docs.len();
    Ok((docs, stats))
}

fn is_text_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.eq_ignore_ascii_case("txt") || e.eq_ignore_ascii_case("md"))
        .unwrap_or(false)
}

/// Loads every `.txt` / `.md` file below `root` as one document, keyed by
/// its `/`-separated path relative to `root`. Files that are empty after
/// normalization are skipped. Output is sorted by id.
pub fn ingest_text_dir(root: &Path) -> Result<Vec<Document>> {
    if !root.is_dir() {
        return Err(Error::PathNotFound(root.to_path_buf()));
    }
    let mut docs = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(false) {
        let entry = entry.map_err(|e| {
            let msg = e.to_string();
            Error::io(msg, e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk")))
        })?;
        if !entry.file_type().is_file() || !is_text_file(entry.path()) {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields paths under root");
        let id = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let raw =
            std::fs::read(entry.path()).map_err(|e| Error::io(format!("reading {}", entry.path().display()), e))?;
        let body = normalize_text(&String::from_utf8_lossy(&raw));
        if body.is_empty() {
            continue;
        }
        let title = entry
            .path()
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        docs.push(Document {
            source: id.clone(),
            id,
            title,
            body,
            score: 0,
            created_at: 0,
        });
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(docs)
}

/// Case-folded body with every whitespace run collapsed to one space.
pub fn dedup_key(body: &str) -> String {
    body.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Collapses documents with equal [`dedup_key`] onto their first occurrence.
pub fn dedup(docs: Vec<Document>) -> (Vec<Document>, CorpusStats) {
    let documents_in = docs.len();
    let mut seen = HashSet::new();
    let kept: Vec<Document> = docs.into_iter().filter(|d| seen.insert(dedup_key(&d.body))).collect();
    let stats = CorpusStats {
        documents_in,
        documents_kept: kept.len(),
        duplicates_removed: documents_in - kept.len(),
        lines_skipped: 0,
    };
    (kept, stats)
}

pub fn write_store<W: Write>(docs: &[Document], mut out: W) -> Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut out, doc)?;
        out.write_all(b"\n").map_err(|e| Error::io("writing corpus store", e))?;
    }
    out.flush().map_err(|e| Error::io("writing corpus store", e))
}

/// Reads a document store, enforcing unique ids and non-empty bodies.
pub fn read_store<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(format!("reading line {line_no}"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedLine { line: line_no, reason };
        let doc: Document = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if doc.body.is_empty() {
            return Err(malformed("empty body".into()));
        }
        if !seen.insert(doc.id.clone()) {
            return Err(malformed(format!("duplicate id `{}`", doc.id)));
        }
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(docs)
}

pub fn save_store(docs: &[Document], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_store(docs, std::io::BufWriter::new(file))
}

pub fn load_store(path: &Path) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::PathNotFound(path.to_path_buf()),
        _ => Error::io(format!("opening {}", path.display()), e),
    })?;
    read_store(std::io::BufReader::new(file))
}
