//! Retrieve, assemble, generate.

use serde::{Deserialize, Serialize};

use crate::chunker::Chunk;
use crate::embed::{Embedder, Vector};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::llm::{ChatRequest, Generator, Message};
use crate::metrics::QAItem;
use crate::vectorstore::{ChunkRef, Index, IndexEntry};

pub const CONTEXT_SEPARATOR: &str = "\n---\n";
pub const NO_CONTEXT: &str = "(no relevant context found)";
pub const DEFAULT_SYSTEM_PROMPT: &str = "Answer the question using only the provided context.";
pub const DEFAULT_TEMPLATE: &str = "Context:\n{context}\n\nQuestion: {question}\nAnswer:";

const CONTEXT_SLOT: &str = "{context}";
const QUESTION_SLOT: &str = "{question}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RagConfig {
    pub top_k: usize,
    /// Budget for the assembled context, in codepoints, separators included.
    pub max_context_chars: usize,
    pub prompt_template: String,
    pub system_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            top_k: 4,
            max_context_chars: 8000,
            prompt_template: DEFAULT_TEMPLATE.into(),
            system_prompt: DEFAULT_SYSTEM_PROMPT.into(),
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

fn slot_position(template: &str, slot: &str) -> Result<usize> {
    let mut found = template.match_indices(slot).map(|(i, _)| i);
    match (found.next(), found.next()) {
        (Some(i), None) => Ok(i),
        (None, _) => Err(Error::Template(format!("template lacks {slot}"))),
        (Some(_), Some(_)) => Err(Error::Template(format!("template repeats {slot}"))),
    }
}

impl RagConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be >= 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig("temperature must be >= 0".into()));
        }
        slot_position(&self.prompt_template, CONTEXT_SLOT)?;
        slot_position(&self.prompt_template, QUESTION_SLOT)?;
        Ok(())
    }
}

/// Substitutes both slots in one pass, so slot-like text inside the
/// substituted values is left alone.
pub fn fill_template(template: &str, context: &str, question: &str) -> Result<String> {
    let c = slot_position(template, CONTEXT_SLOT)?;
    let q = slot_position(template, QUESTION_SLOT)?;
    let mut slots = [(c, CONTEXT_SLOT, context), (q, QUESTION_SLOT, question)];
    slots.sort_by_key(|s| s.0);
    let mut out = String::with_capacity(template.len() + context.len() + question.len());
    let mut cursor = 0;
    for (pos, slot, value) in slots {
        out.push_str(&template[cursor..pos]);
        out.push_str(value);
        cursor = pos + slot.len();
    }
    out.push_str(&template[cursor..]);
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct ContextChunk<'a> {
    pub chunk_ref: &'a ChunkRef,
    pub text: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledPrompt {
    pub prompt: String,
    pub used: Vec<ChunkRef>,
    pub truncated: bool,
    pub context_chars: usize,
}

/// Joins chunks in rank order until the next one would overflow the
/// budget; that chunk and everything after it are dropped whole.
pub fn assemble_prompt(question: &str, chunks: &[ContextChunk<'_>], cfg: &RagConfig) -> Result<AssembledPrompt> {
    let sep_len = CONTEXT_SEPARATOR.chars().count();
    let mut context = String::new();
    let mut context_chars = 0;
    let mut used = Vec::new();
    let mut truncated = false;
    for chunk in chunks {
        let extra = if used.is_empty() { 0 } else { sep_len } + chunk.text.chars().count();
        if context_chars + extra > cfg.max_context_chars {
            truncated = true;
            break;
        }
        if !used.is_empty() {
            context.push_str(CONTEXT_SEPARATOR);
        }
        context.push_str(chunk.text);
        context_chars += extra;
        used.push(chunk.chunk_ref.clone());
    }
    let context = if used.is_empty() { NO_CONTEXT } else { &context };
    Ok(AssembledPrompt {
        prompt: fill_template(&cfg.prompt_template, context, question)?,
        used,
        truncated,
        context_chars,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub doc_id: String,
    pub seq: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub qa_id: String,
    pub question: String,
    pub answer: String,
    pub retrieved: Vec<Retrieved>,
    pub prompt_chars: usize,
    pub latency_ms: u64,
    pub context_truncated: bool,
}

/// Embeds chunk texts with `embedder` and indexes them.
pub fn index_chunks(chunks: &[Chunk], embedder: &dyn Embedder) -> Result<Index> {
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let vectors = embedder.embed_batch(&texts)?;
    if vectors.len() != chunks.len() {
        return Err(Error::Protocol(format!(
            "embedder returned {} vectors for {} chunks",
            vectors.len(),
            chunks.len()
        )));
    }
    let entries = chunks
        .iter()
        .zip(vectors)
        .map(|(c, vector)| IndexEntry {
            chunk_ref: ChunkRef::new(c.doc_id.clone(), c.seq),
            vector,
            text: c.text.clone(),
        })
        .collect();
    Index::build(entries)
}

/// Answers with a caller-supplied question embedding.
pub fn answer_with_vector(
    qa: &QAItem,
    question_vec: &Vector,
    index: &Index,
    generator: &dyn Generator,
    cfg: &RagConfig,
) -> Result<AnswerRecord> {
    let run = || -> Result<AnswerRecord> {
        let hits = index.query_topk(question_vec, cfg.top_k)?;
        let chunks: Vec<ContextChunk<'_>> = hits
            .iter()
            .map(|h| {
                let entry = index.get(&h.chunk_ref).expect("hits come from the index");
                ContextChunk {
                    chunk_ref: &entry.chunk_ref,
                    text: &entry.text,
                }
            })
            .collect();
        let assembled = assemble_prompt(&qa.question, &chunks, cfg)?;
        let mut req = ChatRequest::new(
            generator.model(),
            vec![
                Message::system(cfg.system_prompt.clone()),
                Message::user(assembled.prompt.clone()),
            ],
        );
        req.temperature = cfg.temperature;
        req.max_tokens = cfg.max_tokens;
        let resp = generator.generate(&req)?;
        Ok(AnswerRecord {
            qa_id: qa.id.clone(),
            question: qa.question.clone(),
            answer: resp.content,
            retrieved: hits
                .into_iter()
                .map(|h| Retrieved {
                    doc_id: h.chunk_ref.doc_id,
                    seq: h.chunk_ref.seq,
                    score: h.score,
                })
                .collect(),
            prompt_chars: assembled.prompt.chars().count(),
            latency_ms: resp.latency_ms,
            context_truncated: assembled.truncated,
        })
    };
    run().map_err(|e| e.for_question(&qa.id))
}

pub fn answer_question(
    qa: &QAItem,
    index: &Index,
    embedder: &dyn Embedder,
    generator: &dyn Generator,
    cfg: &RagConfig,
) -> Result<AnswerRecord> {
    let q = embedder.embed(&qa.question).map_err(|e| e.for_question(&qa.id))?;
    answer_with_vector(qa, &q, index, generator, cfg)
}

/// Answers every question, returning records in QA order.
pub fn answer_all(
    qa_set: &[QAItem],
    question_vecs: &[Vector],
    index: &Index,
    generator: &dyn Generator,
    cfg: &RagConfig,
    exec: Execution,
) -> Result<Vec<AnswerRecord>> {
    assert_eq!(qa_set.len(), question_vecs.len());
    let pairs: Vec<(&QAItem, &Vector)> = qa_set.iter().zip(question_vecs).collect();
    exec.try_map(&pairs, |(qa, v)| answer_with_vector(qa, v, index, generator, cfg))
}
