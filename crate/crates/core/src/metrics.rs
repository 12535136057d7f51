//! Answer-correctness scoring.
//!
//! An answer and its ground truth are each broken into statements. Answer
//! statements backed by some ground-truth statement are true positives, the
//! rest false positives; ground-truth statements backed by no answer
//! statement are false negatives. The factual score is the F1 over those
//! counts, blended with the clamped embedding cosine of the two texts.

use std::collections::{BTreeSet, HashSet};
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::embed::{cosine, Embedder, Vector};
use crate::error::{Error, Result};
use crate::llm::{ChatRequest, Generator, Message};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    pub ground_truth: String,
}

/// Reads a JSONL QA set of `{id, question, ground_truth}` objects.
pub fn read_qa_set<R: BufRead>(reader: R) -> Result<Vec<QAItem>> {
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(format!("reading QA line {line_no}"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedLine { line: line_no, reason };
        let item: QAItem = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if item.id.is_empty() || item.question.trim().is_empty() || item.ground_truth.trim().is_empty() {
            return Err(malformed("id, question and ground_truth must be non-empty".into()));
        }
        if !seen.insert(item.id.clone()) {
            return Err(malformed(format!("duplicate QA id `{}`", item.id)));
        }
        items.push(item);
    }
    if items.is_empty() {
        return Err(Error::EmptyQaSet);
    }
    Ok(items)
}

pub fn load_qa_set(path: &Path) -> Result<Vec<QAItem>> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::PathNotFound(path.to_path_buf()),
        _ => Error::io(format!("opening {}", path.display()), e),
    })?;
    read_qa_set(std::io::BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub qa_id: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub f1: f64,
    pub semantic_sim: f64,
    pub answer_correctness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum JudgeKind {
    #[default]
    Lexical,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub w_factual: f64,
    pub w_semantic: f64,
    pub judge: JudgeKind,
    pub jaccard_threshold: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            w_factual: 0.75,
            w_semantic: 0.25,
            judge: JudgeKind::Lexical,
            jaccard_threshold: 0.6,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        if !finite_unit(self.w_factual) || !finite_unit(self.w_semantic) {
            return Err(Error::InvalidConfig("metric weights must lie in [0, 1]".into()));
        }
        if (self.w_factual + self.w_semantic - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "metric weights must sum to 1, got {} + {}",
                self.w_factual, self.w_semantic
            )));
        }
        if !finite_unit(self.jaccard_threshold) {
            return Err(Error::InvalidConfig("jaccard_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Splits after each run of `.`, `?` or `!` that is followed by whitespace
/// or the end of the text. Pieces are trimmed; empty pieces are dropped.
pub fn split_statements(text: &str) -> Vec<String> {
    let is_term = |c: char| matches!(c, '.' | '?' | '!');
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if !is_term(chars[i].1) {
            i += 1;
            continue;
        }
        let run_start = chars[i].0;
        let mut j = i;
        while j < chars.len() && is_term(chars[j].1) {
            j += 1;
        }
        let at_boundary = j == chars.len() || chars[j].1.is_whitespace();
        if at_boundary {
            out.push(text[start..run_start].trim().to_string());
            start = chars.get(j).map_or(text.len(), |c| c.0);
        }
        i = j;
    }
    out.push(text[start..].trim().to_string());
    out.retain(|s| !s.is_empty());
    out
}

/// Lowercased maximal alphanumeric runs.
pub fn token_set(statement: &str) -> BTreeSet<String> {
    statement
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// |A ∩ B| / |A ∪ B| over token sets. Two token-free statements count as
/// identical only if their lowercased text matches.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let (ta, tb) = (token_set(a), token_set(b));
    let union = ta.union(&tb).count();
    if union == 0 {
        return if a.to_lowercase() == b.to_lowercase() { 1.0 } else { 0.0 };
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// `tp / (tp + (fp + fn) / 2)`.
pub fn f1(tp: usize, fp: usize, fn_: usize) -> Result<f64> {
    if tp + fp + fn_ == 0 {
        return Err(Error::MetricUndefined);
    }
    Ok(tp as f64 / (tp as f64 + 0.5 * (fp + fn_) as f64))
}

/// Weighted sum of the factual and semantic components, kept inside [0, 1].
pub fn blend(factual: f64, semantic: f64, cfg: &MetricConfig) -> f64 {
    (cfg.w_factual * factual + cfg.w_semantic * semantic).clamp(0.0, 1.0)
}

const EXTRACT_PROMPT: &str = "Break the following text into a list of short, self-contained factual statements. \
Respond with only a JSON array of strings and nothing else.\n\nText:\n";

const CLASSIFY_PROMPT: &str = "You compare an answer against a ground truth, both given as numbered statements.\n\
For every ANSWER statement decide whether it is supported by at least one GROUND TRUTH statement.\n\
For every GROUND TRUTH statement decide whether it is covered by at least one ANSWER statement.\n\
Respond with only a JSON object of the form {\"answer\": [true, false, ...], \"ground_truth\": [true, ...]} \
with exactly one boolean per statement, in order.\n";

/// Decides which statements support each other.
#[derive(Clone)]
pub enum Judge {
    Lexical { threshold: f64 },
    Remote(Arc<dyn Generator>),
}

impl std::fmt::Debug for Judge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Judge::Lexical { threshold } => f.debug_struct("Lexical").field("threshold", threshold).finish(),
            Judge::Remote(g) => f.debug_tuple("Remote").field(&g.endpoint()).finish(),
        }
    }
}

fn json_slice(text: &str, open: char, close: char) -> Option<&str> {
    let start = text.find(open)?;
    let end = text.rfind(close)?;
    (end > start).then(|| &text[start..=end])
}

impl Judge {
    fn ask(generator: &dyn Generator, prompt: String) -> Result<String> {
        let req = ChatRequest::new(generator.model(), vec![Message::user(prompt)]);
        Ok(generator.generate(&req)?.content)
    }

    pub fn extract_statements(&self, text: &str) -> Result<Vec<String>> {
        match self {
            Judge::Lexical { .. } => Ok(split_statements(text)),
            Judge::Remote(_) if text.trim().is_empty() => Ok(Vec::new()),
            Judge::Remote(g) => {
                let reply = Self::ask(g.as_ref(), format!("{EXTRACT_PROMPT}{text}"))?;
                let raw = json_slice(&reply, '[', ']')
                    .ok_or_else(|| Error::Protocol(format!("judge returned no JSON array: {reply:?}")))?;
                let stmts: Vec<String> = serde_json::from_str(raw)
                    .map_err(|e| Error::Protocol(format!("judge statements unparseable: {e}")))?;
                Ok(stmts
                    .into_iter()
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect())
            }
        }
    }

    pub fn classify(&self, answer: &[String], truth: &[String]) -> Result<Counts> {
        let (answer_ok, truth_ok) = match self {
            Judge::Lexical { threshold } => {
                let supports = |a: &String, t: &String| jaccard(a, t) >= *threshold;
                let answer_ok: Vec<bool> = answer.iter().map(|a| truth.iter().any(|t| supports(a, t))).collect();
                let truth_ok: Vec<bool> = truth.iter().map(|t| answer.iter().any(|a| supports(a, t))).collect();
                (answer_ok, truth_ok)
            }
            Judge::Remote(_) if answer.is_empty() || truth.is_empty() => {
                (vec![false; answer.len()], vec![false; truth.len()])
            }
            Judge::Remote(g) => Self::remote_labels(g.as_ref(), answer, truth)?,
        };
        let tp = answer_ok.iter().filter(|&&x| x).count();
        Ok(Counts {
            tp,
            fp: answer.len() - tp,
            fn_: truth_ok.iter().filter(|&&x| !x).count(),
        })
    }

    fn remote_labels(g: &dyn Generator, answer: &[String], truth: &[String]) -> Result<(Vec<bool>, Vec<bool>)> {
        let number = |xs: &[String]| {
            xs.iter()
                .enumerate()
                .map(|(i, s)| format!("{}. {s}", i + 1))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let prompt = format!(
            "{CLASSIFY_PROMPT}\nANSWER:\n{}\n\nGROUND TRUTH:\n{}\n",
            number(answer),
            number(truth)
        );
        let reply = Self::ask(g, prompt)?;
        let raw = json_slice(&reply, '{', '}')
            .ok_or_else(|| Error::Protocol(format!("judge returned no JSON object: {reply:?}")))?;
        let v: Value =
            serde_json::from_str(raw).map_err(|e| Error::Protocol(format!("judge labels unparseable: {e}")))?;
        let labels = |key: &str, n: usize| -> Result<Vec<bool>> {
            let arr = v
                .get(key)
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Protocol(format!("judge labels lack `{key}`")))?;
            let out: Option<Vec<bool>> = arr.iter().map(Value::as_bool).collect();
            match out {
                Some(out) if out.len() == n => Ok(out),
                _ => Err(Error::Protocol(format!("judge `{key}` must hold {n} booleans"))),
            }
        };
        Ok((labels("answer", answer.len())?, labels("ground_truth", truth.len())?))
    }
}

/// Scores answers under one [`MetricConfig`].
#[derive(Debug, Clone)]
pub struct Scorer {
    cfg: MetricConfig,
    judge: Judge,
}

impl Scorer {
    /// A remote judge requires `judge_llm`.
    pub fn new(cfg: MetricConfig, judge_llm: Option<Arc<dyn Generator>>) -> Result<Self> {
        cfg.validate()?;
        let judge = match (cfg.judge, judge_llm) {
            (JudgeKind::Lexical, _) => Judge::Lexical {
                threshold: cfg.jaccard_threshold,
            },
            (JudgeKind::Remote, Some(g)) => Judge::Remote(g),
            (JudgeKind::Remote, None) => {
                return Err(Error::InvalidConfig("remote judge needs a remote LLM endpoint".into()))
            }
        };
        Ok(Self { cfg, judge })
    }

    pub fn lexical() -> Self {
        Self::new(MetricConfig::default(), None).expect("default config is valid")
    }

    pub fn config(&self) -> &MetricConfig {
        &self.cfg
    }

    pub fn judge(&self) -> &Judge {
        &self.judge
    }

    pub fn answer_correctness(&self, answer: &str, qa: &QAItem, embedder: &dyn Embedder) -> Result<EvalResult> {
        let truth_vec = embedder.embed(&qa.ground_truth).map_err(|e| e.for_question(&qa.id))?;
        self.answer_correctness_with(answer, qa, &truth_vec, embedder)
    }

    /// Like [`Scorer::answer_correctness`] with the ground-truth embedding
    /// supplied by the caller.
    pub fn answer_correctness_with(
        &self,
        answer: &str,
        qa: &QAItem,
        truth_vec: &Vector,
        embedder: &dyn Embedder,
    ) -> Result<EvalResult> {
        let run = || -> Result<EvalResult> {
            let answer_stmts = self.judge.extract_statements(answer)?;
            let truth_stmts = self.judge.extract_statements(&qa.ground_truth)?;
            let counts = self.judge.classify(&answer_stmts, &truth_stmts)?;
            let f = f1(counts.tp, counts.fp, counts.fn_)?;
            let s = if answer.trim().is_empty() {
                0.0
            } else {
                cosine(&embedder.embed(answer)?, truth_vec)?.clamp(0.0, 1.0)
            };
            Ok(EvalResult {
                qa_id: qa.id.clone(),
                tp: counts.tp,
                fp: counts.fp,
                fn_: counts.fn_,
                f1: f,
                semantic_sim: s,
                answer_correctness: blend(f, s, &self.cfg),
            })
        };
        run().map_err(|e| e.for_question(&qa.id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub n: usize,
    pub min: f64,
    pub max: f64,
}

/// Mean, count and extrema of `answer_correctness`, folded in input order.
pub fn aggregate(results: &[EvalResult]) -> Result<Aggregate> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let scores = results.iter().map(|r| r.answer_correctness);
    let sum: f64 = scores.clone().sum();
    Ok(Aggregate {
        mean: sum / results.len() as f64,
        n: results.len(),
        min: scores.clone().fold(f64::INFINITY, f64::min),
        max: scores.fold(f64::NEG_INFINITY, f64::max),
    })
}
