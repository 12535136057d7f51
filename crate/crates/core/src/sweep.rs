//! Chunk-size sweep: rebuild the index per size, answer and score the QA
//! set, and report mean correctness per size.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chunker::{chunk_corpus_with, ChunkConfig};
use crate::corpus::Document;
use crate::embed::{Embedder, EmbedderConfig, Vector};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::llm::Generator;
use crate::metrics::{aggregate, EvalResult, MetricConfig, QAItem, Scorer};
use crate::rag::{answer_all, index_chunks, AnswerRecord, RagConfig};

pub const DEFAULT_CHUNK_SIZES: [usize; 6] = [250, 500, 1000, 2000, 4000, 8000];
pub const CSV_HEADER: &str = "chunk_size,mean_correctness,n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub chunk_sizes: Vec<usize>,
    pub overlap: usize,
    /// Record a failed row and continue instead of aborting the sweep.
    pub keep_going: bool,
    pub rag: RagConfig,
    pub metric: MetricConfig,
    pub embedder: EmbedderConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            chunk_sizes: DEFAULT_CHUNK_SIZES.to_vec(),
            overlap: 0,
            keep_going: false,
            rag: RagConfig::default(),
            metric: MetricConfig::default(),
            embedder: EmbedderConfig::default(),
        }
    }
}

pub fn validate_sizes(sizes: &[usize], overlap: usize) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::InvalidConfig("at least one chunk size is required".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(format!(
            "chunk sizes must be strictly increasing: {sizes:?}"
        )));
    }
    for &s in sizes {
        ChunkConfig::new(s, overlap)?;
    }
    Ok(())
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        validate_sizes(&self.chunk_sizes, self.overlap)?;
        self.rag.validate()?;
        self.metric.validate()?;
        self.embedder.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub chunk_size: usize,
    /// `None` for a size that failed under `keep_going`.
    pub mean_correctness: Option<f64>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub per_question: BTreeMap<usize, Vec<EvalResult>>,
    #[serde(skip)]
    pub answers: BTreeMap<usize, Vec<AnswerRecord>>,
    pub argmax_sizes: Vec<usize>,
}

/// Sizes whose mean equals the best mean; failed rows never qualify.
pub fn argmax_sizes(rows: &[SweepRow]) -> Vec<usize> {
    let best = rows
        .iter()
        .filter_map(|r| r.mean_correctness)
        .fold(None, |acc: Option<f64>, m| Some(acc.map_or(m, |a| a.max(m))));
    match best {
        None => Vec::new(),
        Some(best) => rows
            .iter()
            .filter(|r| r.mean_correctness == Some(best))
            .map(|r| r.chunk_size)
            .collect(),
    }
}

impl SweepReport {
    /// Rebuilds rows and argmax from per-question results.
    pub fn from_results(per_question: BTreeMap<usize, Vec<EvalResult>>) -> Result<Self> {
        let rows = per_question
            .iter()
            .map(|(&chunk_size, results)| {
                let agg = aggregate(results)?;
                Ok(SweepRow {
                    chunk_size,
                    mean_correctness: Some(agg.mean),
                    n: agg.n,
                    error: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            argmax_sizes: argmax_sizes(&rows),
            rows,
            per_question,
            answers: BTreeMap::new(),
        })
    }
}

/// The components a sweep runs against.
pub struct Backends<'a> {
    pub embedder: &'a dyn Embedder,
    pub generator: &'a dyn Generator,
    pub scorer: &'a Scorer,
}

struct SizeOutcome {
    answers: Vec<AnswerRecord>,
    results: Vec<EvalResult>,
}

#[allow(clippy::too_many_arguments)]
fn run_size(
    docs: &[Document],
    qa_set: &[QAItem],
    question_vecs: &[Vector],
    truth_vecs: &[Vector],
    chunk_cfg: ChunkConfig,
    cfg: &SweepConfig,
    backends: &Backends<'_>,
    exec: Execution,
) -> Result<SizeOutcome> {
    let chunks = chunk_corpus_with(docs, chunk_cfg, exec);
    let index = index_chunks(&chunks, backends.embedder)?;
    let answers = answer_all(qa_set, question_vecs, &index, backends.generator, &cfg.rag, exec)?;
    let jobs: Vec<(&AnswerRecord, (&QAItem, &Vector))> = answers.iter().zip(qa_set.iter().zip(truth_vecs)).collect();
    let results = exec.try_map(&jobs, |(ans, (qa, truth))| {
        backends
            .scorer
            .answer_correctness_with(&ans.answer, qa, truth, backends.embedder)
    })?;
    Ok(SizeOutcome { answers, results })
}

pub fn run_sweep(
    docs: &[Document],
    qa_set: &[QAItem],
    cfg: &SweepConfig,
    backends: &Backends<'_>,
) -> Result<SweepReport> {
    run_sweep_with(docs, qa_set, cfg, backends, Execution::default())
}

/// Sizes run one after another; question answering and scoring within a
/// size follow `exec`. Question and ground-truth embeddings are computed
/// once and shared by every size.
pub fn run_sweep_with(
    docs: &[Document],
    qa_set: &[QAItem],
    cfg: &SweepConfig,
    backends: &Backends<'_>,
    exec: Execution,
) -> Result<SweepReport> {
    cfg.validate()?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if qa_set.is_empty() {
        return Err(Error::EmptyQaSet);
    }
    let questions: Vec<String> = qa_set.iter().map(|q| q.question.clone()).collect();
    let truths: Vec<String> = qa_set.iter().map(|q| q.ground_truth.clone()).collect();
    let question_vecs = backends.embedder.embed_batch(&questions)?;
    let truth_vecs = backends.embedder.embed_batch(&truths)?;

    let mut rows = Vec::with_capacity(cfg.chunk_sizes.len());
    let mut per_question = BTreeMap::new();
    let mut answers = BTreeMap::new();
    for &size in &cfg.chunk_sizes {
        let chunk_cfg = ChunkConfig::new(size, cfg.overlap)?;
        let outcome = run_size(
            docs,
            qa_set,
            &question_vecs,
            &truth_vecs,
            chunk_cfg,
            cfg,
            backends,
            exec,
        )
        .and_then(|o| aggregate(&o.results).map(|agg| (o, agg)));
        match outcome {
            Ok((o, agg)) => {
                rows.push(SweepRow {
                    chunk_size: size,
                    mean_correctness: Some(agg.mean),
                    n: agg.n,
                    error: None,
                });
                per_question.insert(size, o.results);
                answers.insert(size, o.answers);
            }
            Err(e) if cfg.keep_going => rows.push(SweepRow {
                chunk_size: size,
                mean_correctness: None,
                n: 0,
                error: Some(e.to_string()),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(SweepReport {
        argmax_sizes: argmax_sizes(&rows),
        rows,
        per_question,
        answers,
    })
}

/// Header plus one row per size, means to six decimals, LF line endings.
/// Failed rows leave the mean empty.
pub fn render_csv(report: &SweepReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in &report.rows {
        match row.mean_correctness {
            Some(m) => writeln!(out, "{},{:.6},{}", row.chunk_size, m, row.n),
            None => writeln!(out, "{},,{}", row.chunk_size, row.n),
        }
        .expect("writing to String");
    }
    out
}

pub fn emit_csv(report: &SweepReport, path: &Path) -> Result<()> {
    write_file(path, render_csv(report).as_bytes())
}

const SVG_WIDTH: f64 = 640.0;
const SVG_HEIGHT: f64 = 400.0;
const PLOT_LEFT: f64 = 70.0;
const PLOT_TOP: f64 = 50.0;
const PLOT_WIDTH: f64 = 540.0;
const PLOT_HEIGHT: f64 = 280.0;

/// Bar chart of mean correctness per chunk size on a fixed [0, 1] axis.
pub fn render_svg(report: &SweepReport) -> String {
    let mut s = String::new();
    let baseline = PLOT_TOP + PLOT_HEIGHT;
    let y_of = |v: f64| baseline - PLOT_HEIGHT * v;
    let w = |s: &mut String, line: std::fmt::Arguments<'_>| {
        s.write_fmt(line).expect("writing to String");
        s.push('\n');
    };

    w(
        &mut s,
        format_args!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}" font-family="sans-serif" font-size="12">"#
        ),
    );
    w(
        &mut s,
        format_args!(r#"<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>"#),
    );
    w(
        &mut s,
        format_args!(
            r#"<text x="{:.3}" y="24" text-anchor="middle" font-size="15">Average answer correctness by chunk size</text>"#,
            SVG_WIDTH / 2.0
        ),
    );
    for i in 0..=4 {
        let v = i as f64 * 0.25;
        let y = y_of(v);
        w(
            &mut s,
            format_args!(
                r##"<line class="grid" x1="{PLOT_LEFT:.3}" y1="{y:.3}" x2="{:.3}" y2="{y:.3}" stroke="#cccccc" stroke-width="1"/>"##,
                PLOT_LEFT + PLOT_WIDTH
            ),
        );
        w(
            &mut s,
            format_args!(
                r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{v:.2}</text>"#,
                PLOT_LEFT - 8.0,
                y + 4.0
            ),
        );
    }
    w(
        &mut s,
        format_args!(
            r#"<line x1="{PLOT_LEFT:.3}" y1="{PLOT_TOP:.3}" x2="{PLOT_LEFT:.3}" y2="{baseline:.3}" stroke="black" stroke-width="1"/>"#
        ),
    );

    let n = report.rows.len().max(1) as f64;
    let slot = PLOT_WIDTH / n;
    let bar_width = slot * 0.6;
    for (i, row) in report.rows.iter().enumerate() {
        let x = PLOT_LEFT + slot * i as f64 + (slot - bar_width) / 2.0;
        let centre = x + bar_width / 2.0;
        let mean = row.mean_correctness.unwrap_or(0.0).clamp(0.0, 1.0);
        let height = PLOT_HEIGHT * mean;
        let fill = if row.mean_correctness.is_some() {
            "#4c72b0"
        } else {
            "#bbbbbb"
        };
        w(
            &mut s,
            format_args!(
                r#"<rect class="bar" data-chunk-size="{}" x="{x:.3}" y="{:.3}" width="{bar_width:.3}" height="{height:.3}" fill="{fill}"/>"#,
                row.chunk_size,
                baseline - height
            ),
        );
        let label = match row.mean_correctness {
            Some(m) => format!("{m:.3}"),
            None => "failed".to_string(),
        };
        w(
            &mut s,
            format_args!(
                r#"<text x="{centre:.3}" y="{:.3}" text-anchor="middle">{label}</text>"#,
                baseline - height - 6.0
            ),
        );
        w(
            &mut s,
            format_args!(
                r#"<text x="{centre:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
                baseline + 18.0,
                row.chunk_size
            ),
        );
    }
    w(
        &mut s,
        format_args!(
            r#"<line x1="{PLOT_LEFT:.3}" y1="{baseline:.3}" x2="{:.3}" y2="{baseline:.3}" stroke="black" stroke-width="1"/>"#,
            PLOT_LEFT + PLOT_WIDTH
        ),
    );
    w(
        &mut s,
        format_args!(
            r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">Chunk size (characters)</text>"#,
            PLOT_LEFT + PLOT_WIDTH / 2.0,
            baseline + 42.0
        ),
    );
    w(
        &mut s,
        format_args!(
            r#"<text x="18" y="{:.3}" text-anchor="middle" transform="rotate(-90 18 {:.3})">Mean answer correctness</text>"#,
            PLOT_TOP + PLOT_HEIGHT / 2.0,
            PLOT_TOP + PLOT_HEIGHT / 2.0
        ),
    );
    s.push_str("</svg>\n");
    s
}

pub fn emit_svg(report: &SweepReport, path: &Path) -> Result<()> {
    write_file(path, render_svg(report).as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    write_file(path, &out)
}

/// Writes `report.csv`, `report.svg`, `report.json` and, per size,
/// `{size}/results.jsonl` and `{size}/answers.jsonl` under `dir`.
pub fn write_outputs(report: &SweepReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    emit_csv(report, &dir.join("report.csv"))?;
    emit_svg(report, &dir.join("report.svg"))?;
    let summary = serde_json::json!({
        "rows": report.rows,
        "argmax_sizes": report.argmax_sizes,
    });
    write_file(
        &dir.join("report.json"),
        format!("{}\n", serde_json::to_string_pretty(&summary)?).as_bytes(),
    )?;
    for (size, results) in &report.per_question {
        let sub = dir.join(size.to_string());
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(format!("creating {}", sub.display()), e))?;
        write_jsonl(&sub.join("results.jsonl"), results)?;
        if let Some(answers) = report.answers.get(size) {
            write_jsonl(&sub.join("answers.jsonl"), answers)?;
        }
    }
    Ok(())
}

/// Reloads `{size}/results.jsonl` files from a sweep output directory.
pub fn read_results_dir(dir: &Path) -> Result<BTreeMap<usize, Vec<EvalResult>>> {
    let entries = std::fs::read_dir(dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::PathNotFound(dir.to_path_buf()),
        _ => Error::io(format!("listing {}", dir.display()), e),
    })?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        let Some(size) = entry.file_name().to_str().and_then(|n| n.parse::<usize>().ok()) else {
            continue;
        };
        let path = entry.path().join("results.jsonl");
        if !path.is_file() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let results = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::MalformedLine {
                    line: i + 1,
                    reason: format!("{}: {e}", path.display()),
                })
            })
            .collect::<Result<Vec<EvalResult>>>()?;
        out.insert(size, results);
    }
    if out.is_empty() {
        return Err(Error::EmptyResults);
    }
    Ok(out)
}
