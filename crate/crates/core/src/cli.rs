//! `ragbench` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or runtime
//! error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cache::CACHE_DIR_ENV;
use crate::chunker::{chunk_corpus, ChunkConfig};
use crate::config::AppConfig;
use crate::corpus::{self, CorpusStats};
use crate::embed::{Embedder, EmbedderConfig, EmbedderKind};
use crate::error::{Error, Result};
use crate::llm::{Generator, LlmConfig, LlmKind};
use crate::metrics::{aggregate, load_qa_set, JudgeKind, QAItem, Scorer};
use crate::rag::{answer_question, index_chunks};
use crate::sweep::{self, run_sweep, Backends, SweepReport};
use crate::vectorstore::Index;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "ragbench",
    version,
    about = "Vet a corpus for RAG question answering with chunk-size sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize a Reddit JSONL export or a text/markdown directory into a corpus store
    Ingest(IngestArgs),
    /// Write the chunks of a corpus as JSONL
    Chunk(ChunkArgs),
    /// Embed a chunked corpus and save the index
    Index(IndexArgs),
    /// Answer one question through the pipeline
    Ask(AskArgs),
    /// Answer and score a QA set at one chunk size
    Eval(EvalArgs),
    /// Answer and score a QA set at every configured chunk size
    Sweep(SweepArgs),
    /// Rebuild report.csv / report.svg from a sweep output directory
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InputFormat {
    RedditJsonl,
    Textdir,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long, value_enum)]
    format: InputFormat,
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Collapse documents with identical normalized bodies (default)
    #[arg(long, overrides_with = "no_dedup")]
    dedup: bool,
    #[arg(long)]
    no_dedup: bool,
    /// Fail on the first malformed line instead of skipping it
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct ChunkingArgs {
    #[arg(long, value_name = "N", default_value_t = 1000)]
    chunk_size: usize,
    #[arg(long, value_name = "N")]
    overlap: Option<usize>,
}

#[derive(Debug, Args)]
struct ChunkArgs {
    #[arg(long, value_name = "PATH")]
    corpus: PathBuf,
    #[command(flatten)]
    chunking: ChunkingArgs,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EmbedderChoice {
    Offline,
    Remote,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LlmChoice {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum JudgeChoice {
    Lexical,
    Remote,
}

/// Backend selection; flags override the config file.
#[derive(Debug, Args)]
struct BackendArgs {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    embedder: Option<EmbedderChoice>,
    #[arg(long, value_name = "URL")]
    embed_url: Option<String>,
    #[arg(long, value_name = "NAME")]
    embed_model: Option<String>,
    /// Offline embedder dimension
    #[arg(long, value_name = "N")]
    embed_dim: Option<usize>,
    #[arg(long, value_enum)]
    llm: Option<LlmChoice>,
    #[arg(long, value_name = "URL")]
    llm_url: Option<String>,
    #[arg(long, value_name = "NAME")]
    llm_model: Option<String>,
    #[arg(long, value_enum)]
    judge: Option<JudgeChoice>,
    #[arg(long, value_name = "N")]
    top_k: Option<usize>,
    #[arg(long, value_name = "N")]
    max_context_chars: Option<usize>,
    /// Cache directory for remote responses (also RAGBENCH_CACHE_DIR)
    #[arg(long, value_name = "DIR")]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    no_cache: bool,
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long, value_name = "PATH")]
    corpus: PathBuf,
    #[command(flatten)]
    chunking: ChunkingArgs,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Args)]
struct AskArgs {
    /// Corpus store to chunk and index on the fly
    #[arg(
        long,
        value_name = "PATH",
        required_unless_present = "index",
        conflicts_with = "index"
    )]
    corpus: Option<PathBuf>,
    /// Prebuilt index file instead of --corpus
    #[arg(long, value_name = "PATH")]
    index: Option<PathBuf>,
    #[arg(long, value_name = "TEXT")]
    question: String,
    #[command(flatten)]
    chunking: ChunkingArgs,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    corpus: PathBuf,
    #[arg(long, value_name = "PATH")]
    qa: PathBuf,
    #[command(flatten)]
    chunking: ChunkingArgs,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_name = "PATH")]
    corpus: PathBuf,
    #[arg(long, value_name = "PATH")]
    qa: PathBuf,
    /// Comma-separated, strictly increasing chunk sizes
    #[arg(long, value_name = "N,N,...", value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, value_name = "N")]
    overlap: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Record failing chunk sizes as failed rows and continue
    #[arg(long)]
    keep_going: bool,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Sweep output directory holding {size}/results.jsonl
    #[arg(long, value_name = "DIR")]
    results: PathBuf,
    /// Where to write report.csv and report.svg (defaults to --results)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Chunk(a) => cmd_chunk(a),
        Command::Index(a) => cmd_index(a),
        Command::Ask(a) => cmd_ask(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn print_stats(stats: &CorpusStats) {
    eprintln!(
        "documents_in={} documents_kept={} duplicates_removed={} lines_skipped={}",
        stats.documents_in, stats.documents_kept, stats.duplicates_removed, stats.lines_skipped
    );
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let (docs, stats) = match a.format {
        InputFormat::RedditJsonl => {
            let file = std::fs::File::open(&a.input).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::PathNotFound(a.input.clone()),
                _ => Error::io(format!("opening {}", a.input.display()), e),
            })?;
            corpus::parse_reddit_jsonl(std::io::BufReader::new(file), !a.strict)?
        }
        InputFormat::Textdir => {
            let docs = corpus::ingest_text_dir(&a.input)?;
            let stats = CorpusStats {
                documents_in: docs.len(),
                documents_kept: docs.len(),
                ..CorpusStats::default()
            };
            (docs, stats)
        }
    };
    let (docs, stats) = if a.no_dedup {
        (docs, stats)
    } else {
        let (kept, d) = corpus::dedup(docs);
        (kept, stats.then(d))
    };
    corpus::save_store(&docs, &a.out)?;
    print_stats(&stats);
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    match path {
        Some(p) => AppConfig::load(p),
        None => Ok(AppConfig::default()),
    }
}

fn chunk_config(chunking: &ChunkingArgs, cfg: &AppConfig) -> Result<ChunkConfig> {
    ChunkConfig::new(chunking.chunk_size, chunking.overlap.unwrap_or(cfg.sweep.overlap))
}

fn cmd_chunk(a: ChunkArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let chunk_cfg = chunk_config(&a.chunking, &cfg)?;
    let docs = corpus::load_store(&a.corpus)?;
    let chunks = chunk_corpus(&docs, chunk_cfg);
    let mut out = Vec::new();
    for c in &chunks {
        serde_json::to_writer(&mut out, c)?;
        out.push(b'\n');
    }
    std::fs::write(&a.out, out).map_err(|e| Error::io(format!("writing {}", a.out.display()), e))?;
    eprintln!("chunks={} documents={}", chunks.len(), docs.len());
    Ok(())
}

/// Config file plus flag overrides, resolved into buildable backends.
struct Resolved {
    app: AppConfig,
    cache_dir: Option<PathBuf>,
}

fn resolve(b: &BackendArgs) -> Result<Resolved> {
    let mut app = load_config(b.config.as_deref())?;
    match b.embedder {
        Some(EmbedderChoice::Offline) => {
            app.embedder = EmbedderConfig {
                dim: app.embedder.dim.filter(|_| app.embedder.kind == EmbedderKind::Offline),
                ..EmbedderConfig::default()
            }
        }
        Some(EmbedderChoice::Remote) => {
            app.embedder.kind = EmbedderKind::Remote;
            app.embedder.dim = None;
        }
        None => {}
    }
    if let Some(url) = &b.embed_url {
        app.embedder.endpoint_url = Some(url.clone());
    }
    if let Some(m) = &b.embed_model {
        app.embedder.model = Some(m.clone());
    }
    if let Some(d) = b.embed_dim {
        app.embedder.dim = Some(d);
    }
    match b.llm {
        Some(LlmChoice::Mock) => app.llm = LlmConfig::default(),
        Some(LlmChoice::Remote) => app.llm.kind = LlmKind::Remote,
        None => {}
    }
    if let Some(url) = &b.llm_url {
        app.llm.endpoint_url = Some(url.clone());
    }
    if let Some(m) = &b.llm_model {
        app.llm.model = Some(m.clone());
    }
    match b.judge {
        Some(JudgeChoice::Lexical) => app.metric.judge = JudgeKind::Lexical,
        Some(JudgeChoice::Remote) => app.metric.judge = JudgeKind::Remote,
        None => {}
    }
    if let Some(k) = b.top_k {
        app.rag.top_k = k;
    }
    if let Some(n) = b.max_context_chars {
        app.rag.max_context_chars = n;
    }
    app.validate()?;
    let cache_dir = if b.no_cache {
        None
    } else {
        b.cache_dir
            .clone()
            .or_else(|| {
                std::env::var_os(CACHE_DIR_ENV)
                    .filter(|v| !v.is_empty())
                    .map(PathBuf::from)
            })
            .or_else(|| app.cache_dir.clone())
    };
    Ok(Resolved { app, cache_dir })
}

impl Resolved {
    fn embedder(&self) -> Result<Box<dyn Embedder>> {
        self.app.embedder.build(self.cache_dir.as_deref())
    }

    fn generator(&self) -> Result<Arc<dyn Generator>> {
        self.app.llm.build(self.cache_dir.as_deref())
    }

    fn scorer(&self) -> Result<Scorer> {
        let judge_llm = match self.app.metric.judge {
            JudgeKind::Lexical => None,
            JudgeKind::Remote => {
                let cfg = match &self.app.judge_llm {
                    Some(j) => j,
                    None if self.app.llm.kind == LlmKind::Remote => &self.app.llm,
                    None => {
                        return Err(Error::InvalidConfig(
                            "remote judge needs [judge_llm] or a remote [llm] endpoint".into(),
                        ))
                    }
                };
                if cfg.kind != LlmKind::Remote {
                    return Err(Error::InvalidConfig("remote judge needs a remote endpoint".into()));
                }
                Some(cfg.build(self.cache_dir.as_deref())?)
            }
        };
        Scorer::new(self.app.metric.clone(), judge_llm)
    }
}

fn cmd_index(a: IndexArgs) -> Result<()> {
    let r = resolve(&a.backend)?;
    let chunk_cfg = chunk_config(&a.chunking, &r.app)?;
    let embedder = r.embedder()?;
    let docs = corpus::load_store(&a.corpus)?;
    let chunks = chunk_corpus(&docs, chunk_cfg);
    let index = index_chunks(&chunks, embedder.as_ref())?;
    index.save(&a.out)?;
    eprintln!("entries={} dim={}", index.len(), index.dim());
    Ok(())
}

fn cmd_ask(a: AskArgs) -> Result<()> {
    let r = resolve(&a.backend)?;
    let chunk_cfg = chunk_config(&a.chunking, &r.app)?;
    if a.question.trim().is_empty() {
        return Err(Error::InvalidConfig("--question must not be empty".into()));
    }
    let embedder = r.embedder()?;
    let generator = r.generator()?;
    let index = match (&a.index, &a.corpus) {
        (Some(path), _) => Index::load(path)?,
        (None, Some(path)) => {
            let docs = corpus::load_store(path)?;
            index_chunks(&chunk_corpus(&docs, chunk_cfg), embedder.as_ref())?
        }
        (None, None) => unreachable!("clap requires one of --corpus/--index"),
    };
    let qa = QAItem {
        id: "ask".into(),
        question: a.question.clone(),
        ground_truth: String::new(),
    };
    let rec = answer_question(&qa, &index, embedder.as_ref(), generator.as_ref(), &r.app.rag)?;
    let mut out = std::io::stdout().lock();
    let io = |e| Error::io("writing to stdout", e);
    writeln!(out, "{}", rec.answer).map_err(io)?;
    writeln!(out).map_err(io)?;
    for hit in &rec.retrieved {
        writeln!(out, "{}#{}\t{:.6}", hit.doc_id, hit.seq, hit.score).map_err(io)?;
    }
    Ok(())
}

fn output_dir(flag: Option<PathBuf>, app: &AppConfig) -> Result<PathBuf> {
    flag.or_else(|| app.output_dir.clone())
        .ok_or_else(|| Error::InvalidConfig("an output directory is required (--out or output_dir)".into()))
}

fn run_and_write(
    r: &Resolved,
    cfg: &sweep::SweepConfig,
    corpus_path: &Path,
    qa_path: &Path,
    out_dir: &Path,
) -> Result<SweepReport> {
    cfg.validate()?;
    let embedder = r.embedder()?;
    let generator = r.generator()?;
    let scorer = r.scorer()?;
    let docs = corpus::load_store(corpus_path)?;
    let qa_set = load_qa_set(qa_path)?;
    let backends = Backends {
        embedder: embedder.as_ref(),
        generator: generator.as_ref(),
        scorer: &scorer,
    };
    let report = run_sweep(&docs, &qa_set, cfg, &backends)?;
    sweep::write_outputs(&report, out_dir)?;
    Ok(report)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let r = resolve(&a.backend)?;
    let chunk_cfg = chunk_config(&a.chunking, &r.app)?;
    let out_dir = output_dir(a.out, &r.app)?;
    let mut cfg = r.app.sweep_config();
    cfg.chunk_sizes = vec![chunk_cfg.size()];
    cfg.overlap = chunk_cfg.overlap();
    cfg.keep_going = false;
    let report = run_and_write(&r, &cfg, &a.corpus, &a.qa, &out_dir)?;
    let results = &report.per_question[&chunk_cfg.size()];
    let summary = aggregate(results)?;
    let text = serde_json::to_string_pretty(&serde_json::json!({
        "chunk_size": chunk_cfg.size(),
        "mean": summary.mean,
        "n": summary.n,
        "min": summary.min,
        "max": summary.max,
    }))?;
    std::fs::write(out_dir.join("summary.json"), format!("{text}\n"))
        .map_err(|e| Error::io("writing summary.json", e))?;
    println!("{text}");
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let r = resolve(&a.backend)?;
    let out_dir = output_dir(a.out, &r.app)?;
    let mut cfg = r.app.sweep_config();
    if let Some(sizes) = a.sizes {
        cfg.chunk_sizes = sizes;
    }
    if let Some(o) = a.overlap {
        cfg.overlap = o;
    }
    cfg.keep_going |= a.keep_going;
    let report = run_and_write(&r, &cfg, &a.corpus, &a.qa, &out_dir)?;
    print!("{}", sweep::render_csv(&report));
    if report.rows.iter().any(|row| row.mean_correctness.is_none()) {
        eprintln!("warning: some chunk sizes failed; see report.json");
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let per_question = sweep::read_results_dir(&a.results)?;
    let report = SweepReport::from_results(per_question)?;
    let out = a.out.unwrap_or(a.results);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    sweep::emit_csv(&report, &out.join("report.csv"))?;
    sweep::emit_svg(&report, &out.join("report.svg"))?;
    print!("{}", sweep::render_csv(&report));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(
            run(["ragbench", "ingest", "--format", "bogus", "--in", "x", "--out", "y"]),
            EXIT_USAGE
        );
        assert_eq!(run(["ragbench", "ask", "--corpus", "c.jsonl"]), EXIT_USAGE);
        assert_eq!(run(["ragbench"]), EXIT_USAGE);
        assert_eq!(run(["ragbench", "--help"]), EXIT_OK);
    }

    #[test]
    fn bad_sizes_exit_one() {
        let code = run([
            "ragbench",
            "sweep",
            "--corpus",
            "missing.jsonl",
            "--qa",
            "missing.jsonl",
            "--sizes",
            "100,50",
            "--out",
            "/tmp/never",
        ]);
        assert_eq!(code, EXIT_USAGE);
    }
}
