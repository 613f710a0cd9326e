//! The `sctok` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{self, AnalysisError};
use crate::corpus::{read_files, CorpusError};
use crate::encoder::{self, BatchError, DecodeError, EncodeError, EncodeOptions};
use crate::pretokenizer::count_pretokens;
use crate::trainer::{self, TrainError};
use crate::vocabulary::{ExpandedVocabulary, Mode, TokenId, VocabError, FORMAT_VERSION};

// Lines handed to the encoder per parallel batch.
const LINE_BATCH: usize = 4096;

#[derive(Parser, Debug)]
#[command(name = "sctok", version, about = "Byte-level BPE with scaffold tokens")]
pub struct Cli {
    /// Worker threads for encoding and analysis (default: all cores).
    #[arg(long, global = true, env = "SCTOK_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a vocabulary from text files.
    Train(TrainArgs),
    /// Encode newline-delimited text to token ids.
    Encode(EncodeArgs),
    /// Decode lines of token ids back to text.
    Decode(DecodeArgs),
    /// Corpus statistics under one vocabulary.
    Analyze(AnalyzeArgs),
    /// Compare a scaffold-mode vocabulary with an original-mode one.
    Compare(CompareArgs),
    /// List the merges of a vocabulary.
    Merges(MergesArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Original,
    Scaffold,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Original => Mode::Original,
            ModeArg::Scaffold => Mode::Scaffold,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    /// Training text files (UTF-8).
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    /// Number of normal tokens, 256 byte tokens included.
    #[arg(long, value_parser = clap::value_parser!(u64).range(257..))]
    vocab_size: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Scaffold)]
    mode: ModeArg,
    /// Vocabulary file to write.
    #[arg(long)]
    output: PathBuf,
    /// Per-iteration training log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EncodeArgs {
    #[arg(long)]
    vocab: PathBuf,
    /// Input file (default: stdin).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Print escaped token bytes instead of ids.
    #[arg(long)]
    pieces: bool,
    /// Merge dropout probability in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct DecodeArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Replace invalid UTF-8 with U+FFFD instead of failing.
    #[arg(long)]
    lossy: bool,
}

#[derive(Args, Debug, Serialize)]
struct AnalyzeArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    /// JSON report (default: stdout).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Sorted token frequency curve as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct CompareArgs {
    /// Original-mode vocabulary.
    #[arg(long)]
    original: PathBuf,
    /// Scaffold-mode vocabulary.
    #[arg(long)]
    scaffold: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct MergesArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{stage}: {path}: {source}")]
    Io {
        stage: &'static str,
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("loading vocabulary: {0}")]
    Vocab(#[from] VocabError),
    #[error("reading corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error("encoding line {line}: {source}")]
    Encode { line: usize, source: EncodeError },
    #[error("decoding line {line}: {reason}")]
    Decode { line: usize, reason: String },
    #[error("analysis: {0}")]
    Analysis(#[from] AnalysisError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn io_err<'a>(
    stage: &'static str,
    path: Option<&'a Path>,
) -> impl FnOnce(io::Error) -> CliError + 'a {
    move |source| CliError::Io {
        stage,
        path: path.map_or_else(|| "-".to_owned(), |p| p.display().to_string()),
        source,
    }
}

/// The resolved command line as recorded in output files.
fn run_config(command: &str, args: &impl Serialize) -> serde_json::Value {
    let mut value = serde_json::to_value(args).expect("arguments serialize");
    if let serde_json::Value::Object(map) = &mut value {
        map.insert("command".into(), command.into());
        map.insert("tool_version".into(), env!("CARGO_PKG_VERSION").into());
    }
    value
}

fn open_input(path: Option<&Path>) -> Result<Box<dyn BufRead>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufReader::new(
            File::open(p).map_err(io_err("opening input", Some(p)))?,
        )),
        None => Box::new(BufReader::new(io::stdin())),
    })
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(io_err("creating output", Some(p)))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_file(
    stage: &'static str,
    path: Option<&Path>,
    f: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), CliError> {
    let mut out = open_output(path)?;
    f(&mut out)
        .and_then(|_| out.flush())
        .map_err(io_err(stage, path))
}

/// Reads up to `LINE_BATCH` lines, without their terminating '\n'.
fn read_lines(input: &mut dyn BufRead, path: Option<&Path>) -> Result<Vec<Vec<u8>>, CliError> {
    let mut lines = Vec::new();
    while lines.len() < LINE_BATCH {
        let mut line = Vec::new();
        if input
            .read_until(b'\n', &mut line)
            .map_err(io_err("reading input", path))?
            == 0
        {
            break;
        }
        if line.last() == Some(&b'\n') {
            line.pop();
        }
        lines.push(line);
    }
    Ok(lines)
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let config = run_config("train", args);
    let target = args.vocab_size as usize;
    let counts = count_pretokens(read_files(&args.corpus))?;
    log::info!(
        "{} distinct pre-tokens, {} in total",
        counts.len(),
        counts.total()
    );

    let mut last = 0;
    let out = trainer::train_with_progress(counts.into_sorted(), target, args.mode.into(), |p| {
        if p.iteration - last >= 1000 {
            last = p.iteration;
            log::info!(
                "iteration {}: |V| = {}, |S| = {}, head frequency {}",
                p.iteration,
                p.normal,
                p.scaffold,
                p.head_freq
            );
        }
    })?;
    if out.exhausted {
        log::warn!(
            "corpus exhausted: stopped at |V| = {} of {target}",
            out.vocab.normal_count()
        );
    }
    let vocab = out.vocab.with_config(config.clone());
    vocab.save(&args.output)?;
    if let Some(log_path) = &args.log {
        write_file("writing training log", Some(log_path), |w| {
            writeln!(w, "# format_version={FORMAT_VERSION} config={config}")?;
            for event in &out.log {
                writeln!(w, "{event}")?;
            }
            Ok(())
        })?;
    }
    log::info!(
        "wrote {}: |V| = {}, |S| = {}",
        args.output.display(),
        vocab.normal_count(),
        vocab.scaffold_count()
    );
    Ok(())
}

fn cmd_encode(args: &EncodeArgs) -> Result<(), CliError> {
    let opts = EncodeOptions::with_dropout(args.dropout, args.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let vocab = ExpandedVocabulary::load(&args.vocab)?;
    let mut input = open_input(args.input.as_deref())?;
    let mut out = open_output(args.output.as_deref())?;
    let write_err = io_err("writing output", args.output.as_deref());
    let mut line_no = 0;
    let mut buf = String::new();
    loop {
        let lines = read_lines(&mut input, args.input.as_deref())?;
        if lines.is_empty() {
            break;
        }
        let seqs = encoder::encode_batch(&lines, &vocab, opts).map_err(
            |BatchError { mut failures }| {
                let (i, source) = failures.swap_remove(0);
                CliError::Encode {
                    line: line_no + i + 1,
                    source,
                }
            },
        )?;
        line_no += lines.len();
        buf.clear();
        for seq in &seqs {
            for (i, &id) in seq.ids.iter().enumerate() {
                if i > 0 {
                    buf.push(' ');
                }
                if args.pieces {
                    buf.push_str(&encoder::escape_piece(vocab.bytes(id)));
                } else {
                    use std::fmt::Write as _;
                    let _ = write!(buf, "{id}");
                }
            }
            buf.push('\n');
        }
        if let Err(e) = out.write_all(buf.as_bytes()) {
            return Err(write_err(e));
        }
    }
    out.flush().map_err(write_err)
}

fn parse_ids(line: &[u8], line_no: usize) -> Result<Vec<TokenId>, CliError> {
    let bad = |reason: String| CliError::Decode {
        line: line_no,
        reason,
    };
    let text = std::str::from_utf8(line).map_err(|_| bad("line is not UTF-8".into()))?;
    text.split_ascii_whitespace()
        .map(|s| {
            s.parse::<u32>()
                .map(TokenId)
                .map_err(|_| bad(format!("invalid token id {s:?}")))
        })
        .collect()
}

fn cmd_decode(args: &DecodeArgs) -> Result<(), CliError> {
    let vocab = ExpandedVocabulary::load(&args.vocab)?;
    let mut input = open_input(args.input.as_deref())?;
    let mut out = open_output(args.output.as_deref())?;
    let write_err = io_err("writing output", args.output.as_deref());
    let mut line_no = 0;
    let mut buf = Vec::new();
    loop {
        let lines = read_lines(&mut input, args.input.as_deref())?;
        if lines.is_empty() {
            break;
        }
        buf.clear();
        for line in &lines {
            line_no += 1;
            let ids = parse_ids(line, line_no)?;
            let decoded = if args.lossy {
                encoder::decode_lossy(&ids, &vocab)
            } else {
                encoder::decode(&ids, &vocab)
            };
            let text = decoded.map_err(|e: DecodeError| CliError::Decode {
                line: line_no,
                reason: e.to_string(),
            })?;
            buf.extend_from_slice(text.as_bytes());
            buf.push(b'\n');
        }
        if let Err(e) = out.write_all(&buf) {
            return Err(write_err(e));
        }
    }
    out.flush().map_err(write_err)
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<(), CliError> {
    write_file("writing report", path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let config = run_config("analyze", args);
    let vocab = ExpandedVocabulary::load(&args.vocab)?;
    let (mut report, dist) = analysis::analyze(read_files(&args.corpus), &vocab)?;
    if let Some(csv) = &args.csv {
        write_file("writing distribution", Some(csv), |w| {
            analysis::write_distribution_csv(w, &dist, &vocab, Some(&config))
        })?;
    }
    report.config = Some(config);
    write_json(args.report.as_deref(), &report)
}

fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let config = run_config("compare", args);
    let original = ExpandedVocabulary::load(&args.original)?;
    let scaffold = ExpandedVocabulary::load(&args.scaffold)?;
    let mut report = analysis::compare_vocabs(&original, &scaffold, read_files(&args.corpus))?;
    report.config = Some(config);
    write_json(args.report.as_deref(), &report)
}

fn cmd_merges(args: &MergesArgs) -> Result<(), CliError> {
    let vocab = ExpandedVocabulary::load(&args.vocab)?;
    write_file("writing merges", args.output.as_deref(), |w| {
        vocab.write_merges(w)
    })
}

impl Cli {
    pub fn run(&self) -> Result<(), CliError> {
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(CliError::Usage("--threads must be at least 1".into()));
            }
            // fails only if the pool is already built, e.g. when called twice in-process
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
        match &self.command {
            Command::Train(a) => cmd_train(a),
            Command::Encode(a) => cmd_encode(a),
            Command::Decode(a) => cmd_decode(a),
            Command::Analyze(a) => cmd_analyze(a),
            Command::Compare(a) => cmd_compare(a),
            Command::Merges(a) => cmd_merges(a),
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match cli.run() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("sctok: {e}");
            e.exit_code()
        }
    }
}
