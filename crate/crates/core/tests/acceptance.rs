//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Needs the English evaluation corpus (see `SCTOK_ENGLISH_CORPUS`, default
//! `target/corpus/english.txt`); when it is missing the harness tries to
//! build it with `scripts/build_english_corpus.py`.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{
    check_against_reference, english_corpus_path, pretokens_of, random_corpus, random_string,
    workspace_root,
};
use scaffold_tokenizer::analysis::{compare_vocabs, entropy_redundancy, FrequencyDistribution};
use scaffold_tokenizer::corpus::read_files;
use scaffold_tokenizer::pretokenizer::{count_pretokens, PreToken};
use scaffold_tokenizer::trainer::train;
use scaffold_tokenizer::{decode, EncodeOptions, Encoder, ExpandedVocabulary, Mode, TokenId};

const MIN_ENGLISH_BYTES: u64 = 50_000_000;
const MIN_PERF_BYTES: u64 = 100_000_000;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, name: &str, result: Result<String, String>) {
        match result {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                self.failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
}

fn check(cond: bool, detail: String) -> Result<String, String> {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn ensure_english_corpus() -> Result<PathBuf, String> {
    let path = english_corpus_path();
    if !path.exists() {
        let script = workspace_root().join("scripts/build_english_corpus.py");
        eprintln!("building {} with {}", path.display(), script.display());
        let status = Command::new("python3").arg(&script).arg(&path).status();
        if !matches!(status, Ok(s) if s.success()) {
            return Err(format!("{} missing and could not be built", path.display()));
        }
    }
    let len = fs::metadata(&path).map_err(|e| e.to_string())?.len();
    if len < MIN_ENGLISH_BYTES {
        return Err(format!(
            "{} has {len} bytes, need at least {MIN_ENGLISH_BYTES}",
            path.display()
        ));
    }
    Ok(path)
}

/// The English corpus repeated until it reaches 100 MB.
fn ensure_perf_corpus(english: &Path) -> Result<PathBuf, String> {
    let path = english.with_file_name("english-100mb.txt");
    if fs::metadata(&path)
        .map(|m| m.len() >= MIN_PERF_BYTES)
        .unwrap_or(false)
    {
        return Ok(path);
    }
    let text = fs::read(english).map_err(|e| e.to_string())?;
    let copies = MIN_PERF_BYTES.div_ceil(text.len() as u64) as usize;
    fs::write(&path, text.repeat(copies)).map_err(|e| e.to_string())?;
    Ok(path)
}

fn corpus_pretokens(path: &Path) -> Result<Vec<PreToken>, String> {
    Ok(count_pretokens(read_files(&[path]))
        .map_err(|e| e.to_string())?
        .into_sorted())
}

fn train_vocab(pretokens: &[PreToken], n: usize, mode: Mode) -> ExpandedVocabulary {
    train(pretokens.iter().cloned(), n, mode)
        .expect("training succeeds")
        .vocab
}

fn demolition_violations(vocab: &ExpandedVocabulary) -> usize {
    vocab
        .records()
        .iter()
        .filter(|r| r.scaffold)
        .filter(|r| {
            let seq = vocab.demolition_sequence(r.id).unwrap();
            let spelled: Vec<u8> = seq
                .iter()
                .flat_map(|&t| vocab.bytes(t).iter().copied())
                .collect();
            spelled != r.bytes || seq.iter().any(|&t| vocab.is_scaffold(t))
        })
        .count()
}

/// The first `min_bytes` of `text`, cut at a line end.
fn prefix(text: &str, min_bytes: usize) -> &str {
    match text[min_bytes.min(text.len())..].find('\n') {
        Some(i) => &text[..min_bytes + i + 1],
        None => text,
    }
}

fn oracle_equivalence(vocabs: &mut Vec<ExpandedVocabulary>) -> Result<String, String> {
    let start = Instant::now();
    // (corpus bytes, N) per corpus; every corpus runs in both modes
    let plan: Vec<(usize, usize)> = (0..20)
        .map(|i| match i % 4 {
            0 => (20_000, 2000),
            1 => (80_000, 1500),
            2 => (250_000, 800),
            _ => (1_000_000, 400),
        })
        .collect();
    let mut iterations = 0;
    for (seed, &(size, n)) in plan.iter().enumerate() {
        let text = random_corpus(seed as u64, size);
        let pretokens = pretokens_of(&text);
        for mode in [Mode::Original, Mode::Scaffold] {
            iterations += check_against_reference(&pretokens, n, mode)
                .map_err(|e| format!("corpus {seed} ({size} bytes, N = {n}, {mode}): {e}"))?;
            vocabs.push(train_vocab(&pretokens, n, mode));
        }
    }
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(120),
        format!(
            "{} corpora x 2 modes, {iterations} iterations compared, {}",
            plan.len(),
            secs(elapsed)
        ),
    )
}

fn synthetic_trace(vocabs: &mut Vec<ExpandedVocabulary>) -> Result<String, String> {
    let corpus = vec![PreToken {
        bytes: b"aab".to_vec(),
        count: 8,
    }];
    let v = train_vocab(&corpus, 259, Mode::Scaffold);
    let scaffold: Vec<String> = v
        .records()
        .iter()
        .filter(|r| r.scaffold)
        .map(|r| String::from_utf8_lossy(&r.bytes).into_owned())
        .collect();
    let aab = v.lookup_bytes(b"aab").filter(|&t| !v.is_scaffold(t));
    let mut enc = Encoder::new(&v, EncodeOptions::default());
    let e1 = enc.encode("aab").ids;
    let e2 = enc.encode("aac").ids;
    let ok = scaffold == ["aa"]
        && aab.is_some()
        && Some(&e1[..]) == aab.as_ref().map(std::slice::from_ref)
        && e2 == [TokenId(97), TokenId(97), TokenId(99)];
    vocabs.push(v);
    check(
        ok,
        format!("S = {scaffold:?}, encode(aab) = {e1:?}, encode(aac) = {e2:?}"),
    )
}

fn no_scaffold_roundtrip(vocabs: &[ExpandedVocabulary], natural: &str) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let strings: Vec<String> = (0..10_000).map(|_| random_string(&mut rng, 60)).collect();
    let mut violations = 0;
    let mut checked = 0;
    for v in vocabs {
        for dropout in [0.0, 0.1] {
            let mut enc = Encoder::new(v, EncodeOptions::with_dropout(dropout, 17).unwrap());
            let natural = if v.len() > 4096 { Some(natural) } else { None };
            for text in strings.iter().map(String::as_str).chain(natural) {
                let ids = enc.encode(text).ids;
                checked += 1;
                if ids.iter().any(|&t| v.is_scaffold(t)) || decode(&ids, v).as_deref() != Ok(text) {
                    violations += 1;
                }
            }
        }
    }
    check(
        violations == 0,
        format!(
            "{violations} violations over {checked} encodings ({} vocabularies, 10000 random strings, {:.1} MB natural text, dropout 0 and 0.1)",
            vocabs.len(),
            natural.len() as f64 / 1e6
        ),
    )
}

fn main() {
    let mut report = Report { failed: 0 };
    let mut vocabs = Vec::new();

    report.line(
        "trainer oracle equivalence",
        oracle_equivalence(&mut vocabs),
    );
    report.line("synthetic scaffold trace", synthetic_trace(&mut vocabs));

    let english = ensure_english_corpus();
    let mut big_vocabs = Vec::new();
    match &english {
        Err(e) => {
            for name in [
                "no-scaffold guarantee and roundtrip",
                "directional corpus claims",
                "scaffold fraction",
                "determinism",
                "performance floor",
            ] {
                report.line(name, Err(e.clone()));
            }
        }
        Ok(path) => {
            let start = Instant::now();
            let pretokens = corpus_pretokens(path).expect("corpus reads");
            let original = train_vocab(&pretokens, 8192, Mode::Original);
            let scaffold = train_vocab(&pretokens, 8192, Mode::Scaffold);
            let cmp = compare_vocabs(&original, &scaffold, read_files(&[path]));
            let elapsed = start.elapsed();
            match cmp {
                Err(e) => {
                    report.line("directional corpus claims", Err(e.to_string()));
                    report.line("scaffold fraction", Err(e.to_string()));
                }
                Ok(c) => {
                    let (o, s) = (&c.original, &c.scaffold);
                    let uplift = c.uplift_percent.unwrap_or(f64::NAN);
                    report.line(
                        "directional corpus claims",
                        check(
                            s.compression_rate >= o.compression_rate
                                && s.entropy_bits >= o.entropy_bits
                                && s.redundancy <= o.redundancy
                                && uplift > 0.0
                                && elapsed < Duration::from_secs(30 * 60),
                            format!(
                                "N = 8192 on {:.1} MB: compression {:.4} vs {:.4}, H {:.4} vs {:.4}, R {:.5} vs {:.5} (scaffold vs original), \
                                 scaffold avg freq {:.1}, replacement avg freq {:.1}, uplift {uplift:.2}%, {}",
                                s.total_bytes as f64 / 1e6,
                                s.compression_rate,
                                o.compression_rate,
                                s.entropy_bits,
                                o.entropy_bits,
                                s.redundancy,
                                o.redundancy,
                                c.scaffold_avg_freq.unwrap_or(f64::NAN),
                                c.replacement_avg_freq.unwrap_or(f64::NAN),
                                secs(elapsed)
                            ),
                        ),
                    );
                    report.line(
                        "scaffold fraction",
                        check(
                            c.scaffold_fraction > 0.0 && c.scaffold_fraction < 0.2,
                            format!(
                                "{:.2}% ({} scaffold tokens of {} learned)",
                                100.0 * c.scaffold_fraction,
                                scaffold.scaffold_count(),
                                scaffold.len() - 256
                            ),
                        ),
                    );
                }
            }
            big_vocabs.push(original);
            big_vocabs.push(scaffold);
        }
    }

    if let Ok(path) = &english {
        let text = fs::read_to_string(path).expect("corpus is UTF-8");
        let natural = prefix(&text, 10_500_000);
        let mut subjects: Vec<ExpandedVocabulary> = vocabs.iter().step_by(8).cloned().collect();
        subjects.extend(vocabs.iter().filter(|v| v.len() == 259).cloned());
        subjects.extend(big_vocabs.iter().cloned());
        report.line(
            "no-scaffold guarantee and roundtrip",
            no_scaffold_roundtrip(&subjects, natural),
        );
    }

    let all: Vec<&ExpandedVocabulary> = vocabs.iter().chain(&big_vocabs).collect();
    let violations: usize = all.iter().map(|v| demolition_violations(v)).sum();
    let scaffold_tokens: usize = all.iter().map(|v| v.scaffold_count()).sum();
    report.line(
        "demolition soundness",
        check(
            violations == 0 && scaffold_tokens > 0,
            format!(
                "{violations} violations over {scaffold_tokens} scaffold tokens in {} vocabularies",
                all.len()
            ),
        ),
    );

    report.line("entropy unit tests", entropy_cases());

    if let Ok(path) = &english {
        report.line("determinism", determinism(path));
        report.line("performance floor", performance(path));
    }

    println!("{} failed", report.failed);
    if report.failed > 0 {
        std::process::exit(1);
    }
}

fn entropy_cases() -> Result<String, String> {
    // direct evaluation of -sum p log2 p and 1 - H / log2 |V|
    let brute = |counts: &[u64], v: usize| {
        let total: u64 = counts.iter().sum();
        let h: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| c as f64 / total as f64)
            .map(|p| -p * p.log2())
            .sum();
        (h, 1.0 - h / (v as f64).log2())
    };
    let cases: [(&[u64], usize, (f64, f64)); 3] = [
        (&[2, 2], 2, (1.0, 0.0)),
        (&[1, 1, 1, 1], 4, (2.0, 0.0)),
        (&[3, 1], 4, (0.8112781245, 0.5943609377)),
    ];
    let mut lines = Vec::new();
    for (counts, v, (h_want, r_want)) in cases {
        let (h, r) = entropy_redundancy(&FrequencyDistribution::from_counts(counts.to_vec()), v)
            .map_err(|e| e.to_string())?;
        let (bh, br) = brute(counts, v);
        let ok = (h - h_want).abs() < 1e-9
            && (r - r_want).abs() < 1e-9
            && (h - bh).abs() < 1e-12
            && (r - br).abs() < 1e-12;
        lines.push(format!("{counts:?}/|V|={v} -> ({h:.10}, {r:.10})"));
        if !ok {
            return Err(lines.join("; "));
        }
    }
    Ok(lines.join("; "))
}

fn determinism(corpus: &Path) -> Result<String, String> {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut files = Vec::new();
    for dir in &dirs {
        let status = Command::new(env!("CARGO_BIN_EXE_sctok"))
            .args(["train", "--corpus"])
            .arg(corpus)
            .args([
                "--vocab-size",
                "8192",
                "--mode",
                "scaffold",
                "--output",
                "vocab.json",
            ])
            .current_dir(dir.path())
            .env("RUST_LOG", "warn")
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("train exited with {status}"));
        }
        files.push(fs::read(dir.path().join("vocab.json")).map_err(|e| e.to_string())?);
    }
    check(
        files[0] == files[1],
        format!(
            "two runs, {} bytes each, identical: {}",
            files[0].len(),
            files[0] == files[1]
        ),
    )
}

fn performance(english: &Path) -> Result<String, String> {
    let perf = ensure_perf_corpus(english)?;
    let size = fs::metadata(&perf).map_err(|e| e.to_string())?.len();
    let start = Instant::now();
    let out = train(corpus_pretokens(&perf)?, 32768, Mode::Scaffold).map_err(|e| e.to_string())?;
    let train_time = start.elapsed();

    let text = fs::read_to_string(english).map_err(|e| e.to_string())?;
    let mut enc = Encoder::new(&out.vocab, EncodeOptions::default());
    let start = Instant::now();
    let mut tokens = 0;
    for line in text.split_inclusive('\n') {
        tokens += enc.encode(line).len();
    }
    let encode_time = start.elapsed();
    let mb_per_s = text.len() as f64 / 1e6 / encode_time.as_secs_f64();
    check(
        train_time < Duration::from_secs(15 * 60) && mb_per_s >= 5.0 && out.vocab.normal_count() == 32768,
        format!(
            "train N = 32768 on {:.1} MB in {}; encode {:.1} MB -> {tokens} tokens at {mb_per_s:.1} MB/s on one thread",
            size as f64 / 1e6,
            secs(train_time),
            text.len() as f64 / 1e6
        ),
    )
}
