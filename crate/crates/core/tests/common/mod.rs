//! Reference implementations and fixtures shared by the integration tests
//! and the acceptance harness. The references recompute everything from
//! scratch at every step and share no code with the library beyond the
//! pre-tokenizer and the vocabulary container.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scaffold_tokenizer::pretokenizer::{count_pretokens, pretokenize_str, PreToken};
use scaffold_tokenizer::trainer::TrainEvent;
use scaffold_tokenizer::{ExpandedVocabulary, Mode, TokenId};

pub fn pretokens_of(text: &str) -> Vec<PreToken> {
    count_pretokens(std::iter::once(Ok::<_, ()>(text)))
        .unwrap()
        .into_sorted()
}

/// One rescan-everything training iteration, in the same shape as
/// [`TrainEvent`] but with bare ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NaiveEvent {
    Merge {
        left: u32,
        right: u32,
        token: u32,
        freq: u64,
        new_token: bool,
        scaffolded: Vec<(u32, u64)>,
    },
    Readmit {
        token: u32,
        freq: u64,
    },
}

impl NaiveEvent {
    pub fn matches(&self, e: &TrainEvent) -> bool {
        match (self, e) {
            (
                NaiveEvent::Merge {
                    left,
                    right,
                    token,
                    freq,
                    new_token,
                    scaffolded,
                },
                TrainEvent::Merge {
                    left: l,
                    right: r,
                    token: t,
                    freq: f,
                    new_token: n,
                    scaffolded: s,
                    ..
                },
            ) => {
                (*left, *right, *token, *freq, *new_token) == (l.0, r.0, t.0, *f, *n)
                    && scaffolded
                        .iter()
                        .map(|&(x, f)| (TokenId(x), f))
                        .eq(s.iter().copied())
            }
            (
                NaiveEvent::Readmit { token, freq },
                TrainEvent::Readmit {
                    token: t, freq: f, ..
                },
            ) => (*token, *freq) == (t.0, *f),
            _ => false,
        }
    }
}

/// Counts of every adjacent pair, where a run of k equal symbols holds
/// floor(k / 2) copies of the doubled pair.
fn pair_counts_of(seq: &[u32], weight: u64, out: &mut BTreeMap<(u32, u32), u64>) {
    for w in seq.windows(2) {
        if w[0] != w[1] {
            *out.entry((w[0], w[1])).or_default() += weight;
        }
    }
    let mut i = 0;
    while i < seq.len() {
        let mut j = i;
        while j < seq.len() && seq[j] == seq[i] {
            j += 1;
        }
        let pairs = (j - i) as u64 / 2;
        if pairs > 0 {
            *out.entry((seq[i], seq[i])).or_default() += pairs * weight;
        }
        i = j;
    }
}

fn rewrite(seq: &[u32], a: u32, b: u32, t: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == a && seq[i + 1] == b {
            out.push(t);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    out
}

/// Reference trainer: recomputes all statistics by a full rescan and picks
/// the best candidate by exhaustive search.
pub struct NaiveTrainer {
    mode: Mode,
    target: usize,
    words: Vec<(Vec<u32>, u64)>,
    pub bytes: Vec<Vec<u8>>,
    pub scaffold: Vec<bool>,
    normal: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Cand {
    // field order gives the tie-break: merges lose to readmissions, then
    // the smaller ids win (hence the inversion)
    Merge(std::cmp::Reverse<(u32, u32)>),
    Readmit(std::cmp::Reverse<u32>),
}

impl NaiveTrainer {
    pub fn new(pretokens: &[PreToken], target: usize, mode: Mode) -> Self {
        Self {
            mode,
            target,
            words: pretokens
                .iter()
                .map(|p| (p.bytes.iter().map(|&b| b as u32).collect(), p.count))
                .collect(),
            bytes: (0..=255u8).map(|b| vec![b]).collect(),
            scaffold: vec![false; 256],
            normal: 256,
        }
    }

    pub fn pair_counts(&self) -> BTreeMap<(u32, u32), u64> {
        let mut out = BTreeMap::new();
        for (seq, c) in &self.words {
            pair_counts_of(seq, *c, &mut out);
        }
        out
    }

    pub fn token_freqs(&self) -> Vec<u64> {
        let mut f = vec![0; self.bytes.len()];
        for (seq, c) in &self.words {
            for &s in seq {
                f[s as usize] += c;
            }
        }
        f
    }

    fn best(&self) -> Option<(u64, Cand)> {
        let freqs = self.token_freqs();
        let merges = self
            .pair_counts()
            .into_iter()
            .map(|(p, f)| (f, Cand::Merge(std::cmp::Reverse(p))));
        let readmits = (0..self.bytes.len())
            .filter(|&t| self.scaffold[t] && freqs[t] > 0)
            .map(|t| (freqs[t], Cand::Readmit(std::cmp::Reverse(t as u32))));
        merges.chain(readmits).max()
    }

    pub fn step(&mut self) -> Option<NaiveEvent> {
        if self.normal >= self.target {
            return None;
        }
        let (freq, cand) = self.best()?;
        let (a, b) = match cand {
            Cand::Readmit(std::cmp::Reverse(t)) => {
                self.scaffold[t as usize] = false;
                self.normal += 1;
                return Some(NaiveEvent::Readmit { token: t, freq });
            }
            Cand::Merge(std::cmp::Reverse(p)) => p,
        };
        let spelled = [&self.bytes[a as usize][..], &self.bytes[b as usize][..]].concat();
        let (t, new_token) = match self.bytes.iter().position(|x| *x == spelled) {
            Some(u) => (u as u32, false),
            None => {
                self.bytes.push(spelled);
                self.scaffold.push(false);
                self.normal += 1;
                (self.bytes.len() as u32 - 1, true)
            }
        };
        for (seq, _) in &mut self.words {
            *seq = rewrite(seq, a, b, t);
        }
        let mut scaffolded = Vec::new();
        if self.mode == Mode::Scaffold {
            let parts: &[u32] = if a == b { &[a] } else { &[a, b] };
            for &c in parts {
                if c < 256 || self.scaffold[c as usize] {
                    continue;
                }
                let threshold = self.best().map_or(1, |(f, _)| f);
                let f = self.token_freqs()[c as usize];
                if f < threshold {
                    self.scaffold[c as usize] = true;
                    self.normal -= 1;
                    scaffolded.push((c, f));
                }
            }
        }
        Some(NaiveEvent::Merge {
            left: a,
            right: b,
            token: t,
            freq,
            new_token,
            scaffolded,
        })
    }
}

/// Reference encoder: candidates are found by concatenating the bytes of
/// neighbours and looking them up; scaffold tokens are expanded through
/// their components.
pub struct NaiveEncoder<'v> {
    vocab: &'v ExpandedVocabulary,
    rank: HashMap<Vec<u8>, u32>,
}

impl<'v> NaiveEncoder<'v> {
    pub fn new(vocab: &'v ExpandedVocabulary) -> Self {
        let rank = vocab
            .records()
            .iter()
            .map(|r| (r.bytes.clone(), r.id.0))
            .collect();
        Self { vocab, rank }
    }

    /// The same encoder over `E` with every scaffold token removed.
    pub fn without_scaffold(vocab: &'v ExpandedVocabulary) -> Self {
        let mut enc = Self::new(vocab);
        enc.rank.retain(|_, id| !vocab.is_scaffold(TokenId(*id)));
        enc
    }

    fn expand(&self, id: u32, out: &mut Vec<TokenId>) {
        let rec = &self.vocab.records()[id as usize];
        if rec.scaffold {
            self.expand(rec.left.unwrap().0, out);
            self.expand(rec.right.unwrap().0, out);
        } else {
            out.push(rec.id);
        }
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for piece in pretokenize_str(text) {
            let mut parts: Vec<Vec<u8>> = piece.bytes().map(|b| vec![b]).collect();
            loop {
                let best = parts
                    .windows(2)
                    .filter_map(|w| self.rank.get(&[&w[0][..], &w[1][..]].concat()).copied())
                    .min();
                let Some(best) = best else { break };
                let target = &self.vocab.records()[best as usize].bytes;
                let mut next = Vec::with_capacity(parts.len());
                let mut i = 0;
                while i < parts.len() {
                    if i + 1 < parts.len() && [&parts[i][..], &parts[i + 1][..]].concat() == *target
                    {
                        next.push(target.clone());
                        i += 2;
                    } else {
                        next.push(parts[i].clone());
                        i += 1;
                    }
                }
                parts = next;
            }
            for p in &parts {
                self.expand(self.rank[p], &mut out);
            }
        }
        out
    }
}

/// Text drawn from a Zipf-weighted lexicon of random words, with
/// punctuation, digits, line breaks and some non-ASCII letters.
pub fn random_corpus(seed: u64, size: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabet: Vec<char> = {
        let mut a: Vec<char> = "abcdefghijklmnopqrstuvwxyz".chars().collect();
        a.truncate(rng.random_range(3..=26));
        if rng.random_bool(0.5) {
            a.extend(['é', 'ü', 'ж', 'λ']);
        }
        a
    };
    let lexicon_size = rng.random_range(20..3000);
    let lexicon: Vec<String> = (0..lexicon_size)
        .map(|_| {
            let len = rng.random_range(1..=10);
            (0..len)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                .collect()
        })
        .collect();
    let zipf = WeightedIndex::new((1..=lexicon_size).map(|r| 1.0 / r as f64)).unwrap();

    let mut text = String::with_capacity(size + 16);
    while text.len() < size {
        let word = &lexicon[zipf.sample(&mut rng)];
        if rng.random_bool(0.1) {
            let mut cs = word.chars();
            if let Some(c) = cs.next() {
                text.extend(c.to_uppercase());
                text.push_str(cs.as_str());
            }
        } else {
            text.push_str(word);
        }
        match rng.random_range(0..100) {
            0..=74 => text.push(' '),
            75..=82 => text.push_str(", "),
            83..=87 => text.push_str(".\n"),
            88..=91 => {
                text.push(' ');
                text.push_str(&rng.random_range(0..2000).to_string());
                text.push(' ');
            }
            92..=94 => text.push_str("  "),
            95..=96 => text.push_str("'s "),
            97 => text.push_str(" -- "),
            98 => text.push('\t'),
            _ => text.push_str("\n\n"),
        }
    }
    text
}

/// Arbitrary UTF-8 of up to `max_chars` characters, biased towards ASCII
/// and whitespace so that pre-tokens of every class occur.
pub fn random_string(rng: &mut impl Rng, max_chars: usize) -> String {
    let n = rng.random_range(0..=max_chars);
    (0..n)
        .map(|_| match rng.random_range(0..10) {
            0..=4 => rng.random_range(b'a'..=b'z') as char,
            5 => ' ',
            6 => *[' ', '\n', '\t', '\r', '\u{a0}', '\u{3000}']
                .get(rng.random_range(0..6))
                .unwrap(),
            7 => rng.random_range(b'!'..=b'@') as char,
            8 => rng.random_range('\u{80}'..='\u{7ff}'),
            _ => loop {
                if let Some(c) = char::from_u32(rng.random_range(0x800..0x11_0000)) {
                    break c;
                }
            },
        })
        .collect()
}

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Location of the English evaluation corpus: `SCTOK_ENGLISH_CORPUS`, or
/// `target/corpus/english.txt` under the workspace.
pub fn english_corpus_path() -> PathBuf {
    std::env::var_os("SCTOK_ENGLISH_CORPUS")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("target/corpus/english.txt"))
}

/// Runs the library trainer and the reference side by side and compares
/// the event, pair frequencies, token frequencies, scaffold flags and token
/// bytes after every iteration. Returns the number of iterations.
pub fn check_against_reference(
    pretokens: &[PreToken],
    target: usize,
    mode: Mode,
) -> Result<usize, String> {
    use scaffold_tokenizer::trainer::Trainer;

    let mut fast =
        Trainer::new(pretokens.iter().cloned(), target, mode).map_err(|e| e.to_string())?;
    let mut slow = NaiveTrainer::new(pretokens, target, mode);
    let mut iterations = 0;
    loop {
        let (got, want) = (fast.step(), slow.step());
        match (&got, &want) {
            (None, None) => return Ok(iterations),
            (Some(g), Some(w)) if w.matches(g) => {}
            _ => {
                return Err(format!(
                    "iteration {}: trainer {got:?}, reference {want:?}",
                    iterations + 1
                ))
            }
        }
        iterations += 1;
        let pairs: BTreeMap<(u32, u32), u64> = fast
            .pair_frequencies()
            .into_iter()
            .map(|((a, b), f)| ((a.0, b.0), f))
            .collect();
        if pairs != slow.pair_counts() {
            return Err(format!("iteration {iterations}: pair frequencies differ"));
        }
        if fast.token_frequencies() != slow.token_freqs() {
            return Err(format!("iteration {iterations}: token frequencies differ"));
        }
        if fast.scaffold_flags() != slow.scaffold {
            return Err(format!("iteration {iterations}: scaffold sets differ"));
        }
        if !fast
            .records()
            .iter()
            .map(|r| &r.bytes)
            .eq(slow.bytes.iter())
        {
            return Err(format!("iteration {iterations}: token bytes differ"));
        }
    }
}
