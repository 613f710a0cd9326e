//! Incremental BPE training with scaffold-token marking.
//!
//! The corpus is held as a weighted word table: one symbol sequence per
//! distinct pre-token, with its corpus count. Pair frequencies and token
//! frequencies are corpus-weighted and kept exact after every merge by
//! diffing the pair multiset of each touched word.
//!
//! Pairs of identical symbols are counted greedily from the left inside a
//! run (`a a a` holds one `(a, a)` site), the same way merges rewrite them,
//! so a pair's frequency always equals the number of sites a merge replaces.

pub mod queue;

use std::collections::BTreeMap;
use std::fmt;

use rustc_hash::FxHashMap;

use crate::pretokenizer::PreToken;
use crate::vocabulary::{ExpandedVocabulary, Mode, TokenId, TokenRecord, BASE_TOKENS};
use queue::{EntryKind, MergeQueue, QueueTruth};

type Pair = (u32, u32);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrainError {
    #[error("vocabulary size must be at least {min}, got {0}", min = BASE_TOKENS + 1)]
    TargetTooSmall(usize),
    #[error("training corpus is empty")]
    EmptyCorpus,
}

/// One training iteration, as written to the training log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TrainEvent {
    Merge {
        iteration: usize,
        left: TokenId,
        right: TokenId,
        token: TokenId,
        freq: u64,
        /// False when the pair spells an already existing token.
        new_token: bool,
        /// Components demoted to scaffold, with their remaining frequency.
        scaffolded: Vec<(TokenId, u64)>,
    },
    Readmit {
        iteration: usize,
        token: TokenId,
        freq: u64,
    },
}

impl fmt::Display for TrainEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainEvent::Merge {
                iteration,
                left,
                right,
                token,
                freq,
                new_token,
                scaffolded,
            } => {
                write!(
                    f,
                    "{iteration}\tmerge\t{left}\t{right}\t{token}\tfreq={freq}"
                )?;
                if !new_token {
                    f.write_str("\talias")?;
                }
                for (t, tf) in scaffolded {
                    write!(f, "\tscaffold={t}:{tf}")?;
                }
                Ok(())
            }
            TrainEvent::Readmit {
                iteration,
                token,
                freq,
            } => write!(f, "{iteration}\treadmit\t{token}\tfreq={freq}"),
        }
    }
}

/// Snapshot handed to progress callbacks after each iteration.
#[derive(Clone, Copy, Debug)]
pub struct Progress {
    pub iteration: usize,
    pub normal: usize,
    pub scaffold: usize,
    /// Recorded priority of the queue head (may be stale).
    pub head_freq: u64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub vocab: ExpandedVocabulary,
    /// The queue ran dry before `|V|` reached the target.
    pub exhausted: bool,
    pub log: Vec<TrainEvent>,
}

struct Word {
    symbols: Vec<u32>,
    count: u64,
}

struct Stats {
    pair_freq: FxHashMap<Pair, u64>,
    token_freq: Vec<u64>,
    scaffold: Vec<bool>,
}

impl QueueTruth for Stats {
    fn pair_freq(&self, left: TokenId, right: TokenId) -> u64 {
        self.pair_freq.get(&(left.0, right.0)).copied().unwrap_or(0)
    }

    fn scaffold_freq(&self, t: TokenId) -> Option<u64> {
        self.scaffold[t.index()].then(|| self.token_freq[t.index()])
    }
}

/// Calls `f` for every countable pair of `symbols`.
#[inline]
fn for_each_pair(symbols: &[u32], mut f: impl FnMut(Pair)) {
    let mut run_start = 0;
    for i in 0..symbols.len().saturating_sub(1) {
        if i > 0 && symbols[i] != symbols[i - 1] {
            run_start = i;
        }
        let (x, y) = (symbols[i], symbols[i + 1]);
        if x == y && (i - run_start) % 2 == 1 {
            continue;
        }
        f((x, y));
    }
}

/// Rewrites `(a, b)` to `t` left to right; returns the number of sites.
#[inline]
fn replace_pair(symbols: &mut Vec<u32>, a: u32, b: u32, t: u32) -> u64 {
    let n = symbols.len();
    let (mut read, mut write, mut sites) = (0, 0, 0);
    while read < n {
        if read + 1 < n && symbols[read] == a && symbols[read + 1] == b {
            symbols[write] = t;
            read += 2;
            sites += 1;
        } else {
            symbols[write] = symbols[read];
            read += 1;
        }
        write += 1;
    }
    symbols.truncate(write);
    sites
}

/// Stepwise trainer. [`train`] drives it to completion; tests drive it one
/// iteration at a time to compare against a reference.
pub struct Trainer {
    mode: Mode,
    target: usize,
    words: Vec<Word>,
    sites: FxHashMap<Pair, Vec<u32>>,
    stats: Stats,
    queue: MergeQueue,
    records: Vec<TokenRecord>,
    by_bytes: FxHashMap<Vec<u8>, u32>,
    normal: usize,
    iteration: usize,
    done: bool,
    exhausted: bool,
    deltas: Vec<(Pair, i64)>,
    grown: Vec<Pair>,
}

impl Trainer {
    pub fn new(
        pretokens: impl IntoIterator<Item = PreToken>,
        target_size: usize,
        mode: Mode,
    ) -> Result<Self, TrainError> {
        if target_size <= BASE_TOKENS {
            return Err(TrainError::TargetTooSmall(target_size));
        }
        let words: Vec<Word> = pretokens
            .into_iter()
            .filter(|p| p.count > 0 && !p.bytes.is_empty())
            .map(|p| Word {
                symbols: p.bytes.iter().map(|&b| b as u32).collect(),
                count: p.count,
            })
            .collect();
        if words.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }

        let mut token_freq = vec![0u64; BASE_TOKENS];
        let mut pair_freq: FxHashMap<Pair, u64> = FxHashMap::default();
        let mut sites: FxHashMap<Pair, Vec<u32>> = FxHashMap::default();
        for (w, word) in words.iter().enumerate() {
            for &s in &word.symbols {
                token_freq[s as usize] += word.count;
            }
            for_each_pair(&word.symbols, |p| {
                *pair_freq.entry(p).or_insert(0) += word.count;
                let list = sites.entry(p).or_default();
                if list.last() != Some(&(w as u32)) {
                    list.push(w as u32);
                }
            });
        }

        let mut queue = MergeQueue::new();
        for (&(a, b), &f) in &pair_freq {
            queue.push(EntryKind::MergePair(TokenId(a), TokenId(b)), f);
        }

        let records: Vec<TokenRecord> = (0..=255u8).map(TokenRecord::base).collect();
        let by_bytes = records.iter().map(|r| (r.bytes.clone(), r.id.0)).collect();
        Ok(Self {
            mode,
            target: target_size,
            words,
            sites,
            stats: Stats {
                pair_freq,
                token_freq,
                scaffold: vec![false; BASE_TOKENS],
            },
            queue,
            records,
            by_bytes,
            normal: BASE_TOKENS,
            iteration: 0,
            done: false,
            exhausted: false,
            deltas: Vec::new(),
            grown: Vec::new(),
        })
    }

    /// Runs one iteration. Returns `None` once `|V|` has reached the target
    /// or the queue is exhausted.
    pub fn step(&mut self) -> Option<TrainEvent> {
        if self.done || self.normal >= self.target {
            self.done = true;
            return None;
        }
        let Some(entry) = self.queue.pop_valid(&self.stats) else {
            self.done = true;
            self.exhausted = true;
            return None;
        };
        self.iteration += 1;
        Some(match entry.kind {
            EntryKind::Readmit(t) => {
                self.stats.scaffold[t.index()] = false;
                self.normal += 1;
                TrainEvent::Readmit {
                    iteration: self.iteration,
                    token: t,
                    freq: entry.priority,
                }
            }
            EntryKind::MergePair(a, b) => self.merge(a.0, b.0, entry.priority),
        })
    }

    fn merge(&mut self, a: u32, b: u32, freq: u64) -> TrainEvent {
        let mut bytes = self.records[a as usize].bytes.clone();
        bytes.extend_from_slice(&self.records[b as usize].bytes);
        let (t, new_token) = match self.by_bytes.get(&bytes) {
            Some(&u) => (u, false),
            None => {
                let id = self.records.len() as u32;
                self.by_bytes.insert(bytes.clone(), id);
                self.records.push(TokenRecord::merged(
                    TokenId(id),
                    bytes,
                    TokenId(a),
                    TokenId(b),
                    false,
                ));
                self.stats.token_freq.push(0);
                self.stats.scaffold.push(false);
                self.normal += 1;
                (id, true)
            }
        };

        let mut word_ids = self.sites.remove(&(a, b)).unwrap_or_default();
        word_ids.sort_unstable();
        word_ids.dedup();

        let Self {
            words,
            sites,
            stats,
            deltas,
            grown,
            ..
        } = self;
        grown.clear();
        let mut replaced = 0u64;
        for &w in &word_ids {
            let word = &mut words[w as usize];
            if !word.symbols.windows(2).any(|p| p[0] == a && p[1] == b) {
                continue;
            }
            let count = word.count as i64;
            deltas.clear();
            for_each_pair(&word.symbols, |p| deltas.push((p, -count)));
            replaced += replace_pair(&mut word.symbols, a, b, t) * word.count;
            for_each_pair(&word.symbols, |p| deltas.push((p, count)));

            deltas.sort_unstable_by_key(|d| d.0);
            let mut i = 0;
            while i < deltas.len() {
                let pair = deltas[i].0;
                let mut delta = 0;
                while i < deltas.len() && deltas[i].0 == pair {
                    delta += deltas[i].1;
                    i += 1;
                }
                if delta == 0 {
                    continue;
                }
                let slot = stats.pair_freq.entry(pair).or_insert(0);
                let updated = *slot as i64 + delta;
                debug_assert!(updated >= 0, "pair {pair:?} frequency went negative");
                if updated == 0 {
                    stats.pair_freq.remove(&pair);
                } else {
                    *slot = updated as u64;
                }
                if delta > 0 {
                    let list = sites.entry(pair).or_default();
                    if list.last() != Some(&w) {
                        list.push(w);
                    }
                    grown.push(pair);
                }
            }
        }
        debug_assert_eq!(
            replaced, freq,
            "merge site count disagrees with pair frequency"
        );
        debug_assert!(!stats.pair_freq.contains_key(&(a, b)));

        stats.token_freq[t as usize] += replaced;
        stats.token_freq[a as usize] -= replaced;
        stats.token_freq[b as usize] -= replaced;

        grown.sort_unstable();
        grown.dedup();
        for &(x, y) in grown.iter() {
            if let Some(&f) = stats.pair_freq.get(&(x, y)) {
                self.queue
                    .push(EntryKind::MergePair(TokenId(x), TokenId(y)), f);
            }
        }
        if !new_token && self.stats.scaffold[t as usize] {
            self.queue.push(
                EntryKind::Readmit(TokenId(t)),
                self.stats.token_freq[t as usize],
            );
        }

        let mut scaffolded = Vec::new();
        if self.mode == Mode::Scaffold {
            let components: &[u32] = if a == b { &[a] } else { &[a, b] };
            for &c in components {
                if (c as usize) < BASE_TOKENS || self.stats.scaffold[c as usize] {
                    continue;
                }
                let threshold = self.queue.scaffold_threshold(&self.stats);
                let f = self.stats.token_freq[c as usize];
                if f < threshold {
                    self.stats.scaffold[c as usize] = true;
                    self.normal -= 1;
                    self.queue.push(EntryKind::Readmit(TokenId(c)), f);
                    scaffolded.push((TokenId(c), f));
                }
            }
        }

        TrainEvent::Merge {
            iteration: self.iteration,
            left: TokenId(a),
            right: TokenId(b),
            token: TokenId(t),
            freq,
            new_token,
            scaffolded,
        }
    }

    pub fn progress(&self) -> Progress {
        Progress {
            iteration: self.iteration,
            normal: self.normal,
            scaffold: self.records.len() - self.normal,
            head_freq: self.queue.peek_priority().unwrap_or(0),
        }
    }

    /// `|V|` at this point of training.
    pub fn normal_count(&self) -> usize {
        self.normal
    }

    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }

    /// Tokens created so far, in id order (scaffold flags not applied).
    pub fn records(&self) -> &[TokenRecord] {
        &self.records
    }

    /// Current frequency `f(t)` of every token, indexed by id.
    pub fn token_frequencies(&self) -> &[u64] {
        &self.stats.token_freq
    }

    /// Scaffold flag of every token, indexed by id.
    pub fn scaffold_flags(&self) -> &[bool] {
        &self.stats.scaffold
    }

    /// All pairs with non-zero frequency.
    pub fn pair_frequencies(&self) -> BTreeMap<(TokenId, TokenId), u64> {
        self.stats
            .pair_freq
            .iter()
            .map(|(&(a, b), &f)| ((TokenId(a), TokenId(b)), f))
            .collect()
    }

    /// Current symbol sequence of every distinct pre-token, with its count.
    pub fn sequences(&self) -> impl Iterator<Item = (&[u32], u64)> {
        self.words.iter().map(|w| (&w.symbols[..], w.count))
    }

    pub fn finish(self, log: Vec<TrainEvent>) -> TrainOutput {
        let mut records = self.records;
        for (rec, &s) in records.iter_mut().zip(&self.stats.scaffold) {
            rec.scaffold = s;
        }
        let vocab = ExpandedVocabulary::from_records(records, self.mode, self.target)
            .expect("trainer output satisfies vocabulary invariants");
        TrainOutput {
            vocab,
            exhausted: self.exhausted,
            log,
        }
    }
}

/// Trains a vocabulary of `target_size` normal tokens.
pub fn train(
    pretokens: impl IntoIterator<Item = PreToken>,
    target_size: usize,
    mode: Mode,
) -> Result<TrainOutput, TrainError> {
    train_with_progress(pretokens, target_size, mode, |_| {})
}

pub fn train_with_progress(
    pretokens: impl IntoIterator<Item = PreToken>,
    target_size: usize,
    mode: Mode,
    mut progress: impl FnMut(&Progress),
) -> Result<TrainOutput, TrainError> {
    let mut trainer = Trainer::new(pretokens, target_size, mode)?;
    let mut log = Vec::new();
    while let Some(event) = trainer.step() {
        log.push(event);
        progress(&trainer.progress());
    }
    Ok(trainer.finish(log))
}
