//! Encoding by rank-ordered merges over the full token set, followed by
//! demolition of any scaffold token left in the result.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::pretokenizer::{pretokenize_str, Utf8Error};
use crate::vocabulary::{ExpandedVocabulary, TokenId};

// Pre-token cache entries per encoder before the cache is reset.
const CACHE_LIMIT: usize = 1 << 18;

/// Encoder output. Only normal tokens appear in it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncodeOptions {
    /// Probability of skipping each individual merge application.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl EncodeOptions {
    pub fn with_dropout(dropout: f64, seed: u64) -> Result<Self, EncodeError> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(EncodeError::Dropout(dropout));
        }
        Ok(Self { dropout, seed })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncodeError {
    #[error("dropout must be in [0, 1), got {0}")]
    Dropout(f64),
    #[error(transparent)]
    Utf8(#[from] Utf8Error),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("unknown token id {0}")]
    UnknownToken(TokenId),
    #[error("decoded bytes are not valid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: usize },
}

/// Failed elements of a batch, by input index.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{} of the batch inputs failed to encode, first at index {}", .failures.len(), .failures[0].0)]
pub struct BatchError {
    pub failures: Vec<(usize, EncodeError)>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Reusable encoder over one vocabulary. Keeps a cache of pre-token
/// encodings when dropout is off.
pub struct Encoder<'v> {
    vocab: &'v ExpandedVocabulary,
    opts: EncodeOptions,
    cache: FxHashMap<Box<[u8]>, Box<[TokenId]>>,
    symbols: Vec<u32>,
    excluded: Vec<u32>,
}

impl<'v> Encoder<'v> {
    pub fn new(vocab: &'v ExpandedVocabulary, opts: EncodeOptions) -> Self {
        Self {
            vocab,
            opts,
            cache: FxHashMap::default(),
            symbols: Vec::new(),
            excluded: Vec::new(),
        }
    }

    pub fn vocab(&self) -> &'v ExpandedVocabulary {
        self.vocab
    }

    pub fn encode(&mut self, text: &str) -> TokenSequence {
        let mut ids = Vec::with_capacity(text.len() / 3);
        self.encode_into(text, &mut ids);
        TokenSequence { ids }
    }

    pub fn encode_bytes(&mut self, bytes: &[u8]) -> Result<TokenSequence, EncodeError> {
        let text = std::str::from_utf8(bytes).map_err(|e| Utf8Error {
            offset: e.valid_up_to(),
        })?;
        Ok(self.encode(text))
    }

    /// Appends the encoding of `text` to `out`.
    pub fn encode_into(&mut self, text: &str, out: &mut Vec<TokenId>) {
        let mut rng = (self.opts.dropout > 0.0)
            .then(|| ChaCha8Rng::seed_from_u64(self.opts.seed ^ fnv1a(text.as_bytes())));
        for piece in pretokenize_str(text) {
            self.encode_pretoken(piece.as_bytes(), rng.as_mut(), out);
        }
    }

    fn encode_pretoken(
        &mut self,
        bytes: &[u8],
        rng: Option<&mut ChaCha8Rng>,
        out: &mut Vec<TokenId>,
    ) {
        let cacheable = rng.is_none();
        if cacheable {
            if let Some(hit) = self.cache.get(bytes) {
                out.extend_from_slice(hit);
                return;
            }
        }
        self.symbols.clear();
        self.symbols.extend(bytes.iter().map(|&b| b as u32));
        self.scaffold(rng);

        let start = out.len();
        for &s in &self.symbols {
            let id = TokenId(s);
            if self.vocab.is_scaffold(id) {
                out.extend_from_slice(
                    self.vocab
                        .demolition_sequence(id)
                        .expect("id from vocabulary"),
                );
            } else {
                out.push(id);
            }
        }
        if cacheable {
            if self.cache.len() >= CACHE_LIMIT {
                self.cache.clear();
            }
            self.cache.insert(bytes.into(), out[start..].into());
        }
    }

    // Applies merges to `self.symbols` until none is left. Each round takes
    // the lowest-id candidate and rewrites its occurrences left to right.
    // Under dropout, a candidate whose every occurrence was skipped is set
    // aside until some other merge succeeds, so the loop always terminates.
    fn scaffold(&mut self, mut rng: Option<&mut ChaCha8Rng>) {
        let vocab = self.vocab;
        let merge = |x: u32, y: u32| vocab.merge_of(TokenId(x), TokenId(y)).map(|t| t.0);
        self.excluded.clear();
        loop {
            let best = self
                .symbols
                .windows(2)
                .filter_map(|w| merge(w[0], w[1]))
                .filter(|t| !self.excluded.contains(t))
                .min();
            let Some(t) = best else { break };

            let s = &mut self.symbols;
            let n = s.len();
            let (mut read, mut write, mut applied) = (0, 0, 0);
            while read < n {
                if read + 1 < n && merge(s[read], s[read + 1]) == Some(t) {
                    let skip = match rng.as_deref_mut() {
                        Some(r) => r.random::<f64>() < self.opts.dropout,
                        None => false,
                    };
                    if skip {
                        s[write] = s[read];
                        s[write + 1] = s[read + 1];
                        write += 2;
                    } else {
                        s[write] = t;
                        write += 1;
                        applied += 1;
                    }
                    read += 2;
                } else {
                    s[write] = s[read];
                    read += 1;
                    write += 1;
                }
            }
            s.truncate(write);
            if applied == 0 {
                self.excluded.push(t);
            } else {
                self.excluded.clear();
            }
        }
    }
}

pub fn encode(text: &str, vocab: &ExpandedVocabulary, opts: EncodeOptions) -> TokenSequence {
    Encoder::new(vocab, opts).encode(text)
}

/// Encodes every element, in parallel on the current rayon pool. Output
/// order follows input order.
pub fn encode_batch<T: AsRef<[u8]> + Sync>(
    texts: &[T],
    vocab: &ExpandedVocabulary,
    opts: EncodeOptions,
) -> Result<Vec<TokenSequence>, BatchError> {
    let results: Vec<Result<TokenSequence, EncodeError>> = texts
        .par_iter()
        .map_init(
            || Encoder::new(vocab, opts),
            |enc, t| enc.encode_bytes(t.as_ref()),
        )
        .collect();
    let mut failures = Vec::new();
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(seq) => out.push(seq),
            Err(e) => failures.push((i, e)),
        }
    }
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(BatchError { failures })
    }
}

pub fn decode_bytes(ids: &[TokenId], vocab: &ExpandedVocabulary) -> Result<Vec<u8>, DecodeError> {
    let mut out = Vec::with_capacity(ids.len() * 4);
    for &id in ids {
        let rec = vocab
            .record(id)
            .map_err(|_| DecodeError::UnknownToken(id))?;
        out.extend_from_slice(&rec.bytes);
    }
    Ok(out)
}

/// Strict decoding: byte sequences that are not UTF-8 are an error.
pub fn decode(ids: &[TokenId], vocab: &ExpandedVocabulary) -> Result<String, DecodeError> {
    String::from_utf8(decode_bytes(ids, vocab)?).map_err(|e| DecodeError::InvalidUtf8 {
        offset: e.utf8_error().valid_up_to(),
    })
}

/// Like [`decode`], with invalid sequences replaced by U+FFFD.
pub fn decode_lossy(ids: &[TokenId], vocab: &ExpandedVocabulary) -> Result<String, DecodeError> {
    Ok(String::from_utf8_lossy(&decode_bytes(ids, vocab)?).into_owned())
}

/// Printable form of a token's bytes: printable ASCII other than space and
/// backslash stays as is, everything else becomes `\xNN`.
pub fn escape_piece(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len());
    for &b in bytes {
        if b.is_ascii_graphic() && b != b'\\' {
            s.push(b as char);
        } else {
            let _ = write!(s, "\\x{b:02x}");
        }
    }
    s
}
