//! Deterministic pre-tokenization.
//!
//! Text is cut into pre-tokens, the units inside which merges are allowed:
//!
//! * a boundary sits at every change of [`CharClass`];
//! * every decimal digit is a pre-token of its own;
//! * a single U+0020 space directly in front of a letter run is glued to
//!   the front of that run (`"a b"` gives `["a", " b"]`).
//!
//! Whether a boundary exists between two adjacent characters depends only on
//! those two characters and the one after them (see [`is_boundary`]), which
//! is what lets the streaming corpus reader cut large files safely.

use std::ops::Range;

use rustc_hash::FxHashMap;
use unicode_general_category::{get_general_category, GeneralCategory};

/// Identifier of the segmentation rules, stored in every vocabulary file.
pub const PRETOKENIZER_VERSION: &str = "classes-digits-space-v1";

/// Coarse character category driving pre-token boundaries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CharClass {
    Letter,
    Digit,
    Whitespace,
    Other,
}

const ASCII_CLASSES: [CharClass; 128] = {
    let mut table = [CharClass::Other; 128];
    let mut i = 0;
    while i < 128 {
        let b = i as u8;
        table[i] = if b.is_ascii_alphabetic() {
            CharClass::Letter
        } else if b.is_ascii_digit() {
            CharClass::Digit
        } else if matches!(b, b' ' | b'\t' | b'\n' | 0x0b | 0x0c | b'\r') {
            CharClass::Whitespace
        } else {
            CharClass::Other
        };
        i += 1;
    }
    table
};

/// Classifies a scalar value by its Unicode general category.
///
/// `L*` is a letter, `Nd` a digit, `Z*` and whitespace controls (tab, line
/// feed, carriage return, ...) are whitespace; everything else is `Other`.
pub fn classify(c: char) -> CharClass {
    if c.is_ascii() {
        return ASCII_CLASSES[c as usize];
    }
    use GeneralCategory::*;
    match get_general_category(c) {
        UppercaseLetter | LowercaseLetter | TitlecaseLetter | ModifierLetter | OtherLetter => {
            CharClass::Letter
        }
        DecimalNumber => CharClass::Digit,
        SpaceSeparator | LineSeparator | ParagraphSeparator => CharClass::Whitespace,
        Control if c.is_whitespace() => CharClass::Whitespace,
        _ => CharClass::Other,
    }
}

/// Whether a pre-token boundary falls between `prev` and `cur`, given the
/// character after `cur` (`None` at end of text).
pub fn is_boundary(prev: char, cur: char, next: Option<char>) -> bool {
    let (kp, kc) = (classify(prev), classify(cur));
    if kp == CharClass::Digit || kc == CharClass::Digit {
        return true;
    }
    if kp != kc {
        return !(prev == ' ' && kc == CharClass::Letter);
    }
    kc == CharClass::Whitespace && cur == ' ' && next.map(classify) == Some(CharClass::Letter)
}

/// A byte sequence inside which merges are permitted, with its corpus count.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PreToken {
    pub bytes: Vec<u8>,
    pub count: u64,
}

/// Iterator over the byte ranges of the pre-tokens of a text.
#[derive(Clone, Debug)]
pub struct PreTokenSpans<'a> {
    text: &'a str,
    start: usize,
    // (byte offset, char) of the next two unread characters
    cur: Option<(usize, char)>,
    ahead: Option<(usize, char)>,
    chars: std::str::CharIndices<'a>,
}

impl<'a> PreTokenSpans<'a> {
    pub fn new(text: &'a str) -> Self {
        let mut chars = text.char_indices();
        let cur = chars.next();
        let ahead = chars.next();
        Self {
            text,
            start: 0,
            cur,
            ahead,
            chars,
        }
    }

    fn advance(&mut self) {
        self.cur = self.ahead;
        self.ahead = self.chars.next();
    }
}

impl Iterator for PreTokenSpans<'_> {
    type Item = Range<usize>;

    fn next(&mut self) -> Option<Range<usize>> {
        let (_, mut prev) = self.cur?;
        self.advance();
        while let Some((pos, c)) = self.cur {
            if is_boundary(prev, c, self.ahead.map(|(_, n)| n)) {
                let span = self.start..pos;
                self.start = pos;
                return Some(span);
            }
            prev = c;
            self.advance();
        }
        let span = self.start..self.text.len();
        self.start = self.text.len();
        Some(span)
    }
}

/// Splits `text` into pre-token slices.
pub fn pretokenize_str(text: &str) -> impl Iterator<Item = &str> {
    PreTokenSpans::new(text).map(move |r| &text[r])
}

/// Splits `text` into pre-tokens, each with count 1.
pub fn pretokenize(text: &str) -> Vec<PreToken> {
    pretokenize_str(text)
        .map(|s| PreToken {
            bytes: s.as_bytes().to_vec(),
            count: 1,
        })
        .collect()
}

/// Invalid UTF-8 at a byte offset.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid UTF-8 at byte offset {offset}")]
pub struct Utf8Error {
    pub offset: usize,
}

/// Like [`pretokenize`], for raw bytes that still have to be validated.
pub fn pretokenize_bytes(bytes: &[u8]) -> Result<Vec<PreToken>, Utf8Error> {
    let text = std::str::from_utf8(bytes).map_err(|e| Utf8Error {
        offset: e.valid_up_to(),
    })?;
    Ok(pretokenize(text))
}

/// Byte offset of the last boundary in `text` whose position is final, i.e.
/// does not depend on characters that may follow `text`.
///
/// Returns `None` when no such boundary exists.
pub fn last_stable_boundary(text: &str) -> Option<usize> {
    let mut iter = text.char_indices().rev();
    let (_, mut next) = iter.next()?;
    let (mut cur_pos, mut cur) = iter.next()?;
    for (prev_pos, prev) in iter {
        if is_boundary(prev, cur, Some(next)) {
            return Some(cur_pos);
        }
        (next, cur, cur_pos) = (cur, prev, prev_pos);
    }
    None
}

/// Aggregated pre-token counts of a corpus.
///
/// Merging two tables is commutative and associative, so partial counts from
/// independent chunks can be reduced in any order.
#[derive(Clone, Debug, Default)]
pub struct PreTokenCounts {
    counts: FxHashMap<Vec<u8>, u64>,
}

impl PreTokenCounts {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds every pre-token of `text`. `text` must start and end on
    /// pre-token boundaries of the surrounding corpus.
    pub fn add_text(&mut self, text: &str) {
        for piece in pretokenize_str(text) {
            self.add(piece.as_bytes(), 1);
        }
    }

    pub fn add(&mut self, bytes: &[u8], count: u64) {
        if let Some(c) = self.counts.get_mut(bytes) {
            *c += count;
        } else {
            self.counts.insert(bytes.to_vec(), count);
        }
    }

    pub fn merge(&mut self, other: PreTokenCounts) {
        if self.counts.len() < other.counts.len() {
            let mine = std::mem::replace(&mut self.counts, other.counts);
            for (k, v) in mine {
                *self.counts.entry(k).or_insert(0) += v;
            }
        } else {
            for (k, v) in other.counts {
                *self.counts.entry(k).or_insert(0) += v;
            }
        }
    }

    pub fn get(&self, bytes: &[u8]) -> u64 {
        self.counts.get(bytes).copied().unwrap_or(0)
    }

    /// Number of distinct pre-tokens.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Total number of pre-token occurrences.
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// The multiset as pre-tokens sorted by bytes.
    pub fn into_sorted(self) -> Vec<PreToken> {
        let mut out: Vec<PreToken> = self
            .counts
            .into_iter()
            .map(|(bytes, count)| PreToken { bytes, count })
            .collect();
        out.sort_unstable_by(|a, b| a.bytes.cmp(&b.bytes));
        out
    }
}

/// Counts pre-tokens over a stream of pre-token-safe text chunks.
pub fn count_pretokens<I, S, E>(chunks: I) -> Result<PreTokenCounts, E>
where
    I: IntoIterator<Item = Result<S, E>>,
    S: AsRef<str>,
{
    let mut counts = PreTokenCounts::new();
    for chunk in chunks {
        counts.add_text(chunk?.as_ref());
    }
    Ok(counts)
}
