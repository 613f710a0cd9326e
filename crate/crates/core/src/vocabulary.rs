//! The expanded vocabulary: normal tokens plus scaffold tokens.
//!
//! Token ids are dense. Ids `0..256` are the byte alphabet, every later id is
//! a merged token in creation order, so a lower id means a higher merge
//! priority at encode time. Scaffold tokens stay in the table (the encoder
//! needs them as intermediates) but are never emitted; each one carries a
//! precomputed demolition sequence of normal tokens spelling the same bytes.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::pretokenizer::PRETOKENIZER_VERSION;

pub const FORMAT_VERSION: u32 = 1;
pub const BASE_TOKENS: usize = 256;

/// Index of a token in the expanded vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub const fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub const fn is_base(self) -> bool {
        (self.0 as usize) < BASE_TOKENS
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Training flavour a vocabulary came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Classic BPE: every created token is a normal token.
    Original,
    /// Low-frequency component tokens are demoted to scaffold tokens.
    Scaffold,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Original => "original",
            Mode::Scaffold => "scaffold",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenRecord {
    pub id: TokenId,
    pub bytes: Vec<u8>,
    pub scaffold: bool,
    pub left: Option<TokenId>,
    pub right: Option<TokenId>,
    /// Normal tokens spelling `bytes`; present iff `scaffold`.
    pub demolition: Option<Vec<TokenId>>,
}

impl TokenRecord {
    pub fn base(byte: u8) -> Self {
        Self {
            id: TokenId(byte as u32),
            bytes: vec![byte],
            scaffold: false,
            left: None,
            right: None,
            demolition: None,
        }
    }

    pub fn merged(
        id: TokenId,
        bytes: Vec<u8>,
        left: TokenId,
        right: TokenId,
        scaffold: bool,
    ) -> Self {
        Self {
            id,
            bytes,
            scaffold,
            left: Some(left),
            right: Some(right),
            demolition: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{what} mismatch: file has {found}, expected {expected}")]
    VersionMismatch {
        what: &'static str,
        found: String,
        expected: String,
    },
    #[error("corrupt vocabulary: {0}")]
    Corrupt(String),
    #[error("unknown token id {0}")]
    UnknownToken(TokenId),
}

fn corrupt<T>(msg: impl Into<String>) -> Result<T, VocabError> {
    Err(VocabError::Corrupt(msg.into()))
}

/// Finalized, immutable token table `E = V ∪ S`.
#[derive(Clone, Debug)]
pub struct ExpandedVocabulary {
    records: Vec<TokenRecord>,
    normal_count: usize,
    scaffold_count: usize,
    mode: Mode,
    pretokenizer_version: String,
    target_size: usize,
    config: Option<serde_json::Value>,
    by_bytes: FxHashMap<Vec<u8>, TokenId>,
    // every split (x, y) of a merged token u, keyed by the pair, valued by u
    pairs: FxHashMap<(u32, u32), u32>,
}

impl PartialEq for ExpandedVocabulary {
    fn eq(&self, other: &Self) -> bool {
        // everything else is derived from these
        self.records == other.records
            && self.mode == other.mode
            && self.pretokenizer_version == other.pretokenizer_version
            && self.target_size == other.target_size
            && self.config == other.config
    }
}

impl ExpandedVocabulary {
    /// Validates `records` and precomputes lookup tables and demolition
    /// sequences. Any `demolition` already present in `records` is ignored.
    pub fn from_records(
        mut records: Vec<TokenRecord>,
        mode: Mode,
        target_size: usize,
    ) -> Result<Self, VocabError> {
        if records.len() < BASE_TOKENS {
            return corrupt(format!(
                "only {} records, need the 256 byte tokens",
                records.len()
            ));
        }
        let mut by_bytes = FxHashMap::default();
        by_bytes.reserve(records.len());
        for (i, rec) in records.iter().enumerate() {
            if rec.id.index() != i {
                return corrupt(format!("record {i} has id {}", rec.id));
            }
            if i < BASE_TOKENS {
                if rec.bytes != [i as u8] || rec.left.is_some() || rec.right.is_some() {
                    return corrupt(format!("base token {i} must be the single byte {i:#04x}"));
                }
                if rec.scaffold {
                    return corrupt(format!("base token {i} is marked scaffold"));
                }
            } else {
                let (Some(l), Some(r)) = (rec.left, rec.right) else {
                    return corrupt(format!("merged token {i} lacks components"));
                };
                if l.index() >= i || r.index() >= i {
                    return corrupt(format!("token {i} has a component with a later id"));
                }
                let (lb, rb) = (&records[l.index()].bytes, &records[r.index()].bytes);
                if rec.bytes.len() != lb.len() + rb.len()
                    || rec.bytes[..lb.len()] != lb[..]
                    || rec.bytes[lb.len()..] != rb[..]
                {
                    return corrupt(format!("token {i} does not spell left ++ right"));
                }
            }
            if mode == Mode::Original && rec.scaffold {
                return corrupt(format!(
                    "token {i} is scaffold in an original-mode vocabulary"
                ));
            }
            if by_bytes.insert(rec.bytes.clone(), rec.id).is_some() {
                return corrupt(format!("token {i} duplicates the bytes of another token"));
            }
        }

        // ids strictly decrease along components, so one forward pass suffices
        for i in 0..records.len() {
            records[i].demolition = if records[i].scaffold {
                let mut seq = Vec::new();
                for part in [records[i].left, records[i].right].into_iter().flatten() {
                    let p = &records[part.index()];
                    match &p.demolition {
                        Some(d) => seq.extend_from_slice(d),
                        None => seq.push(p.id),
                    }
                }
                Some(seq)
            } else {
                None
            };
        }

        let mut pairs = FxHashMap::default();
        for rec in &records[BASE_TOKENS..] {
            for split in 1..rec.bytes.len() {
                let (head, tail) = rec.bytes.split_at(split);
                if let (Some(x), Some(y)) = (by_bytes.get(head), by_bytes.get(tail)) {
                    pairs.insert((x.0, y.0), rec.id.0);
                }
            }
        }

        let scaffold_count = records.iter().filter(|r| r.scaffold).count();
        Ok(Self {
            normal_count: records.len() - scaffold_count,
            scaffold_count,
            records,
            mode,
            pretokenizer_version: PRETOKENIZER_VERSION.to_owned(),
            target_size,
            config: None,
            by_bytes,
            pairs,
        })
    }

    /// Attaches provenance (the resolved run configuration) that is written
    /// along with the vocabulary.
    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = Some(config);
        self
    }

    pub fn config(&self) -> Option<&serde_json::Value> {
        self.config.as_ref()
    }

    pub fn records(&self) -> &[TokenRecord] {
        &self.records
    }

    pub fn record(&self, id: TokenId) -> Result<&TokenRecord, VocabError> {
        self.records
            .get(id.index())
            .ok_or(VocabError::UnknownToken(id))
    }

    /// Size of `E`, normal and scaffold tokens together.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `|V|`, the advertised vocabulary size.
    pub fn normal_count(&self) -> usize {
        self.normal_count
    }

    /// `|S|`.
    pub fn scaffold_count(&self) -> usize {
        self.scaffold_count
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    pub fn pretokenizer_version(&self) -> &str {
        &self.pretokenizer_version
    }

    #[inline]
    pub fn is_scaffold(&self, id: TokenId) -> bool {
        self.records[id.index()].scaffold
    }

    #[inline]
    pub fn bytes(&self, id: TokenId) -> &[u8] {
        &self.records[id.index()].bytes
    }

    pub fn lookup_bytes(&self, bytes: &[u8]) -> Option<TokenId> {
        self.by_bytes.get(bytes).copied()
    }

    /// The token spelled by `bytes(left) ++ bytes(right)`, if any.
    #[inline]
    pub fn merge_of(&self, left: TokenId, right: TokenId) -> Option<TokenId> {
        self.pairs.get(&(left.0, right.0)).map(|&t| TokenId(t))
    }

    /// `[t]` for a normal token, otherwise its recursive expansion into
    /// normal tokens.
    pub fn demolition_sequence(&self, t: TokenId) -> Result<&[TokenId], VocabError> {
        let rec = self.record(t)?;
        Ok(match &rec.demolition {
            Some(seq) => seq,
            None => std::slice::from_ref(&rec.id),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VocabError> {
        let path = path.as_ref();
        let io_err = |source| VocabError::Io {
            path: path.to_owned(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        self.write_json(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| VocabError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::read_json(BufReader::new(file))
    }

    pub fn write_json(&self, w: impl Write) -> io::Result<()> {
        let file = VocabFile {
            format_version: FORMAT_VERSION,
            mode: self.mode,
            pretokenizer_version: self.pretokenizer_version.clone(),
            target_size: self.target_size,
            normal_count: self.normal_count,
            scaffold_count: self.scaffold_count,
            config: self.config.clone(),
            records: self
                .records
                .iter()
                .map(|r| RecordFile {
                    id: r.id,
                    bytes_hex: hex::encode(&r.bytes),
                    scaffold: r.scaffold,
                    left: r.left,
                    right: r.right,
                })
                .collect(),
        };
        let mut w = w;
        serde_json::to_writer_pretty(&mut w, &file)?;
        w.write_all(b"\n")
    }

    pub fn read_json(r: impl io::Read) -> Result<Self, VocabError> {
        let file: VocabFile = serde_json::from_reader(r)
            .map_err(|e| VocabError::Corrupt(format!("unreadable JSON: {e}")))?;
        if file.format_version != FORMAT_VERSION {
            return Err(VocabError::VersionMismatch {
                what: "format_version",
                found: file.format_version.to_string(),
                expected: FORMAT_VERSION.to_string(),
            });
        }
        if file.pretokenizer_version != PRETOKENIZER_VERSION {
            return Err(VocabError::VersionMismatch {
                what: "pretokenizer_version",
                found: file.pretokenizer_version,
                expected: PRETOKENIZER_VERSION.to_owned(),
            });
        }
        let mut records = Vec::with_capacity(file.records.len());
        for r in file.records {
            let bytes = hex::decode(&r.bytes_hex)
                .map_err(|e| VocabError::Corrupt(format!("token {}: bad bytes_hex: {e}", r.id)))?;
            if r.bytes_hex.bytes().any(|b| b.is_ascii_uppercase()) {
                return corrupt(format!("token {}: bytes_hex must be lowercase", r.id));
            }
            records.push(TokenRecord {
                id: r.id,
                bytes,
                scaffold: r.scaffold,
                left: r.left,
                right: r.right,
                demolition: None,
            });
        }
        let mut vocab = Self::from_records(records, file.mode, file.target_size)?;
        if vocab.normal_count != file.normal_count || vocab.scaffold_count != file.scaffold_count {
            return corrupt("normal_count/scaffold_count disagree with the records");
        }
        vocab.config = file.config;
        Ok(vocab)
    }

    /// Plain-text merge listing: one `left_hex right_hex scaffold_flag` line
    /// per merged token, in rank order.
    pub fn write_merges(&self, mut w: impl Write) -> io::Result<()> {
        for rec in &self.records[BASE_TOKENS..] {
            let (l, r) = (rec.left.expect("merged"), rec.right.expect("merged"));
            writeln!(
                w,
                "{} {} {}",
                hex::encode(self.bytes(l)),
                hex::encode(self.bytes(r)),
                u8::from(rec.scaffold)
            )?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    format_version: u32,
    mode: Mode,
    pretokenizer_version: String,
    target_size: usize,
    normal_count: usize,
    scaffold_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
    records: Vec<RecordFile>,
}

#[derive(Serialize, Deserialize)]
struct RecordFile {
    id: TokenId,
    bytes_hex: String,
    scaffold: bool,
    left: Option<TokenId>,
    right: Option<TokenId>,
}
