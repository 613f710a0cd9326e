//! Corpus statistics of an encoding: token frequency distribution,
//! compression rate, entropy, redundancy, and the comparison of a scaffold
//! vocabulary against its original counterpart.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::CorpusError;
use crate::encoder::{EncodeOptions, Encoder};
use crate::vocabulary::{ExpandedVocabulary, TokenId, BASE_TOKENS, FORMAT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("entropy needs a vocabulary of at least 2 tokens, got {0}")]
    VocabTooSmall(usize),
    #[error("vocabularies differ in {what}: {original} vs {scaffold}")]
    Mismatch {
        what: &'static str,
        original: String,
        scaffold: String,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Token counts of an encoded corpus, indexed by id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyDistribution {
    counts: Vec<u64>,
    total_tokens: u64,
    total_bytes: u64,
}

impl FrequencyDistribution {
    pub fn new(vocab_len: usize) -> Self {
        Self {
            counts: vec![0; vocab_len],
            total_tokens: 0,
            total_bytes: 0,
        }
    }

    /// A distribution from bare counts; `total_bytes` is left at zero.
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total_tokens = counts.iter().sum();
        Self {
            counts,
            total_tokens,
            total_bytes: 0,
        }
    }

    /// Records one encoded text of `bytes` bytes.
    pub fn add(&mut self, ids: &[TokenId], bytes: usize) {
        for id in ids {
            self.counts[id.index()] += 1;
        }
        self.total_tokens += ids.len() as u64;
        self.total_bytes += bytes as u64;
    }

    pub fn merge(mut self, other: Self) -> Self {
        if self.counts.len() < other.counts.len() {
            return other.merge(self);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_tokens += other.total_tokens;
        self.total_bytes += other.total_bytes;
        self
    }

    pub fn count(&self, id: TokenId) -> u64 {
        self.counts.get(id.index()).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes
    }

    /// All ids, by count descending, then id ascending.
    pub fn sorted_curve(&self) -> Vec<(TokenId, u64)> {
        let mut curve: Vec<(TokenId, u64)> = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (TokenId(i as u32), c))
            .collect();
        curve.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        curve
    }

    /// Bytes per token.
    pub fn compression_rate(&self) -> Result<f64, AnalysisError> {
        if self.total_tokens == 0 {
            return Err(AnalysisError::EmptyCorpus);
        }
        Ok(self.total_bytes as f64 / self.total_tokens as f64)
    }
}

/// Encodes the corpus with every vocabulary in `vocabs` and returns one
/// distribution per vocabulary. Chunks are processed in parallel.
pub fn frequency_distributions<I>(
    chunks: I,
    vocabs: &[&ExpandedVocabulary],
) -> Result<Vec<FrequencyDistribution>, AnalysisError>
where
    I: Iterator<Item = Result<String, CorpusError>> + Send,
{
    let empty = || {
        vocabs
            .iter()
            .map(|v| FrequencyDistribution::new(v.len()))
            .collect::<Vec<_>>()
    };
    let merge = |a: Vec<FrequencyDistribution>, b: Vec<FrequencyDistribution>| {
        a.into_iter()
            .zip(b)
            .map(|(x, y)| x.merge(y))
            .collect::<Vec<_>>()
    };
    chunks
        .par_bridge()
        .map_init(
            || {
                let encoders: Vec<Encoder> = vocabs
                    .iter()
                    .map(|v| Encoder::new(v, EncodeOptions::default()))
                    .collect();
                (encoders, Vec::new())
            },
            |(encoders, ids), chunk| {
                let chunk = chunk?;
                let mut dists = empty();
                for (enc, dist) in encoders.iter_mut().zip(&mut dists) {
                    ids.clear();
                    enc.encode_into(&chunk, ids);
                    dist.add(ids, chunk.len());
                }
                Ok(dists)
            },
        )
        .try_reduce(empty, |a, b| Ok(merge(a, b)))
}

pub fn frequency_distribution<I>(
    chunks: I,
    vocab: &ExpandedVocabulary,
) -> Result<FrequencyDistribution, AnalysisError>
where
    I: Iterator<Item = Result<String, CorpusError>> + Send,
{
    Ok(frequency_distributions(chunks, &[vocab])?.remove(0))
}

/// Shannon entropy in bits of the observed token distribution, and the
/// redundancy `1 - H / log2(vocab_size)`.
pub fn entropy_redundancy(
    dist: &FrequencyDistribution,
    vocab_size: usize,
) -> Result<(f64, f64), AnalysisError> {
    if dist.total_tokens == 0 {
        return Err(AnalysisError::EmptyCorpus);
    }
    if vocab_size < 2 {
        return Err(AnalysisError::VocabTooSmall(vocab_size));
    }
    let total = dist.total_tokens as f64;
    let entropy: f64 = dist
        .counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    let entropy = entropy.max(0.0);
    Ok((entropy, 1.0 - entropy / (vocab_size as f64).log2()))
}

/// `|S| / (|S| + |V| - 256)`: the share of learned tokens that ended as
/// scaffold. Zero for a vocabulary without learned tokens.
pub fn scaffold_fraction(vocab: &ExpandedVocabulary) -> f64 {
    let learned = vocab.len() - BASE_TOKENS;
    if learned == 0 {
        0.0
    } else {
        vocab.scaffold_count() as f64 / learned as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusReport {
    pub format_version: u32,
    pub vocab_size: usize,
    pub scaffold_count: usize,
    pub total_bytes: u64,
    pub total_tokens: u64,
    pub compression_rate: f64,
    pub entropy_bits: f64,
    pub redundancy: f64,
    pub scaffold_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl CorpusReport {
    pub fn new(
        dist: &FrequencyDistribution,
        vocab: &ExpandedVocabulary,
    ) -> Result<Self, AnalysisError> {
        let (entropy_bits, redundancy) = entropy_redundancy(dist, vocab.normal_count())?;
        Ok(Self {
            format_version: FORMAT_VERSION,
            vocab_size: vocab.normal_count(),
            scaffold_count: vocab.scaffold_count(),
            total_bytes: dist.total_bytes,
            total_tokens: dist.total_tokens,
            compression_rate: dist.compression_rate()?,
            entropy_bits,
            redundancy,
            scaffold_fraction: scaffold_fraction(vocab),
            config: None,
        })
    }
}

pub fn analyze<I>(
    chunks: I,
    vocab: &ExpandedVocabulary,
) -> Result<(CorpusReport, FrequencyDistribution), AnalysisError>
where
    I: Iterator<Item = Result<String, CorpusError>> + Send,
{
    let dist = frequency_distribution(chunks, vocab)?;
    Ok((CorpusReport::new(&dist, vocab)?, dist))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TokenStat {
    pub bytes_hex: String,
    pub id: TokenId,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub format_version: u32,
    pub original: CorpusReport,
    pub scaffold: CorpusReport,
    /// Scaffold tokens of the scaffold vocabulary that are normal tokens of
    /// the original one, with their counts under the original encoding.
    pub removed: Vec<TokenStat>,
    /// Normal tokens found only in the scaffold vocabulary, with their counts
    /// under the scaffold encoding.
    pub replacement: Vec<TokenStat>,
    pub scaffold_avg_freq: Option<f64>,
    pub replacement_avg_freq: Option<f64>,
    /// `100 * (replacement_avg_freq / scaffold_avg_freq - 1)`.
    pub uplift_percent: Option<f64>,
    pub scaffold_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

fn mean(stats: &[TokenStat]) -> Option<f64> {
    (!stats.is_empty())
        .then(|| stats.iter().map(|s| s.count as f64).sum::<f64>() / stats.len() as f64)
}

fn by_count(mut stats: Vec<TokenStat>) -> Vec<TokenStat> {
    stats.sort_by(|a, b| b.count.cmp(&a.count).then(a.id.cmp(&b.id)));
    stats
}

/// Compares a scaffold-mode vocabulary with an original-mode one trained on
/// the same corpus and target size. The corpus is read once.
pub fn compare_vocabs<I>(
    original: &ExpandedVocabulary,
    scaffold: &ExpandedVocabulary,
    chunks: I,
) -> Result<ComparisonReport, AnalysisError>
where
    I: Iterator<Item = Result<String, CorpusError>> + Send,
{
    if original.target_size() != scaffold.target_size() {
        return Err(AnalysisError::Mismatch {
            what: "target size",
            original: original.target_size().to_string(),
            scaffold: scaffold.target_size().to_string(),
        });
    }
    if original.pretokenizer_version() != scaffold.pretokenizer_version() {
        return Err(AnalysisError::Mismatch {
            what: "pretokenizer version",
            original: original.pretokenizer_version().into(),
            scaffold: scaffold.pretokenizer_version().into(),
        });
    }
    let dists = frequency_distributions(chunks, &[original, scaffold])?;
    let (orig_dist, scaf_dist) = (&dists[0], &dists[1]);

    let normal_in_original = |bytes: &[u8]| {
        original
            .lookup_bytes(bytes)
            .filter(|&id| !original.is_scaffold(id))
    };
    let mut removed = Vec::new();
    let mut replacement = Vec::new();
    for rec in &scaffold.records()[BASE_TOKENS..] {
        match (rec.scaffold, normal_in_original(&rec.bytes)) {
            (true, Some(orig_id)) => removed.push(TokenStat {
                bytes_hex: hex::encode(&rec.bytes),
                id: orig_id,
                count: orig_dist.count(orig_id),
            }),
            (false, None) => replacement.push(TokenStat {
                bytes_hex: hex::encode(&rec.bytes),
                id: rec.id,
                count: scaf_dist.count(rec.id),
            }),
            _ => {}
        }
    }
    let scaffold_avg_freq = mean(&removed);
    let replacement_avg_freq = mean(&replacement);
    let uplift_percent = match (scaffold_avg_freq, replacement_avg_freq) {
        (Some(s), Some(r)) if s > 0.0 => Some(100.0 * (r / s - 1.0)),
        _ => None,
    };
    Ok(ComparisonReport {
        format_version: FORMAT_VERSION,
        original: CorpusReport::new(orig_dist, original)?,
        scaffold: CorpusReport::new(scaf_dist, scaffold)?,
        removed: by_count(removed),
        replacement: by_count(replacement),
        scaffold_avg_freq,
        replacement_avg_freq,
        uplift_percent,
        scaffold_fraction: scaffold_fraction(scaffold),
        config: None,
    })
}

/// Writes the normal-token frequency curve as CSV, preceded by a comment
/// line carrying the format version and run configuration.
pub fn write_distribution_csv(
    mut w: impl Write,
    dist: &FrequencyDistribution,
    vocab: &ExpandedVocabulary,
    config: Option<&serde_json::Value>,
) -> io::Result<()> {
    let config = config.map_or_else(|| "null".to_owned(), |c| c.to_string());
    writeln!(w, "# format_version={FORMAT_VERSION} config={config}")?;
    writeln!(w, "rank,token_id,bytes_hex,count")?;
    let curve = dist
        .sorted_curve()
        .into_iter()
        .filter(|&(id, _)| id.index() < vocab.len() && !vocab.is_scaffold(id));
    for (rank, (id, count)) in curve.enumerate() {
        writeln!(
            w,
            "{},{},{},{}",
            rank + 1,
            id,
            hex::encode(vocab.bytes(id)),
            count
        )?;
    }
    Ok(())
}
