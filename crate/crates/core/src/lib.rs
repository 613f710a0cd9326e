//! Byte-level BPE tokenizer whose training can demote low-frequency
//! intermediate tokens to scaffold tokens. Scaffold tokens still guide
//! encoding but never appear in its output.
//!
//! Typical flow: [`pretokenizer::count_pretokens`] over a corpus,
//! [`trainer::train`] to get an [`ExpandedVocabulary`], then
//! [`encoder::encode`] / [`encoder::decode`]. [`analysis`] measures how a
//! vocabulary encodes a corpus.

pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod pretokenizer;
pub mod trainer;
pub mod vocabulary;

pub use encoder::{decode, encode, EncodeOptions, Encoder, TokenSequence};
pub use trainer::{train, TrainOutput};
pub use vocabulary::{ExpandedVocabulary, Mode, TokenId};
