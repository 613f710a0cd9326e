//! Bounded-memory corpus reading.
//!
//! [`ChunkReader`] turns any byte stream into UTF-8 text chunks that start and
//! end on pre-token boundaries, so each chunk can be pre-tokenized on its own
//! and the results concatenated.

use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use crate::pretokenizer::last_stable_boundary;

pub const DEFAULT_CHUNK_SIZE: usize = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: invalid UTF-8 at byte offset {offset}")]
    Decode { path: PathBuf, offset: u64 },
}

/// Reads text in chunks of roughly `chunk_size` bytes, cut at pre-token
/// boundaries. A single pre-token longer than the chunk size is kept whole.
pub struct ChunkReader<R> {
    inner: R,
    path: PathBuf,
    chunk_size: usize,
    buf: Vec<u8>,
    // file offset of buf[0]
    offset: u64,
    eof: bool,
    failed: bool,
}

impl ChunkReader<File> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| CorpusError::Io {
            path: path.to_owned(),
            source,
        })?;
        Ok(Self::new(file, path))
    }
}

impl<R: Read> ChunkReader<R> {
    /// `label` names the source in error messages.
    pub fn new(inner: R, label: impl Into<PathBuf>) -> Self {
        Self::with_chunk_size(inner, label, DEFAULT_CHUNK_SIZE)
    }

    pub fn with_chunk_size(inner: R, label: impl Into<PathBuf>, chunk_size: usize) -> Self {
        Self {
            inner,
            path: label.into(),
            chunk_size: chunk_size.max(8),
            buf: Vec::new(),
            offset: 0,
            eof: false,
            failed: false,
        }
    }

    fn fill(&mut self) -> io::Result<()> {
        let want = self.buf.len() + self.chunk_size;
        while self.buf.len() < want && !self.eof {
            let old = self.buf.len();
            self.buf.resize(want, 0);
            match self.inner.read(&mut self.buf[old..]) {
                Ok(0) => {
                    self.buf.truncate(old);
                    self.eof = true;
                }
                Ok(n) => self.buf.truncate(old + n),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => self.buf.truncate(old),
                Err(e) => {
                    self.buf.truncate(old);
                    return Err(e);
                }
            }
        }
        Ok(())
    }

    fn next_chunk(&mut self) -> Result<Option<String>, CorpusError> {
        loop {
            self.fill().map_err(|source| CorpusError::Io {
                path: self.path.clone(),
                source,
            })?;
            if self.buf.is_empty() {
                return Ok(None);
            }
            let valid = match std::str::from_utf8(&self.buf) {
                Ok(_) => self.buf.len(),
                // an incomplete sequence at the very end may be completed by the next read
                Err(e) if e.error_len().is_none() && !self.eof => e.valid_up_to(),
                Err(e) => {
                    return Err(CorpusError::Decode {
                        path: self.path.clone(),
                        offset: self.offset + e.valid_up_to() as u64,
                    })
                }
            };
            let text = std::str::from_utf8(&self.buf[..valid]).expect("validated prefix");
            let cut = if self.eof && valid == self.buf.len() {
                Some(valid)
            } else {
                last_stable_boundary(text).filter(|&c| c > 0)
            };
            match cut {
                Some(cut) => {
                    let rest = self.buf.split_off(cut);
                    let chunk = std::mem::replace(&mut self.buf, rest);
                    self.offset += cut as u64;
                    return Ok(Some(String::from_utf8(chunk).expect("validated prefix")));
                }
                // no safe cut yet: one long pre-token, keep reading
                None => continue,
            }
        }
    }
}

impl<R: Read> Iterator for ChunkReader<R> {
    type Item = Result<String, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.next_chunk().transpose();
        if matches!(item, Some(Err(_))) {
            self.failed = true;
        }
        item
    }
}

/// Chunks of several files in order. Each file is an independent text: no
/// pre-token spans two files.
pub fn read_files<P: AsRef<Path> + Sync>(
    paths: &[P],
) -> impl Iterator<Item = Result<String, CorpusError>> + Send + '_ {
    paths.iter().flat_map(|p| {
        let reader: Box<dyn Iterator<Item = _> + Send> = match ChunkReader::open(p) {
            Ok(r) => Box::new(r),
            Err(e) => Box::new(std::iter::once(Err(e))),
        };
        reader
    })
}
