//! Token corpora for offline model training.
//!
//! Layout, little-endian: `vocab_size u32`, `K u8`, `max_chunk_len u32`, then
//! every chunk's tokens as `u32`, each chunk starting with bos and ending
//! with eos. Chunks are self-delimiting, so no counts are stored.

use crate::error::{Error, Result};
use crate::ktree::KMode;
use crate::pipeline::cloud_chunks;
use crate::pointcloud::PointCloud;
use crate::tokenmap::{Codebook, TokenChunk};

pub const CORPUS_HEADER_LEN: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub vocab_size: u32,
    pub k: u8,
    pub max_chunk_len: u32,
    pub chunks: Vec<Vec<u32>>,
}

/// Tokenizes `clouds` cluster by cluster, in input order.
pub fn build_corpus(
    clouds: &[PointCloud],
    num_clusters: usize,
    k_mode: KMode,
    max_chunk_len: usize,
    codebook: &Codebook,
) -> Result<Corpus> {
    let mut chunks = Vec::new();
    for pc in clouds {
        let (_, per_cluster) = cloud_chunks(pc, num_clusters, k_mode, max_chunk_len, codebook)?;
        chunks.extend(per_cluster.into_iter().flatten().map(|c: TokenChunk| c.tokens));
    }
    Ok(Corpus {
        vocab_size: codebook.vocab_size() as u32,
        k: k_mode.k() as u8,
        max_chunk_len: max_chunk_len as u32,
        chunks,
    })
}

impl Corpus {
    pub fn to_bytes(&self) -> Vec<u8> {
        let n: usize = self.chunks.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(CORPUS_HEADER_LEN + 4 * n);
        out.extend_from_slice(&self.vocab_size.to_le_bytes());
        out.push(self.k);
        out.extend_from_slice(&self.max_chunk_len.to_le_bytes());
        for t in self.chunks.iter().flatten() {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    /// Parses a corpus, splitting chunks at each `eos`.
    pub fn from_bytes(bytes: &[u8], bos: u32, eos: u32) -> Result<Self> {
        if bytes.len() < CORPUS_HEADER_LEN || !(bytes.len() - CORPUS_HEADER_LEN).is_multiple_of(4) {
            return Err(Error::format("corpus length is not a header plus whole tokens"));
        }
        let vocab_size = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let k = bytes[4];
        let max_chunk_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
        let mut chunks = Vec::new();
        let mut cur: Vec<u32> = Vec::new();
        for w in bytes[CORPUS_HEADER_LEN..].chunks_exact(4) {
            let t = u32::from_le_bytes(w.try_into().unwrap());
            if t >= vocab_size {
                return Err(Error::format(format!("token {t} outside vocabulary of {vocab_size}")));
            }
            if cur.is_empty() && t != bos {
                return Err(Error::format("corpus chunk does not start with bos"));
            }
            cur.push(t);
            if t == eos {
                chunks.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            return Err(Error::format("corpus ends inside a chunk"));
        }
        Ok(Corpus {
            vocab_size,
            k,
            max_chunk_len,
            chunks,
        })
    }
}
