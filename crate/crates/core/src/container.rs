//! The compressed file: a global header, then per-cluster offsets and
//! indexed chunk payloads. All integers are little-endian.
//!
//! ```text
//! header (89 bytes)
//!   0  magic "KPCC"
//!   4  version u8
//!   5  source bit depth u8
//!   6  k-mode u8                 0 = octree8, 1 = mixed12
//!   7  schedule digest [8]
//!  15  model id u8               0 uniform, 1 adaptive, 2 transformer, 3 bridge
//!  16  model params digest [16]
//!  32  codebook kind u8          0 = affine, 1 = file
//!  33  codebook base id u32
//!  37  vocabulary size u32
//!  41  codebook digest [32]      zero for affine codebooks
//!  73  max chunk length u32
//!  77  point count u64
//!  85  cluster count u32
//! cluster (15 bytes + chunks)
//!      offset x, y, z  u32 x 3
//!      local depth u8
//!      chunk count u16
//! chunk (10 bytes + payload)
//!      chunk index u16
//!      token count u32
//!      payload length u32
//!      payload bytes
//! ```
//!
//! Chunks of a cluster may be stored in any order; their indices must be
//! exactly `0..chunk_count`.

use crate::error::{Error, Result};
use crate::ktree::KMode;
use crate::pointcloud::MAX_BIT_DEPTH;
use crate::probmodel::ModelId;

pub const MAGIC: &[u8; 4] = b"KPCC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 89;
pub const CLUSTER_HEADER_LEN: usize = 15;
pub const CHUNK_HEADER_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodebookKind {
    Affine,
    File,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodebookRef {
    pub kind: CodebookKind,
    pub base_id: u32,
    pub vocab_size: u32,
    pub digest: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalHeader {
    pub source_depth: u8,
    pub k_mode: KMode,
    pub schedule_digest: [u8; 8],
    pub model_id: ModelId,
    pub model_digest: [u8; 16],
    pub codebook: CodebookRef,
    pub max_chunk_len: u32,
    pub point_count: u64,
    pub cluster_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkRecord {
    pub chunk_index: u16,
    pub token_count: u32,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterRecord {
    pub offset: [u32; 3],
    pub local_depth: u8,
    pub chunks: Vec<ChunkRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedFile {
    pub header: GlobalHeader,
    pub clusters: Vec<ClusterRecord>,
}

impl CompressedFile {
    /// Exact serialized size.
    pub fn byte_len(&self) -> usize {
        HEADER_LEN
            + self
                .clusters
                .iter()
                .map(|c| {
                    CLUSTER_HEADER_LEN
                        + c.chunks
                            .iter()
                            .map(|ch| CHUNK_HEADER_LEN + ch.payload.len())
                            .sum::<usize>()
                })
                .sum::<usize>()
    }

    /// Bits per input point for a file of `file_bytes` bytes.
    pub fn bpp(&self, file_bytes: usize) -> f64 {
        8.0 * file_bytes as f64 / self.header.point_count.max(1) as f64
    }
}

fn check_chunk_indices(chunks: &[ChunkRecord], cluster: usize) -> Result<()> {
    let mut seen = vec![false; chunks.len()];
    for ch in chunks {
        let i = ch.chunk_index as usize;
        if i >= chunks.len() {
            return Err(Error::integrity(format!(
                "cluster {cluster}: chunk index {i} out of range for {} chunks",
                chunks.len()
            )));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::integrity(format!(
                "cluster {cluster}: duplicate chunk index {i}"
            )));
        }
    }
    Ok(())
}

pub fn write_container(file: &CompressedFile) -> Result<Vec<u8>> {
    let h = &file.header;
    if h.cluster_count as usize != file.clusters.len() {
        return Err(Error::format(format!(
            "header declares {} clusters but {} are present",
            h.cluster_count,
            file.clusters.len()
        )));
    }
    if !(1..=MAX_BIT_DEPTH).contains(&h.source_depth) {
        return Err(Error::format(format!("source depth {} invalid", h.source_depth)));
    }
    let mut out = Vec::with_capacity(file.byte_len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(h.source_depth);
    out.push(h.k_mode.to_u8());
    out.extend_from_slice(&h.schedule_digest);
    out.push(h.model_id.to_u8());
    out.extend_from_slice(&h.model_digest);
    out.push(match h.codebook.kind {
        CodebookKind::Affine => 0,
        CodebookKind::File => 1,
    });
    out.extend_from_slice(&h.codebook.base_id.to_le_bytes());
    out.extend_from_slice(&h.codebook.vocab_size.to_le_bytes());
    out.extend_from_slice(&h.codebook.digest);
    out.extend_from_slice(&h.max_chunk_len.to_le_bytes());
    out.extend_from_slice(&h.point_count.to_le_bytes());
    out.extend_from_slice(&h.cluster_count.to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);

    for (ci, c) in file.clusters.iter().enumerate() {
        if !(1..=MAX_BIT_DEPTH).contains(&c.local_depth) {
            return Err(Error::format(format!(
                "cluster {ci}: local depth {} invalid",
                c.local_depth
            )));
        }
        let count =
            u16::try_from(c.chunks.len()).map_err(|_| Error::format(format!("cluster {ci}: too many chunks")))?;
        check_chunk_indices(&c.chunks, ci)?;
        for v in c.offset {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(c.local_depth);
        out.extend_from_slice(&count.to_le_bytes());
        for ch in &c.chunks {
            let len = u32::try_from(ch.payload.len()).map_err(|_| Error::format("payload longer than 4 GiB"))?;
            out.extend_from_slice(&ch.chunk_index.to_le_bytes());
            out.extend_from_slice(&ch.token_count.to_le_bytes());
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(&ch.payload);
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos.saturating_add(n))
            .ok_or_else(|| Error::integrity(format!("file ends inside {what}")))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().unwrap())
    }
}

pub fn read_container(bytes: &[u8]) -> Result<CompressedFile> {
    let mut r = Cursor { bytes, pos: 0 };
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(Error::format("not a kpcc file (bad magic)"));
    }
    r.pos = 4;
    let version = r.u8("header")?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported container version {version}")));
    }
    let source_depth = r.u8("header")?;
    if !(1..=MAX_BIT_DEPTH).contains(&source_depth) {
        return Err(Error::format(format!("source depth {source_depth} invalid")));
    }
    let k_mode = r.u8("header")?;
    let k_mode = KMode::from_u8(k_mode).ok_or_else(|| Error::format(format!("unknown k-mode {k_mode}")))?;
    let schedule_digest = r.array::<8>("header")?;
    let model_id = r.u8("header")?;
    let model_id = ModelId::from_u8(model_id).ok_or_else(|| Error::format(format!("unknown model id {model_id}")))?;
    let model_digest = r.array::<16>("header")?;
    let kind = match r.u8("header")? {
        0 => CodebookKind::Affine,
        1 => CodebookKind::File,
        k => return Err(Error::format(format!("unknown codebook kind {k}"))),
    };
    let codebook = CodebookRef {
        kind,
        base_id: r.u32("header")?,
        vocab_size: r.u32("header")?,
        digest: r.array::<32>("header")?,
    };
    let header = GlobalHeader {
        source_depth,
        k_mode,
        schedule_digest,
        model_id,
        model_digest,
        codebook,
        max_chunk_len: r.u32("header")?,
        point_count: r.u64("header")?,
        cluster_count: r.u32("header")?,
    };

    // Every cluster needs at least its fixed header, which bounds the
    // allocation below for hostile counts.
    let max_clusters = (bytes.len() - r.pos.min(bytes.len())) / CLUSTER_HEADER_LEN;
    if header.cluster_count as usize > max_clusters {
        return Err(Error::integrity(format!(
            "header declares {} clusters, file can hold at most {max_clusters}",
            header.cluster_count
        )));
    }
    let mut clusters = Vec::with_capacity(header.cluster_count as usize);
    for ci in 0..header.cluster_count as usize {
        let what = format!("cluster {ci}");
        let offset = [r.u32(&what)?, r.u32(&what)?, r.u32(&what)?];
        let local_depth = r.u8(&what)?;
        if !(1..=MAX_BIT_DEPTH).contains(&local_depth) {
            return Err(Error::format(format!(
                "cluster {ci}: local depth {local_depth} invalid"
            )));
        }
        let count = r.u16(&what)? as usize;
        let mut chunks = Vec::with_capacity(count.min(bytes.len() / CHUNK_HEADER_LEN));
        for _ in 0..count {
            let chunk_index = r.u16(&what)?;
            let token_count = r.u32(&what)?;
            let len = r.u32(&what)? as usize;
            let payload = r.take(len, &what)?.to_vec();
            chunks.push(ChunkRecord {
                chunk_index,
                token_count,
                payload,
            });
        }
        check_chunk_indices(&chunks, ci)?;
        clusters.push(ClusterRecord {
            offset,
            local_depth,
            chunks,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::integrity(format!(
            "{} trailing bytes after the last cluster",
            bytes.len() - r.pos
        )));
    }
    Ok(CompressedFile { header, clusters })
}
