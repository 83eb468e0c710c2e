//! End-to-end encode and decode, plus benchmark tables.
//!
//! Work is split into independent (cluster, chunk) jobs. Each job drives its
//! own model session and coder, and results are merged by index, so the
//! output never depends on thread count or completion order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::cluster::{cluster_points, merge_clusters, Cluster, ClusterSet, DEFAULT_CLUSTERS};
use crate::container::{
    read_container, write_container, ChunkRecord, ClusterRecord, CodebookKind, CodebookRef, CompressedFile,
    GlobalHeader,
};
use crate::error::{Error, Result, Stage, StageExt};
use crate::ktree::{build_sequence, default_schedule, reconstruct_points, KMode, OccupancySequence};
use crate::pointcloud::{depth_for, load_ply, save_ply, PointCloud, MAX_BIT_DEPTH};
use crate::probmodel::adaptive::MAX_ORDER;
use crate::probmodel::{Model, ModelId, ModelSession, ModelSpec, TransformerWeights};
use crate::rangecoder::{decode_tokens, encode_tokens, CodedPayload};
use crate::tokenmap::{
    default_codebook_in, detokenize_chunks, load_codebook, tokenize_chunks, Codebook, CodebookSource, TokenChunk,
    DEFAULT_BASE_ID, DEFAULT_CHUNK_LEN,
};

#[derive(Debug, Clone)]
pub struct EncodeConfig {
    pub num_clusters: usize,
    pub k_mode: KMode,
    pub max_chunk_len: usize,
    pub model: ModelSpec,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Decode the result in-process and compare before returning.
    pub verify: bool,
    /// Text codebook file; the affine codebook is used when absent.
    pub codebook: Option<PathBuf>,
    /// Vocabulary size; derived from the model or codebook when absent.
    pub vocab_size: Option<usize>,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        EncodeConfig {
            num_clusters: DEFAULT_CLUSTERS,
            k_mode: KMode::Octree8,
            max_chunk_len: DEFAULT_CHUNK_LEN,
            model: ModelSpec::adaptive(),
            seed: 0,
            threads: 0,
            verify: false,
            codebook: None,
            vocab_size: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DecodeConfig {
    /// Model to decode with. When absent it is inferred from the header,
    /// which works for every model except the transformer.
    pub model: Option<ModelSpec>,
    pub threads: usize,
    /// Required when the file was written with a codebook file.
    pub codebook: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeReport {
    pub bpp: f64,
    pub bytes: usize,
    pub points: usize,
    pub clusters: usize,
    pub chunks: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeReport {
    pub points: usize,
    pub clusters: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub report: EncodeReport,
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::param(format!("cannot start {threads} worker threads: {e}")))
}

/// Digest binding the decoder-side layout: split rule, source depth and the
/// symbol-to-token mapping.
pub fn layout_digest(k_mode: KMode, source_depth: u8, codebook: &CodebookRef) -> [u8; 8] {
    let mut h = Sha256::new();
    h.update(b"kpcc-layout");
    h.update([k_mode.to_u8(), source_depth]);
    for d in 1..=MAX_BIT_DEPTH {
        for s in default_schedule(d, k_mode).levels() {
            for f in s {
                h.update([*f as u8]);
            }
        }
    }
    h.update([codebook_kind_byte(codebook.kind)]);
    h.update(codebook.base_id.to_le_bytes());
    h.update(codebook.vocab_size.to_le_bytes());
    h.update(codebook.digest);
    let full = h.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&full[..8]);
    out
}

fn codebook_kind_byte(kind: CodebookKind) -> u8 {
    match kind {
        CodebookKind::Affine => 0,
        CodebookKind::File => 1,
    }
}

fn codebook_ref(cb: &Codebook) -> CodebookRef {
    match cb.source {
        CodebookSource::Affine { base_id } => CodebookRef {
            kind: CodebookKind::Affine,
            base_id,
            vocab_size: cb.vocab_size() as u32,
            digest: [0; 32],
        },
        CodebookSource::File { digest } => CodebookRef {
            kind: CodebookKind::File,
            base_id: 0,
            vocab_size: cb.vocab_size() as u32,
            digest,
        },
    }
}

/// Vocabulary used when none is configured: the transformer's own, or the
/// smallest one holding the affine codebook.
fn resolve_vocab(cfg: &EncodeConfig) -> Result<usize> {
    if let Some(v) = cfg.vocab_size {
        return Ok(v);
    }
    if let ModelSpec::Transformer { weights } = &cfg.model {
        return Ok(TransformerWeights::load(weights)?.config.vocab_size as usize);
    }
    Ok(DEFAULT_BASE_ID as usize + (1usize << cfg.k_mode.k()) - 1)
}

fn build_codebook(cfg: &EncodeConfig) -> Result<Codebook> {
    let vocab = resolve_vocab(cfg)?;
    match &cfg.codebook {
        Some(path) => {
            let cb = load_codebook(path, vocab)?;
            if cb.alphabet_size() != (1usize << cfg.k_mode.k()) - 1 {
                return Err(Error::param(format!(
                    "codebook covers {} symbols, {} needs {}",
                    cb.alphabet_size(),
                    cfg.k_mode,
                    (1usize << cfg.k_mode.k()) - 1
                )));
            }
            Ok(cb)
        }
        None => default_codebook_in(cfg.k_mode.k(), DEFAULT_BASE_ID, vocab),
    }
}

/// Clusters a cloud and turns every cluster into framed token chunks.
pub fn cloud_chunks(
    pc: &PointCloud,
    num_clusters: usize,
    k_mode: KMode,
    max_chunk_len: usize,
    codebook: &Codebook,
) -> Result<(ClusterSet, Vec<Vec<TokenChunk>>)> {
    if num_clusters == 0 {
        return Err(Error::param("cluster count must be at least 1")).stage(Stage::Cluster);
    }
    // A cloud smaller than the requested count gets one cluster per point.
    let clusters = cluster_points(pc, num_clusters.min(pc.len()), 0).stage(Stage::Cluster)?;
    let chunks = clusters
        .clusters
        .par_iter()
        .map(|c| {
            let schedule = default_schedule(c.local_depth, k_mode);
            let seq = build_sequence(c, &schedule).stage(Stage::Tree)?;
            let chunks = tokenize_chunks(&seq.symbols, codebook, max_chunk_len).stage(Stage::Tokenize)?;
            if chunks.len() > u16::MAX as usize {
                return Err(Error::param(format!(
                    "cluster needs {} chunks, more than {}; raise the chunk length or cluster count",
                    chunks.len(),
                    u16::MAX
                )))
                .stage(Stage::Tokenize);
            }
            Ok(chunks)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((clusters, chunks))
}

/// Runs `f` over every job with one lazily opened session per worker split.
fn with_sessions<J, T, F>(model: &Model, jobs: &[J], f: F) -> Result<Vec<T>>
where
    J: Sync,
    T: Send,
    F: Fn(&mut dyn ModelSession, &J) -> Result<T> + Sync,
{
    jobs.par_iter()
        .map_init(
            || None::<Box<dyn ModelSession>>,
            |slot, job| {
                let session = match slot {
                    Some(s) => s,
                    None => slot.insert(model.session().stage(Stage::Model)?),
                };
                f(session.as_mut(), job)
            },
        )
        .collect()
}

fn encode_chunk(session: &mut dyn ModelSession, chunk: &TokenChunk) -> Result<CodedPayload> {
    session.reset().stage(Stage::Model)?;
    session.push_token(chunk.tokens[0]).stage(Stage::Model)?;
    encode_tokens(&chunk.tokens[1..], session).stage(Stage::Code)
}

fn decode_chunk(session: &mut dyn ModelSession, bos: u32, record: &ChunkRecord) -> Result<TokenChunk> {
    session.reset().stage(Stage::Model)?;
    session.push_token(bos).stage(Stage::Model)?;
    let payload = CodedPayload {
        bytes: record.payload.clone(),
        token_count: record.token_count,
    };
    let mut tokens = Vec::with_capacity(record.token_count as usize + 1);
    tokens.push(bos);
    tokens.extend(decode_tokens(&payload, session).stage(Stage::Code)?);
    Ok(TokenChunk {
        chunk_index: record.chunk_index as u32,
        tokens,
    })
}

/// Compresses a cloud into container bytes.
pub fn encode_cloud(pc: &PointCloud, cfg: &EncodeConfig) -> Result<Encoded> {
    let start = Instant::now();
    if cfg.max_chunk_len == 0 || cfg.max_chunk_len > u32::MAX as usize - 2 {
        return Err(Error::param(format!("chunk length {} invalid", cfg.max_chunk_len)));
    }
    let codebook = build_codebook(cfg).stage(Stage::Tokenize)?;
    let model = Model::load(&cfg.model, codebook.vocab_size(), cfg.max_chunk_len).stage(Stage::Model)?;
    let pool = thread_pool(cfg.threads)?;

    let (clusters, records) = pool.install(|| -> Result<_> {
        let (clusters, chunks) = cloud_chunks(pc, cfg.num_clusters, cfg.k_mode, cfg.max_chunk_len, &codebook)?;
        let jobs: Vec<&TokenChunk> = chunks.iter().flatten().collect();
        let coded = with_sessions(&model, &jobs, |s, c| encode_chunk(s, c))?;
        let mut coded = coded.into_iter();
        let records: Vec<ClusterRecord> = clusters
            .clusters
            .iter()
            .zip(&chunks)
            .map(|(c, cs)| ClusterRecord {
                offset: c.offset,
                local_depth: c.local_depth,
                chunks: cs
                    .iter()
                    .zip(coded.by_ref())
                    .map(|(tc, p)| ChunkRecord {
                        chunk_index: tc.chunk_index as u16,
                        token_count: p.token_count,
                        payload: p.bytes,
                    })
                    .collect(),
            })
            .collect();
        Ok((clusters, records))
    })?;

    let cb_ref = codebook_ref(&codebook);
    let file = CompressedFile {
        header: GlobalHeader {
            source_depth: pc.bit_depth(),
            k_mode: cfg.k_mode,
            schedule_digest: layout_digest(cfg.k_mode, pc.bit_depth(), &cb_ref),
            model_id: model.id(),
            model_digest: model.params_digest(),
            codebook: cb_ref,
            max_chunk_len: cfg.max_chunk_len as u32,
            point_count: pc.len() as u64,
            cluster_count: records.len() as u32,
        },
        clusters: records,
    };
    let bytes = write_container(&file).stage(Stage::Container)?;

    if cfg.verify {
        let dcfg = DecodeConfig {
            model: Some(cfg.model.clone()),
            threads: cfg.threads,
            codebook: cfg.codebook.clone(),
        };
        let (back, _) = decode_bytes(&bytes, &dcfg)?;
        if back.points() != pc.points() {
            return Err(Error::integrity(
                "verification failed: decoded cloud differs from the input",
            ));
        }
    }

    let report = EncodeReport {
        bpp: file.bpp(bytes.len()),
        bytes: bytes.len(),
        points: pc.len(),
        clusters: clusters.clusters.len(),
        chunks: file.clusters.iter().map(|c| c.chunks.len()).sum(),
        wall_time: start.elapsed(),
    };
    Ok(Encoded { bytes, report })
}

/// Encodes a PLY file. Nothing is written unless encoding succeeds.
pub fn encode_file(input: &Path, output: &Path, cfg: &EncodeConfig) -> Result<EncodeReport> {
    let start = Instant::now();
    let pc = load_ply(input).stage(Stage::Load)?;
    let mut enc = encode_cloud(&pc, cfg)?;
    std::fs::write(output, &enc.bytes)
        .map_err(Error::from)
        .stage(Stage::Write)?;
    enc.report.wall_time = start.elapsed();
    Ok(enc.report)
}

fn infer_model(header: &GlobalHeader) -> Result<ModelSpec> {
    let vocab = header.codebook.vocab_size as usize;
    let len = header.max_chunk_len as usize;
    match header.model_id {
        ModelId::Uniform => Ok(ModelSpec::Uniform),
        ModelId::AdaptiveCtx => {
            for order in (0..=MAX_ORDER).rev() {
                let spec = ModelSpec::Adaptive { order };
                if Model::load(&spec, vocab, len)?.params_digest() == header.model_digest {
                    return Ok(spec);
                }
            }
            Err(Error::load(
                "no adaptive model order matches the file's parameter digest",
            ))
        }
        ModelId::TinyTransformer => Err(Error::Usage(
            "file was encoded with a transformer; pass its weights to decode".into(),
        )),
        ModelId::ExternalBridge => ModelSpec::bridge_from_env(),
    }
}

fn decoder_codebook(header: &GlobalHeader, k: u32, path: Option<&Path>) -> Result<Codebook> {
    let r = &header.codebook;
    let vocab = r.vocab_size as usize;
    match r.kind {
        CodebookKind::Affine => {
            if r.digest != [0; 32] {
                return Err(Error::integrity("affine codebook carries a nonzero digest"));
            }
            default_codebook_in(k, r.base_id, vocab).map_err(|e| Error::integrity(format!("codebook reference: {e}")))
        }
        CodebookKind::File => {
            let path =
                path.ok_or_else(|| Error::Usage("file was encoded with a codebook file; pass it to decode".into()))?;
            let cb = load_codebook(path, vocab)?;
            if codebook_ref(&cb) != *r {
                return Err(Error::load("codebook file does not match the one used to encode"));
            }
            Ok(cb)
        }
    }
}

/// Rebuilds a cloud from container bytes.
pub fn decode_bytes(bytes: &[u8], cfg: &DecodeConfig) -> Result<(PointCloud, DecodeReport)> {
    let start = Instant::now();
    let file = read_container(bytes).stage(Stage::Container)?;
    let h = &file.header;
    let k = h.k_mode.k();

    if layout_digest(h.k_mode, h.source_depth, &h.codebook) != h.schedule_digest {
        return Err(Error::integrity("layout digest does not match the header")).stage(Stage::Container);
    }
    let codebook = decoder_codebook(h, k, cfg.codebook.as_deref()).stage(Stage::Tokenize)?;
    let spec = match &cfg.model {
        Some(s) => s.clone(),
        None => infer_model(h).stage(Stage::Model)?,
    };
    if spec.id() != h.model_id {
        return Err(Error::load(format!(
            "file needs the {} model, got {}",
            h.model_id,
            spec.id()
        )))
        .stage(Stage::Model);
    }
    let max_len = h.max_chunk_len as usize;
    if max_len == 0 {
        return Err(Error::integrity("zero chunk length")).stage(Stage::Container);
    }
    let model = Model::load(&spec, codebook.vocab_size(), max_len).stage(Stage::Model)?;
    if model.params_digest() != h.model_digest {
        return Err(Error::load(
            "model parameters differ from the ones used to encode; refusing to decode",
        ))
        .stage(Stage::Model);
    }

    // Every chunk but the last holds max_len symbols plus eos.
    for (ci, c) in file.clusters.iter().enumerate() {
        for ch in &c.chunks {
            let last = ch.chunk_index as usize + 1 == c.chunks.len();
            let ok = if last {
                (2..=max_len as u32 + 1).contains(&ch.token_count)
            } else {
                ch.token_count == max_len as u32 + 1
            };
            if !ok {
                return Err(Error::integrity(format!(
                    "cluster {ci} chunk {}: token count {} inconsistent with chunk length {max_len}",
                    ch.chunk_index, ch.token_count
                )))
                .stage(Stage::Container);
            }
        }
        if c.chunks.is_empty() {
            return Err(Error::integrity(format!("cluster {ci} has no chunks"))).stage(Stage::Container);
        }
    }

    let pool = thread_pool(cfg.threads)?;
    let clusters = pool.install(|| -> Result<Vec<Cluster>> {
        let jobs: Vec<&ChunkRecord> = file.clusters.iter().flat_map(|c| &c.chunks).collect();
        let decoded = with_sessions(&model, &jobs, |s, r| decode_chunk(s, codebook.bos_id, r))?;
        let mut decoded = decoded.into_iter();
        let per_cluster: Vec<(&ClusterRecord, Vec<TokenChunk>)> = file
            .clusters
            .iter()
            .map(|c| (c, decoded.by_ref().take(c.chunks.len()).collect()))
            .collect();
        per_cluster
            .into_par_iter()
            .enumerate()
            .map(|(ci, (rec, chunks))| rebuild_cluster(ci, rec, &chunks, &codebook, h.k_mode))
            .collect()
    })?;

    let set = ClusterSet {
        clusters,
        source_depth: h.source_depth,
    };
    let mut canonical = set.clone();
    canonical.sort_canonical();
    if canonical != set {
        return Err(Error::integrity("clusters are not in canonical order")).stage(Stage::Container);
    }
    if set.total_points() as u64 != h.point_count {
        return Err(Error::integrity(format!(
            "decoded {} points, header declares {}",
            set.total_points(),
            h.point_count
        )))
        .stage(Stage::Tree);
    }
    let pc = merge_clusters(&set)
        .map_err(|e| match e {
            Error::Domain(m) | Error::Parameter(m) => Error::integrity(m),
            other => other,
        })
        .stage(Stage::Tree)?;
    let report = DecodeReport {
        points: pc.len(),
        clusters: set.clusters.len(),
        wall_time: start.elapsed(),
    };
    Ok((pc, report))
}

fn rebuild_cluster(
    ci: usize,
    rec: &ClusterRecord,
    chunks: &[TokenChunk],
    codebook: &Codebook,
    k_mode: KMode,
) -> Result<Cluster> {
    let symbols = detokenize_chunks(chunks, codebook)
        .map_err(|e| match e {
            Error::Mapping(m) => Error::integrity(format!("cluster {ci}: {m}")),
            other => other,
        })
        .stage(Stage::Tokenize)?;
    let seq = OccupancySequence {
        symbols,
        schedule: default_schedule(rec.local_depth, k_mode),
    };
    let points = reconstruct_points(&seq).stage(Stage::Tree)?;
    // A normalized cluster touches zero on every axis and needs exactly its
    // declared depth.
    let mut min = [u32::MAX; 3];
    let mut max = 0;
    for p in &points {
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max = max.max(p[a]);
        }
    }
    if min != [0; 3] || depth_for(max) != rec.local_depth {
        return Err(Error::integrity(format!(
            "cluster {ci}: decoded points do not form a normalized depth-{} cluster",
            rec.local_depth
        )))
        .stage(Stage::Tree);
    }
    for p in &points {
        for a in 0..3 {
            if p[a].checked_add(rec.offset[a]).is_none() {
                return Err(Error::integrity(format!("cluster {ci}: offset overflows u32"))).stage(Stage::Tree);
            }
        }
    }
    Ok(Cluster {
        offset: rec.offset,
        local_points: points,
        local_depth: rec.local_depth,
    })
}

/// Decodes a container file to PLY.
pub fn decode_file(input: &Path, output: &Path, cfg: &DecodeConfig) -> Result<DecodeReport> {
    let start = Instant::now();
    let bytes = std::fs::read(input).map_err(Error::from).stage(Stage::Load)?;
    let (pc, mut report) = decode_bytes(&bytes, cfg)?;
    save_ply(&pc, output).stage(Stage::Write)?;
    report.wall_time = start.elapsed();
    Ok(report)
}

/// Human-readable dump of a container's header and layout.
pub fn describe(bytes: &[u8]) -> Result<String> {
    let f = read_container(bytes)?;
    let h = &f.header;
    let hex = |b: &[u8]| b.iter().map(|x| format!("{x:02x}")).collect::<String>();
    let mut s = String::new();
    let chunks: usize = f.clusters.iter().map(|c| c.chunks.len()).sum();
    let payload: usize = f.clusters.iter().flat_map(|c| &c.chunks).map(|c| c.payload.len()).sum();
    let _ = writeln!(s, "file size       {} bytes", bytes.len());
    let _ = writeln!(s, "points          {}", h.point_count);
    let _ = writeln!(s, "bits per point  {:.4}", f.bpp(bytes.len()));
    let _ = writeln!(s, "source depth    {}", h.source_depth);
    let _ = writeln!(s, "k-mode          {} (K={})", h.k_mode, h.k_mode.k());
    let _ = writeln!(s, "layout digest   {}", hex(&h.schedule_digest));
    let _ = writeln!(s, "model           {}", h.model_id);
    let _ = writeln!(s, "model digest    {}", hex(&h.model_digest));
    let cb = match h.codebook.kind {
        CodebookKind::Affine => format!("affine, base {}", h.codebook.base_id),
        CodebookKind::File => format!("file {}", hex(&h.codebook.digest)),
    };
    let _ = writeln!(s, "codebook        {cb}, vocabulary {}", h.codebook.vocab_size);
    let _ = writeln!(s, "chunk length    {}", h.max_chunk_len);
    let _ = writeln!(s, "clusters        {}", h.cluster_count);
    let _ = writeln!(s, "chunks          {chunks}");
    let _ = writeln!(s, "payload bytes   {payload}");
    for (i, c) in f.clusters.iter().enumerate() {
        let bytes: usize = c.chunks.iter().map(|ch| ch.payload.len()).sum();
        let tokens: u64 = c.chunks.iter().map(|ch| ch.token_count as u64).sum();
        let _ = writeln!(
            s,
            "  cluster {i:>3}  offset {:?}  depth {:>2}  chunks {:>4}  tokens {:>8}  bytes {:>8}",
            c.offset,
            c.local_depth,
            c.chunks.len(),
            tokens,
            bytes
        );
    }
    Ok(s)
}

/// `(bpp - reference) / reference * 100`.
pub fn gain_percent(bpp: f64, reference: f64) -> f64 {
    (bpp - reference) / reference * 100.0
}

/// Bits per point for every input under every column, with gains measured
/// against the first column.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    pub columns: Vec<String>,
    pub rows: Vec<String>,
    /// `bpp[row][column]`
    pub bpp: Vec<Vec<f64>>,
}

impl BenchTable {
    pub fn new(columns: Vec<String>, rows: Vec<String>, bpp: Vec<Vec<f64>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Usage("bench needs at least one model".into()));
        }
        if rows.is_empty() {
            return Err(Error::Usage("bench needs at least one input".into()));
        }
        if bpp.len() != rows.len() || bpp.iter().any(|r| r.len() != columns.len()) {
            return Err(Error::param("bench table shape does not match its labels"));
        }
        Ok(BenchTable { columns, rows, bpp })
    }

    /// Per-row gain of every column against column 0.
    pub fn gains(&self) -> Vec<Vec<f64>> {
        self.bpp
            .iter()
            .map(|r| r.iter().map(|&v| gain_percent(v, r[0])).collect())
            .collect()
    }

    /// Mean bpp of each column.
    pub fn average_bpp(&self) -> Vec<f64> {
        let n = self.rows.len() as f64;
        (0..self.columns.len())
            .map(|c| self.bpp.iter().map(|r| r[c]).sum::<f64>() / n)
            .collect()
    }

    /// Mean of the per-row gains of each column (not the gain of the means).
    pub fn average_gains(&self) -> Vec<f64> {
        let g = self.gains();
        let n = self.rows.len() as f64;
        (0..self.columns.len())
            .map(|c| g.iter().map(|r| r[c]).sum::<f64>() / n)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("input");
        for c in &self.columns {
            let _ = write!(s, ",{c}_bpp,{c}_gain_pct");
        }
        s.push('\n');
        let gains = self.gains();
        for (i, row) in self.rows.iter().enumerate() {
            s.push_str(&csv_field(row));
            for c in 0..self.columns.len() {
                let _ = write!(s, ",{:.6},{:.3}", self.bpp[i][c], gains[i][c]);
            }
            s.push('\n');
        }
        s.push_str("average");
        for (b, g) in self.average_bpp().iter().zip(self.average_gains()) {
            let _ = write!(s, ",{b:.6},{g:.3}");
        }
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let name_w = self.rows.iter().map(String::len).chain([7]).max().unwrap_or(7);
        let col_w = self.columns.iter().map(|c| c.len().max(18)).collect::<Vec<_>>();
        let mut s = format!("{:<name_w$}", "input");
        for (c, w) in self.columns.iter().zip(&col_w) {
            let _ = write!(s, "  {c:>w$}");
        }
        s.push('\n');
        let cell = |b: f64, g: f64, first: bool| {
            if first {
                format!("{b:.4}")
            } else {
                format!("{b:.4} ({g:+.3}%)")
            }
        };
        let gains = self.gains();
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(s, "{row:<name_w$}");
            for (c, w) in col_w.iter().enumerate() {
                let _ = write!(s, "  {:>w$}", cell(self.bpp[i][c], gains[i][c], c == 0));
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<name_w$}", "average");
        for (c, (b, g)) in self.average_bpp().into_iter().zip(self.average_gains()).enumerate() {
            let _ = write!(s, "  {:>w$}", cell(b, g, c == 0), w = col_w[c]);
        }
        s.push('\n');
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Encodes every input with every model and tabulates bits per point.
pub fn bench(inputs: &[PathBuf], models: &[ModelSpec], base: &EncodeConfig) -> Result<BenchTable> {
    if models.is_empty() {
        return Err(Error::Usage("bench needs at least one model".into()));
    }
    if inputs.is_empty() {
        return Err(Error::Usage("bench needs at least one input".into()));
    }
    let mut bpp = Vec::with_capacity(inputs.len());
    for path in inputs {
        let pc = load_ply(path).stage(Stage::Load)?;
        let mut row = Vec::with_capacity(models.len());
        for m in models {
            let cfg = EncodeConfig {
                model: m.clone(),
                ..base.clone()
            };
            row.push(encode_cloud(&pc, &cfg)?.report.bpp);
        }
        bpp.push(row);
    }
    let columns = models.iter().map(spec_label).collect();
    let rows = inputs
        .iter()
        .map(|p| p.file_stem().unwrap_or(p.as_os_str()).to_string_lossy().into_owned())
        .collect();
    BenchTable::new(columns, rows, bpp)
}

fn spec_label(m: &ModelSpec) -> String {
    match m {
        ModelSpec::Uniform => "uniform".into(),
        ModelSpec::Adaptive { order } => format!("adaptive{order}"),
        ModelSpec::Transformer { weights } => format!(
            "transformer:{}",
            weights.file_stem().unwrap_or_default().to_string_lossy()
        ),
        ModelSpec::Bridge { .. } => "bridge".into(),
    }
}
