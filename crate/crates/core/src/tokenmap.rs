//! Codebook mapping between occupancy symbols and model token ids, plus
//! bos/eos framing of bounded-length chunks.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_CHUNK_LEN: usize = 512;
pub const DEFAULT_BASE_ID: u32 = 3;

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    pub bos_id: TokenId,
    pub eos_id: TokenId,
    pub pad_id: TokenId,
    /// `symbol_to_token[s - 1]` is the token for symbol `s`.
    symbol_to_token: Vec<TokenId>,
    token_to_symbol: HashMap<TokenId, u16>,
    vocab_size: usize,
    /// Where the mapping came from; recorded in containers.
    pub source: CodebookSource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodebookSource {
    /// `symbol -> base_id + symbol - 1`
    Affine { base_id: u32 },
    /// Loaded from a text file; holds the SHA-256 of its bytes.
    File { digest: [u8; 32] },
}

impl Codebook {
    pub fn new(
        bos_id: TokenId,
        eos_id: TokenId,
        pad_id: TokenId,
        symbol_to_token: Vec<TokenId>,
        vocab_size: usize,
        source: CodebookSource,
    ) -> Result<Self> {
        if bos_id == eos_id || bos_id == pad_id || eos_id == pad_id {
            return Err(Error::param("special token ids must be distinct"));
        }
        if symbol_to_token.is_empty() || !(symbol_to_token.len() + 1).is_power_of_two() {
            return Err(Error::param("codebook must cover symbols 1..2^K-1"));
        }
        let mut token_to_symbol = HashMap::with_capacity(symbol_to_token.len());
        for (i, &t) in symbol_to_token.iter().enumerate() {
            if t as usize >= vocab_size {
                return Err(Error::param(format!("token {t} outside vocabulary of {vocab_size}")));
            }
            if t == bos_id || t == eos_id || t == pad_id {
                return Err(Error::param(format!("symbol {} maps onto special token {t}", i + 1)));
            }
            if token_to_symbol.insert(t, (i + 1) as u16).is_some() {
                return Err(Error::param(format!("token {t} assigned to two symbols")));
            }
        }
        for s in [bos_id, eos_id, pad_id] {
            if s as usize >= vocab_size {
                return Err(Error::param(format!("special token {s} outside vocabulary")));
            }
        }
        Ok(Codebook {
            bos_id,
            eos_id,
            pad_id,
            symbol_to_token,
            token_to_symbol,
            vocab_size,
            source,
        })
    }

    pub fn alphabet_size(&self) -> usize {
        self.symbol_to_token.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn token(&self, symbol: u16) -> Result<TokenId> {
        (symbol as usize)
            .checked_sub(1)
            .and_then(|i| self.symbol_to_token.get(i))
            .copied()
            .ok_or_else(|| Error::mapping(format!("symbol {symbol} outside the codebook domain")))
    }

    pub fn symbol(&self, token: TokenId) -> Result<u16> {
        self.token_to_symbol
            .get(&token)
            .copied()
            .ok_or_else(|| Error::mapping(format!("token {token} is not in the codebook image")))
    }

    /// Writes the text form: bos, eos, pad, then one token per symbol.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in [self.bos_id, self.eos_id, self.pad_id]
            .iter()
            .chain(&self.symbol_to_token)
        {
            s.push_str(&t.to_string());
            s.push('\n');
        }
        s
    }
}

/// Affine codebook: bos=0, eos=1, pad=2, symbol `s` maps to `base_id + s - 1`.
/// The vocabulary is the smallest one holding every id.
pub fn default_codebook(k: u32, base_id: u32) -> Result<Codebook> {
    let vocab = base_id as usize + (1usize << k) - 1;
    default_codebook_in(k, base_id, vocab)
}

pub fn default_codebook_in(k: u32, base_id: u32, vocab_size: usize) -> Result<Codebook> {
    if !(1..=16).contains(&k) {
        return Err(Error::param(format!("K={k} outside [1, 16]")));
    }
    if base_id < 3 {
        return Err(Error::param("base_id must leave room for bos/eos/pad"));
    }
    let alphabet = (1usize << k) - 1;
    if base_id as usize + alphabet > vocab_size {
        return Err(Error::param(format!(
            "vocabulary of {vocab_size} cannot hold {alphabet} symbols from base {base_id}"
        )));
    }
    let map = (0..alphabet as u32).map(|i| base_id + i).collect();
    Codebook::new(0, 1, 2, map, vocab_size, CodebookSource::Affine { base_id })
}

/// Parses the text codebook form. The vocabulary size must be supplied
/// because the file does not record it.
pub fn parse_codebook(text: &str, vocab_size: usize) -> Result<Codebook> {
    let ids = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<TokenId>()
                .map_err(|_| Error::format(format!("bad token id `{l}` in codebook")))
        })
        .collect::<Result<Vec<_>>>()?;
    if ids.len() < 4 {
        return Err(Error::format("codebook needs bos, eos, pad and at least one symbol"));
    }
    let n = ids.len() - 3;
    if !(n + 1).is_power_of_two() {
        return Err(Error::format(format!("codebook has {n} symbols, not 2^K - 1")));
    }
    let digest: [u8; 32] = Sha256::digest(text.as_bytes()).into();
    Codebook::new(
        ids[0],
        ids[1],
        ids[2],
        ids[3..].to_vec(),
        vocab_size,
        CodebookSource::File { digest },
    )
}

pub fn load_codebook(path: impl AsRef<Path>, vocab_size: usize) -> Result<Codebook> {
    let text = fs::read_to_string(path)?;
    parse_codebook(&text, vocab_size)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenChunk {
    pub chunk_index: u32,
    pub tokens: Vec<TokenId>,
}

impl TokenChunk {
    pub fn payload_len(&self) -> usize {
        self.tokens.len().saturating_sub(2)
    }
}

/// Splits symbols into runs of at most `max_chunk_len`, maps them through the
/// codebook and frames each run with bos/eos.
pub fn tokenize_chunks(symbols: &[u16], cb: &Codebook, max_chunk_len: usize) -> Result<Vec<TokenChunk>> {
    if max_chunk_len == 0 {
        return Err(Error::param("max_chunk_len must be positive"));
    }
    symbols
        .chunks(max_chunk_len)
        .enumerate()
        .map(|(i, run)| {
            let mut tokens = Vec::with_capacity(run.len() + 2);
            tokens.push(cb.bos_id);
            for &s in run {
                tokens.push(cb.token(s)?);
            }
            tokens.push(cb.eos_id);
            Ok(TokenChunk {
                chunk_index: i as u32,
                tokens,
            })
        })
        .collect()
}

/// Inverse of [`tokenize_chunks`]; chunks may arrive in any order.
pub fn detokenize_chunks(chunks: &[TokenChunk], cb: &Codebook) -> Result<Vec<u16>> {
    let mut order: Vec<&TokenChunk> = chunks.iter().collect();
    order.sort_by_key(|c| c.chunk_index);
    for (i, c) in order.iter().enumerate() {
        if c.chunk_index as usize != i {
            return Err(Error::integrity(format!(
                "chunk index {} where {i} was expected (duplicate or missing chunk)",
                c.chunk_index
            )));
        }
    }
    let mut symbols = Vec::new();
    for c in order {
        let t = &c.tokens;
        if t.len() < 2 || t[0] != cb.bos_id || t[t.len() - 1] != cb.eos_id {
            return Err(Error::integrity(format!(
                "chunk {} is not framed by bos/eos",
                c.chunk_index
            )));
        }
        for &tok in &t[1..t.len() - 1] {
            if tok == cb.bos_id || tok == cb.eos_id {
                return Err(Error::integrity(format!(
                    "chunk {} has a special token inside its payload",
                    c.chunk_index
                )));
            }
            symbols.push(cb.symbol(tok)?);
        }
    }
    Ok(symbols)
}
