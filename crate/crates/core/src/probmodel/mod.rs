//! Autoregressive next-token models behind one session contract.
//!
//! Encoder and decoder each drive their own session with the same token
//! history; every built-in model returns identical tables for identical
//! histories, which is what keeps the range coder in lockstep.

pub mod adaptive;
pub mod bridge;
pub mod cdf;
pub mod transformer;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use sha2::{Digest, Sha256};

pub use adaptive::AdaptiveSession;
pub use bridge::{BridgeSession, FixedSchedule};
pub use cdf::{QuantizedCdf, CDF_TOTAL};
pub use transformer::{TinyTransformer, TransformerSession, TransformerWeights};

use crate::error::{Error, Result};

/// Environment variable naming the external model command.
pub const BRIDGE_ENV: &str = "KPCC_BRIDGE_CMD";

pub trait ModelSession: Send {
    fn vocab_size(&self) -> usize;

    /// Returns the session to its freshly started state.
    fn reset(&mut self) -> Result<()>;

    /// Distribution of the next token given everything pushed so far.
    fn next_cdf(&mut self) -> Result<QuantizedCdf>;

    fn push_token(&mut self, t: u32) -> Result<()>;
}

impl<S: ModelSession + ?Sized> ModelSession for Box<S> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn reset(&mut self) -> Result<()> {
        (**self).reset()
    }

    fn next_cdf(&mut self) -> Result<QuantizedCdf> {
        (**self).next_cdf()
    }

    fn push_token(&mut self, t: u32) -> Result<()> {
        (**self).push_token(t)
    }
}

/// Equal mass on every token.
#[derive(Debug, Clone)]
pub struct UniformSession {
    cdf: QuantizedCdf,
}

impl UniformSession {
    pub fn new(vocab: usize) -> Result<Self> {
        if vocab < 1 || vocab >= CDF_TOTAL as usize {
            return Err(Error::param(format!("vocabulary size {vocab} unsupported")));
        }
        Ok(UniformSession {
            cdf: QuantizedCdf::uniform(vocab),
        })
    }
}

impl ModelSession for UniformSession {
    fn vocab_size(&self) -> usize {
        self.cdf.vocab_size()
    }

    fn reset(&mut self) -> Result<()> {
        Ok(())
    }

    fn next_cdf(&mut self) -> Result<QuantizedCdf> {
        Ok(self.cdf.clone())
    }

    fn push_token(&mut self, t: u32) -> Result<()> {
        if t as usize >= self.vocab_size() {
            return Err(Error::domain(format!(
                "token {t} outside vocabulary of {}",
                self.vocab_size()
            )));
        }
        Ok(())
    }
}

/// A fixed table that ignores history.
#[derive(Debug, Clone)]
pub struct StaticSession {
    cdf: QuantizedCdf,
}

impl StaticSession {
    pub fn new(cdf: QuantizedCdf) -> Self {
        StaticSession { cdf }
    }
}

impl ModelSession for StaticSession {
    fn vocab_size(&self) -> usize {
        self.cdf.vocab_size()
    }

    fn reset(&mut self) -> Result<()> {
        Ok(())
    }

    fn next_cdf(&mut self) -> Result<QuantizedCdf> {
        Ok(self.cdf.clone())
    }

    fn push_token(&mut self, t: u32) -> Result<()> {
        if t as usize >= self.vocab_size() {
            return Err(Error::domain(format!("token {t} outside vocabulary")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelId {
    Uniform,
    AdaptiveCtx,
    TinyTransformer,
    ExternalBridge,
}

impl ModelId {
    pub fn to_u8(self) -> u8 {
        match self {
            ModelId::Uniform => 0,
            ModelId::AdaptiveCtx => 1,
            ModelId::TinyTransformer => 2,
            ModelId::ExternalBridge => 3,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => ModelId::Uniform,
            1 => ModelId::AdaptiveCtx,
            2 => ModelId::TinyTransformer,
            3 => ModelId::ExternalBridge,
            _ => return None,
        })
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelId::Uniform => "uniform",
            ModelId::AdaptiveCtx => "adaptive",
            ModelId::TinyTransformer => "transformer",
            ModelId::ExternalBridge => "bridge",
        })
    }
}

/// A model choice together with its parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    Uniform,
    Adaptive { order: u8 },
    Transformer { weights: PathBuf },
    Bridge { command: String, timeout: Duration },
}

impl ModelSpec {
    pub fn adaptive() -> Self {
        ModelSpec::Adaptive {
            order: adaptive::DEFAULT_ORDER,
        }
    }

    /// Bridge spec whose command comes from `KPCC_BRIDGE_CMD`.
    pub fn bridge_from_env() -> Result<Self> {
        let command = std::env::var(BRIDGE_ENV).map_err(|_| Error::param(format!("{BRIDGE_ENV} is not set")))?;
        Ok(ModelSpec::Bridge {
            command,
            timeout: bridge::DEFAULT_TIMEOUT,
        })
    }

    pub fn id(&self) -> ModelId {
        match self {
            ModelSpec::Uniform => ModelId::Uniform,
            ModelSpec::Adaptive { .. } => ModelId::AdaptiveCtx,
            ModelSpec::Transformer { .. } => ModelId::TinyTransformer,
            ModelSpec::Bridge { .. } => ModelId::ExternalBridge,
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    /// `uniform`, `adaptive`, `adaptive:<order>`, `transformer:<weights>`,
    /// `bridge` (command from the environment) or `bridge:<command>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name, arg) {
            ("uniform", None) => Ok(ModelSpec::Uniform),
            ("adaptive", None) => Ok(ModelSpec::adaptive()),
            ("adaptive", Some(o)) => o
                .parse()
                .map(|order| ModelSpec::Adaptive { order })
                .map_err(|_| Error::param(format!("bad adaptive order `{o}`"))),
            ("transformer", Some(p)) => Ok(ModelSpec::Transformer { weights: p.into() }),
            ("transformer", None) => Err(Error::param("transformer model needs a weights path")),
            ("bridge", None) => ModelSpec::bridge_from_env(),
            ("bridge", Some(c)) => Ok(ModelSpec::Bridge {
                command: c.to_string(),
                timeout: bridge::DEFAULT_TIMEOUT,
            }),
            _ => Err(Error::param(format!("unknown model `{s}`"))),
        }
    }
}

#[derive(Debug, Clone)]
enum Loaded {
    Uniform,
    Adaptive { order: u8 },
    Transformer(Arc<TinyTransformer>),
    Bridge { command: String, timeout: Duration },
}

/// A model ready to hand out sessions. Weights are loaded once and shared.
#[derive(Debug, Clone)]
pub struct Model {
    loaded: Loaded,
    vocab: usize,
    window: usize,
    digest: [u8; 16],
}

impl Model {
    /// `max_chunk_len` sets the transformer window (`max_chunk_len + 2`) and
    /// is folded into the parameter digest.
    pub fn load(spec: &ModelSpec, vocab: usize, max_chunk_len: usize) -> Result<Self> {
        let mut params = Vec::new();
        let loaded = match spec {
            ModelSpec::Uniform => {
                UniformSession::new(vocab)?;
                Loaded::Uniform
            }
            ModelSpec::Adaptive { order } => {
                AdaptiveSession::new(vocab, *order)?;
                params.push(*order);
                Loaded::Adaptive { order: *order }
            }
            ModelSpec::Transformer { weights } => {
                let bytes = std::fs::read(weights)
                    .map_err(|e| Error::load(format!("cannot read weights {}: {e}", weights.display())))?;
                params.extend_from_slice(&Sha256::digest(&bytes));
                let model = TinyTransformer::from_weights(TransformerWeights::from_bytes(&bytes)?)?;
                let declared = model.config().vocab_size as usize;
                if declared != vocab {
                    return Err(Error::load(format!(
                        "weights declare vocabulary {declared}, codec needs {vocab}"
                    )));
                }
                Loaded::Transformer(Arc::new(model))
            }
            ModelSpec::Bridge { command, timeout } => {
                params.extend_from_slice(command.as_bytes());
                Loaded::Bridge {
                    command: command.clone(),
                    timeout: *timeout,
                }
            }
        };
        let mut h = Sha256::new();
        h.update(b"kpcc-model");
        h.update([spec.id().to_u8()]);
        h.update((vocab as u32).to_le_bytes());
        h.update((max_chunk_len as u32).to_le_bytes());
        h.update(&params);
        let full = h.finalize();
        let mut digest = [0u8; 16];
        digest.copy_from_slice(&full[..16]);
        Ok(Model {
            loaded,
            vocab,
            window: max_chunk_len + 2,
            digest,
        })
    }

    pub fn id(&self) -> ModelId {
        match self.loaded {
            Loaded::Uniform => ModelId::Uniform,
            Loaded::Adaptive { .. } => ModelId::AdaptiveCtx,
            Loaded::Transformer(_) => ModelId::TinyTransformer,
            Loaded::Bridge { .. } => ModelId::ExternalBridge,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn params_digest(&self) -> [u8; 16] {
        self.digest
    }

    /// Starts a fresh session. Bridge sessions spawn their own process.
    pub fn session(&self) -> Result<Box<dyn ModelSession>> {
        Ok(match &self.loaded {
            Loaded::Uniform => Box::new(UniformSession::new(self.vocab)?),
            Loaded::Adaptive { order } => Box::new(AdaptiveSession::new(self.vocab, *order)?),
            Loaded::Transformer(m) => Box::new(TransformerSession::new(m.clone(), self.window)),
            Loaded::Bridge { command, timeout } => Box::new(BridgeSession::spawn(command, self.vocab, *timeout)?),
        })
    }
}

/// Loads `spec` and opens one session on it.
pub fn session_start(spec: &ModelSpec, vocab: usize, max_chunk_len: usize) -> Result<Box<dyn ModelSession>> {
    Model::load(spec, vocab, max_chunk_len)?.session()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_ignores_history() {
        let mut s = session_start(&ModelSpec::Uniform, 258, 512).unwrap();
        let before = s.next_cdf().unwrap();
        s.push_token(0).unwrap();
        assert_eq!(s.next_cdf().unwrap(), before);
        assert!(s.push_token(258).is_err());
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("uniform".parse::<ModelSpec>().unwrap(), ModelSpec::Uniform);
        assert_eq!(
            "adaptive:1".parse::<ModelSpec>().unwrap(),
            ModelSpec::Adaptive { order: 1 }
        );
        assert!("transformer".parse::<ModelSpec>().is_err());
        assert!("gpt".parse::<ModelSpec>().is_err());
        assert!(matches!(
            "bridge:./serve --fast".parse::<ModelSpec>().unwrap(),
            ModelSpec::Bridge { command, .. } if command == "./serve --fast"
        ));
    }

    #[test]
    fn digests_separate_params() {
        let a = Model::load(&ModelSpec::Adaptive { order: 2 }, 258, 512).unwrap();
        let b = Model::load(&ModelSpec::Adaptive { order: 1 }, 258, 512).unwrap();
        let c = Model::load(&ModelSpec::Adaptive { order: 2 }, 258, 256).unwrap();
        let u = Model::load(&ModelSpec::Uniform, 258, 512).unwrap();
        let all = [
            a.params_digest(),
            b.params_digest(),
            c.params_digest(),
            u.params_digest(),
        ];
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(all[i], all[j]);
            }
        }
    }

    #[test]
    fn missing_weights_is_load_error() {
        let spec = ModelSpec::Transformer {
            weights: "/nonexistent/model.kptw".into(),
        };
        assert!(matches!(Model::load(&spec, 258, 512), Err(Error::Load(_))));
    }
}
