//! Out-of-process probability models over a framed byte stream.
//!
//! Every frame is `len u32 LE | type u8 | body`, where `len` counts the type
//! byte plus the body. Requests and responses strictly alternate:
//!
//! | request                         | response                              |
//! |---------------------------------|---------------------------------------|
//! | `0x01 INIT {vocab u32, ver u8}` | `0x81 {vocab u32}`                    |
//! | `0x02 RESET {}`                 | `0x82 {}`                             |
//! | `0x03 PUSH {token u32}`         | `0x83 {}`                             |
//! | `0x04 GETCDF {}`                | `0x84 {cumfreq u32 x (vocab + 1)}`    |
//! | anything else                   | `0xFF ERR {code u8}`                  |

use std::io::{self, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use super::cdf::{QuantizedCdf, CDF_TOTAL};
use super::ModelSession;
use crate::error::{Error, Result};

pub const PROTO_VERSION: u8 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
/// Upper bound on a frame body; a 65535-token CDF is well below it.
const MAX_FRAME: u32 = 1 << 20;

pub mod frame {
    pub const INIT: u8 = 0x01;
    pub const RESET: u8 = 0x02;
    pub const PUSH: u8 = 0x03;
    pub const GETCDF: u8 = 0x04;
    pub const INIT_ACK: u8 = 0x81;
    pub const RESET_ACK: u8 = 0x82;
    pub const PUSH_ACK: u8 = 0x83;
    pub const CDF: u8 = 0x84;
    pub const ERR: u8 = 0xFF;
}

pub mod err_code {
    pub const UNKNOWN_TYPE: u8 = 1;
    pub const BAD_BODY: u8 = 2;
    pub const VOCAB_MISMATCH: u8 = 3;
    pub const TOKEN_RANGE: u8 = 4;
    pub const NOT_INITIALIZED: u8 = 5;
    pub const MODEL_FAILURE: u8 = 6;
}

pub fn write_frame(w: &mut impl Write, kind: u8, body: &[u8]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(5 + body.len());
    buf.extend_from_slice(&(body.len() as u32 + 1).to_le_bytes());
    buf.push(kind);
    buf.extend_from_slice(body);
    w.write_all(&buf)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<(u8, Vec<u8>)>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(len);
    if len == 0 || len > MAX_FRAME {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("bad frame length {len}"),
        ));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    let kind = buf.remove(0);
    Ok(Some((kind, buf)))
}

/// Client side of the protocol; one model session per connection.
pub struct BridgeSession {
    writer: Box<dyn Write + Send>,
    frames: Receiver<io::Result<Option<(u8, Vec<u8>)>>>,
    child: Option<Child>,
    vocab: usize,
    timeout: Duration,
}

impl std::fmt::Debug for BridgeSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeSession")
            .field("vocab", &self.vocab)
            .field("child", &self.child.as_ref().map(Child::id))
            .finish()
    }
}

impl BridgeSession {
    /// Spawns `command` through `sh -c` and speaks the protocol over its
    /// stdin/stdout.
    pub fn spawn(command: &str, vocab: usize, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::transport(format!("cannot start bridge `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut session = Self::over(stdout, stdin, vocab, timeout)?;
        session.child = Some(child);
        Ok(session)
    }

    /// Runs the INIT handshake over an arbitrary stream pair.
    pub fn over<R, W>(reader: R, writer: W, vocab: usize, timeout: Duration) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = reader;
            loop {
                let frame = read_frame(&mut reader);
                let stop = !matches!(frame, Ok(Some(_)));
                if tx.send(frame).is_err() || stop {
                    break;
                }
            }
        });
        let mut session = BridgeSession {
            writer: Box::new(writer),
            frames: rx,
            child: None,
            vocab,
            timeout,
        };
        let mut body = (vocab as u32).to_le_bytes().to_vec();
        body.push(PROTO_VERSION);
        let reply = session.request(frame::INIT, &body, frame::INIT_ACK)?;
        let acked = reply
            .get(..4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize);
        if acked != Some(vocab) {
            return Err(Error::transport(format!(
                "bridge acknowledged vocabulary {acked:?}, expected {vocab}"
            )));
        }
        Ok(session)
    }

    fn request(&mut self, kind: u8, body: &[u8], expect: u8) -> Result<Vec<u8>> {
        write_frame(&mut self.writer, kind, body).map_err(|e| Error::transport(format!("bridge write failed: {e}")))?;
        let frame = match self.frames.recv_timeout(self.timeout) {
            Ok(f) => f,
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::transport(format!("bridge timed out after {:?}", self.timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => return Err(Error::transport("bridge disconnected")),
        };
        match frame {
            Ok(Some((k, body))) if k == expect => Ok(body),
            Ok(Some((frame::ERR, body))) => Err(Error::transport(format!(
                "bridge returned error code {}",
                body.first().copied().unwrap_or(0)
            ))),
            Ok(Some((k, _))) => Err(Error::transport(format!(
                "bridge replied with frame type {k:#04x}, expected {expect:#04x}"
            ))),
            Ok(None) => Err(Error::transport("bridge closed the stream")),
            Err(e) => Err(Error::transport(format!("bridge read failed: {e}"))),
        }
    }
}

impl Drop for BridgeSession {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl ModelSession for BridgeSession {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn reset(&mut self) -> Result<()> {
        self.request(frame::RESET, &[], frame::RESET_ACK).map(drop)
    }

    fn next_cdf(&mut self) -> Result<QuantizedCdf> {
        let body = self.request(frame::GETCDF, &[], frame::CDF)?;
        if body.len() != 4 * (self.vocab + 1) {
            return Err(Error::transport(format!(
                "CDF frame carries {} bytes, expected {}",
                body.len(),
                4 * (self.vocab + 1)
            )));
        }
        let cum = body
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        QuantizedCdf::from_cumfreq(cum).map_err(|e| Error::transport(format!("bridge sent an invalid CDF: {e}")))
    }

    fn push_token(&mut self, t: u32) -> Result<()> {
        if t as usize >= self.vocab {
            return Err(Error::domain(format!("token {t} outside vocabulary of {}", self.vocab)));
        }
        self.request(frame::PUSH, &t.to_le_bytes(), frame::PUSH_ACK).map(drop)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ServeOptions {
    /// Exit without replying once this many requests have been answered.
    pub max_requests: Option<usize>,
}

/// Serves `model` over a stream until the peer closes it. A model whose
/// vocabulary differs from the one requested by INIT is refused.
pub fn serve(
    model: &mut dyn ModelSession,
    reader: &mut impl Read,
    writer: &mut impl Write,
    opts: ServeOptions,
) -> io::Result<()> {
    let mut initialized = false;
    let mut served = 0usize;
    while let Some((kind, body)) = read_frame(reader)? {
        if opts.max_requests.is_some_and(|m| served >= m) {
            return Ok(());
        }
        served += 1;
        let err = |w: &mut _, code| write_frame(w, frame::ERR, &[code]);
        match kind {
            frame::INIT => {
                if body.len() != 5 {
                    err(writer, err_code::BAD_BODY)?;
                    continue;
                }
                let vocab = u32::from_le_bytes(body[..4].try_into().unwrap()) as usize;
                if vocab != model.vocab_size() {
                    err(writer, err_code::VOCAB_MISMATCH)?;
                    continue;
                }
                if model.reset().is_err() {
                    err(writer, err_code::MODEL_FAILURE)?;
                    continue;
                }
                initialized = true;
                write_frame(writer, frame::INIT_ACK, &(vocab as u32).to_le_bytes())?;
            }
            _ if !initialized => err(writer, err_code::NOT_INITIALIZED)?,
            frame::RESET => match model.reset() {
                Ok(()) => write_frame(writer, frame::RESET_ACK, &[])?,
                Err(_) => err(writer, err_code::MODEL_FAILURE)?,
            },
            frame::PUSH => {
                let token = match <[u8; 4]>::try_from(body.as_slice()) {
                    Ok(b) => u32::from_le_bytes(b),
                    Err(_) => {
                        err(writer, err_code::BAD_BODY)?;
                        continue;
                    }
                };
                match model.push_token(token) {
                    Ok(()) => write_frame(writer, frame::PUSH_ACK, &[])?,
                    Err(_) => err(writer, err_code::TOKEN_RANGE)?,
                }
            }
            frame::GETCDF => match model.next_cdf() {
                Ok(cdf) => {
                    let body: Vec<u8> = cdf.cumfreq().iter().flat_map(|c| c.to_le_bytes()).collect();
                    write_frame(writer, frame::CDF, &body)?;
                }
                Err(_) => err(writer, err_code::MODEL_FAILURE)?,
            },
            _ => err(writer, err_code::UNKNOWN_TYPE)?,
        }
    }
    Ok(())
}

/// Deterministic model that cycles through a fixed list of tables, one step
/// per pushed token. Used as the scripted peer in bridge tests.
#[derive(Debug, Clone)]
pub struct FixedSchedule {
    tables: Vec<QuantizedCdf>,
    step: usize,
}

impl FixedSchedule {
    pub fn new(tables: Vec<QuantizedCdf>) -> Result<Self> {
        let vocab = tables
            .first()
            .ok_or_else(|| Error::param("schedule needs at least one table"))?
            .vocab_size();
        if tables.iter().any(|t| t.vocab_size() != vocab) {
            return Err(Error::param("schedule tables disagree on vocabulary size"));
        }
        Ok(FixedSchedule { tables, step: 0 })
    }

    /// Three skewed tables peaking on different tokens.
    pub fn demo(vocab: usize) -> Self {
        let tables = (0..3)
            .map(|k| {
                let peak = (k * vocab / 3 + 3).min(vocab - 1);
                let probs: Vec<f64> = (0..vocab)
                    .map(|t| 1.0 / (1.0 + (t as f64 - peak as f64).abs()).powi(2))
                    .collect();
                QuantizedCdf::from_probs(&probs)
            })
            .collect();
        FixedSchedule::new(tables).expect("demo tables are consistent")
    }
}

impl ModelSession for FixedSchedule {
    fn vocab_size(&self) -> usize {
        self.tables[0].vocab_size()
    }

    fn reset(&mut self) -> Result<()> {
        self.step = 0;
        Ok(())
    }

    fn next_cdf(&mut self) -> Result<QuantizedCdf> {
        Ok(self.tables[self.step % self.tables.len()].clone())
    }

    fn push_token(&mut self, t: u32) -> Result<()> {
        if t as usize >= self.vocab_size() {
            return Err(Error::domain(format!("token {t} outside vocabulary")));
        }
        self.step += 1;
        Ok(())
    }
}

const _: () = assert!(CDF_TOTAL == 65536);

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn frame_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, frame::PUSH, &7u32.to_le_bytes()).unwrap();
        assert_eq!(buf, [5, 0, 0, 0, 0x03, 7, 0, 0, 0]);
        let mut r = Cursor::new(buf);
        assert_eq!(read_frame(&mut r).unwrap(), Some((frame::PUSH, vec![7, 0, 0, 0])));
        assert_eq!(read_frame(&mut r).unwrap(), None);
    }

    fn run_server(requests: &[(u8, Vec<u8>)], model: &mut dyn ModelSession) -> Vec<(u8, Vec<u8>)> {
        let mut input = Vec::new();
        for (k, b) in requests {
            write_frame(&mut input, *k, b).unwrap();
        }
        let mut out = Vec::new();
        serve(model, &mut Cursor::new(input), &mut out, ServeOptions::default()).unwrap();
        let mut r = Cursor::new(out);
        let mut frames = Vec::new();
        while let Some(f) = read_frame(&mut r).unwrap() {
            frames.push(f);
        }
        frames
    }

    #[test]
    fn server_answers_and_rejects() {
        let mut model = FixedSchedule::demo(10);
        let mut init = 10u32.to_le_bytes().to_vec();
        init.push(PROTO_VERSION);
        let replies = run_server(
            &[
                (frame::PUSH, 1u32.to_le_bytes().to_vec()),
                (frame::INIT, init),
                (frame::PUSH, 99u32.to_le_bytes().to_vec()),
                (frame::GETCDF, vec![]),
                (0x42, vec![]),
                (frame::RESET, vec![]),
            ],
            &mut model,
        );
        let kinds: Vec<u8> = replies.iter().map(|f| f.0).collect();
        assert_eq!(
            kinds,
            [
                frame::ERR,
                frame::INIT_ACK,
                frame::ERR,
                frame::CDF,
                frame::ERR,
                frame::RESET_ACK
            ]
        );
        assert_eq!(replies[0].1, [err_code::NOT_INITIALIZED]);
        assert_eq!(replies[3].1.len(), 44);
    }

    #[test]
    fn vocab_mismatch_refused() {
        let mut model = FixedSchedule::demo(10);
        let mut init = 11u32.to_le_bytes().to_vec();
        init.push(PROTO_VERSION);
        let replies = run_server(&[(frame::INIT, init)], &mut model);
        assert_eq!(replies, [(frame::ERR, vec![err_code::VOCAB_MISMATCH])]);
    }
}
