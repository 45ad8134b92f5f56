//! Messages exchanged between parties, framed as a big-endian `u32` length
//! followed by a JSON document. Numbers travel as decimal strings.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sknn_core::numerics::FracVec;
use sknn_core::select::RecordId;
use sknn_core::vsknn::{QueryToken, VsknnQueryReply};
use sknn_core::zhu::{QueryEncRequest, ZhuEncQuery, ZhuQueryReply};
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;
pub const MAX_FRAME_BYTES: usize = 256 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Aspe,
    Zhu,
    Vsknn,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Aspe => "aspe",
            Scheme::Zhu => "zhu",
            Scheme::Vsknn => "vsknn",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "aspe" => Ok(Scheme::Aspe),
            "zhu" => Ok(Scheme::Zhu),
            "vsknn" => Ok(Scheme::Vsknn),
            other => Err(format!("unknown scheme `{other}` (expected aspe, zhu or vsknn)")),
        }
    }
}

/// Encrypted query in the form each scheme's cloud server expects.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum EncryptedQuery {
    Aspe { q: FracVec },
    Zhu { q: ZhuEncQuery },
    Vsknn { token: QueryToken },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body")]
pub enum Body {
    QueryEncRequest(QueryEncRequest),
    QueryEncResponseZhu(ZhuQueryReply),
    QueryEncResponseVsknn(VsknnQueryReply),
    KnnRequest { query: EncryptedQuery, k: usize },
    KnnResponse { ids: Vec<RecordId> },
    FakeQueryError { reason: String },
    Error { message: String },
}

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::QueryEncRequest(_) => "QueryEncRequest",
            Body::QueryEncResponseZhu(_) => "QueryEncResponseZhu",
            Body::QueryEncResponseVsknn(_) => "QueryEncResponseVsknn",
            Body::KnnRequest { .. } => "KnnRequest",
            Body::KnnResponse { .. } => "KnnResponse",
            Body::FakeQueryError { .. } => "FakeQueryError",
            Body::Error { .. } => "Error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub version: u32,
    pub scheme: Scheme,
    #[serde(flatten)]
    pub body: Body,
}

impl WireMessage {
    pub fn new(scheme: Scheme, body: Body) -> Self {
        WireMessage { version: PROTOCOL_VERSION, scheme, body }
    }

    pub fn error(scheme: Scheme, message: impl Into<String>) -> Self {
        Self::new(scheme, Body::Error { message: message.into() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("wire messages always serialize")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let msg: WireMessage = serde_json::from_slice(bytes)?;
        if msg.version != PROTOCOL_VERSION {
            return Err(WireError::Version(msg.version));
        }
        Ok(msg)
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("unsupported protocol version {0}")]
    Version(u32),
    #[error("malformed message: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_frame<W: Write>(w: &mut W, msg: &WireMessage) -> Result<(), WireError> {
    let bytes = msg.to_bytes();
    if bytes.len() > MAX_FRAME_BYTES {
        return Err(WireError::FrameTooLarge(bytes.len()));
    }
    w.write_all(&(bytes.len() as u32).to_be_bytes())?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<WireMessage>, WireError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    WireMessage::from_bytes(&buf).map(Some)
}
