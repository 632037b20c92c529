//! Length-prefixed stdio frames spoken with external model processes.
//!
//! `frame = u32 LE header length | JSON header | raw payload`
//!
//! The payload length is implied by the header: `predict` carries
//! `c * h * w` f32 LE values, `logits` carries `n_class * h * w`, every
//! other message carries none.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;
/// Upper bound on the JSON header; anything larger is rejected unread.
pub const MAX_HEADER_LEN: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Header {
    Hello {
        version: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_class: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        batch: Option<bool>,
    },
    Predict {
        c: usize,
        h: usize,
        w: usize,
    },
    Logits {
        n_class: usize,
        h: usize,
        w: usize,
    },
    Error {
        message: String,
    },
    Bye,
}

impl Header {
    pub fn hello() -> Self {
        Header::Hello {
            version: PROTOCOL_VERSION,
            n_class: None,
            batch: None,
        }
    }

    pub fn op(&self) -> &'static str {
        match self {
            Header::Hello { .. } => "hello",
            Header::Predict { .. } => "predict",
            Header::Logits { .. } => "logits",
            Header::Error { .. } => "error",
            Header::Bye => "bye",
        }
    }

    /// Payload size in bytes implied by this header.
    pub fn payload_len(&self) -> Result<usize, FrameError> {
        let elems = match *self {
            Header::Predict { c, h, w } => [c, h, w],
            Header::Logits { n_class, h, w } => [n_class, h, w],
            _ => return Ok(0),
        };
        elems
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .ok_or(FrameError::PayloadTooLarge)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub header: Header,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(header: Header) -> Self {
        Self {
            header,
            payload: Vec::new(),
        }
    }

    pub fn with_values(header: Header, values: &[f32]) -> Self {
        Self {
            header,
            payload: encode_f32s(values),
        }
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    /// Stream ended cleanly on a frame boundary.
    #[error("end of stream")]
    Eof,
    #[error("stream ended inside a frame ({0})")]
    Truncated(&'static str),
    #[error("header length {0} exceeds limit")]
    HeaderTooLarge(u32),
    #[error("payload size overflows")]
    PayloadTooLarge,
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("io failure: {0}")]
    Io(#[from] io::Error),
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let header = serde_json::to_vec(&frame.header).expect("header serializes");
    let mut out = Vec::with_capacity(4 + header.len() + frame.payload.len());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&frame.payload);
    out
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> io::Result<()> {
    w.write_all(&encode_frame(frame))?;
    w.flush()
}

fn parse_header(bytes: &[u8]) -> Result<Header, FrameError> {
    serde_json::from_slice(bytes).map_err(|e| FrameError::BadHeader(e.to_string()))
}

/// Reads one frame. The payload buffer grows only as bytes arrive, so a
/// header declaring a huge payload cannot force a large allocation.
pub fn read_frame(r: &mut impl Read) -> Result<Frame, FrameError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Err(FrameError::Eof),
            Ok(0) => return Err(FrameError::Truncated("length prefix")),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let header_len = u32::from_le_bytes(len);
    if header_len as usize > MAX_HEADER_LEN {
        return Err(FrameError::HeaderTooLarge(header_len));
    }
    let mut header = vec![0u8; header_len as usize];
    r.read_exact(&mut header).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated("header"),
        _ => FrameError::Io(e),
    })?;
    let header = parse_header(&header)?;
    let want = header.payload_len()?;
    let mut payload = Vec::new();
    r.take(want as u64).read_to_end(&mut payload)?;
    if payload.len() != want {
        return Err(FrameError::Truncated("payload"));
    }
    Ok(Frame { header, payload })
}

/// Decodes one frame from the front of `bytes`, returning it with the number
/// of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize), FrameError> {
    if bytes.is_empty() {
        return Err(FrameError::Eof);
    }
    if bytes.len() < 4 {
        return Err(FrameError::Truncated("length prefix"));
    }
    let header_len = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if header_len as usize > MAX_HEADER_LEN {
        return Err(FrameError::HeaderTooLarge(header_len));
    }
    let header_end = 4 + header_len as usize;
    let header = parse_header(bytes.get(4..header_end).ok_or(FrameError::Truncated("header"))?)?;
    let end = header_end
        .checked_add(header.payload_len()?)
        .ok_or(FrameError::PayloadTooLarge)?;
    let payload = bytes
        .get(header_end..end)
        .ok_or(FrameError::Truncated("payload"))?
        .to_vec();
    Ok((Frame { header, payload }, end))
}

pub fn encode_f32s(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}
