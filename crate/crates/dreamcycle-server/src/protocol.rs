//! Wire format: each frame is a 4-byte big-endian length followed by that
//! many bytes of UTF-8 JSON carrying a `"type"` tag. Frames above 64 MiB are
//! rejected before the body is read.

use std::io::{Read, Write};

use dreamcycle::rules::RulePatch;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_FRAME_LEN: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Message {
    Hello {
        robot_id: String,
        rules_hash: String,
    },
    /// Carries one `.explog` file verbatim as a string.
    UploadLog {
        log: String,
    },
    UploadAck {
        episode_id: String,
    },
    RunNight,
    NightDone {
        run_id: String,
        stats: NightStats,
    },
    FetchPatch,
    Patch {
        patch: RulePatch,
    },
    Error {
        code: String,
        message: String,
    },
}

impl Message {
    /// Tag string as it appears on the wire.
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::UploadLog { .. } => "upload_log",
            Message::UploadAck { .. } => "upload_ack",
            Message::RunNight => "run_night",
            Message::NightDone { .. } => "night_done",
            Message::FetchPatch => "fetch_patch",
            Message::Patch { .. } => "patch",
            Message::Error { .. } => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NightStats {
    pub logs_processed: u32,
    pub logs_failed: u32,
    /// Robots whose records entered the reverse pass.
    pub robots: u32,
    /// One line per skipped log or failed per-robot pass.
    pub failures: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ProtoError {
    /// Clean end of stream between frames.
    #[error("connection closed")]
    Closed,
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("frame of {0} bytes exceeds the 64 MiB limit")]
    Oversize(usize),
    #[error("frame body does not parse: {0}")]
    Json(String),
}

impl From<std::io::Error> for ProtoError {
    fn from(e: std::io::Error) -> Self {
        ProtoError::Io(e.to_string())
    }
}

pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, ProtoError> {
    let body = serde_json::to_vec(msg).map_err(|e| ProtoError::Json(e.to_string()))?;
    if body.len() > MAX_FRAME_LEN {
        return Err(ProtoError::Oversize(body.len()));
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decode_body(body: &[u8]) -> Result<Message, ProtoError> {
    serde_json::from_slice(body).map_err(|e| ProtoError::Json(e.to_string()))
}

pub fn write_frame(w: &mut impl Write, msg: &Message) -> Result<(), ProtoError> {
    let bytes = encode_frame(msg)?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame(r: &mut impl Read) -> Result<Message, ProtoError> {
    let mut len_buf = [0u8; 4];
    match r.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Err(ProtoError::Closed),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > MAX_FRAME_LEN {
        return Err(ProtoError::Oversize(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    decode_body(&body)
}
