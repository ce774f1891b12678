//! Robot-side client: dial with retry, say hello, then drive the
//! request-reply pairs the sync command needs.

use std::net::TcpStream;
use std::time::Duration;

use dreamcycle::rules::RulePatch;
use thiserror::Error;

use crate::protocol::{read_frame, write_frame, Message, NightStats, ProtoError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot connect to {addr} after {attempts} attempts: {last}")]
    Connect {
        addr: String,
        attempts: u32,
        last: String,
    },
    #[error(transparent)]
    Proto(#[from] ProtoError),
    #[error("server error {code}: {message}")]
    Server { code: String, message: String },
    #[error("expected {expected}, got {got}")]
    Unexpected {
        expected: &'static str,
        got: String,
    },
}

pub struct Client {
    stream: TcpStream,
}

impl Client {
    /// Dials with exponential backoff: after failed attempt n (1-based) the
    /// wait is `backoff_ms << (n-1)`, and the final failure returns an error
    /// instead of sleeping.
    pub fn connect(addr: &str, attempts: u32, backoff_ms: u64) -> Result<Client, ClientError> {
        let attempts = attempts.max(1);
        let mut last = String::new();
        for n in 0..attempts {
            match TcpStream::connect(addr) {
                Ok(stream) => return Ok(Client { stream }),
                Err(e) => last = e.to_string(),
            }
            if n + 1 < attempts {
                std::thread::sleep(Duration::from_millis(backoff_ms << n));
            }
        }
        Err(ClientError::Connect {
            addr: addr.to_string(),
            attempts,
            last,
        })
    }

    pub fn hello(&mut self, robot_id: &str, rules_hash: &str) -> Result<(), ClientError> {
        write_frame(
            &mut self.stream,
            &Message::Hello {
                robot_id: robot_id.to_string(),
                rules_hash: rules_hash.to_string(),
            },
        )?;
        Ok(())
    }

    pub fn upload_log(&mut self, log_text: &str) -> Result<String, ClientError> {
        write_frame(
            &mut self.stream,
            &Message::UploadLog {
                log: log_text.to_string(),
            },
        )?;
        match read_frame(&mut self.stream)? {
            Message::UploadAck { episode_id } => Ok(episode_id),
            Message::Error { code, message } => Err(ClientError::Server { code, message }),
            other => Err(ClientError::Unexpected {
                expected: "upload_ack",
                got: other.kind().to_string(),
            }),
        }
    }

    pub fn run_night(&mut self) -> Result<(String, NightStats), ClientError> {
        write_frame(&mut self.stream, &Message::RunNight)?;
        match read_frame(&mut self.stream)? {
            Message::NightDone { run_id, stats } => Ok((run_id, stats)),
            Message::Error { code, message } => Err(ClientError::Server { code, message }),
            other => Err(ClientError::Unexpected {
                expected: "night_done",
                got: other.kind().to_string(),
            }),
        }
    }

    pub fn fetch_patch(&mut self) -> Result<RulePatch, ClientError> {
        write_frame(&mut self.stream, &Message::FetchPatch)?;
        match read_frame(&mut self.stream)? {
            Message::Patch { patch } => Ok(patch),
            Message::Error { code, message } => Err(ClientError::Server { code, message }),
            other => Err(ClientError::Unexpected {
                expected: "patch",
                got: other.kind().to_string(),
            }),
        }
    }
}
