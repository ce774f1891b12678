//! Per-connection protocol state machine, separated from socket handling so
//! scripted sessions can drive it directly in tests.

use crate::core::{ServerCore, ServerError};
use crate::protocol::Message;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    AwaitingHello,
    Idle,
    Uploading,
    NightRunning,
}

#[derive(Debug)]
pub struct Session {
    pub state: SessionState,
    pub robot_id: Option<String>,
    pub rules_hash: Option<String>,
}

impl Session {
    pub fn new() -> Session {
        Session {
            state: SessionState::AwaitingHello,
            robot_id: None,
            rules_hash: None,
        }
    }
}

impl Default for Session {
    fn default() -> Self {
        Session::new()
    }
}

/// Frames to send back, and whether the connection must close afterwards.
#[derive(Debug)]
pub struct Handled {
    pub responses: Vec<Message>,
    pub close: bool,
}

fn reply(msg: Message) -> Handled {
    Handled {
        responses: vec![msg],
        close: false,
    }
}

fn violation(code: &str, message: String) -> Handled {
    Handled {
        responses: vec![Message::Error {
            code: code.to_string(),
            message,
        }],
        close: true,
    }
}

/// Applies one inbound frame to a session. Blocking is confined to
/// `run_night`; every other frame only touches the spool or patch table.
pub fn handle_frame(session: &mut Session, msg: Message, core: &ServerCore) -> Handled {
    match (session.state, msg) {
        (SessionState::AwaitingHello, Message::Hello { robot_id, rules_hash }) => {
            session.robot_id = Some(robot_id);
            session.rules_hash = Some(rules_hash);
            session.state = SessionState::Idle;
            Handled {
                responses: Vec::new(),
                close: false,
            }
        }
        (SessionState::AwaitingHello, other) => violation(
            "protocol",
            format!("hello required before {}", other.kind()),
        ),
        (_, Message::Hello { .. }) => {
            violation("protocol", "hello already completed".to_string())
        }
        (SessionState::Idle | SessionState::Uploading, Message::UploadLog { log }) => {
            let robot = session.robot_id.clone().expect("hello sets robot_id");
            match core.upload(&robot, &log) {
                Ok(episode_id) => {
                    session.state = SessionState::Uploading;
                    reply(Message::UploadAck { episode_id })
                }
                Err(ServerError::MalformedLog(m)) => violation("malformed_log", m),
                Err(e) => violation("internal", e.to_string()),
            }
        }
        (SessionState::Idle | SessionState::Uploading, Message::RunNight) => {
            session.state = SessionState::NightRunning;
            let outcome = core.run_night();
            session.state = SessionState::Idle;
            match outcome {
                Ok((run_id, stats)) => reply(Message::NightDone { run_id, stats }),
                Err(ServerError::EmptyQueue) => {
                    violation("empty", "no pending logs to run a night on".to_string())
                }
                Err(e) => violation("internal", e.to_string()),
            }
        }
        (SessionState::Idle | SessionState::Uploading, Message::FetchPatch) => {
            let robot = session.robot_id.clone().expect("hello sets robot_id");
            reply(Message::Patch {
                patch: core.fetch_patch(&robot),
            })
        }
        (_, other) => violation(
            "protocol",
            format!("{} is not valid in this state", other.kind()),
        ),
    }
}
