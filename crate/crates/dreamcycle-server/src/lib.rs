//! Network face of the sleeping brain: robots upload experience logs over a
//! framed TCP protocol, a serialized night run replays them through one
//! shared network, and each robot fetches a patch diffed against its own
//! rule shadow.

pub mod client;
pub mod core;
pub mod protocol;
pub mod server;
pub mod session;
pub mod spool;

pub use client::{Client, ClientError};
pub use core::{ServerCore, ServerError};
pub use protocol::{Message, NightStats};
pub use server::Server;
