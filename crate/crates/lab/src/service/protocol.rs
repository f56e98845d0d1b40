//! Wire messages of the live advising socket, version 1.
//!
//! Every message is a JSON object with a protocol version `v` and a `type`
//! tag. Field-by-field documentation lives in `docs/protocol.md`.

use bpa_core::advice_memory::AdviceEntry;
use bpa_core::agent::{EpisodeMetrics, Provenance};
use bpa_core::env::{EnvId, RenderFrame};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Paused,
    Finished,
    Failed,
}

/// Sent by the trainer's client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Advice for the decision pending at global step `step`.
    Advice {
        step: u64,
        action: usize,
    },
    Pause,
    Resume,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEnvelope {
    pub v: u32,
    #[serde(flatten)]
    pub message: ClientMessage,
}

/// What happened at the previous decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LastStep {
    pub step: u64,
    pub action: usize,
    pub provenance: Provenance,
    pub cluster: Option<usize>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub advised: usize,
    pub reused: usize,
    pub random: usize,
    pub greedy: usize,
}

/// The loop waits for a decision at `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub env: EnvId,
    pub status: RunStatus,
    pub episode: usize,
    /// Step within the episode.
    pub episode_step: usize,
    /// Global step; advice must quote it.
    pub step: u64,
    pub obs: Vec<f64>,
    pub frame: RenderFrame,
    pub actions: Vec<String>,
    pub epsilon: f64,
    pub episode_reward: f64,
    pub last: Option<LastStep>,
    /// Run totals per provenance.
    pub counters: Counters,
    pub store: Vec<AdviceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(Box<StateFrame>),
    Ack {
        command: String,
        /// Advice only: the step it targeted.
        #[serde(skip_serializing_if = "Option::is_none")]
        step: Option<u64>,
        accepted: bool,
        stale: bool,
        status: RunStatus,
    },
    Status {
        status: RunStatus,
        reason: String,
    },
    Episode {
        metrics: EpisodeMetrics,
    },
    Finished {
        stopped: bool,
        episodes: usize,
    },
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerEnvelope {
    pub v: u32,
    pub session: u64,
    #[serde(flatten)]
    pub message: ServerMessage,
}

impl ServerEnvelope {
    pub fn new(session: u64, message: ServerMessage) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            session,
            message,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

impl ServerMessage {
    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error {
            message: message.into(),
        }
    }
}

/// Parses a client frame, rejecting unknown versions.
pub fn parse_client(text: &str) -> Result<ClientMessage, String> {
    let env: ClientEnvelope =
        serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
    if env.v != PROTOCOL_VERSION {
        return Err(format!("unsupported protocol version {}", env.v));
    }
    Ok(env.message)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        assert_eq!(
            parse_client(r#"{"v":1,"type":"advice","step":12,"action":1}"#).unwrap(),
            ClientMessage::Advice {
                step: 12,
                action: 1
            }
        );
        assert_eq!(
            parse_client(r#"{"v":1,"type":"pause"}"#).unwrap(),
            ClientMessage::Pause
        );
        assert!(parse_client(r#"{"v":2,"type":"pause"}"#)
            .unwrap_err()
            .contains("version"));
        assert!(parse_client(r#"{"type":"pause"}"#).is_err());
        assert!(parse_client(r#"{"v":1,"type":"advice","step":1}"#).is_err());
    }

    #[test]
    fn server_messages_carry_version_and_tag() {
        let ack = ServerEnvelope::new(
            3,
            ServerMessage::Ack {
                command: "advice".into(),
                step: Some(7),
                accepted: false,
                stale: true,
                status: RunStatus::Running,
            },
        );
        let v: serde_json::Value = serde_json::from_str(&ack.to_json()).unwrap();
        assert_eq!(v["v"], 1);
        assert_eq!(v["session"], 3);
        assert_eq!(v["type"], "ack");
        assert_eq!(v["stale"], true);
        assert_eq!(v["status"], "running");
        let back: ServerEnvelope = serde_json::from_value(v).unwrap();
        assert_eq!(back, ack);
    }
}
