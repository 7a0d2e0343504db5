//! Wire protocol between the ISO and the building controllers.
//!
//! Every message is one line of JSON with `"type"` as the first key:
//!
//! ```text
//! {"type":"get_sigma","controller_id":3,"iteration":0}
//! {"type":"sigma_reply","step":5,"iteration":1,"state":[...],"sigma":[...],...}
//! {"type":"submit_plan","controller_id":3,"iteration":1,"profile":[...],"first_move":[...]}
//! {"type":"ack"}
//! ```
//!
//! Controllers are clients. A controller sends `get_sigma` and blocks; the
//! ISO answers only when it is that controller's turn, so the solve token
//! moves through the controllers in registration order. The controller
//! answers with `submit_plan`, which the ISO acknowledges. When the run is
//! over, the pending `get_sigma` is answered with `round_status` and the
//! connection closes.

mod link;
mod session;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use link::{channel_pair, ChannelConnection, Connection, TcpConnection};
pub use session::{
    run_controller, run_with_remotes, serve_iso, simulate_over_channels, simulate_over_tcp, ControllerSummary,
    DistributedError, RemoteController, DEFAULT_ISO_ADDR, DEFAULT_TIMEOUT,
};

use crate::mpc::ControllerId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not a JSON object, missing fields, or wrong field types.
    Parse,
    UnknownType,
    /// A profile does not have one value per horizon step.
    Shape,
    /// A second `submit_plan` for the same controller and iteration.
    Duplicate,
    /// A request sent before the previous one was answered.
    Pipelining,
    /// A well-formed message that is not valid at this point of the exchange.
    Unexpected,
    Registration,
    /// The controller could not produce a plan.
    Solver,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Parse => "parse",
            ErrorCode::UnknownType => "unknown_type",
            ErrorCode::Shape => "shape",
            ErrorCode::Duplicate => "duplicate",
            ErrorCode::Pipelining => "pipelining",
            ErrorCode::Unexpected => "unexpected",
            ErrorCode::Registration => "registration",
            ErrorCode::Solver => "solver",
        }
    }
}

impl std::fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Message {
    GetSigma {
        controller_id: ControllerId,
        /// Last iteration this controller submitted; 0 before its first plan.
        iteration: usize,
    },
    SigmaReply {
        step: usize,
        iteration: usize,
        /// Indoor temperature followed by storage SoCs.
        state: Vec<f64>,
        sigma: Vec<f64>,
        committed: Option<Vec<f64>>,
        half_width: Option<f64>,
        band_steps: usize,
        global_limit: Option<f64>,
        anchor: Option<Vec<f64>>,
    },
    SubmitPlan {
        controller_id: ControllerId,
        iteration: usize,
        profile: Vec<f64>,
        first_move: Vec<f64>,
    },
    Ack,
    RoundStatus {
        converged: bool,
        iteration: usize,
    },
    ProtocolError {
        code: ErrorCode,
        detail: String,
    },
}

const MESSAGE_TYPES: [&str; 6] = [
    "get_sigma",
    "sigma_reply",
    "submit_plan",
    "ack",
    "round_status",
    "protocol_error",
];

/// A message that failed validation, ready to be sent back as
/// [`Message::ProtocolError`].
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{code}: {detail}")]
pub struct WireError {
    pub code: ErrorCode,
    pub detail: String,
}

impl WireError {
    pub fn new(code: ErrorCode, detail: impl Into<String>) -> Self {
        Self {
            code,
            detail: detail.into(),
        }
    }

    pub fn to_message(&self) -> Message {
        Message::ProtocolError {
            code: self.code,
            detail: self.detail.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("no message from controller {controller} within {seconds} s")]
    Timeout { controller: ControllerId, seconds: u64 },
    #[error("connection closed by peer")]
    Closed,
    #[error("protocol: {0}")]
    Protocol(#[from] WireError),
    #[error("peer reported {0}")]
    Remote(WireError),
    #[error("registration: {0}")]
    Registration(String),
}

/// Serialize as one newline-terminated line.
pub fn encode(msg: &Message) -> String {
    let mut line = serde_json::to_string(msg).expect("messages always serialize");
    line.push('\n');
    line
}

/// Parse one line and check every profile has `horizon` entries.
pub fn decode(line: &str, horizon: usize) -> Result<Message, WireError> {
    let text = line.strip_suffix('\n').unwrap_or(line);
    let text = text.strip_suffix('\r').unwrap_or(text);
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| WireError::new(ErrorCode::Parse, e.to_string()))?;
    let tag = value
        .as_object()
        .ok_or_else(|| WireError::new(ErrorCode::Parse, "message is not a JSON object"))?
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| WireError::new(ErrorCode::Parse, "missing string field \"type\""))?;
    if !MESSAGE_TYPES.contains(&tag) {
        return Err(WireError::new(
            ErrorCode::UnknownType,
            format!("unknown message type {tag:?}"),
        ));
    }
    let msg: Message =
        serde_json::from_value(value.clone()).map_err(|e| WireError::new(ErrorCode::Parse, e.to_string()))?;
    // Serde does not reject extra keys on field-less variants.
    let known = serde_json::to_value(&msg).expect("messages always serialize");
    if let (Some(got), Some(known)) = (value.as_object(), known.as_object()) {
        if let Some(extra) = got.keys().find(|k| !known.contains_key(*k)) {
            return Err(WireError::new(ErrorCode::Parse, format!("unknown field {extra:?}")));
        }
    }
    check_shape(&msg, horizon)?;
    Ok(msg)
}

fn check_shape(msg: &Message, horizon: usize) -> Result<(), WireError> {
    let check = |name: &str, v: &[f64]| {
        if v.len() != horizon {
            return Err(WireError::new(
                ErrorCode::Shape,
                format!("{name} has {} values, expected {horizon}", v.len()),
            ));
        }
        Ok(())
    };
    match msg {
        Message::SigmaReply {
            sigma,
            committed,
            anchor,
            state,
            ..
        } => {
            check("sigma", sigma)?;
            if let Some(c) = committed {
                check("committed", c)?;
            }
            if let Some(a) = anchor {
                check("anchor", a)?;
            }
            if state.is_empty() {
                return Err(WireError::new(ErrorCode::Shape, "state is empty"));
            }
        }
        Message::SubmitPlan { profile, .. } => check("profile", profile)?,
        _ => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ack_is_minimal() {
        assert_eq!(encode(&Message::Ack), "{\"type\":\"ack\"}\n");
    }

    #[test]
    fn type_comes_first() {
        let msgs = [
            Message::GetSigma {
                controller_id: 4,
                iteration: 2,
            },
            Message::RoundStatus {
                converged: true,
                iteration: 3,
            },
            Message::ProtocolError {
                code: ErrorCode::Duplicate,
                detail: "again".into(),
            },
        ];
        for m in msgs {
            let line = encode(&m);
            assert!(line.starts_with("{\"type\":"), "{line}");
            assert!(line.ends_with('\n') && !line[..line.len() - 1].contains('\n'));
            assert_eq!(decode(&line, 24).unwrap(), m);
        }
    }

    #[test]
    fn error_codes_are_snake_case() {
        let line = encode(&WireError::new(ErrorCode::UnknownType, "x").to_message());
        assert!(line.contains("\"code\":\"unknown_type\""));
    }

    #[test]
    fn extra_fields_rejected() {
        let e = decode("{\"type\":\"ack\",\"extra\":1}", 24).unwrap_err();
        assert_eq!(e.code, ErrorCode::Parse);
    }

    #[test]
    fn missing_type_is_parse_error() {
        assert_eq!(decode("{\"controller_id\":1}", 24).unwrap_err().code, ErrorCode::Parse);
        assert_eq!(decode("[1,2]", 24).unwrap_err().code, ErrorCode::Parse);
    }
}
