//! Newline-delimited JSON wire protocol, sessions, episode files and replay.

mod episode;
mod server;
mod session;

pub use episode::{parse_episode, replay, Episode, EpisodeFooter, EpisodeHeader, ReplayError};
pub use server::{serve, serve_stdio, BindFailure, Connection, ServerContext, ServerHandle};
pub use session::{Session, SessionConfig};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verb {
    CreateSession,
    Reset,
    Act,
    Step,
    Observe,
    CompileLesson,
    RunLesson,
    GenerateTask,
    SubmitAnswer,
    QueryPredicate,
    GetScene,
    Subscribe,
}

impl Verb {
    pub const ALL: [Verb; 12] = [
        Verb::CreateSession,
        Verb::Reset,
        Verb::Act,
        Verb::Step,
        Verb::Observe,
        Verb::CompileLesson,
        Verb::RunLesson,
        Verb::GenerateTask,
        Verb::SubmitAnswer,
        Verb::QueryPredicate,
        Verb::GetScene,
        Verb::Subscribe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Verb::CreateSession => "CreateSession",
            Verb::Reset => "Reset",
            Verb::Act => "Act",
            Verb::Step => "Step",
            Verb::Observe => "Observe",
            Verb::CompileLesson => "CompileLesson",
            Verb::RunLesson => "RunLesson",
            Verb::GenerateTask => "GenerateTask",
            Verb::SubmitAnswer => "SubmitAnswer",
            Verb::QueryPredicate => "QueryPredicate",
            Verb::GetScene => "GetScene",
            Verb::Subscribe => "Subscribe",
        }
    }

    /// Verbs that can change session state and are therefore recorded.
    pub fn is_recorded(self) -> bool {
        matches!(
            self,
            Verb::Reset | Verb::Act | Verb::Step | Verb::CompileLesson | Verb::RunLesson | Verb::GenerateTask | Verb::SubmitAnswer
        )
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Verb {
    type Err = ProtoError;
    fn from_str(s: &str) -> Result<Self, ProtoError> {
        Verb::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| ProtoError::new("UnknownVerb", format!("unknown verb `{s}`")))
    }
}

/// Error surfaced in a response: a stable code plus a message.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtoError {
    pub code: String,
    pub message: String,
}

impl ProtoError {
    pub fn new(code: &str, message: impl Into<String>) -> ProtoError {
        ProtoError { code: code.to_string(), message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> ProtoError {
        ProtoError::new("BadRequest", message)
    }
}

impl fmt::Display for ProtoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ProtoError {}

macro_rules! from_module_error {
    ($($t:ty),*) => {$(
        impl From<$t> for ProtoError {
            fn from(e: $t) -> ProtoError {
                ProtoError::new(e.code(), e.to_string())
            }
        }
    )*};
}

from_module_error!(
    crate::agents::ActionError,
    crate::world::WorldError,
    crate::kinetics::PredicateError,
    crate::lessons::LessonError,
    crate::tasks::TaskError,
    crate::language::LanguageError
);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub request_id: u64,
    pub verb: String,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub request_id: Option<u64>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ProtoError>,
}

impl Response {
    pub fn ok(request_id: u64, payload: Value) -> Response {
        Response { request_id: Some(request_id), status: Status::Ok, payload: Some(payload), error: None }
    }

    pub fn err(request_id: Option<u64>, error: ProtoError) -> Response {
        Response { request_id, status: Status::Error, payload: None, error: Some(error) }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }
}

/// Unsolicited message sent to subscribed connections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "push", rename_all = "snake_case")]
pub enum Push {
    Events { events: Vec<crate::events::Event> },
    Frames { tick: u64, frames: Vec<Value> },
}
