use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{Session, Verb};
use crate::catalog::Catalog;
use crate::events::{Event, EventKind};
use crate::world::GridSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeHeader {
    pub seed: u64,
    pub catalog_version: String,
    pub grid: GridSpec,
    pub n_interactable: usize,
    /// Simulation tick the episode starts at.
    pub start_tick: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeFooter {
    pub final_hash: String,
}

/// A parsed episode file. `lines` keeps each event's original text.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub header: EpisodeHeader,
    pub events: Vec<Event>,
    pub lines: Vec<String>,
    pub footer: EpisodeFooter,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("corrupt episode: {0}")]
    CorruptEpisode(String),
    #[error("replay diverges at tick {tick}")]
    HashMismatch { tick: u64 },
}

impl ReplayError {
    pub fn code(&self) -> &'static str {
        match self {
            ReplayError::CorruptEpisode(_) => "CorruptEpisode",
            ReplayError::HashMismatch { .. } => "HashMismatch",
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    header: EpisodeHeader,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FooterLine {
    footer: EpisodeFooter,
}

pub fn parse_episode(text: &str) -> Result<Episode, ReplayError> {
    let corrupt = |m: String| ReplayError::CorruptEpisode(m);
    if !text.ends_with('\n') {
        return Err(corrupt("missing final newline (truncated file?)".into()));
    }
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 2 {
        return Err(corrupt("needs a header and a footer line".into()));
    }
    let header: HeaderLine =
        serde_json::from_str(lines[0]).map_err(|e| corrupt(format!("line 1: bad header: {e}")))?;
    let last = lines.len() - 1;
    let footer: FooterLine =
        serde_json::from_str(lines[last]).map_err(|e| corrupt(format!("line {}: bad footer: {e}", last + 1)))?;
    let mut events = Vec::with_capacity(last - 1);
    let mut prev_tick = header.header.start_tick;
    for (k, line) in lines[1..last].iter().enumerate() {
        let e: Event = serde_json::from_str(line).map_err(|e| corrupt(format!("line {}: {e}", k + 2)))?;
        if e.tick < prev_tick {
            return Err(corrupt(format!("line {}: tick {} goes backwards", k + 2, e.tick)));
        }
        prev_tick = e.tick;
        events.push(e);
    }
    Ok(Episode {
        header: header.header,
        events,
        lines: lines[1..last].iter().map(|s| s.to_string()).collect(),
        footer: footer.footer,
    })
}

/// Rebuilds the session from the header, re-applies every recorded command
/// and checks the regenerated log line by line and the final hash.
/// Returns the final scene hash.
pub fn replay(text: &str, catalog: Arc<Catalog>) -> Result<String, ReplayError> {
    let ep = parse_episode(text)?;
    let mut session =
        Session::from_header(catalog, &ep.header).map_err(|e| ReplayError::CorruptEpisode(e.to_string()))?;
    for e in &ep.events {
        if let EventKind::Command { verb, body } = &e.kind {
            let verb: Verb = verb
                .parse()
                .map_err(|_| ReplayError::CorruptEpisode(format!("unknown recorded verb `{verb}`")))?;
            if !verb.is_recorded() {
                return Err(ReplayError::CorruptEpisode(format!("{verb} is never recorded")));
            }
            let body: &Value = body;
            // Errors are part of the recording; only the log matters here.
            let _ = session.handle(verb, body);
        }
    }
    let regenerated = session.episode();
    let n = regenerated.len().max(ep.lines.len());
    for i in 0..n {
        let ours = regenerated.get(i).map(|e| serde_json::to_string(e).expect("event"));
        let theirs = ep.lines.get(i);
        if ours.as_ref() != theirs {
            let tick = match (regenerated.get(i), ep.events.get(i)) {
                (Some(a), Some(b)) => a.tick.min(b.tick),
                (Some(a), None) => a.tick,
                (None, Some(b)) => b.tick,
                (None, None) => unreachable!("index below max length"),
            };
            return Err(ReplayError::HashMismatch { tick });
        }
    }
    let hash = session.state_hash_hex();
    if hash != ep.footer.final_hash {
        return Err(ReplayError::HashMismatch { tick: session.scene().tick });
    }
    Ok(hash)
}
