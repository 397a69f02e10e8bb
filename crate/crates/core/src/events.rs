//! Ordered, hash-chained event log shared by collection and deployment.
//!
//! Each event is stored as its canonical JSON line
//! `{"kind":K,"payload":P,"tick":T}`. Tool calls embed the exact request and
//! response lines seen on the bus, so the log alone reproduces every
//! exchange.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::util::canonical_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    ToolCall,
    Outcome,
    Intervention,
    Decision,
}

impl EventKind {
    fn as_str(self) -> &'static str {
        match self {
            EventKind::ToolCall => "ToolCall",
            EventKind::Outcome => "Outcome",
            EventKind::Intervention => "Intervention",
            EventKind::Decision => "Decision",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub payload: Value,
    pub tick: u64,
}

#[derive(Debug, Clone)]
pub struct EventLog {
    lines: Vec<String>,
    retain: bool,
    hasher: Sha256,
    last_tick: u64,
    counts: [u64; 4],
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new()
    }
}

impl EventLog {
    pub fn new() -> Self {
        Self {
            lines: Vec::new(),
            retain: true,
            hasher: Sha256::new(),
            last_tick: 0,
            counts: [0; 4],
        }
    }

    /// A log that keeps only its digest and per-kind counts.
    pub fn digest_only() -> Self {
        Self {
            retain: false,
            ..Self::new()
        }
    }

    /// Appends an event whose payload is already canonical JSON. Ticks are
    /// clamped so they never decrease.
    pub fn push_raw(&mut self, tick: u64, kind: EventKind, canonical_payload: &str) {
        let tick = tick.max(self.last_tick);
        self.last_tick = tick;
        let line = format!(
            "{{\"kind\":\"{}\",\"payload\":{canonical_payload},\"tick\":{tick}}}",
            kind.as_str()
        );
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.counts[kind.index()] += 1;
        if self.retain {
            self.lines.push(line);
        }
    }

    pub fn push<T: Serialize + ?Sized>(&mut self, tick: u64, kind: EventKind, payload: &T) {
        let p = canonical_json(payload).expect("event payloads are serializable");
        self.push_raw(tick, kind, &p);
    }

    /// Records one bus exchange from its framed lines.
    pub fn push_tool_call(&mut self, tick: u64, request_line: &[u8], response_line: &[u8]) {
        let req = std::str::from_utf8(trim_nl(request_line)).expect("framed lines are UTF-8");
        let resp = std::str::from_utf8(trim_nl(response_line)).expect("framed lines are UTF-8");
        self.push_raw(
            tick,
            EventKind::ToolCall,
            &format!("{{\"request\":{req},\"response\":{resp}}}"),
        );
    }

    pub fn len(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, kind: EventKind) -> u64 {
        self.counts[kind.index()]
    }

    pub fn last_tick(&self) -> u64 {
        self.last_tick
    }

    /// SHA-256 over every line, newline terminated.
    pub fn digest(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    pub fn events(&self) -> impl Iterator<Item = Event> + '_ {
        self.lines
            .iter()
            .map(|l| serde_json::from_str(l).expect("log lines are valid events"))
    }
}

fn trim_nl(line: &[u8]) -> &[u8] {
    line.strip_suffix(b"\n").unwrap_or(line)
}
